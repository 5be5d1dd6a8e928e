//! Labeled datasets and their on-disk formats.

mod delimited;
mod idx;
mod synthetic;

use std::path::Path;

use crate::codec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use delimited::{load_delimited, parse_delimited};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx};
pub use synthetic::{generate_around, generate_synthetic, simplex_centers, SyntheticSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub input: Tensor,
    pub label: usize,
}

/// Cases sharing one input shape, labels in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    class_count: usize,
    input_shape: Vec<usize>,
    cases: Vec<Case>,
}

impl LabeledDataset {
    pub fn new(class_count: usize, cases: Vec<Case>) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::arg("class_count must be positive"));
        }
        let input_shape = cases
            .first()
            .map(|c| c.input.shape().to_vec())
            .unwrap_or_default();
        for (i, c) in cases.iter().enumerate() {
            if c.input.shape() != input_shape.as_slice() {
                return Err(Error::shape(
                    format!("case {i} with shape {input_shape:?}"),
                    format!("{:?}", c.input.shape()),
                ));
            }
            if c.label >= class_count {
                return Err(Error::arg(format!(
                    "case {i} has label {} but class_count is {class_count}",
                    c.label
                )));
            }
        }
        Ok(LabeledDataset {
            class_count,
            input_shape,
            cases,
        })
    }

    /// Widens the label space, e.g. when a test split lacks the top class.
    pub fn with_class_count(self, class_count: usize) -> Result<Self> {
        LabeledDataset::new(class_count, self.cases)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Flattened input width; 0 for an empty dataset.
    pub fn input_width(&self) -> usize {
        if self.cases.is_empty() {
            0
        } else {
            self.input_shape.iter().product()
        }
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Number of cases carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for c in &self.cases {
            counts[c.label] += 1;
        }
        counts
    }

    /// Indices of the cases labeled `class`, in dataset order.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.cases
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        std::fs::write(path, codec::encode_dataset(self)).map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        codec::decode_dataset(&bytes)
    }
}
