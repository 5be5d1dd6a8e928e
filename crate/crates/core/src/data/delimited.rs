use std::path::Path;

use super::{Case, LabeledDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads rows of `label, feature, feature, ...` separated by commas and/or
/// whitespace. Blank lines and lines starting with `#` are skipped.
pub fn load_delimited(path: &Path, class_count: usize) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_delimited(&text, class_count)
}

pub fn parse_delimited(text: &str, class_count: usize) -> Result<LabeledDataset> {
    let mut cases = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("line {lineno}");
        let mut fields = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty());
        let label_text = fields.next().expect("non-empty line has a field");
        let label: usize = label_text.parse().map_err(|_| {
            Error::format_at(at(), format!("label `{label_text}` is not a class index"))
        })?;
        if label >= class_count {
            return Err(Error::format_at(
                at(),
                format!("label {label} out of range for {class_count} classes"),
            ));
        }
        let features = fields
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(Error::format_at(at(), format!("non-finite feature `{f}`"))),
                Err(_) => Err(Error::format_at(at(), format!("non-numeric feature `{f}`"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.is_empty() {
            return Err(Error::format_at(at(), "row has no features"));
        }
        match width {
            None => width = Some(features.len()),
            Some(w) if w != features.len() => {
                return Err(Error::format_at(
                    at(),
                    format!("expected {w} features, found {}", features.len()),
                ))
            }
            Some(_) => {}
        }
        cases.push(Case {
            input: Tensor::vector(features)?,
            label,
        });
    }
    if cases.is_empty() {
        return Err(Error::arg("delimited input contains no rows"));
    }
    LabeledDataset::new(class_count, cases)
}
