use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Case, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Isotropic Gaussian blobs centred on the vertices of a regular simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub cases_per_class: usize,
    pub dimension: usize,
    /// Distance between every pair of class centres.
    pub separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Permit a random orthonormal projection when `dimension < class_count - 1`.
    #[serde(default)]
    pub allow_projection: bool,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::arg("synthetic data needs at least 2 classes"));
        }
        if self.dimension == 0 {
            return Err(Error::arg("dimension must be at least 1"));
        }
        if self.cases_per_class == 0 {
            return Err(Error::arg("cases_per_class must be at least 1"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(Error::arg("noise_sigma must be positive"));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::arg("separation must be a non-negative number"));
        }
        if self.dimension + 1 < self.class_count && !self.allow_projection {
            return Err(Error::arg(format!(
                "{} classes need dimension >= {} for an exact simplex; enable allow_projection",
                self.class_count,
                self.class_count - 1
            )));
        }
        Ok(())
    }
}

/// Class centres with pairwise distance `separation`, embedded in `dimension`
/// coordinates. Exact when `dimension >= class_count - 1`; otherwise the
/// simplex is pushed through a seeded random orthonormal projection.
pub fn simplex_centers(spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let n = spec.class_count;
    let scale = spec.separation / std::f64::consts::SQRT_2;
    // Helmert basis of the hyperplane orthogonal to (1, ..., 1): vertex i of the
    // standard simplex has coordinate h_k[i] along basis vector k.
    let helmert = |k: usize, i: usize| -> f64 {
        let norm = ((k * (k + 1)) as f64).sqrt();
        if i < k {
            1.0 / norm
        } else if i == k {
            -(k as f64) / norm
        } else {
            0.0
        }
    };
    let simplex: Vec<Vec<f64>> = (0..n)
        .map(|i| (1..n).map(|k| scale * helmert(k, i)).collect())
        .collect();

    if spec.dimension + 1 >= n {
        return Ok(simplex
            .into_iter()
            .map(|mut c| {
                c.resize(spec.dimension, 0.0);
                c
            })
            .collect());
    }

    let mut rng = rng::stream(spec.seed, rng::INIT_STREAM);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(spec.dimension);
    while basis.len() < spec.dimension {
        let mut v: Vec<f64> = (0..n - 1)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Ok(simplex
        .iter()
        .map(|c| {
            basis
                .iter()
                .map(|b| b.iter().zip(c).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect())
}

/// Exactly `cases_per_class` cases per class, grouped by class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    let centers = simplex_centers(spec)?;
    generate_around(&centers, spec)
}

/// Blobs around caller-supplied centres, using the counts, noise and sample
/// stream of `spec`. Lets a test set share the centres of a training set.
pub fn generate_around(centers: &[Vec<f64>], spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    if centers.len() != spec.class_count || centers.iter().any(|c| c.len() != spec.dimension) {
        return Err(Error::shape(
            format!("{} centres of width {}", spec.class_count, spec.dimension),
            format!("{} centres", centers.len()),
        ));
    }
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = rng::stream(spec.seed, rng::SAMPLE_STREAM);
    let mut cases = Vec::with_capacity(spec.class_count * spec.cases_per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..spec.cases_per_class {
            let x = center.iter().map(|c| c + noise.sample(&mut rng)).collect();
            cases.push(Case {
                input: Tensor::vector(x)?,
                label,
            });
        }
    }
    LabeledDataset::new(spec.class_count, cases)
}
