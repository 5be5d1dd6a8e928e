//! Locates the dominant root cause of a classifier's misclassifications.
//!
//! A trained dense network is instrumented with one softmax probe per hidden
//! layer. For every misclassified test input the probes yield a per-layer
//! class distribution; the rank of the true class across layers forms a
//! trajectory whose trend points at a structure defect (SD), insufficient
//! training data (ITD) or unreliable training data (UTD).
//!
//! ```no_run
//! use rankprobe_core::{footprint, probe};
//! # fn run(base: rankprobe_core::nn::Model,
//! #        train: &rankprobe_core::data::LabeledDataset,
//! #        test: &rankprobe_core::data::LabeledDataset,
//! #        cfg: &rankprobe_core::nn::TrainConfig) -> rankprobe_core::Result<()> {
//! let n = base.layer_count();
//! let im = probe::train_probes(&probe::instrument(base, 7)?, train, cfg)?;
//! let th = footprint::default_thresholds(n)?;
//! let mut cases = Vec::new();
//! for dfs in probe::extract_faulty_dfs(&im, test)? {
//!     let ranks = footprint::value_rank_list(&dfs)?;
//!     let defect = footprint::classify_trend(&ranks, th)?;
//!     cases.push(footprint::ClassifiedCase { case_id: ranks.case_id, defect, ranks: ranks.ranks });
//! }
//! println!("{:?}", footprint::aggregate(cases).dominant);
//! # Ok(()) }
//! ```

pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod footprint;
pub mod inject;
pub mod nn;
pub mod pipeline;
pub mod probe;
pub mod report;
mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use footprint::DefectType;
pub use rng::derive_seed;
pub use tensor::Tensor;
