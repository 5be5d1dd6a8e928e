//! Experiment configuration, read from a TOML document.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//!
//! [dataset.synthetic]
//! class_count = 10
//! cases_per_class = 500
//! test_cases_per_class = 200
//! dimension = 16
//! separation = 6.0
//! noise_sigma = 1.0
//!
//! [network]
//! hidden_widths = [32, 32, 32, 32]
//!
//! [train]
//! learning_rate = 0.05
//! epochs = 20
//! batch_size = 32
//!
//! [injection]
//! kind = "UTD"
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.
//! Every seed used by the pipeline is derived from the global `seed` unless
//! set explicitly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, LabeledDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::footprint::{DefectType, TrendThresholds};
use crate::inject::{InjectionChoices, InjectionSpec};
use crate::nn::{Activation, LayerSpec, NetworkSpec, TrainConfig};
use crate::rng::derive_seed;

const SALT_TRAIN_DATA: u64 = 1;
const SALT_TEST_DATA: u64 = 2;
const SALT_BASE_TRAIN: u64 = 3;
const SALT_PROBE_INIT: u64 = 4;
const SALT_PROBE_TRAIN: u64 = 5;
const SALT_INJECTION: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainSettings,
    /// Defaults to the `train` settings.
    #[serde(default)]
    pub probe_train: Option<TrainSettings>,
    #[serde(default)]
    pub injection: Option<InjectionConfig>,
    #[serde(default)]
    pub thresholds: Option<ThresholdConfig>,
    /// Directory relative paths are resolved against; set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Exactly one of the sources must be present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delimited: Option<DelimitedSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default)]
    pub class_count: Option<usize>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelimitedSource {
    pub train: PathBuf,
    pub test: PathBuf,
    pub class_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSource {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub class_count: usize,
    pub cases_per_class: usize,
    pub test_cases_per_class: usize,
    pub dimension: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub allow_projection: bool,
}

/// Either `hidden_widths` (ReLU hidden layers, softmax output), an explicit
/// `layers` list, or a `spec_file` holding a JSON network spec.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Derived from the global seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionConfig {
    pub kind: DefectType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub itd_classes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub itd_class_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub itd_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utd_source: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utd_target: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utd_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd_layer: Option<usize>,
}

impl InjectionConfig {
    pub fn new(kind: DefectType) -> Self {
        InjectionConfig {
            kind,
            seed: None,
            itd_classes: None,
            itd_class_count: None,
            itd_fraction: None,
            utd_source: None,
            utd_target: None,
            utd_fraction: None,
            sd_layer: None,
        }
    }

    fn choices(&self) -> InjectionChoices {
        InjectionChoices {
            itd_classes: self.itd_classes.clone(),
            itd_class_count: self.itd_class_count,
            itd_fraction: self.itd_fraction,
            utd_source: self.utd_source,
            utd_target: self.utd_target,
            utd_fraction: self.utd_fraction,
            sd_layer: self.sd_layer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub ascend: usize,
    pub descend: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .and_then(|s| text.get(..s.start))
                .map(|prefix| format!("line {}", prefix.lines().count().max(1)))
                .unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate_shape()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Structural checks that do not touch the filesystem.
    fn validate_shape(&self) -> Result<()> {
        let d = &self.dataset;
        let sources = [
            d.idx.is_some(),
            d.delimited.is_some(),
            d.synthetic.is_some(),
            d.cache.is_some(),
        ];
        match sources.iter().filter(|s| **s).count() {
            1 => {}
            0 => {
                return Err(Error::config(
                    "dataset",
                    "one of `idx`, `delimited`, `synthetic` or `cache` is required",
                ))
            }
            _ => {
                return Err(Error::config(
                    "dataset",
                    "exactly one dataset source may be given",
                ))
            }
        }
        let n = &self.network;
        let forms = [
            n.hidden_widths.is_some(),
            n.layers.is_some(),
            n.spec_file.is_some(),
        ];
        if forms.iter().filter(|f| **f).count() != 1 {
            return Err(Error::config(
                "network",
                "give exactly one of `hidden_widths`, `layers` or `spec_file`",
            ));
        }
        check_settings("train", &self.train)?;
        if let Some(p) = &self.probe_train {
            check_settings("probe_train", p)?;
        }
        if let Some(t) = &self.thresholds {
            TrendThresholds::new(t.ascend, t.descend)
                .map_err(|e| Error::config("thresholds", e.to_string()))?;
        }
        Ok(())
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve_path(&self.output_dir)
    }

    fn existing(&self, field: &str, p: &Path) -> Result<PathBuf> {
        let full = self.resolve_path(p);
        if !full.is_file() {
            return Err(Error::config(
                field,
                format!("file does not exist: {}", full.display()),
            ));
        }
        Ok(full)
    }

    /// Loads or generates the clean (train, test) pair.
    pub fn load_datasets(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let d = &self.dataset;
        if let Some(src) = &d.idx {
            let tri = self.existing("dataset.idx.train_images", &src.train_images)?;
            let trl = self.existing("dataset.idx.train_labels", &src.train_labels)?;
            let tei = self.existing("dataset.idx.test_images", &src.test_images)?;
            let tel = self.existing("dataset.idx.test_labels", &src.test_labels)?;
            let train = data::load_idx(&tri, &trl, src.normalize)?;
            let test = data::load_idx(&tei, &tel, src.normalize)?;
            let classes = src
                .class_count
                .unwrap_or_else(|| train.class_count().max(test.class_count()));
            return Ok((
                train.with_class_count(classes)?,
                test.with_class_count(classes)?,
            ));
        }
        if let Some(src) = &d.delimited {
            let tr = self.existing("dataset.delimited.train", &src.train)?;
            let te = self.existing("dataset.delimited.test", &src.test)?;
            return Ok((
                data::load_delimited(&tr, src.class_count)?,
                data::load_delimited(&te, src.class_count)?,
            ));
        }
        if let Some(src) = &d.cache {
            let tr = self.existing("dataset.cache.train", &src.train)?;
            let te = self.existing("dataset.cache.test", &src.test)?;
            let train = LabeledDataset::read_cache(&tr)?;
            let test = LabeledDataset::read_cache(&te)?;
            let classes = train.class_count().max(test.class_count());
            return Ok((
                train.with_class_count(classes)?,
                test.with_class_count(classes)?,
            ));
        }
        let src = d.synthetic.as_ref().expect("validated: one source present");
        let spec = |cases_per_class, salt| SyntheticSpec {
            class_count: src.class_count,
            cases_per_class,
            dimension: src.dimension,
            separation: src.separation,
            noise_sigma: src.noise_sigma,
            seed: derive_seed(self.seed, salt),
            allow_projection: src.allow_projection,
        };
        let wrap = |e: Error| Error::config("dataset.synthetic", e.to_string());
        let train_spec = spec(src.cases_per_class, SALT_TRAIN_DATA);
        let centers = data::simplex_centers(&train_spec).map_err(wrap)?;
        let train = data::generate_around(&centers, &train_spec).map_err(wrap)?;
        let test = data::generate_around(&centers, &spec(src.test_cases_per_class, SALT_TEST_DATA))
            .map_err(wrap)?;
        Ok((train, test))
    }

    pub fn network_spec(&self, input_width: usize, class_count: usize) -> Result<NetworkSpec> {
        let n = &self.network;
        let spec = if let Some(widths) = &n.hidden_widths {
            let mut spec = NetworkSpec::mlp(input_width, widths, class_count)
                .map_err(|e| Error::config("network.hidden_widths", e.to_string()))?;
            if let Some(act) = n.hidden_activation {
                if act == Activation::Softmax {
                    return Err(Error::config(
                        "network.hidden_activation",
                        "softmax is only allowed on the output layer",
                    ));
                }
                let last = spec.layers.len() - 1;
                spec.layers[..last]
                    .iter_mut()
                    .for_each(|l| l.activation = act);
            }
            spec
        } else if let Some(layers) = &n.layers {
            NetworkSpec {
                layers: layers.clone(),
                class_count,
            }
        } else {
            let path = self.existing(
                "network.spec_file",
                n.spec_file.as_deref().expect("validated: one form present"),
            )?;
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::config("network.spec_file", e.to_string()))?
        };
        spec.validate()
            .map_err(|e| Error::config("network", e.to_string()))?;
        if spec.input_width() != input_width || spec.class_count != class_count {
            return Err(Error::config(
                "network",
                format!(
                    "network maps {} inputs to {} classes but the data has {input_width} inputs and {class_count} classes",
                    spec.input_width(),
                    spec.class_count
                ),
            ));
        }
        Ok(spec)
    }

    pub fn base_train_config(&self) -> TrainConfig {
        to_train_config(&self.train, derive_seed(self.seed, SALT_BASE_TRAIN))
    }

    pub fn probe_train_config(&self) -> TrainConfig {
        let settings = self.probe_train.as_ref().unwrap_or(&self.train);
        to_train_config(settings, derive_seed(self.seed, SALT_PROBE_TRAIN))
    }

    pub fn probe_init_seed(&self) -> u64 {
        derive_seed(self.seed, SALT_PROBE_INIT)
    }

    pub fn resolve_injection(
        &self,
        class_count: usize,
        hidden_count: usize,
    ) -> Result<Option<InjectionSpec>> {
        let Some(inj) = &self.injection else {
            return Ok(None);
        };
        let seed = inj
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, SALT_INJECTION));
        inj.choices()
            .resolve(inj.kind, seed, class_count, hidden_count)
            .map(Some)
            .map_err(|e| Error::config("injection", e.to_string()))
    }

    pub fn trend_thresholds(&self) -> Option<TrendThresholds> {
        self.thresholds.map(|t| TrendThresholds {
            ascend: t.ascend,
            descend: t.descend,
        })
    }

    /// Replaces the global seed; explicitly configured component seeds are kept.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_thresholds(mut self, th: TrendThresholds) -> Self {
        self.thresholds = Some(ThresholdConfig {
            ascend: th.ascend,
            descend: th.descend,
        });
        self
    }

    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        self.output_dir = dir;
        self
    }

    /// Config as echoed into reports: everything except where outputs go.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        v
    }
}

fn check_settings(field: &str, s: &TrainSettings) -> Result<()> {
    if !(s.learning_rate.is_finite() && s.learning_rate > 0.0) {
        return Err(Error::config(
            format!("{field}.learning_rate"),
            "must be a positive number",
        ));
    }
    if s.epochs == 0 {
        return Err(Error::config(
            format!("{field}.epochs"),
            "must be at least 1",
        ));
    }
    if s.batch_size == 0 {
        return Err(Error::config(
            format!("{field}.batch_size"),
            "must be at least 1",
        ));
    }
    Ok(())
}

fn to_train_config(s: &TrainSettings, derived: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: s.learning_rate,
        epochs: s.epochs,
        batch_size: s.batch_size,
        seed: s.seed.unwrap_or(derived),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        [dataset.synthetic]
        class_count = 3
        cases_per_class = 10
        test_cases_per_class = 5
        dimension = 4
        separation = 5.0
        noise_sigma = 1.0
        [network]
        hidden_widths = [6, 6]
        [train]
        learning_rate = 0.1
        epochs = 2
        batch_size = 4
    "#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
        assert!(cfg.injection.is_none());
        assert_eq!(cfg.probe_train_config().epochs, 2);
        assert_ne!(cfg.probe_train_config().seed, cfg.base_train_config().seed);
        let (train, test) = cfg.load_datasets().unwrap();
        assert_eq!(train.len(), 30);
        assert_eq!(test.len(), 15);
        assert_ne!(train.cases()[0], test.cases()[0]);
        let spec = cfg.network_spec(4, 3).unwrap();
        assert_eq!(spec.layer_count(), 3);
    }

    #[test]
    fn rejects_two_sources_and_unknown_fields() {
        let two = format!("{MINIMAL}\n[dataset.cache]\ntrain = \"a\"\ntest = \"b\"\n");
        match ExperimentConfig::parse(&two).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "dataset"),
            other => panic!("{other:?}"),
        }
        let unknown = MINIMAL.replace("seed = 3", "seed = 3\nbogus = 1");
        assert!(matches!(
            ExperimentConfig::parse(&unknown),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn missing_file_names_the_field() {
        let text = MINIMAL.replace(
            "[dataset.synthetic]",
            "[dataset.delimited]\ntrain = \"/nonexistent/train.csv\"\ntest = \"/nonexistent/test.csv\"\nclass_count = 3\n[unused]",
        );
        // the leftover synthetic keys land in an unknown table and are rejected
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = r#"
            seed = 1
            [dataset.delimited]
            train = "/nonexistent/train.csv"
            test = "/nonexistent/test.csv"
            class_count = 3
            [network]
            hidden_widths = [4]
            [train]
            learning_rate = 0.1
            epochs = 1
            batch_size = 1
        "#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        match cfg.load_datasets().unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "dataset.delimited.train"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn injection_resolution_is_seeded() {
        let text = format!("{MINIMAL}\n[injection]\nkind = \"ITD\"\nitd_class_count = 1\n");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let a = cfg.resolve_injection(3, 2).unwrap().unwrap();
        let b = cfg.resolve_injection(3, 2).unwrap().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.itd_classes.len(), 1);
        let c = cfg
            .clone()
            .with_seed(99)
            .resolve_injection(3, 2)
            .unwrap()
            .unwrap();
        assert_ne!(a.seed, c.seed);
    }

    #[test]
    fn echo_omits_output_dir() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let a = cfg.clone().with_output_dir("x".into()).echo();
        let b = cfg.with_output_dir("y".into()).echo();
        assert_eq!(a, b);
        assert!(a.get("output_dir").is_none());
    }

    #[test]
    fn rejects_bad_settings() {
        let text = MINIMAL.replace("epochs = 2", "epochs = 0");
        match ExperimentConfig::parse(&text).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "train.epochs"),
            other => panic!("{other:?}"),
        }
    }
}
