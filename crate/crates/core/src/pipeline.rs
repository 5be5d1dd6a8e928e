//! End-to-end operations behind the command line: train a base model, plant
//! a defect, analyze faulty test cases, or chain all three.
//!
//! Every operation writes into the configured output directory and holds an
//! advisory lock file there while it runs. Outputs depend only on the config,
//! so rerunning with the same config reproduces them byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::config::{ExperimentConfig, InjectionConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::footprint::{self, default_thresholds, ClassifiedCase, DefectType};
use crate::inject::{apply_injection, InjectionManifest};
use crate::nn::{self, Model, NetworkSpec};
use crate::probe::{extract_faulty_dfs, instrument, train_probes};
use crate::report::{round6, ModelSummary, ReportContext, ReportDocument};

pub const MODEL_FILE: &str = "model.msc";
pub const INSTRUMENTED_FILE: &str = "instrumented.msc";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const INJECTED_TRAIN_FILE: &str = "injected_train.dsc";
pub const NETWORK_FILE: &str = "network.json";
pub const MANIFEST_FILE: &str = "injection_manifest.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const LOCK_FILE: &str = ".rankprobe.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::State(format!(
                "{} is in use by another run; remove {} if that run is gone",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Training data and network after the configured injection, if any.
struct Prepared {
    train: LabeledDataset,
    test: LabeledDataset,
    network: NetworkSpec,
    manifest: Option<InjectionManifest>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (train, test) = cfg.load_datasets()?;
    let classes = train.class_count();
    let network = cfg.network_spec(train.input_width(), classes)?;
    match cfg.resolve_injection(classes, network.hidden_count())? {
        None => Ok(Prepared {
            train,
            test,
            network,
            manifest: None,
        }),
        Some(spec) => {
            let (train, network, manifest) = apply_injection(&spec, &train, &network)?;
            Ok(Prepared {
                train,
                test,
                network,
                manifest: Some(manifest),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub epoch_losses: Vec<f64>,
    #[serde(skip)]
    pub model_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectOutcome {
    pub manifest: InjectionManifest,
    pub dataset_path: PathBuf,
    pub network_path: PathBuf,
    pub manifest_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOutcome {
    pub report: ReportDocument,
    pub json_path: PathBuf,
    pub text_path: PathBuf,
    pub csv_path: PathBuf,
}

/// One experiment: which defect was planted and which one the analysis found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub injected: Option<DefectType>,
    pub reported: Option<DefectType>,
    pub dominant_is_strict: bool,
    pub base_test_accuracy: f64,
    pub faulty_case_total: usize,
}

impl ExperimentSummary {
    /// `Some(true)` when the report's dominant defect is the planted one and
    /// strictly outnumbers the others; `None` without an injection.
    pub fn matched(&self) -> Option<bool> {
        self.injected
            .map(|i| self.reported == Some(i) && self.dominant_is_strict)
    }

    pub fn line(&self) -> String {
        let name = |d: Option<DefectType>| d.map_or("none", DefectType::as_str);
        let matched = match self.matched() {
            Some(true) => "true",
            Some(false) => "false",
            None => "n/a",
        };
        format!(
            "injected={} reported={} match={}",
            name(self.injected),
            name(self.reported),
            matched
        )
    }
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let out = cfg.output_path();
    let _lock = OutputLock::acquire(&out)?;
    train_into(cfg, &out)
}

fn train_into(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    let p = prepare(cfg)?;
    let (model, epoch_losses) =
        nn::train_with_history(&p.network, &p.train, &cfg.base_train_config())?;
    let outcome = TrainOutcome {
        train_accuracy: round6(model.accuracy(&p.train)?),
        test_accuracy: round6(model.accuracy(&p.test)?),
        epoch_losses,
        model_path: out.join(MODEL_FILE),
    };
    write_file(&outcome.model_path, &codec::encode_model(&model))?;
    let mut summary = serde_json::to_string_pretty(&outcome).expect("summary serializes");
    summary.push('\n');
    write_file(&out.join(TRAIN_SUMMARY_FILE), summary.as_bytes())?;
    Ok(outcome)
}

/// Writes the corrupted training set, the network spec and a manifest of
/// what changed. Fails when the config has no `[injection]`.
pub fn cmd_inject(cfg: &ExperimentConfig) -> Result<InjectOutcome> {
    let out = cfg.output_path();
    let _lock = OutputLock::acquire(&out)?;
    inject_into(cfg, &out)
}

fn inject_into(cfg: &ExperimentConfig, out: &Path) -> Result<InjectOutcome> {
    if cfg.injection.is_none() {
        return Err(Error::config("injection", "no injection is configured"));
    }
    let p = prepare(cfg)?;
    let manifest = p.manifest.expect("injection configured");
    let outcome = InjectOutcome {
        manifest,
        dataset_path: out.join(INJECTED_TRAIN_FILE),
        network_path: out.join(NETWORK_FILE),
        manifest_path: out.join(MANIFEST_FILE),
    };
    p.train.write_cache(&outcome.dataset_path)?;
    let mut net = serde_json::to_string_pretty(&p.network).expect("network serializes");
    net.push('\n');
    write_file(&outcome.network_path, net.as_bytes())?;
    let mut man = serde_json::to_string_pretty(&outcome.manifest).expect("manifest serializes");
    man.push('\n');
    write_file(&outcome.manifest_path, man.as_bytes())?;
    Ok(outcome)
}

/// Instruments the model at `model_path` (default: the output directory's
/// model), trains probes on the configured training data and classifies
/// every faulty test case. Zero faulty cases is a valid outcome.
pub fn cmd_analyze(cfg: &ExperimentConfig, model_path: Option<&Path>) -> Result<AnalyzeOutcome> {
    let out = cfg.output_path();
    let _lock = OutputLock::acquire(&out)?;
    analyze_into(cfg, model_path, &out)
}

fn analyze_into(
    cfg: &ExperimentConfig,
    model_path: Option<&Path>,
    out: &Path,
) -> Result<AnalyzeOutcome> {
    let default_path = out.join(MODEL_FILE);
    let path = model_path.unwrap_or(&default_path);
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = codec::decode_model(&bytes)?;
    let p = prepare(cfg)?;
    check_compatible(&model, &p.test)?;

    let thresholds = match cfg.trend_thresholds() {
        Some(t) => t,
        None => default_thresholds(model.layer_count())?,
    };
    let base_test_accuracy = model.accuracy(&p.test)?;
    let model_summary = summarize_model(&model);
    let im = instrument(model, cfg.probe_init_seed())?;
    let im = train_probes(&im, &p.train, &cfg.probe_train_config())?;
    write_file(
        &out.join(INSTRUMENTED_FILE),
        &codec::encode_instrumented(&im),
    )?;

    let footprints = extract_faulty_dfs(&im, &p.test)?;
    let per_case = footprints
        .iter()
        .map(|f| {
            let ranks = footprint::value_rank_list(f)?;
            let defect = footprint::classify_trend(&ranks, thresholds)?;
            Ok(ClassifiedCase {
                case_id: f.source_case_id,
                defect,
                ranks: ranks.ranks,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let defects = footprint::aggregate(per_case);
    let ctx = ReportContext {
        config: cfg.echo(),
        model: model_summary,
        injection: p.manifest.as_ref(),
        base_test_accuracy,
        test_case_total: p.test.len(),
        thresholds,
    };
    let report = ReportDocument::build(ctx, &footprints, &defects);
    let outcome = AnalyzeOutcome {
        json_path: out.join(REPORT_JSON_FILE),
        text_path: out.join(REPORT_TEXT_FILE),
        csv_path: out.join(TRAJECTORIES_FILE),
        report,
    };
    write_file(&outcome.json_path, outcome.report.to_json().as_bytes())?;
    write_file(&outcome.text_path, outcome.report.to_text().as_bytes())?;
    write_file(
        &outcome.csv_path,
        outcome.report.trajectories_csv().as_bytes(),
    )?;
    Ok(outcome)
}

fn check_compatible(model: &Model, test: &LabeledDataset) -> Result<()> {
    let width = model.spec().input_width();
    if width != test.input_width() {
        return Err(Error::shape(
            format!("test inputs of width {width}"),
            format!("width {}", test.input_width()),
        ));
    }
    if model.class_count() != test.class_count() {
        return Err(Error::shape(
            format!("{} classes", model.class_count()),
            format!("{} classes in the test set", test.class_count()),
        ));
    }
    Ok(())
}

fn summarize_model(model: &Model) -> ModelSummary {
    let spec = model.spec();
    let mut widths = vec![spec.input_width()];
    widths.extend(spec.layers.iter().map(|l| l.output_width));
    ModelSummary {
        layer_count: spec.layer_count(),
        class_count: spec.class_count,
        widths,
    }
}

/// Inject (when configured), train and analyze in one output directory.
/// Errors name the stage that failed.
pub fn cmd_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let out = cfg.output_path();
    let _lock = OutputLock::acquire(&out)?;
    experiment_into(cfg, &out)
}

fn experiment_into(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary> {
    if cfg.injection.is_some() {
        inject_into(cfg, out).map_err(|e| e.in_stage("inject"))?;
    }
    let trained = train_into(cfg, out).map_err(|e| e.in_stage("train"))?;
    let analyzed =
        analyze_into(cfg, Some(&trained.model_path), out).map_err(|e| e.in_stage("analyze"))?;
    let r = &analyzed.report;
    let summary = ExperimentSummary {
        seed: cfg.seed,
        injected: cfg.injection.as_ref().map(|i| i.kind),
        reported: r.dominant,
        dominant_is_strict: r.dominant_is_strict,
        base_test_accuracy: r.base_test_accuracy,
        faulty_case_total: r.faulty_case_total,
    };
    write_file(
        &out.join(SUMMARY_FILE),
        format!("{}\n", summary.line()).as_bytes(),
    )?;
    Ok(summary)
}

/// Runs one experiment per (defect, seed) pair, each in
/// `<output_dir>/<defect>-seed<seed>`, keeping any injection choices from
/// `cfg` other than the kind.
pub fn run_grid(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    defects: &[DefectType],
) -> Result<Vec<ExperimentSummary>> {
    if seeds.is_empty() || defects.is_empty() {
        return Err(Error::arg("a grid needs at least one seed and one defect"));
    }
    let out = cfg.output_path();
    let _lock = OutputLock::acquire(&out)?;
    let mut summaries = Vec::with_capacity(seeds.len() * defects.len());
    let mut table = String::new();
    for &kind in defects {
        for &seed in seeds {
            let mut injection = cfg
                .injection
                .clone()
                .unwrap_or_else(|| InjectionConfig::new(kind));
            injection.kind = kind;
            let mut run = cfg.clone().with_seed(seed);
            run.injection = Some(injection);
            let dir = out.join(format!("{kind}-seed{seed}"));
            let _run_lock = OutputLock::acquire(&dir)?;
            let s = experiment_into(&run, &dir)?;
            table.push_str(&format!("seed={seed} {}\n", s.line()));
            summaries.push(s);
        }
    }
    let hits = summaries
        .iter()
        .filter(|s| s.matched() == Some(true))
        .count();
    table.push_str(&format!("matched {hits} of {}\n", summaries.len()));
    write_file(&out.join(SUMMARY_FILE), table.as_bytes())?;
    Ok(summaries)
}
