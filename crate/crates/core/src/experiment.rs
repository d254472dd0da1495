//! Multi-seed, multi-loss experiments: train, export features, analyse,
//! score, and compare loss modes with paired statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    impostor_report, paired_t_test, pearson_correlation, write_feature_csv, Correlation, FeatureRow,
    ImpostorMode, SeparabilityReport, StdDivisor, TTest,
};
use crate::error::{Error, Result};
use crate::metrics::{
    binarize_predictions, mean_average_precision, prf_metrics, PrfMetrics, RankedPredictions, ZeroPolicy,
};
use crate::schedule::Schedule;
use crate::train::{
    evaluate, export_features, generate_blobs, generate_multilabel_blobs, load_cifar10_binary, predict, train,
    write_scatter_csv, Activation, Dataset, History, Labels, LossMode, MlpConfig, Model, MultiLabelBlobSpec,
    PredictorInit, SgdConfig, SyntheticBlobSpec, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Train and test sets are drawn from `spec` with seeds
    /// `spec.seed + 2 * run_seed` and `spec.seed + 2 * run_seed + 1`.
    Blobs {
        spec: SyntheticBlobSpec,
        test_samples_per_class: usize,
    },
    /// As `blobs`; class centers come from `spec.seed` and are shared by
    /// every run.
    MultilabelBlobs { spec: MultiLabelBlobSpec, test_samples: usize },
    /// CIFAR-10 binary batches; the same data for every seed.
    Cifar10 {
        train: Vec<PathBuf>,
        test: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl DatasetSpec {
    fn is_multilabel(&self) -> bool {
        matches!(self, DatasetSpec::MultilabelBlobs { .. })
    }

    fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::Blobs { spec, .. } => spec.validate(),
            DatasetSpec::MultilabelBlobs { spec, .. } => spec.validate(),
            DatasetSpec::Cifar10 { train, .. } if train.is_empty() => {
                Err(Error::Config("cifar10: no training batches listed".into()))
            }
            DatasetSpec::Cifar10 { .. } => Ok(()),
        }
    }

    /// Train and test sets for one run.
    pub fn load(&self, run_seed: u64) -> Result<(Dataset, Dataset)> {
        let train_seed = |base: u64| base.wrapping_add(run_seed.wrapping_mul(2));
        match self {
            DatasetSpec::Blobs {
                spec,
                test_samples_per_class,
            } => {
                let tr = generate_blobs(&spec.with_seed(train_seed(spec.seed)))?;
                let mut test_spec = spec.with_seed(train_seed(spec.seed).wrapping_add(1));
                test_spec.samples_per_class = *test_samples_per_class;
                Ok((tr, generate_blobs(&test_spec)?))
            }
            DatasetSpec::MultilabelBlobs { spec, test_samples } => {
                let tr = generate_multilabel_blobs(&spec.with_seed(train_seed(spec.seed)), spec.seed)?;
                let mut test_spec = spec.with_seed(train_seed(spec.seed).wrapping_add(1));
                test_spec.samples = *test_samples;
                Ok((tr, generate_multilabel_blobs(&test_spec, spec.seed)?))
            }
            DatasetSpec::Cifar10 { train, test, limit } => {
                let mut inputs = Vec::new();
                let mut labels = Vec::new();
                for path in train {
                    let d = load_cifar10_binary(path)?;
                    inputs.extend(d.inputs);
                    if let Labels::Single(l) = d.labels {
                        labels.extend(l);
                    }
                }
                let mut tr = Dataset::new(inputs, Labels::Single(labels), 10)?;
                let mut te = load_cifar10_binary(test)?;
                if let Some(n) = limit {
                    tr = tr.truncated(*n);
                    te = te.truncated(*n);
                }
                Ok((tr, te))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub batch_size: usize,
    #[serde(default = "one")]
    pub predictor_lr_multiplier: f64,
    #[serde(default = "yes")]
    pub decay_distribution_params: bool,
    #[serde(default)]
    pub learn_lambda: bool,
    #[serde(default)]
    pub parallel: bool,
}

fn default_momentum() -> f64 {
    SgdConfig::default().momentum
}

fn default_weight_decay() -> f64 {
    SgdConfig::default().weight_decay
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub impostor_mode: ImpostorMode,
    #[serde(default)]
    pub std_divisor: StdDivisor,
    /// Decision threshold for precision/recall/F1.
    #[serde(default = "half")]
    pub threshold: f64,
    #[serde(default)]
    pub zero_prediction: ZeroPolicy,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            impostor_mode: ImpostorMode::default(),
            std_divisor: StdDivisor::default(),
            threshold: 0.5,
            zero_prediction: ZeroPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default)]
    pub report_format: ReportFormat,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out(),
            report_format: ReportFormat::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub network: NetworkConfig,
    pub loss_modes: Vec<LossMode>,
    #[serde(default)]
    pub predictor: PredictorInit,
    pub schedule: Schedule,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.loss_modes.is_empty() {
            return Err(Error::Config("loss_modes is empty".into()));
        }
        let mut seen = self.loss_modes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.loss_modes.len() {
            return Err(Error::Config("loss_modes contains duplicates".into()));
        }
        if let Some(m) = self.loss_modes.iter().find(|m| m.is_multilabel() != self.dataset.is_multilabel()) {
            return Err(Error::Config(format!("loss mode {m} does not fit the dataset's label type")));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds is empty".into()));
        }
        if self.network.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden dimensions must be >= 1".into()));
        }
        let p = self.predictor;
        if !(p.lambda >= 0.0 && p.lambda.is_finite() && p.mu.is_finite() && p.sigma > 0.0 && p.sigma.is_finite()) {
            return Err(Error::Config("predictor needs lambda >= 0, finite mu and sigma > 0".into()));
        }
        let t = self.analysis.threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Config(format!("threshold {t} must lie in (0, 1)")));
        }
        self.train_config(0).validate()
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        let o = &self.optimizer;
        TrainConfig {
            epochs: self.epochs,
            batch_size: o.batch_size,
            schedule: self.schedule.clone(),
            sgd: SgdConfig {
                momentum: o.momentum,
                weight_decay: o.weight_decay,
            },
            predictor_lr_multiplier: o.predictor_lr_multiplier,
            decay_distribution_params: o.decay_distribution_params,
            learn_lambda: o.learn_lambda,
            seed,
            parallel: o.parallel,
        }
    }
}

/// Everything a run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub model: Model,
    pub history: History,
    pub features: Vec<FeatureRow>,
    pub test: Dataset,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: LossMode,
    pub seed: u64,
    pub final_loss: f64,
    pub train_metric: f64,
    /// Test accuracy for single-label data.
    pub test_accuracy: Option<f64>,
    pub test_map: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub prf: PrfMetrics,
    pub mean_compactness: f64,
    pub mean_separability: f64,
    pub mean_ratio: f64,
    pub separability: SeparabilityReport,
    pub lambda: Option<f64>,
}

/// One model trained and evaluated end to end.
pub fn run_one(cfg: &ExperimentConfig, mode: LossMode, seed: u64) -> Result<RunArtifacts> {
    let (train_set, test) = cfg.dataset.load(seed)?;
    let net = MlpConfig {
        input_dim: train_set.dim(),
        hidden_dims: cfg.network.hidden_dims.clone(),
        output_dim: mode.output_dim(train_set.num_classes),
        activation: cfg.network.activation,
        seed,
    };
    let mut model = Model::new(mode, &net, train_set.num_classes, cfg.predictor)?;
    let history = train(&mut model, &train_set, Some(&test), &cfg.train_config(seed))?;
    let last = history.last().expect("at least one epoch");

    let features = export_features(&model, &test);
    let separability = impostor_report(&features, cfg.analysis.impostor_mode, cfg.analysis.std_divisor)?;

    let scores = predict(&model, &test)?;
    let labels: Vec<Vec<bool>> = match &test.labels {
        Labels::Single(y) => y.iter().map(|&c| (0..test.num_classes).map(|k| k == c).collect()).collect(),
        Labels::Multi(y) => y.clone(),
    };
    let map = mean_average_precision(&RankedPredictions::from_matrix(&scores, &labels)?)?;
    let counts = binarize_predictions(&scores, &labels, cfg.analysis.threshold)?;
    let prf = prf_metrics(&counts, cfg.analysis.zero_prediction)?;

    let summary = RunSummary {
        mode,
        seed,
        final_loss: last.loss,
        train_metric: last.train_metric,
        test_accuracy: match test.labels {
            Labels::Single(_) => Some(evaluate(&model, &test)?),
            Labels::Multi(_) => None,
        },
        test_map: map.map,
        per_class_ap: map.per_class,
        prf,
        mean_compactness: separability.mean_compactness(),
        mean_separability: separability.mean_separability(),
        mean_ratio: separability.mean_ratio(),
        separability,
        lambda: model.head.lambda(),
    };
    Ok(RunArtifacts {
        model,
        history,
        features,
        test,
        summary,
    })
}

/// Paired comparison of `candidate` against `baseline` over per-class values
/// averaged across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: LossMode,
    pub candidate: LossMode,
    pub metric: String,
    pub classes: Vec<usize>,
    pub baseline_values: Vec<f64>,
    pub candidate_values: Vec<f64>,
    pub t_test: Option<TTest>,
    pub pearson: Option<Correlation>,
    /// Why a statistic is missing, if one is.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: LossMode,
    pub mean_test_accuracy: Option<f64>,
    pub mean_test_map: f64,
    pub mean_ratio: f64,
    pub mean_compactness: f64,
    pub mean_separability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub runs: Vec<RunSummary>,
    pub aggregates: Vec<ModeAggregate>,
    pub comparisons: Vec<Comparison>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Per-class values averaged over the runs of one mode; `None` where some
/// run has no value.
fn per_class_mean(runs: &[&RunSummary], values: impl Fn(&RunSummary) -> Vec<Option<f64>>) -> Vec<Option<f64>> {
    let rows: Vec<Vec<Option<f64>>> = runs.iter().map(|r| values(r)).collect();
    let width = rows.iter().map(Vec::len).min().unwrap_or(0);
    (0..width)
        .map(|c| {
            let col: Option<Vec<f64>> = rows.iter().map(|r| r[c]).collect();
            col.map(|v| mean(v.into_iter()))
        })
        .collect()
}

fn compare(metric: &str, baseline: LossMode, candidate: LossMode, a: &[Option<f64>], b: &[Option<f64>]) -> Comparison {
    let (mut classes, mut av, mut bv) = (Vec::new(), Vec::new(), Vec::new());
    for (c, (x, y)) in a.iter().zip(b).enumerate() {
        if let (Some(x), Some(y)) = (x, y) {
            classes.push(c);
            av.push(*x);
            bv.push(*y);
        }
    }
    let mut notes = Vec::new();
    let t_test = paired_t_test(&bv, &av).map_err(|e| notes.push(format!("t-test: {e}"))).ok();
    let pearson = pearson_correlation(&av, &bv).map_err(|e| notes.push(format!("pearson: {e}"))).ok();
    Comparison {
        baseline,
        candidate,
        metric: metric.into(),
        classes,
        baseline_values: av,
        candidate_values: bv,
        t_test,
        pearson,
        notes,
    }
}

pub fn summarize(runs: Vec<RunSummary>, modes: &[LossMode]) -> ExperimentSummary {
    let by_mode: BTreeMap<LossMode, Vec<&RunSummary>> = modes
        .iter()
        .map(|&m| (m, runs.iter().filter(|r| r.mode == m).collect()))
        .collect();
    let aggregates = modes
        .iter()
        .map(|m| {
            let rs = &by_mode[m];
            ModeAggregate {
                mode: *m,
                mean_test_accuracy: rs.iter().map(|r| r.test_accuracy).collect::<Option<Vec<_>>>().map(|v| mean(v.into_iter())),
                mean_test_map: mean(rs.iter().map(|r| r.test_map)),
                mean_ratio: mean(rs.iter().map(|r| r.mean_ratio)),
                mean_compactness: mean(rs.iter().map(|r| r.mean_compactness)),
                mean_separability: mean(rs.iter().map(|r| r.mean_separability)),
            }
        })
        .collect();
    let mut comparisons = Vec::new();
    if let Some((&base, rest)) = modes.split_first() {
        let ap = |r: &RunSummary| r.per_class_ap.clone();
        let ratio = |r: &RunSummary| {
            let mut v = vec![None; r.per_class_ap.len()];
            for c in &r.separability.per_class {
                if c.class_id < v.len() {
                    v[c.class_id] = Some(c.ratio);
                }
            }
            v
        };
        for &cand in rest {
            for (name, f) in [("per_class_ap", &ap as &dyn Fn(&RunSummary) -> Vec<Option<f64>>), ("per_class_ratio", &ratio)] {
                let a = per_class_mean(&by_mode[&base], f);
                let b = per_class_mean(&by_mode[&cand], f);
                comparisons.push(compare(name, base, cand, &a, &b));
            }
        }
    }
    ExperimentSummary {
        runs,
        aggregates,
        comparisons,
    }
}

/// Runs every (mode, seed) pair in order and summarizes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<RunArtifacts>, ExperimentSummary)> {
    cfg.validate()?;
    let mut artifacts = Vec::new();
    for &mode in &cfg.loss_modes {
        for &seed in &cfg.seeds {
            artifacts.push(run_one(cfg, mode, seed)?);
        }
    }
    let summary = summarize(artifacts.iter().map(|a| a.summary.clone()).collect(), &cfg.loss_modes);
    Ok((artifacts, summary))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<dir>/<mode>/seed_<seed>/{history.csv, features.csv, scatter.csv,
/// model.json, report.json|csv}` and `<dir>/summary.json`.
pub fn write_outputs(dir: &Path, format: ReportFormat, artifacts: &[RunArtifacts], summary: &ExperimentSummary) -> Result<()> {
    for a in artifacts {
        let run_dir = dir.join(a.summary.mode.name()).join(format!("seed_{}", a.summary.seed));
        fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        a.history.write_csv(create(&run_dir.join("history.csv"))?)?;
        write_feature_csv(&a.features, create(&run_dir.join("features.csv"))?)?;
        write_scatter_csv(&a.model, &a.test, create(&run_dir.join("scatter.csv"))?)?;
        write_json(&run_dir.join("model.json"), &a.model)?;
        match format {
            ReportFormat::Json => write_json(&run_dir.join("report.json"), &a.summary.separability)?,
            ReportFormat::Csv => a.summary.separability.write_csv(create(&run_dir.join("report.csv"))?)?,
        }
    }
    write_json(&dir.join("summary.json"), summary)
}

/// Runs the experiment and writes everything under `dir`.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentSummary> {
    let (artifacts, summary) = run_experiment(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_outputs(dir, cfg.output.report_format, &artifacts, &summary)?;
    Ok(summary)
}
