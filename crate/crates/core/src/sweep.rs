//! Two-phase hyperparameter search: a 144-point grid per variant at a
//! reference size, then the top configurations at several image sizes.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::MetricsReport;
use crate::model::{mix_seed, ModelConfig, Variant};
use crate::nn::ActivationKind;
use crate::optim::OptimizerKind;
use crate::trainer::{self, TestSet, TrainError, TrainSpec, TrainingData, TrialStatus, DEFAULT_THRESHOLD};

pub const RESULTS_HEADER: [&str; 16] = [
    "model",
    "optimizer",
    "activation",
    "learning_rate",
    "max_pooling",
    "batch_normalization",
    "image_size",
    "loss",
    "accuracy",
    "precision",
    "recall",
    "auc",
    "tp",
    "tn",
    "fp",
    "fn",
];

/// Grid axes in enumeration order.
pub const GRID_OPTIMIZERS: [OptimizerKind; 3] = OptimizerKind::ALL;
pub const GRID_ACTIVATIONS: [ActivationKind; 6] = [
    ActivationKind::Elu,
    ActivationKind::Exponential,
    ActivationKind::Selu,
    ActivationKind::Relu,
    ActivationKind::Sigmoid,
    ActivationKind::Tanh,
];
pub const GRID_LEARNING_RATES: [f64; 2] = [1e-3, 1e-4];
pub const GRID_FLAGS: [bool; 2] = [true, false];

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("variant {variant} has {ok} successful trials, need {needed}")]
    NotEnoughTrials { variant: Variant, ok: usize, needed: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("results table: {0}")]
    Table(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SweepError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub optimizer: OptimizerKind,
    pub activation: ActivationKind,
    pub learning_rate: f64,
    pub use_maxpool: bool,
    pub use_batchnorm: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Rmsprop,
            activation: ActivationKind::Elu,
            learning_rate: 1e-3,
            use_maxpool: true,
            use_batchnorm: false,
        }
    }
}

impl HyperParams {
    /// `base` with this activation and the two layer toggles.
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            activation: self.activation,
            use_maxpool: self.use_maxpool,
            use_batchnorm: self.use_batchnorm,
            ..base.clone()
        }
    }
}

impl fmt::Display for HyperParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}/{}",
            self.optimizer,
            self.activation,
            self.learning_rate,
            if self.use_maxpool { "mp" } else { "no-mp" },
            if self.use_batchnorm { "bn" } else { "no-bn" }
        )
    }
}

/// Subset of each grid axis; the default is the full grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub optimizers: Vec<OptimizerKind>,
    pub activations: Vec<ActivationKind>,
    pub learning_rates: Vec<f64>,
    pub max_pooling: Vec<bool>,
    pub batch_normalization: Vec<bool>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            optimizers: GRID_OPTIMIZERS.to_vec(),
            activations: GRID_ACTIVATIONS.to_vec(),
            learning_rates: GRID_LEARNING_RATES.to_vec(),
            max_pooling: GRID_FLAGS.to_vec(),
            batch_normalization: GRID_FLAGS.to_vec(),
        }
    }
}

impl GridSpec {
    /// Lexicographic product over (optimizer, activation, learning rate,
    /// pooling, normalization).
    pub fn enumerate(&self) -> Vec<HyperParams> {
        let mut out = Vec::new();
        for &optimizer in &self.optimizers {
            for &activation in &self.activations {
                for &learning_rate in &self.learning_rates {
                    for &use_maxpool in &self.max_pooling {
                        for &use_batchnorm in &self.batch_normalization {
                            out.push(HyperParams {
                                optimizer,
                                activation,
                                learning_rate,
                                use_maxpool,
                                use_batchnorm,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn enumerate_grid() -> Vec<HyperParams> {
    GridSpec::default().enumerate()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub variant: Variant,
    pub hyperparams: HyperParams,
    pub image_size: usize,
    pub seed: u64,
    pub status: TrialStatus,
    /// Validation metrics in phase 1, test metrics in phase 2. Absent for
    /// diverged trials.
    pub metrics: Option<MetricsReport>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: u8,
    pub trials: Vec<TrialResult>,
    /// Phase 1 only: the configurations chosen for phase 2.
    #[serde(default)]
    pub selected: Vec<(Variant, HyperParams)>,
}

impl PhaseReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| io_err(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> SweepError {
    SweepError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Training settings shared by every trial of a phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub base_model: ModelConfig,
    pub epochs_max: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub patience: Option<usize>,
    pub seed: u64,
}

impl SweepSettings {
    fn spec(&self, hyperparams: HyperParams, image_size: usize, seed: u64) -> TrainSpec {
        TrainSpec {
            epochs_max: self.epochs_max,
            batch_size: self.batch_size,
            validation_fraction: self.validation_fraction,
            patience: self.patience,
            seed,
            hyperparams,
            image_size,
        }
    }
}

fn run_trial(
    settings: &SweepSettings,
    variant: Variant,
    hyperparams: HyperParams,
    image_size: usize,
    seed: u64,
    data: &TrainingData,
    score_on: Option<&TestSet>,
) -> Result<TrialResult> {
    let spec = settings.spec(hyperparams, image_size, seed);
    let base = ModelConfig {
        variant,
        ..settings.base_model.clone()
    };
    let mut graph = spec.build_graph(&base)?;
    let out = trainer::train_model(&mut graph, data, &spec)?;
    let metrics = match out.report.status {
        TrialStatus::Diverged => None,
        TrialStatus::Ok => {
            let owned;
            let set = match score_on {
                Some(t) => t,
                None => {
                    owned = TestSet(data.validation.clone());
                    &owned
                }
            };
            Some(trainer::evaluate(&mut graph, &out.weights, set, DEFAULT_THRESHOLD)?)
        }
    };
    log::info!(
        "{variant} {hyperparams} @{image_size}: {} acc {}",
        out.report.status.as_str(),
        metrics.map_or("-".into(), |m| format!("{:.3}", m.accuracy))
    );
    Ok(TrialResult {
        variant,
        hyperparams,
        image_size,
        seed,
        status: out.report.status,
        metrics,
        best_epoch: out.report.best_epoch,
        epochs_run: out.report.epochs.len(),
        seconds: out.report.seconds,
    })
}

/// Trains every variant × grid point on `data` (already sized to
/// `image_size`) and scores each on its validation split. Trials run on the
/// current rayon pool; rows come back in variant-then-grid order.
pub fn run_phase1(
    variants: &[Variant],
    grid: &[HyperParams],
    image_size: usize,
    data: &TrainingData,
    settings: &SweepSettings,
    per_model: usize,
) -> Result<PhaseReport> {
    if data.train.is_empty() {
        return Err(TrainError::EmptyTrainingSet.into());
    }
    let jobs: Vec<(usize, Variant, HyperParams)> = variants
        .iter()
        .flat_map(|&v| grid.iter().map(move |&h| (v, h)))
        .enumerate()
        .map(|(i, (v, h))| (i, v, h))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(i, v, h)| {
            run_trial(
                settings,
                v,
                h,
                image_size,
                mix_seed(settings.seed, i as u64),
                data,
                None,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = PhaseReport {
        phase: 1,
        trials,
        selected: Vec::new(),
    };
    report.selected = select_top(&report, per_model)?;
    Ok(report)
}

fn rank_key(m: &MetricsReport) -> (f64, f64, f64) {
    (m.accuracy, m.auc.unwrap_or(f64::NEG_INFINITY), -m.mean_loss)
}

/// Per variant (in first-appearance order), the `per_model` ok trials with
/// the highest accuracy, then AUC, then lowest loss. Earlier trials win
/// exact ties.
pub fn select_top(report: &PhaseReport, per_model: usize) -> Result<Vec<(Variant, HyperParams)>> {
    let mut variants: Vec<Variant> = Vec::new();
    for t in &report.trials {
        if !variants.contains(&t.variant) {
            variants.push(t.variant);
        }
    }
    let mut out = Vec::new();
    for v in variants {
        let mut ok: Vec<(&TrialResult, &MetricsReport)> = report
            .trials
            .iter()
            .filter(|t| t.variant == v && t.status == TrialStatus::Ok)
            .filter_map(|t| t.metrics.as_ref().map(|m| (t, m)))
            .collect();
        if ok.len() < per_model {
            return Err(SweepError::NotEnoughTrials {
                variant: v,
                ok: ok.len(),
                needed: per_model,
            });
        }
        ok.sort_by(|a, b| {
            rank_key(b.1)
                .partial_cmp(&rank_key(a.1))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        out.extend(ok.iter().take(per_model).map(|(t, _)| (v, t.hyperparams)));
    }
    Ok(out)
}

/// Seed for configuration `config_index` at `image_size`.
pub fn phase2_seed(master: u64, config_index: usize, image_size: usize) -> u64 {
    mix_seed(mix_seed(master, config_index as u64), image_size as u64)
}

/// Retrains every selected configuration at every size and scores it on
/// the test split. `load` supplies data resized to the requested size.
/// Rows are grouped by size, then in selection order.
pub fn run_phase2<F>(
    selected: &[(Variant, HyperParams)],
    sizes: &[usize],
    settings: &SweepSettings,
    mut load: F,
) -> Result<PhaseReport>
where
    F: FnMut(usize) -> Result<(TrainingData, TestSet)>,
{
    if selected.is_empty() || sizes.is_empty() {
        return Err(SweepError::InvalidArgument(
            "phase 2 needs at least one config and one size".into(),
        ));
    }
    let mut trials = Vec::new();
    for &size in sizes {
        let (data, test) = load(size)?;
        if test.0.is_empty() {
            return Err(TrainError::EmptyTestSet.into());
        }
        let rows = selected
            .par_iter()
            .enumerate()
            .map(|(i, &(v, h))| {
                run_trial(
                    settings,
                    v,
                    h,
                    size,
                    phase2_seed(settings.seed, i, size),
                    &data,
                    Some(&test),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        trials.extend(rows);
    }
    Ok(PhaseReport {
        phase: 2,
        trials,
        selected: Vec::new(),
    })
}

/// One results-table row at printed precision.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub model: Variant,
    pub optimizer: OptimizerKind,
    pub activation: ActivationKind,
    pub learning_rate: f64,
    pub max_pooling: bool,
    pub batch_normalization: bool,
    pub image_size: usize,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub auc: Option<f64>,
    pub counts: Option<[u64; 4]>,
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

impl ResultRow {
    pub fn from_trial(t: &TrialResult) -> Self {
        let m = t.metrics.as_ref();
        Self {
            model: t.variant,
            optimizer: t.hyperparams.optimizer,
            activation: t.hyperparams.activation,
            learning_rate: t.hyperparams.learning_rate,
            max_pooling: t.hyperparams.use_maxpool,
            batch_normalization: t.hyperparams.use_batchnorm,
            image_size: t.image_size,
            loss: m.map(|m| round3(m.mean_loss)),
            accuracy: m.map(|m| round3(m.accuracy)),
            precision: m.and_then(|m| m.precision).map(round3),
            recall: m.and_then(|m| m.recall).map(round3),
            auc: m.and_then(|m| m.auc).map(round3),
            counts: m.map(|m| [m.counts.tp, m.counts.tn, m.counts.fp, m.counts.fn_]),
        }
    }

    fn cells(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.3}"));
        let yn = |b: bool| if b { "yes" } else { "no" }.to_string();
        let mut cells = vec![
            self.model.as_str().to_string(),
            self.optimizer.as_str().to_string(),
            self.activation.as_str().to_string(),
            self.learning_rate.to_string(),
            yn(self.max_pooling),
            yn(self.batch_normalization),
            self.image_size.to_string(),
            f(self.loss),
            f(self.accuracy),
            f(self.precision),
            f(self.recall),
            f(self.auc),
        ];
        match self.counts {
            Some(c) => cells.extend(c.iter().map(u64::to_string)),
            None => cells.extend(std::iter::repeat_n(String::new(), 4)),
        }
        cells
    }

    fn parse(rec: &csv::StringRecord, line: u64) -> Result<Self> {
        let err = |what: &str| SweepError::Table(format!("line {line}: bad {what}"));
        if rec.len() != RESULTS_HEADER.len() {
            return Err(err("field count"));
        }
        let opt_f = |i: usize| -> Result<Option<f64>> {
            match &rec[i] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| err(RESULTS_HEADER[i])),
            }
        };
        let flag = |i: usize| match &rec[i] {
            "yes" => Ok(true),
            "no" => Ok(false),
            _ => Err(err(RESULTS_HEADER[i])),
        };
        let counts = if rec.iter().skip(12).all(str::is_empty) {
            None
        } else {
            let mut c = [0u64; 4];
            for (k, slot) in c.iter_mut().enumerate() {
                *slot = rec[12 + k].parse().map_err(|_| err(RESULTS_HEADER[12 + k]))?;
            }
            Some(c)
        };
        Ok(Self {
            model: rec[0].parse().map_err(|_| err("model"))?,
            optimizer: rec[1].parse().map_err(|_| err("optimizer"))?,
            activation: rec[2].parse().map_err(|_| err("activation"))?,
            learning_rate: rec[3].parse().map_err(|_| err("learning_rate"))?,
            max_pooling: flag(4)?,
            batch_normalization: flag(5)?,
            image_size: rec[6].parse().map_err(|_| err("image_size"))?,
            loss: opt_f(7)?,
            accuracy: opt_f(8)?,
            precision: opt_f(9)?,
            recall: opt_f(10)?,
            auc: opt_f(11)?,
            counts,
        })
    }
}

/// Renders the results CSV, rows grouped by ascending image size (stable
/// within a size).
pub fn render_results_table(report: &PhaseReport) -> Result<String> {
    let mut trials: Vec<&TrialResult> = report.trials.iter().collect();
    trials.sort_by_key(|t| t.image_size);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER)?;
    for t in trials {
        w.write_record(ResultRow::from_trial(t).cells())?;
    }
    let bytes = w.into_inner().map_err(|e| SweepError::Table(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SweepError::Table(e.to_string()))
}

pub fn emit_results_table(report: &PhaseReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_results_table(report)?).map_err(|e| io_err(path, e))
}

/// Parses a results CSV; the header must match exactly.
pub fn parse_results_table(text: &str) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = rdr.records();
    let header = rows
        .next()
        .ok_or_else(|| SweepError::Table("missing header".into()))??;
    if header.iter().ne(RESULTS_HEADER) {
        return Err(SweepError::Table(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rows.map(|r| {
        let r = r?;
        let line = r.position().map_or(0, |p| p.line());
        ResultRow::parse(&r, line)
    })
    .collect()
}
