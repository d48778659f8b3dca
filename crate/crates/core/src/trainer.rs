//! Single-trial training with a stratified validation split, early stopping
//! on validation loss, evaluation, prediction and inference timing.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{assemble, load_image, make_batches, DatasetError, Label, Sample};
use crate::metrics::{self, MetricsError, MetricsReport};
use crate::model::{mix_seed, ModelConfig, ModelError, ModelGraph, WeightSnapshot};
use crate::nn::{bce_logit_grad, bce_loss, Mode, NnError, Tensor};
use crate::optim::{OptimError, Optimizer};
use crate::sweep::HyperParams;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const LOG_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

const BUILD_SALT: u64 = 0xB01D;
const SHUFFLE_SALT: u64 = 0x5_4AFF;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training spec: {0}")]
    InvalidSpec(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("cannot stratify: {0}")]
    Stratify(String),
    #[error("sample image shape {actual:?} does not match expected {expected:?}")]
    SampleShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    /// Epochs without validation-loss improvement before stopping; `None`
    /// disables early stopping.
    pub patience: Option<usize>,
    pub seed: u64,
    pub hyperparams: HyperParams,
    pub image_size: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs_max: 50,
            batch_size: 16,
            validation_fraction: 0.1,
            patience: Some(10),
            seed: 0,
            hyperparams: HyperParams::default(),
            image_size: 256,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidSpec(m.into()));
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must be in (0, 1)");
        }
        if self.epochs_max == 0 {
            return bad("epochs_max must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.image_size == 0 {
            return bad("image_size must be >= 1");
        }
        if self.patience == Some(0) {
            return bad("patience must be >= 1");
        }
        if !(self.hyperparams.learning_rate > 0.0 && self.hyperparams.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    /// `base` with this spec's activation, pooling, normalization and size.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = self.hyperparams.apply(base);
        cfg.input_size = self.image_size;
        cfg
    }

    /// Builds the graph for [`TrainSpec::model_config`] with weights seeded
    /// from the spec seed.
    pub fn build_graph(&self, base: &ModelConfig) -> Result<ModelGraph> {
        Ok(ModelGraph::build(
            &self.model_config(base),
            mix_seed(self.seed, BUILD_SALT),
        )?)
    }
}

/// Training and validation samples. Test samples live in [`TestSet`], which
/// only [`evaluate`] accepts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingData {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TestSet(pub Vec<Sample>);

fn stratum_size(count: usize, fraction: f64) -> usize {
    (fraction * count as f64 + 1e-9).floor() as usize
}

/// Stratified split of `labels` into (train, validation) index lists, both
/// ascending. Each present class contributes `floor(fraction · n_class)`
/// validation members.
pub fn split_indices(labels: &[u8], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::InvalidSpec("validation fraction must be in (0, 1)".into()));
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let k = stratum_size(members.len(), fraction);
        if k == 0 {
            return Err(TrainError::Stratify(format!(
                "class {} has {} members, fewer than 1/{fraction}",
                Label::from_target(class),
                members.len()
            )));
        }
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::from(class))));
        validation.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok((train, validation))
}

/// Stratified validation split of labelled samples.
pub fn split_validation(samples: Vec<Sample>, fraction: f64, seed: u64) -> Result<TrainingData> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let (_, val_idx) = split_indices(&labels, fraction, seed)?;
    let mut is_val = vec![false; samples.len()];
    val_idx.iter().for_each(|&i| is_val[i] = true);
    let mut data = TrainingData::default();
    for (s, v) in samples.into_iter().zip(is_val) {
        if v {
            data.validation.push(s);
        } else {
            data.train.push(s);
        }
    }
    Ok(data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Diverged,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Diverged => "diverged",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept; 0 when no epoch completed.
    pub best_epoch: usize,
    pub status: TrialStatus,
    pub seconds: f64,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn log_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            );
        }
        s
    }

    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.log_csv()).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Best-epoch weights, also loaded into the graph.
    pub weights: WeightSnapshot,
}

fn check_samples(samples: &[Sample], size: usize) -> Result<()> {
    let expected = vec![size, size, 3];
    match samples.iter().find(|s| s.image.shape() != expected.as_slice()) {
        Some(s) => Err(TrainError::SampleShape {
            expected,
            actual: s.image.shape().to_vec(),
        }),
        None => Ok(()),
    }
}

fn correct(scores: &Tensor<f32>, targets: &Tensor<f32>) -> usize {
    scores
        .data()
        .iter()
        .zip(targets.data())
        .filter(|(&p, &t)| (f64::from(p) >= DEFAULT_THRESHOLD) == (t == 1.0))
        .count()
}

/// Inference-mode scores for every sample, in order.
pub fn score_samples(graph: &mut ModelGraph, samples: &[Sample], batch_size: usize) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = assemble(samples, chunk)?;
        out.extend(graph.predict(&x)?.data().iter().map(|&v| f64::from(v)));
    }
    Ok(out)
}

fn mean_bce(scores: &[f64], samples: &[Sample]) -> Result<f64> {
    let p = Tensor::<f64>::new(vec![scores.len()], scores.to_vec())?;
    let t = Tensor::<f64>::new(
        vec![samples.len()],
        samples.iter().map(|s| f64::from(s.label)).collect(),
    )?;
    Ok(bce_loss(&p, &t)?.0)
}

fn loss_and_accuracy(graph: &mut ModelGraph, samples: &[Sample], batch_size: usize) -> Result<(f64, f64)> {
    let scores = score_samples(graph, samples, batch_size)?;
    let loss = mean_bce(&scores, samples)?;
    let hits = scores
        .iter()
        .zip(samples)
        .filter(|(&p, s)| (p >= DEFAULT_THRESHOLD) == (s.label == 1))
        .count();
    Ok((loss, hits as f64 / samples.len() as f64))
}

/// Trains `graph` in place. A non-finite loss ends the run with
/// [`TrialStatus::Diverged`]; the best weights seen so far are restored
/// either way.
pub fn train_model(graph: &mut ModelGraph, data: &TrainingData, spec: &TrainSpec) -> Result<TrainOutcome> {
    spec.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if data.validation.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }
    check_samples(&data.train, graph.config().input_size)?;
    check_samples(&data.validation, graph.config().input_size)?;

    let started = Instant::now();
    let hp = &spec.hyperparams;
    let mut opt = Optimizer::<f32>::new(hp.optimizer, hp.learning_rate)?;
    let indices: Vec<usize> = (0..data.train.len()).collect();
    let mut best = (f64::INFINITY, 0usize, graph.snapshot());
    let mut epochs = Vec::new();
    let mut status = TrialStatus::Ok;

    'epochs: for epoch in 1..=spec.epochs_max {
        let batches = make_batches(
            &indices,
            spec.batch_size,
            mix_seed(spec.seed ^ SHUFFLE_SALT, epoch as u64),
            true,
        )?;
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in &batches {
            let (x, y) = assemble(&data.train, batch)?;
            graph.zero_grad();
            let scores = graph.forward(&x, Mode::Train)?;
            let (loss, _) = bce_loss(&scores, &y)?;
            if !loss.is_finite() {
                status = TrialStatus::Diverged;
                break 'epochs;
            }
            loss_sum += loss * batch.len() as f64;
            hits += correct(&scores, &y);
            graph.backward_from_logits(&bce_logit_grad(&scores, &y)?)?;
            opt.step(&mut graph.params_mut())?;
        }
        let (val_loss, val_acc) = loss_and_accuracy(graph, &data.validation, spec.batch_size)?;
        if !val_loss.is_finite() {
            status = TrialStatus::Diverged;
            break;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            train_acc: hits as f64 / data.train.len() as f64,
            val_loss,
            val_acc,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} acc {:.3} val_loss {:.4} val_acc {:.3}",
            record.train_loss,
            record.train_acc,
            val_loss,
            val_acc
        );
        epochs.push(record);
        if val_loss < best.0 {
            best = (val_loss, epoch, graph.snapshot());
        } else if spec.patience.is_some_and(|p| epoch - best.1 >= p) {
            break;
        }
    }
    graph.load_snapshot(&best.2)?;
    Ok(TrainOutcome {
        report: TrainReport {
            epochs,
            best_epoch: best.1,
            status,
            seconds: started.elapsed().as_secs_f64(),
        },
        weights: best.2,
    })
}

/// Loads `weights` and scores the test set at `threshold`.
pub fn evaluate(
    graph: &mut ModelGraph,
    weights: &WeightSnapshot,
    test: &TestSet,
    threshold: f64,
) -> Result<MetricsReport> {
    if test.0.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    graph.load_snapshot(weights)?;
    check_samples(&test.0, graph.config().input_size)?;
    let scores = score_samples(graph, &test.0, 16)?;
    let labels: Vec<u8> = test.0.iter().map(|s| s.label).collect();
    let loss = mean_bce(&scores, &test.0)?;
    Ok(metrics::report(&scores, &labels, threshold, loss)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    pub label: Label,
}

/// Good iff `score >= 0.5`.
pub fn classify(score: f64) -> Label {
    if score >= DEFAULT_THRESHOLD {
        Label::Good
    } else {
        Label::Bad
    }
}

pub fn predict(graph: &mut ModelGraph, weights: &WeightSnapshot, image: impl AsRef<Path>) -> Result<Prediction> {
    graph.load_snapshot(weights)?;
    let x = load_image(image, graph.config().input_size)?;
    let shape = [&[1], x.shape()].concat();
    let score = f64::from(graph.predict(&x.reshape(&shape)?)?.data()[0]);
    Ok(Prediction {
        score,
        label: classify(score),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceTiming {
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub runs: usize,
}

/// Times `runs` single-image inference passes after `warmup` untimed ones.
/// The graph's current weights are used.
pub fn time_inference(graph: &mut ModelGraph, warmup: usize, runs: usize, seed: u64) -> Result<InferenceTiming> {
    if runs == 0 {
        return Err(TrainError::InvalidSpec("runs must be >= 1".into()));
    }
    let size = graph.config().input_size;
    let channels = graph.config().input_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..size * size * channels).map(|_| rng.gen::<f32>()).collect();
    let x = Tensor::new(vec![1, size, size, channels], data)?;
    for _ in 0..warmup {
        graph.predict(&x)?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        std::hint::black_box(graph.predict(&x)?);
        times.push(t.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / runs as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / runs as f64;
    Ok(InferenceTiming {
        mean_seconds: mean,
        std_seconds: var.sqrt(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_dataset;
    use crate::model::Variant;
    use crate::optim::OptimizerKind;

    fn tiny_base() -> ModelConfig {
        ModelConfig {
            variant: Variant::DecusrL,
            feb_filters: vec![4, 4, 4, 4],
            rb_count: 1,
            rb_filters: 4,
            rb_depth: 1,
            ..ModelConfig::default()
        }
    }

    fn tiny_spec(epochs: usize) -> TrainSpec {
        TrainSpec {
            epochs_max: epochs,
            batch_size: 8,
            image_size: 8,
            seed: 3,
            ..TrainSpec::default()
        }
    }

    #[test]
    fn table_one_stratification() {
        let labels: Vec<u8> = std::iter::repeat_n(1, 6822)
            .chain(std::iter::repeat_n(0, 3739))
            .collect();
        let (train, val) = split_indices(&labels, 0.1, 7).unwrap();
        assert_eq!(val.len(), 1055);
        assert_eq!(val.iter().filter(|&&i| labels[i] == 1).count(), 682);
        assert_eq!(train.len() + val.len(), 10561);
    }

    #[test]
    fn single_class_ten() {
        let (train, val) = split_indices(&[1; 10], 0.1, 0).unwrap();
        assert_eq!((train.len(), val.len()), (9, 1));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let labels: Vec<u8> = (0..97).map(|i| (i % 3 == 0) as u8).collect();
        let a = split_indices(&labels, 0.2, 11).unwrap();
        assert_eq!(a, split_indices(&labels, 0.2, 11).unwrap());
        let mut all = [a.0.clone(), a.1.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..97).collect::<Vec<_>>());
    }

    #[test]
    fn small_class_cannot_stratify() {
        assert!(matches!(
            split_indices(&[1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0], 0.1, 0),
            Err(TrainError::Stratify(_))
        ));
        assert!(matches!(split_indices(&[], 0.1, 0), Err(TrainError::EmptyTrainingSet)));
    }

    #[test]
    fn one_epoch_gives_one_record() {
        let spec = tiny_spec(1);
        let data = split_validation(synth_dataset(40, 8, 1).unwrap(), 0.1, 1).unwrap();
        let mut g = spec.build_graph(&tiny_base()).unwrap();
        let out = train_model(&mut g, &data, &spec).unwrap();
        assert_eq!(out.report.epochs.len(), 1);
        assert_eq!(out.report.best_epoch, 1);
        assert_eq!(out.report.status, TrialStatus::Ok);
        assert_eq!(out.report.log_csv().lines().count(), 2);
    }

    #[test]
    fn no_patience_runs_every_epoch_and_best_is_minimal() {
        let spec = TrainSpec {
            patience: None,
            ..tiny_spec(6)
        };
        let data = split_validation(synth_dataset(40, 8, 2).unwrap(), 0.1, 2).unwrap();
        let mut g = spec.build_graph(&tiny_base()).unwrap();
        let out = train_model(&mut g, &data, &spec).unwrap();
        assert_eq!(out.report.epochs.len(), 6);
        let best = out.report.best().unwrap().val_loss;
        assert!(out.report.epochs.iter().all(|e| best <= e.val_loss));
        assert_eq!(g.snapshot(), out.weights);
    }

    #[test]
    fn huge_learning_rate_diverges_without_crashing() {
        let mut spec = tiny_spec(5);
        spec.hyperparams.optimizer = OptimizerKind::Sgd;
        spec.hyperparams.learning_rate = 1e30;
        let data = split_validation(synth_dataset(40, 8, 2).unwrap(), 0.1, 2).unwrap();
        let mut g = spec.build_graph(&tiny_base()).unwrap();
        let out = train_model(&mut g, &data, &spec).unwrap();
        assert_eq!(out.report.status, TrialStatus::Diverged);
    }

    #[test]
    fn empty_training_set() {
        let spec = tiny_spec(1);
        let mut g = spec.build_graph(&tiny_base()).unwrap();
        assert!(matches!(
            train_model(&mut g, &TrainingData::default(), &spec),
            Err(TrainError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn evaluate_is_idempotent_and_counts_match_labels() {
        let spec = tiny_spec(1);
        let mut g = spec.build_graph(&tiny_base()).unwrap();
        let w = g.snapshot();
        let test = TestSet(synth_dataset(10, 8, 4).unwrap());
        let a = evaluate(&mut g, &w, &test, 0.5).unwrap();
        assert_eq!(a, evaluate(&mut g, &w, &test, 0.5).unwrap());
        assert_eq!(a.counts.tp + a.counts.fn_, 5);
        assert_eq!(a.counts.tn + a.counts.fp, 5);
        assert!(matches!(
            evaluate(&mut g, &w, &TestSet::default(), 0.5),
            Err(TrainError::EmptyTestSet)
        ));
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(classify(0.7), Label::Good);
        assert_eq!(classify(0.49), Label::Bad);
        assert_eq!(classify(0.5), Label::Good);
    }

    #[test]
    fn timing_is_positive() {
        let mut g = tiny_spec(1).build_graph(&tiny_base()).unwrap();
        let t = time_inference(&mut g, 1, 10, 0).unwrap();
        assert_eq!(t.runs, 10);
        assert!(t.mean_seconds > 0.0);
    }
}
