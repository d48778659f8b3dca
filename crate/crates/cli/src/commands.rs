use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bathcls::dataset::{load_manifest, load_split, manifest_from_dir, stats, synth_dataset, Sample, Split};
use bathcls::gradsuite::{run_suite, DEFAULT_TOLERANCE};
use bathcls::model::{mix_seed, ModelConfig, ModelGraph, Variant, WeightSnapshot};
use bathcls::sweep::{emit_results_table, run_phase1, run_phase2, PhaseReport};
use bathcls::trainer::{
    evaluate, predict, split_validation, time_inference, train_model, TestSet, TrainingData, TrialStatus,
};
use serde::Serialize;

use crate::config::{ConfigError, DataSource, RunConfig};

/// Operational failure that still produced output (exit code 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Failed(pub String);

const TEST_SALT: u64 = 0x7465_7374;

/// Reference single-image inference times in seconds.
pub const REFERENCE_SECONDS: [(Variant, f64); 2] = [(Variant::Decusr, 5.49e-5), (Variant::DecusrL, 4.79e-5)];

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("cannot create output dir {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_samples(cfg: &RunConfig, split: Split, size: usize) -> Result<Vec<Sample>> {
    Ok(match cfg.data_source() {
        DataSource::Manifest { manifest, root } => {
            let m = load_manifest(&manifest).map_err(|e| ConfigError(e.to_string()))?;
            let samples = load_split(&m, &root, split, size)?;
            if samples.is_empty() {
                return Err(ConfigError(format!(
                    "manifest {} has no {} records",
                    manifest.display(),
                    split.as_str()
                ))
                .into());
            }
            samples
        }
        DataSource::Synthetic { train, test, seed } => match split {
            Split::Train => synth_dataset(train, size, seed)?,
            Split::Test => synth_dataset(test, size, mix_seed(seed, TEST_SALT))?,
        },
    })
}

fn training_data(cfg: &RunConfig, size: usize) -> Result<TrainingData> {
    let samples = load_samples(cfg, Split::Train, size)?;
    Ok(split_validation(samples, cfg.train.validation_fraction, cfg.seed)?)
}

fn load_weights(path: &Path, model: &ModelConfig) -> Result<WeightSnapshot> {
    let snap = WeightSnapshot::load(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    if snap.fingerprint != model.fingerprint() {
        return Err(ConfigError(format!(
            "{} was produced by a different model config than the one given",
            path.display()
        ))
        .into());
    }
    Ok(snap)
}

fn build(model: &ModelConfig, seed: u64) -> Result<ModelGraph> {
    ModelGraph::build(model, seed).map_err(|e| ConfigError(e.to_string()).into())
}

pub fn dataset_stats(manifest: &Path, json: Option<&Path>) -> Result<()> {
    let m = load_manifest(manifest).map_err(|e| ConfigError(e.to_string()))?;
    let s = stats(&m);
    eprintln!("{s}");
    if let Some(p) = json {
        write_json(p, &s)?;
    }
    Ok(())
}

pub fn manifest(root: &Path, out: &Path) -> Result<()> {
    if !root.is_dir() {
        return Err(ConfigError(format!("{} is not a directory", root.display())).into());
    }
    let m = manifest_from_dir(root)?;
    m.write_csv(out)?;
    eprintln!("{}", stats(&m));
    log::info!("wrote {} records to {}", m.len(), out.display());
    Ok(())
}

pub fn gradcheck(trials: usize, seed: u64, report: Option<&Path>) -> Result<()> {
    if trials == 0 {
        return Err(ConfigError("--trials must be >= 1".into()).into());
    }
    let results = run_suite(trials, seed)?;
    eprintln!("{:<22}{:>8}{:>14}  status", "case", "trials", "max rel err");
    for r in &results {
        let status = if r.passed { "ok" } else { "FAIL" };
        eprintln!(
            "{:<22}{:>8}{:>14.3e}  {status} ({})",
            r.name, r.trials, r.max_relative_error, r.worst
        );
    }
    if let Some(p) = report {
        write_json(p, &results)?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failed(format!(
            "gradient check above {DEFAULT_TOLERANCE:e}: {}",
            failed.join(", ")
        ))
        .into())
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: &'a ModelConfig,
    spec: &'a bathcls::trainer::TrainSpec,
    report: &'a bathcls::trainer::TrainReport,
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let spec = cfg.train_spec(cfg.train.image_size, cfg.train.epochs_max);
    let model = cfg.model_config();
    let data = training_data(cfg, spec.image_size)?;
    log::info!(
        "training {} on {} samples ({} validation), up to {} epochs",
        model.variant,
        data.train.len(),
        data.validation.len(),
        spec.epochs_max
    );
    let mut graph = spec.build_graph(&model)?;
    log::info!("{} parameters", graph.count_params());
    let out = train_model(&mut graph, &data, &spec)?;
    out.report.write_log(dir.join("train_log.csv"))?;
    write_json(
        &dir.join("train_report.json"),
        &TrainSummary {
            model: &model,
            spec: &spec,
            report: &out.report,
        },
    )?;
    if out.report.status == TrialStatus::Diverged {
        return Err(Failed(format!("training diverged after {} epochs", out.report.epochs.len())).into());
    }
    let weights = dir.join("weights.bwt");
    out.weights.save(&weights)?;
    match out.report.best() {
        Some(b) => log::info!(
            "best epoch {} of {}: val_loss {:.4} val_acc {:.4}",
            b.epoch,
            out.report.epochs.len(),
            b.val_loss,
            b.val_acc
        ),
        None => log::warn!("no epoch completed"),
    }
    log::info!("wrote {}", weights.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, weights: &Path) -> Result<()> {
    let dir = out_dir(cfg)?;
    let model = cfg.model_config();
    let snap = load_weights(weights, &model)?;
    let test = TestSet(load_samples(cfg, Split::Test, model.input_size)?);
    let mut graph = build(&model, cfg.seed)?;
    let m = evaluate(&mut graph, &snap, &test, cfg.train.threshold)?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    eprintln!(
        "accuracy {:.4}  precision {}  recall {}  fpr {}  auc {}  loss {:.4}",
        m.accuracy,
        fmt(m.precision),
        fmt(m.recall),
        fmt(m.fpr),
        fmt(m.auc),
        m.mean_loss
    );
    let c = m.counts;
    eprintln!("tp {}  tn {}  fp {}  fn {}", c.tp, c.tn, c.fp, c.fn_);
    write_json(&dir.join("eval.json"), &m)
}

pub fn predict_image(cfg: &RunConfig, weights: &Path, image: &Path) -> Result<()> {
    let model = cfg.model_config();
    let snap = load_weights(weights, &model)?;
    if !image.is_file() {
        return Err(ConfigError(format!("image {} does not exist", image.display())).into());
    }
    let mut graph = build(&model, cfg.seed)?;
    let p = predict(&mut graph, &snap, image)?;
    println!("score={} label={}", p.score, p.label.as_str());
    Ok(())
}

pub fn sweep_phase1(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let s = &cfg.sweep;
    let grid = s.grid.enumerate();
    let settings = cfg.sweep_settings(s.phase1_epochs);
    for &v in &s.variants {
        ModelConfig {
            variant: v,
            input_size: s.phase1_size,
            ..settings.base_model.clone()
        }
        .validate()
        .map_err(|e| ConfigError(format!("phase 1 at size {}: {e}", s.phase1_size)))?;
    }
    let data = training_data(cfg, s.phase1_size)?;
    log::info!(
        "phase 1: {} trials at {}x{}, {} epochs max",
        s.variants.len() * grid.len(),
        s.phase1_size,
        s.phase1_size,
        s.phase1_epochs
    );
    let report = run_phase1(&s.variants, &grid, s.phase1_size, &data, &settings, s.per_model)?;
    report.save(dir.join("phase1.json"))?;
    emit_results_table(&report, dir.join("phase1.csv"))?;
    for (v, h) in &report.selected {
        eprintln!(
            "selected {v}: {} {} lr={} pool={} bn={}",
            h.optimizer.as_str(),
            h.activation.as_str(),
            h.learning_rate,
            h.use_maxpool,
            h.use_batchnorm
        );
    }
    log::info!("wrote {}", dir.join("phase1.json").display());
    Ok(())
}

pub fn sweep_phase2(cfg: &RunConfig, phase1: &Path) -> Result<()> {
    let dir = out_dir(cfg)?;
    let p1 = PhaseReport::load(phase1).map_err(|e| ConfigError(format!("{}: {e}", phase1.display())))?;
    if p1.phase != 1 || p1.selected.is_empty() {
        return Err(ConfigError(format!("{} is not a phase-1 report with selections", phase1.display())).into());
    }
    let s = &cfg.sweep;
    let settings = cfg.sweep_settings(s.phase2_epochs);
    for &size in &s.phase2_sizes {
        for (v, h) in &p1.selected {
            h.apply(&ModelConfig {
                variant: *v,
                input_size: size,
                ..settings.base_model.clone()
            })
            .validate()
            .map_err(|e| ConfigError(format!("phase 2 at size {size}: {e}")))?;
        }
    }
    log::info!(
        "phase 2: {} configs at sizes {:?}, {} epochs max",
        p1.selected.len(),
        s.phase2_sizes,
        s.phase2_epochs
    );
    let report = run_phase2(&p1.selected, &s.phase2_sizes, &settings, |size| {
        let data =
            training_data(cfg, size).map_err(|e| bathcls::sweep::SweepError::InvalidArgument(format!("{e:#}")))?;
        let test = load_samples(cfg, Split::Test, size)
            .map_err(|e| bathcls::sweep::SweepError::InvalidArgument(format!("{e:#}")))?;
        Ok((data, TestSet(test)))
    })?;
    report.save(dir.join("phase2.json"))?;
    let table = dir.join("results.csv");
    emit_results_table(&report, &table)?;
    log::info!("wrote {}", table.display());
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    variant: Variant,
    params: usize,
    image_size: usize,
    weights: Option<PathBuf>,
    mean_seconds: f64,
    std_seconds: f64,
    runs: usize,
    reference_seconds: f64,
}

#[derive(Serialize)]
struct BenchReport {
    rows: Vec<BenchRow>,
    lightweight_has_fewer_params: bool,
    lightweight_is_faster: bool,
}

pub fn bench(cfg: &RunConfig, weights: Option<&Path>, warmup: usize, runs: usize) -> Result<()> {
    if runs == 0 {
        return Err(ConfigError("--runs must be >= 1".into()).into());
    }
    let dir = out_dir(cfg)?;
    let base = cfg.model_config();
    let mut rows = Vec::new();
    for (variant, reference) in REFERENCE_SECONDS {
        let model = ModelConfig {
            variant,
            ..base.clone()
        };
        let mut graph = build(&model, mix_seed(cfg.seed, variant as u64))?;
        let used = match weights {
            Some(p) if variant == base.variant => {
                graph.load_snapshot(&load_weights(p, &model)?)?;
                Some(p.to_path_buf())
            }
            _ => None,
        };
        let t = time_inference(&mut graph, warmup, runs, cfg.seed)?;
        rows.push(BenchRow {
            variant,
            params: graph.count_params(),
            image_size: model.input_size,
            weights: used,
            mean_seconds: t.mean_seconds,
            std_seconds: t.std_seconds,
            runs: t.runs,
            reference_seconds: reference,
        });
    }
    let (d, l) = (&rows[0], &rows[1]);
    let report = BenchReport {
        lightweight_has_fewer_params: l.params < d.params,
        lightweight_is_faster: l.mean_seconds <= d.mean_seconds,
        rows: Vec::new(),
    };
    eprintln!(
        "{:<10}{:>10}{:>14}{:>12}{:>14}",
        "variant", "params", "mean s", "std s", "reference s"
    );
    for r in &rows {
        eprintln!(
            "{:<10}{:>10}{:>14.3e}{:>12.2e}{:>14.2e}",
            r.variant.as_str(),
            r.params,
            r.mean_seconds,
            r.std_seconds,
            r.reference_seconds
        );
    }
    eprintln!(
        "decusr_l faster than decusr: {}",
        if report.lightweight_is_faster { "yes" } else { "no" }
    );
    let report = BenchReport { rows, ..report };
    write_json(&dir.join("bench.json"), &report)?;
    if !report.lightweight_has_fewer_params {
        return Err(Failed("decusr_l does not have fewer parameters than decusr".into()).into());
    }
    Ok(())
}
