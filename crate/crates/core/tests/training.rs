use bathcls::dataset::synth_dataset;
use bathcls::model::{ModelConfig, Variant};
use bathcls::trainer::{evaluate, split_validation, train_model, TestSet, TrainSpec, TrialStatus, LOG_HEADER};

fn spec(epochs: usize, patience: Option<usize>) -> TrainSpec {
    TrainSpec {
        epochs_max: epochs,
        patience,
        image_size: 16,
        seed: 4,
        ..TrainSpec::default()
    }
}

#[test]
fn lightweight_model_fits_synthetic_set() {
    let s = spec(40, None);
    let data = split_validation(synth_dataset(48, 16, 2).unwrap(), s.validation_fraction, s.seed).unwrap();
    let mut graph = s.build_graph(&ModelConfig::default()).unwrap();
    let out = train_model(&mut graph, &data, &s).unwrap();
    assert_eq!(out.report.status, TrialStatus::Ok);
    assert_eq!(out.report.epochs.len(), 40);
    let best = out.report.epochs.iter().map(|e| e.train_acc).fold(0.0, f64::max);
    assert!(best >= 0.9, "best train accuracy {best}");

    let test = TestSet(synth_dataset(20, 16, 99).unwrap());
    let m = evaluate(&mut graph, &out.weights, &test, 0.5).unwrap();
    assert!(m.accuracy >= 0.8, "held-out accuracy {}", m.accuracy);
}

#[test]
fn best_epoch_has_lowest_validation_loss() {
    let s = TrainSpec {
        hyperparams: bathcls::sweep::HyperParams {
            learning_rate: 1e-2,
            ..Default::default()
        },
        ..spec(25, Some(3))
    };
    let data = split_validation(synth_dataset(32, 16, 3).unwrap(), 0.25, s.seed).unwrap();
    let mut graph = s.build_graph(&ModelConfig::default()).unwrap();
    let out = train_model(&mut graph, &data, &s).unwrap();
    let best = out.report.best().unwrap();
    assert_eq!(best.epoch, out.report.best_epoch);
    for e in &out.report.epochs {
        assert!(best.val_loss <= e.val_loss);
    }
    if out.report.epochs.len() < 25 {
        assert_eq!(out.report.epochs.len(), out.report.best_epoch + 3);
    }
}

#[test]
fn identical_specs_train_bit_identically() {
    let s = spec(3, None);
    let base = ModelConfig {
        variant: Variant::Decusr,
        ..ModelConfig::default()
    };
    let run = || {
        let data = split_validation(synth_dataset(24, 16, 5).unwrap(), 0.2, s.seed).unwrap();
        let mut graph = s.build_graph(&base).unwrap();
        train_model(&mut graph, &data, &s).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.report.log_csv(), b.report.log_csv());
    assert_eq!(a.weights.encode().unwrap(), b.weights.encode().unwrap());
}

#[test]
fn training_log_layout() {
    let s = spec(2, None);
    let data = split_validation(synth_dataset(16, 16, 6).unwrap(), 0.25, s.seed).unwrap();
    let mut graph = s.build_graph(&ModelConfig::default()).unwrap();
    let out = train_model(&mut graph, &data, &s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    out.report.write_log(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert_eq!(lines[2].split(',').count(), 5);
}
