use std::collections::HashSet;

use bathcls::dataset::synth_dataset;
use bathcls::metrics::{ConfusionCounts, MetricsReport};
use bathcls::model::{ModelConfig, Variant};
use bathcls::nn::ActivationKind;
use bathcls::optim::OptimizerKind;
use bathcls::sweep::{
    enumerate_grid, parse_results_table, phase2_seed, render_results_table, run_phase1, run_phase2, select_top,
    GridSpec, HyperParams, PhaseReport, ResultRow, SweepSettings, TrialResult, RESULTS_HEADER,
};
use bathcls::trainer::{split_validation, TestSet, TrialStatus};
use proptest::prelude::*;

fn settings() -> SweepSettings {
    SweepSettings {
        base_model: ModelConfig {
            input_size: 16,
            ..ModelConfig::default()
        },
        epochs_max: 2,
        batch_size: 8,
        validation_fraction: 0.25,
        patience: Some(10),
        seed: 17,
    }
}

fn mini_grid() -> GridSpec {
    GridSpec {
        optimizers: vec![OptimizerKind::Rmsprop, OptimizerKind::Adam],
        activations: vec![ActivationKind::Elu],
        learning_rates: vec![1e-3],
        max_pooling: vec![true],
        batch_normalization: vec![false, true],
    }
}

#[test]
fn full_grid_is_144_distinct_points() {
    let grid = enumerate_grid();
    assert_eq!(grid.len(), 144);
    let keys: HashSet<String> = grid.iter().map(|h| format!("{h:?}")).collect();
    assert_eq!(keys.len(), 144);
}

#[test]
fn miniature_two_phase_sweep() {
    let s = settings();
    let grid = mini_grid().enumerate();
    let data = split_validation(synth_dataset(24, 16, 1).unwrap(), s.validation_fraction, s.seed).unwrap();
    let p1 = run_phase1(&Variant::ALL, &grid, 16, &data, &s, 2).unwrap();
    assert_eq!(p1.trials.len(), 2 * grid.len());
    assert_eq!(p1.selected.len(), 4);
    assert!(p1.trials.iter().all(|t| t.epochs_run <= 2));

    let sizes = [8, 16];
    let p2 = run_phase2(&p1.selected, &sizes, &s, |size| {
        let train = split_validation(synth_dataset(16, size, 2).unwrap(), 0.25, s.seed)?;
        Ok((train, TestSet(synth_dataset(8, size, 3).unwrap())))
    });
    // 8x8 cannot survive the default pooling depth
    assert!(p2.is_err());

    let p2 = run_phase2(&p1.selected, &[16, 32], &s, |size| {
        let train = split_validation(synth_dataset(16, size, 2).unwrap(), 0.25, s.seed)?;
        Ok((train, TestSet(synth_dataset(8, size, 3).unwrap())))
    })
    .unwrap();
    assert_eq!(p2.trials.len(), 8);
    let csv = render_results_table(&p2).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), RESULTS_HEADER.join(","));
    for line in lines {
        assert_eq!(line.split(',').count(), 16, "{line}");
    }
    let rows = parse_results_table(&csv).unwrap();
    let expected: Vec<ResultRow> = {
        let mut t: Vec<&TrialResult> = p2.trials.iter().collect();
        t.sort_by_key(|t| t.image_size);
        t.into_iter().map(ResultRow::from_trial).collect()
    };
    assert_eq!(rows, expected);
}

#[test]
fn phase_report_json_round_trip() {
    let s = settings();
    let grid = mini_grid().enumerate();
    let data = split_validation(synth_dataset(16, 16, 4).unwrap(), 0.25, s.seed).unwrap();
    let p1 = run_phase1(&[Variant::DecusrL], &grid[..2], 16, &data, &s, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("phase1.json");
    p1.save(&path).unwrap();
    assert_eq!(PhaseReport::load(&path).unwrap(), p1);
}

#[test]
fn phase2_seeds_depend_only_on_their_coordinates() {
    let a = phase2_seed(1, 2, 256);
    assert_eq!(a, phase2_seed(1, 2, 256));
    let all: HashSet<u64> = (0..4)
        .flat_map(|i| [128, 256, 512, 1024].map(|s| phase2_seed(1, i, s)))
        .collect();
    assert_eq!(all.len(), 16);
}

fn trial(i: usize, acc: f64, auc: f64, loss: f64) -> TrialResult {
    TrialResult {
        variant: if i.is_multiple_of(2) {
            Variant::Decusr
        } else {
            Variant::DecusrL
        },
        hyperparams: enumerate_grid()[i],
        image_size: 256,
        seed: i as u64,
        status: TrialStatus::Ok,
        metrics: Some(MetricsReport {
            accuracy: acc,
            precision: Some(0.5),
            recall: Some(0.5),
            fpr: Some(0.5),
            auc: Some(auc),
            mean_loss: loss,
            counts: ConfusionCounts::new(1, 1, 1, 1),
        }),
        best_epoch: 1,
        epochs_run: 1,
        seconds: 0.0,
    }
}

proptest! {
    #[test]
    fn selection_survives_monotone_rescaling(
        values in prop::collection::vec((0u32..20, 0u32..20, 1u32..50), 6..30),
    ) {
        let make = |f: &dyn Fn(f64) -> f64| PhaseReport {
            phase: 1,
            trials: values
                .iter()
                .enumerate()
                .map(|(i, &(a, u, l))| trial(i, f(f64::from(a) / 20.0), f(f64::from(u) / 20.0), f64::from(l) / 10.0))
                .collect(),
            selected: Vec::new(),
        };
        let plain = select_top(&make(&|x| x), 2).unwrap();
        let squashed = select_top(&make(&|x| (x * 3.0).exp() / 7.0 + 0.1), 2).unwrap();
        prop_assert_eq!(plain, squashed);
    }
}

#[test]
fn hyperparams_apply_to_model_config() {
    let h = HyperParams {
        activation: ActivationKind::Selu,
        use_maxpool: false,
        use_batchnorm: true,
        ..HyperParams::default()
    };
    let c = h.apply(&ModelConfig::default());
    assert_eq!(c.activation, ActivationKind::Selu);
    assert!(!c.use_maxpool && c.use_batchnorm);
}
