//! Finite-difference checks of every layer, a small composite network and
//! both full model variants on seeded random instances.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{mix_seed, ModelConfig, ModelGraph, ModelObjective, Variant};
use crate::nn::gradcheck::{grad_check, BceObjective, ConcatObjective, GradCheckReport, LayerObjective, Objective};
use crate::nn::{
    ActivationKind, ActivationLayer, BatchNorm, Conv2d, Dense, Flatten, Layer, MaxPool2d, Mode, NnError, Result,
    Sequential, Tensor, Upsample,
};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub trials: usize,
    pub max_relative_error: f64,
    /// Trial index and coordinate of the largest error.
    pub worst: String,
    pub passed: bool,
}

struct Case<'a> {
    name: &'a str,
    run: fn(&mut ChaCha8Rng, usize, u64) -> Result<GradCheckReport>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let d = Uniform::new_inclusive(lo, hi);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng)).collect()).expect("shape matches count")
}

fn nhwc(rng: &mut ChaCha8Rng, max_n: usize, min_hw: usize, max_hw: usize, max_c: usize) -> Vec<usize> {
    vec![
        rng.gen_range(1..=max_n),
        rng.gen_range(min_hw..=max_hw),
        rng.gen_range(min_hw..=max_hw),
        rng.gen_range(1..=max_c),
    ]
}

fn check<O: Objective>(mut obj: O, x: &Tensor<f64>, seed: u64) -> Result<GradCheckReport> {
    grad_check(&mut obj, x, DEFAULT_TOLERANCE, seed)
}

fn layer_case<L: Layer<f64>>(layer: L, mode: Mode, x: &Tensor<f64>, seed: u64) -> Result<GradCheckReport> {
    check(LayerObjective::new(layer, mode, seed), x, seed)
}

fn conv_case(rng: &mut ChaCha8Rng, trial: usize, seed: u64) -> Result<GradCheckReport> {
    let shape = nhwc(rng, 2, 2, 6, 3);
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let cout = rng.gen_range(1..=3);
    // cycle through no activation and each fused kind
    let act = match trial % 7 {
        0 => None,
        i => Some(ActivationKind::ALL[i - 1]),
    };
    let mut conv = Conv2d::<f64>::new("conv", k, shape[3], cout, act, seed)?;
    for p in conv.params_mut() {
        p.value = uniform(rng, p.value.shape(), -0.5, 0.5);
    }
    let x = uniform(rng, &shape, -1.0, 1.0);
    layer_case(conv, Mode::Train, &x, seed)
}

fn dense_case(rng: &mut ChaCha8Rng, trial: usize, seed: u64) -> Result<GradCheckReport> {
    let shape = if trial.is_multiple_of(2) {
        vec![rng.gen_range(1..=3), rng.gen_range(1..=8)]
    } else {
        nhwc(rng, 2, 1, 3, 2)
    };
    let features = shape[1..].iter().product();
    let mut dense = Dense::<f64>::new("dense", features, rng.gen_range(1..=3), None, seed)?;
    for p in dense.params_mut() {
        p.value = uniform(rng, p.value.shape(), -1.0, 1.0);
    }
    layer_case(dense, Mode::Train, &uniform(rng, &shape, -1.0, 1.0), seed)
}

fn pool_case(rng: &mut ChaCha8Rng, _: usize, seed: u64) -> Result<GradCheckReport> {
    let shape = nhwc(rng, 2, 2, 7, 3);
    layer_case(
        MaxPool2d::new("pool"),
        Mode::Train,
        &uniform(rng, &shape, -1.0, 1.0),
        seed,
    )
}

fn batchnorm_case(mode: Mode) -> fn(&mut ChaCha8Rng, usize, u64) -> Result<GradCheckReport> {
    fn run(rng: &mut ChaCha8Rng, mode: Mode, seed: u64) -> Result<GradCheckReport> {
        // at least four values per channel so batch variance is nonzero
        let shape = nhwc(rng, 3, 2, 4, 3);
        let mut bn = BatchNorm::<f64>::new("bn", shape[3]);
        for p in bn.params_mut() {
            p.value = if p.name.ends_with("variance") {
                uniform(rng, p.value.shape(), 0.5, 2.0)
            } else {
                uniform(rng, p.value.shape(), -1.0, 1.0)
            };
        }
        layer_case(bn, mode, &uniform(rng, &shape, -2.0, 2.0), seed)
    }
    match mode {
        Mode::Train => |rng, _, seed| run(rng, Mode::Train, seed),
        Mode::Inference => |rng, _, seed| run(rng, Mode::Inference, seed),
    }
}

fn activation_case(rng: &mut ChaCha8Rng, trial: usize, seed: u64) -> Result<GradCheckReport> {
    let kind = ActivationKind::ALL[trial % ActivationKind::ALL.len()];
    let shape = nhwc(rng, 2, 1, 4, 3);
    layer_case(
        ActivationLayer::new("act", kind),
        Mode::Train,
        &uniform(rng, &shape, -2.0, 2.0),
        seed,
    )
}

fn flatten_case(rng: &mut ChaCha8Rng, _: usize, seed: u64) -> Result<GradCheckReport> {
    let shape = nhwc(rng, 2, 1, 4, 3);
    layer_case(
        Flatten::new("flatten"),
        Mode::Train,
        &uniform(rng, &shape, -1.0, 1.0),
        seed,
    )
}

fn upsample_case(rng: &mut ChaCha8Rng, trial: usize, seed: u64) -> Result<GradCheckReport> {
    let shape = nhwc(rng, 2, 1, 4, 3);
    let up = Upsample::new("up", 1 + trial % 3)?;
    layer_case(up, Mode::Train, &uniform(rng, &shape, -1.0, 1.0), seed)
}

fn concat_case(rng: &mut ChaCha8Rng, _: usize, seed: u64) -> Result<GradCheckReport> {
    let shape = nhwc(rng, 2, 1, 4, 3);
    let companions = (0..rng.gen_range(1..=3))
        .map(|_| {
            let mut s = shape.clone();
            s[3] = rng.gen_range(1..=4);
            uniform(rng, &s, -1.0, 1.0)
        })
        .collect();
    check(
        ConcatObjective::new(companions, seed),
        &uniform(rng, &shape, -1.0, 1.0),
        seed,
    )
}

fn targets(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    Tensor::new(vec![n, 1], (0..n).map(|_| f64::from(rng.gen_range(0..=1u8))).collect()).expect("n targets")
}

fn bce_case(rng: &mut ChaCha8Rng, _: usize, _seed: u64) -> Result<GradCheckReport> {
    let n = rng.gen_range(1..=8);
    let obj = BceObjective {
        net: ActivationLayer::new("sigmoid", ActivationKind::Sigmoid),
        targets: targets(rng, n),
        mode: Mode::Train,
    };
    check(obj, &uniform(rng, &[n, 1], -3.0, 3.0), 0)
}

/// conv → relu → maxpool → dense → sigmoid, scored by BCE.
fn composite_case(rng: &mut ChaCha8Rng, _: usize, seed: u64) -> Result<GradCheckReport> {
    let shape = nhwc(rng, 3, 2, 6, 3);
    let cout = rng.gen_range(1..=3);
    let features = (shape[1] / 2) * (shape[2] / 2) * cout;
    let net = Sequential::new("composite")
        .push(Conv2d::<f64>::new(
            "conv",
            3,
            shape[3],
            cout,
            Some(ActivationKind::Relu),
            seed,
        )?)
        .push(MaxPool2d::new("pool"))
        .push(Dense::<f64>::new(
            "dense",
            features,
            1,
            Some(ActivationKind::Sigmoid),
            mix_seed(seed, 1),
        )?);
    let obj = BceObjective {
        net,
        targets: targets(rng, shape[0]),
        mode: Mode::Train,
    };
    check(obj, &uniform(rng, &shape, -1.0, 1.0), seed)
}

fn model_case(variant: Variant) -> fn(&mut ChaCha8Rng, usize, u64) -> Result<GradCheckReport> {
    fn run(rng: &mut ChaCha8Rng, trial: usize, seed: u64, variant: Variant) -> Result<GradCheckReport> {
        let config = ModelConfig {
            variant,
            feb_filters: (0..4).map(|_| rng.gen_range(1..=3)).collect(),
            rb_count: rng.gen_range(1..=2),
            rb_filters: rng.gen_range(1..=3),
            rb_depth: rng.gen_range(1..=2),
            kernel_size: 3,
            activation: ActivationKind::Tanh,
            use_maxpool: trial.is_multiple_of(2),
            use_batchnorm: (trial / 2).is_multiple_of(2),
            input_size: 8,
            input_channels: 3,
        };
        let graph = ModelGraph::<f64>::build(&config, seed).map_err(|e| NnError::InvalidArgument(e.to_string()))?;
        let n = rng.gen_range(2..=3);
        let obj = ModelObjective {
            graph,
            targets: targets(rng, n),
            mode: Mode::Train,
        };
        check(obj, &uniform(rng, &[n, 8, 8, 3], -1.0, 1.0), seed)
    }
    match variant {
        Variant::Decusr => |rng, t, seed| run(rng, t, seed, Variant::Decusr),
        Variant::DecusrL => |rng, t, seed| run(rng, t, seed, Variant::DecusrL),
    }
}

fn cases() -> Vec<Case<'static>> {
    vec![
        Case {
            name: "conv2d",
            run: conv_case,
        },
        Case {
            name: "dense",
            run: dense_case,
        },
        Case {
            name: "maxpool2d",
            run: pool_case,
        },
        Case {
            name: "batchnorm_train",
            run: batchnorm_case(Mode::Train),
        },
        Case {
            name: "batchnorm_inference",
            run: batchnorm_case(Mode::Inference),
        },
        Case {
            name: "activation",
            run: activation_case,
        },
        Case {
            name: "flatten",
            run: flatten_case,
        },
        Case {
            name: "upsample",
            run: upsample_case,
        },
        Case {
            name: "concat",
            run: concat_case,
        },
        Case {
            name: "bce",
            run: bce_case,
        },
        Case {
            name: "composite",
            run: composite_case,
        },
        Case {
            name: "model_decusr",
            run: model_case(Variant::Decusr),
        },
        Case {
            name: "model_decusr_l",
            run: model_case(Variant::DecusrL),
        },
    ]
}

pub fn case_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

/// Runs `trials` seeded instances of every case. A case passes when each
/// instance stays below [`DEFAULT_TOLERANCE`].
pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for (ci, case) in cases().into_iter().enumerate() {
        let mut result = SuiteResult {
            name: case.name.to_string(),
            trials,
            max_relative_error: 0.0,
            worst: String::new(),
            passed: true,
        };
        for t in 0..trials {
            let trial_seed = mix_seed(mix_seed(seed, ci as u64), t as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
            let report = (case.run)(&mut rng, t, trial_seed)?;
            if report.max_relative_error >= result.max_relative_error {
                result.max_relative_error = report.max_relative_error;
                result.worst = format!("trial {t}: {}", report.worst);
            }
            result.passed &= report.passed;
        }
        log::info!("{}: max relative error {:.3e}", result.name, result.max_relative_error);
        out.push(result);
    }
    Ok(out)
}
