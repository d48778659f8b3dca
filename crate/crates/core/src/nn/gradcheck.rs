//! Central finite-difference verification of analytic gradients.
//!
//! Runs in double precision. Relative error per coordinate is
//! `|a - n| / max(|a|, |n|, 1e-8)`.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bce_loss, concat_channels, split_channels, Layer, Mode, NnError, Param, Result, Tensor};

pub const STEP: f64 = 1e-5;
/// Above this many coordinates a seeded random subset is checked.
pub const MAX_COORDINATES: usize = 10_000;
const REL_FLOOR: f64 = 1e-8;

/// A scalar function of one input tensor and a set of parameters.
pub trait Objective {
    fn evaluate(&mut self, input: &Tensor<f64>) -> Result<f64>;

    /// Zeroes and repopulates parameter gradients; returns the input gradient.
    fn gradients(&mut self, input: &Tensor<f64>) -> Result<Tensor<f64>>;

    fn params_mut(&mut self) -> Vec<&mut Param<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest error, e.g. `conv/kernel[12]` or `input[3]`.
    pub worst: String,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Copy)]
enum Coord {
    Input(usize),
    Param(usize, usize),
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn grad_check<O: Objective>(
    objective: &mut O,
    input: &Tensor<f64>,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let input_grad = objective.gradients(input)?;
    let param_grads: Vec<Option<Tensor<f64>>> = objective
        .params_mut()
        .iter()
        .map(|p| p.trainable.then(|| p.grad.clone()))
        .collect();
    if !input_grad.all_finite() || param_grads.iter().flatten().any(|g| !g.all_finite()) {
        return Err(NnError::NonFinite("analytic gradient".into()));
    }

    let mut coords: Vec<Coord> = (0..input.len()).map(Coord::Input).collect();
    for (pi, g) in param_grads.iter().enumerate() {
        if let Some(g) = g {
            coords.extend((0..g.len()).map(|e| Coord::Param(pi, e)));
        }
    }
    if coords.len() > MAX_COORDINATES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, coords.len(), MAX_COORDINATES).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }

    let names: Vec<String> = objective.params_mut().iter().map(|p| p.name.clone()).collect();
    let mut x = input.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: coords.len(),
        tolerance,
        passed: true,
    };
    for coord in coords {
        let (analytic, numeric, label) = match coord {
            Coord::Input(e) => {
                let orig = x.data()[e];
                x.data_mut()[e] = orig + STEP;
                let plus = objective.evaluate(&x)?;
                x.data_mut()[e] = orig - STEP;
                let minus = objective.evaluate(&x)?;
                x.data_mut()[e] = orig;
                (
                    input_grad.data()[e],
                    (plus - minus) / (2.0 * STEP),
                    format!("input[{e}]"),
                )
            }
            Coord::Param(pi, e) => {
                let orig = objective.params_mut()[pi].value.data()[e];
                objective.params_mut()[pi].value.data_mut()[e] = orig + STEP;
                let plus = objective.evaluate(&x)?;
                objective.params_mut()[pi].value.data_mut()[e] = orig - STEP;
                let minus = objective.evaluate(&x)?;
                objective.params_mut()[pi].value.data_mut()[e] = orig;
                let analytic = param_grads[pi].as_ref().map(|g| g.data()[e]).unwrap_or(0.0);
                (analytic, (plus - minus) / (2.0 * STEP), format!("{}[{e}]", names[pi]))
            }
        };
        if !numeric.is_finite() {
            return Err(NnError::NonFinite(format!("numeric gradient at {label}")));
        }
        let err = relative_error(analytic, numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = label;
            if std::env::var("GCDBG").is_ok() && err > 1e-4 {
                eprintln!("  {} a={analytic:e} n={numeric:e}", report.worst);
            }
        }
    }
    report.passed = report.max_relative_error < tolerance;
    Ok(report)
}

fn projection(shape: &[usize], seed: u64) -> Result<Tensor<f64>> {
    let dist = Uniform::new_inclusive(-1.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Reduces a layer's output to a scalar with a fixed random projection,
/// `sum(R ⊙ layer(x))`.
pub struct LayerObjective<L> {
    pub layer: L,
    pub mode: Mode,
    seed: u64,
    weights: Option<Tensor<f64>>,
}

impl<L: Layer<f64>> LayerObjective<L> {
    pub fn new(layer: L, mode: Mode, seed: u64) -> Self {
        Self {
            layer,
            mode,
            seed,
            weights: None,
        }
    }

    fn weights_for(&mut self, shape: &[usize]) -> Result<&Tensor<f64>> {
        if self.weights.as_ref().map(|w| w.shape() != shape).unwrap_or(true) {
            self.weights = Some(projection(shape, self.seed)?);
        }
        Ok(self.weights.as_ref().expect("projection just set"))
    }
}

impl<L: Layer<f64>> Objective for LayerObjective<L> {
    fn evaluate(&mut self, input: &Tensor<f64>) -> Result<f64> {
        let y = self.layer.forward(input, self.mode)?;
        let r = self.weights_for(y.shape())?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    }

    fn gradients(&mut self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        let y = self.layer.forward(input, self.mode)?;
        let r = self.weights_for(y.shape())?.clone();
        self.layer.params_mut().into_iter().for_each(|p| p.zero_grad());
        self.layer.backward(input, &y, &r, self.mode)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.layer.params_mut()
    }
}

/// Mean binary cross-entropy of a network whose output is a probability.
pub struct BceObjective<L> {
    pub net: L,
    pub targets: Tensor<f64>,
    pub mode: Mode,
}

impl<L: Layer<f64>> Objective for BceObjective<L> {
    fn evaluate(&mut self, input: &Tensor<f64>) -> Result<f64> {
        let p = self.net.forward(input, self.mode)?;
        Ok(bce_loss(&p, &self.targets)?.0)
    }

    fn gradients(&mut self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        let p = self.net.forward(input, self.mode)?;
        let (_, dp) = bce_loss(&p, &self.targets)?;
        self.net.params_mut().into_iter().for_each(|p| p.zero_grad());
        self.net.backward(input, &p, &dp, self.mode)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.net.params_mut()
    }
}

/// Channel concatenation of the input with fixed companion tensors, which
/// are exposed as parameters so that their gradients are checked too.
pub struct ConcatObjective {
    companions: Vec<Param<f64>>,
    seed: u64,
}

impl ConcatObjective {
    pub fn new(companions: Vec<Tensor<f64>>, seed: u64) -> Self {
        Self {
            companions: companions
                .into_iter()
                .enumerate()
                .map(|(i, t)| Param::new(format!("concat_input{}", i + 1), t, true))
                .collect(),
            seed,
        }
    }

    fn forward(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut all = vec![input];
        all.extend(self.companions.iter().map(|p| &p.value));
        concat_channels(&all)
    }
}

impl Objective for ConcatObjective {
    fn evaluate(&mut self, input: &Tensor<f64>) -> Result<f64> {
        let y = self.forward(input)?;
        let r = projection(y.shape(), self.seed)?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    }

    fn gradients(&mut self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        let y = self.forward(input)?;
        let r = projection(y.shape(), self.seed)?;
        let mut widths = vec![input.shape()[3]];
        widths.extend(self.companions.iter().map(|p| p.value.shape()[3]));
        let mut parts = split_channels(&r, &widths)?.into_iter();
        let dx = parts.next().expect("at least one part");
        for (p, g) in self.companions.iter_mut().zip(parts) {
            p.grad = g;
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.companions.iter_mut().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{seeded_init, ActivationKind, Dense};

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        struct Broken;
        impl Objective for Broken {
            fn evaluate(&mut self, x: &Tensor<f64>) -> Result<f64> {
                Ok(x.data().iter().map(|v| v * v).sum())
            }
            fn gradients(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
                Ok(x.map(|v| 3.0 * v)) // should be 2x
            }
            fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
                Vec::new()
            }
        }
        let x = seeded_init::<f64>(&[5], 1, 1, 1).unwrap();
        let report = grad_check(&mut Broken, &x, 1e-4, 0).unwrap();
        assert!(!report.passed);
        assert!(report.max_relative_error > 0.3);
    }

    #[test]
    fn dense_passes() {
        let dense = Dense::<f64>::new("d", 6, 1, Some(ActivationKind::Tanh), 3).unwrap();
        let mut obj = LayerObjective::new(dense, Mode::Train, 9);
        let x = seeded_init::<f64>(&[2, 6], 1, 1, 4).unwrap();
        let report = grad_check(&mut obj, &x, 1e-4, 0).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 12 + 6 + 1);
    }

    #[test]
    fn large_problems_are_subsampled() {
        let dense = Dense::<f64>::new("d", 200, 60, None, 3).unwrap();
        let mut obj = LayerObjective::new(dense, Mode::Train, 9);
        let x = seeded_init::<f64>(&[1, 200], 1, 1, 4).unwrap();
        let report = grad_check(&mut obj, &x, 1e-4, 0).unwrap();
        assert_eq!(report.checked, MAX_COORDINATES);
        assert!(report.passed, "{report:?}");
    }
}
