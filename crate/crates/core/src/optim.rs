//! SGD, Adam and RMSProp update rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::{Param, Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-7;
pub const RMSPROP_RHO: f64 = 0.9;
pub const RMSPROP_EPSILON: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("unknown optimizer '{0}'")]
    Unknown(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Rmsprop,
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Rmsprop, OptimizerKind::Adam, OptimizerKind::Sgd];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = OptimError;

    fn from_str(s: &str) -> Result<Self, OptimError> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| OptimError::Unknown(s.to_string()))
    }
}

/// Moment buffers, one per trainable parameter in visiting order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OptimizerState<T: Scalar = f32> {
    pub step: u64,
    /// Adam first moments.
    pub first: Vec<Tensor<T>>,
    /// Adam second moments, or the RMSProp mean square.
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    fn ensure(&mut self, kind: OptimizerKind, params: &[&mut Param<T>]) -> Result<(), OptimError> {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.value.shape()).collect();
        let (needs_first, needs_second) = match kind {
            OptimizerKind::Sgd => (false, false),
            OptimizerKind::Rmsprop => (false, true),
            OptimizerKind::Adam => (true, true),
        };
        for (needed, buf, label) in [
            (needs_first, &mut self.first, "first moment"),
            (needs_second, &mut self.second, "second moment"),
        ] {
            if !needed {
                continue;
            }
            if buf.is_empty() {
                *buf = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            } else if buf.len() != shapes.len() || buf.iter().zip(&shapes).any(|(b, s)| b.shape() != *s) {
                return Err(OptimError::StateMismatch(format!(
                    "{label} buffers cover {} tensors, parameters have {}",
                    buf.len(),
                    shapes.len()
                )));
            }
        }
        Ok(())
    }
}

/// Applies one update to every trainable parameter using its accumulated
/// gradient, and increments the step counter once.
pub fn opt_step<T: Scalar>(
    kind: OptimizerKind,
    state: &mut OptimizerState<T>,
    params: &mut [&mut Param<T>],
    learning_rate: f64,
) -> Result<(), OptimError> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(OptimError::LearningRate(learning_rate));
    }
    let mut trainable: Vec<&mut Param<T>> = params.iter_mut().filter(|p| p.trainable).map(|p| &mut **p).collect();
    state.ensure(kind, &trainable)?;
    state.step += 1;
    let t = state.step as i32;
    for (i, p) in trainable.iter_mut().enumerate() {
        let Param { value, grad, .. } = &mut **p;
        let w = value.data_mut();
        let g = grad.data();
        match kind {
            OptimizerKind::Sgd => {
                for (w, &g) in w.iter_mut().zip(g) {
                    *w = T::of(w.as_f64() - learning_rate * g.as_f64());
                }
            }
            OptimizerKind::Rmsprop => {
                let v = state.second[i].data_mut();
                for ((w, &g), v) in w.iter_mut().zip(g).zip(v) {
                    let g = g.as_f64();
                    let vn = RMSPROP_RHO * v.as_f64() + (1.0 - RMSPROP_RHO) * g * g;
                    *v = T::of(vn);
                    *w = T::of(w.as_f64() - learning_rate * g / (vn.sqrt() + RMSPROP_EPSILON));
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let m = state.first[i].data_mut();
                let v = state.second[i].data_mut();
                for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m).zip(v) {
                    let g = g.as_f64();
                    let mn = ADAM_BETA1 * m.as_f64() + (1.0 - ADAM_BETA1) * g;
                    let vn = ADAM_BETA2 * v.as_f64() + (1.0 - ADAM_BETA2) * g * g;
                    *m = T::of(mn);
                    *v = T::of(vn);
                    let step = learning_rate * (mn / c1) / ((vn / c2).sqrt() + ADAM_EPSILON);
                    *w = T::of(w.as_f64() - step);
                }
            }
        }
    }
    Ok(())
}

/// An optimizer kind bound to a fixed learning rate and its state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Optimizer<T: Scalar = f32> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub state: OptimizerState<T>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self, OptimError> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(OptimError::LearningRate(learning_rate));
        }
        Ok(Self {
            kind,
            learning_rate,
            state: OptimizerState {
                step: 0,
                first: Vec::new(),
                second: Vec::new(),
            },
        })
    }

    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<(), OptimError> {
        opt_step(self.kind, &mut self.state, params, self.learning_rate)
    }
}
