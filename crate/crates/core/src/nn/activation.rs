use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Layer, LayerKind, Mode, NnError, Result, Scalar, Tensor};

const ELU_ALPHA: f64 = 1.0;
const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Elu,
    Selu,
    Sigmoid,
    Tanh,
    Exponential,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        ActivationKind::Relu,
        ActivationKind::Elu,
        ActivationKind::Selu,
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Exponential,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Elu => "elu",
            ActivationKind::Selu => "selu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Exponential => "exponential",
        }
    }

    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        let one = T::one();
        match self {
            ActivationKind::Relu => x.max(T::zero()),
            ActivationKind::Elu => {
                if x > T::zero() {
                    x
                } else {
                    T::of(ELU_ALPHA) * x.exp_m1()
                }
            }
            ActivationKind::Selu => {
                let l = T::of(SELU_LAMBDA);
                if x > T::zero() {
                    l * x
                } else {
                    l * T::of(SELU_ALPHA) * x.exp_m1()
                }
            }
            ActivationKind::Sigmoid => {
                // split by sign so exp never overflows
                if x >= T::zero() {
                    one / (one + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (one + e)
                }
            }
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Exponential => x.exp(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        let one = T::one();
        match self {
            ActivationKind::Relu => {
                if y > T::zero() {
                    one
                } else {
                    T::zero()
                }
            }
            ActivationKind::Elu => {
                if y > T::zero() {
                    one
                } else {
                    y + T::of(ELU_ALPHA)
                }
            }
            ActivationKind::Selu => {
                let l = T::of(SELU_LAMBDA);
                if y > T::zero() {
                    l
                } else {
                    y + l * T::of(SELU_ALPHA)
                }
            }
            ActivationKind::Sigmoid => y * (one - y),
            ActivationKind::Tanh => one - y * y,
            ActivationKind::Exponential => y,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivationKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| NnError::InvalidArgument(format!("unknown activation '{s}'")))
    }
}

pub fn activate<T: Scalar>(kind: ActivationKind, input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| kind.apply(v))
}

/// `grad_output ⊙ f'(x)`, using the forward output.
pub fn activate_backward<T: Scalar>(
    kind: ActivationKind,
    output: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if output.shape() != grad_output.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "activation gradient {:?} vs output {:?}",
            grad_output.shape(),
            output.shape()
        )));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&y, &g)| g * kind.derivative_from_output(y))
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}

#[derive(Clone, Debug)]
pub struct ActivationLayer {
    name: String,
    kind: ActivationKind,
}

impl ActivationLayer {
    pub fn new(name: impl Into<String>, kind: ActivationKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn activation(&self) -> ActivationKind {
        self.kind
    }
}

impl<T: Scalar> Layer<T> for ActivationLayer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Activation
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        Ok(activate(self.kind, input))
    }

    fn backward(
        &mut self,
        _input: &Tensor<T>,
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        _mode: Mode,
    ) -> Result<Tensor<T>> {
        activate_backward(self.kind, output, grad_output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_values() {
        use ActivationKind::*;
        assert_eq!(Relu.apply(-2.0f64), 0.0);
        assert_eq!(Relu.apply(3.0f64), 3.0);
        assert_eq!(Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Tanh.apply(0.0f64), 0.0);
        assert_abs_diff_eq!(Exponential.apply(1.0f64), std::f64::consts::E, epsilon = 1e-15);
        assert_abs_diff_eq!(Elu.apply(-1.0f64), (-1.0f64).exp() - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(Elu.apply(-1.0f64), -0.63212, epsilon = 1e-5);
        assert_abs_diff_eq!(Selu.apply(1.0f64), 1.05070, epsilon = 1e-5);
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        for x in [-30.0f32, -10.0, -1.0, 0.0, 1.0, 10.0, 15.0] {
            let y = ActivationKind::Sigmoid.apply(x);
            assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y}");
        }
    }

    #[test]
    fn derivative_from_output_matches_central_difference() {
        let h = 1e-6;
        for kind in ActivationKind::ALL {
            for x in [-1.7f64, -0.3, 0.4, 2.1] {
                let numeric = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                let analytic = kind.derivative_from_output(kind.apply(x));
                assert_abs_diff_eq!(numeric, analytic, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn parses_names_case_insensitively() {
        assert_eq!("ELU".parse::<ActivationKind>().unwrap(), ActivationKind::Elu);
        assert!("swish".parse::<ActivationKind>().is_err());
    }
}
