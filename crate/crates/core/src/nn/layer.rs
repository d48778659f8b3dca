use serde::{Deserialize, Serialize};

use super::{NnError, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Activation,
    MaxPool,
    BatchNorm,
    Dense,
    Flatten,
    Upsample,
    Sequential,
}

/// A named parameter tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Batch-norm running statistics are stored and counted but never updated
    /// by an optimizer.
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            trainable,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub(crate) fn accumulate(&mut self, grad: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(grad)
    }
}

pub trait Layer<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> LayerKind;

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Returns the gradient with respect to `input` and adds parameter
    /// gradients into each [`Param::grad`].
    fn backward(
        &mut self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

/// Nearest-neighbour upsampling by an integer factor. A factor of one is the
/// identity.
#[derive(Clone, Debug)]
pub struct Upsample {
    name: String,
    factor: usize,
}

impl Upsample {
    pub fn new(name: impl Into<String>, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(NnError::InvalidArgument("upsample factor must be >= 1".into()));
        }
        Ok(Self {
            name: name.into(),
            factor,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}

impl<T: Scalar> Layer<T> for Upsample {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Upsample
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            &[n, h, w, c] => Ok(vec![n, h * self.factor, w * self.factor, c]),
            _ => Err(NnError::ShapeMismatch(format!("upsample needs NHWC, got {input:?}"))),
        }
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        if self.factor == 1 {
            return Ok(input.clone());
        }
        let (n, h, w, c) = input.dims4()?;
        let s = self.factor;
        let (oh, ow) = (h * s, w * s);
        let src = input.data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for y in 0..oh {
                for x in 0..ow {
                    let base = ((b * h + y / s) * w + x / s) * c;
                    out.extend_from_slice(&src[base..base + c]);
                }
            }
        }
        Tensor::new(vec![n, oh, ow, c], out)
    }

    fn backward(
        &mut self,
        input: &Tensor<T>,
        _output: &Tensor<T>,
        grad_output: &Tensor<T>,
        _mode: Mode,
    ) -> Result<Tensor<T>> {
        if self.factor == 1 {
            return Ok(grad_output.clone());
        }
        let (n, h, w, c) = input.dims4()?;
        let s = self.factor;
        let (oh, ow) = (h * s, w * s);
        let g = grad_output.data();
        let mut dx = Tensor::zeros(input.shape());
        let d = dx.data_mut();
        for b in 0..n {
            for y in 0..oh {
                for x in 0..ow {
                    let src = ((b * oh + y) * ow + x) * c;
                    let dst = ((b * h + y / s) * w + x / s) * c;
                    for ch in 0..c {
                        d[dst + ch] = d[dst + ch] + g[src + ch];
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// A linear chain of layers. Keeps the intermediate activations of the last
/// forward pass so that it can itself be used as a [`Layer`].
pub struct Sequential<T: Scalar> {
    name: String,
    layers: Vec<Box<dyn Layer<T>>>,
    activations: Vec<Tensor<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            layers: Vec::new(),
            activations: Vec::new(),
        }
    }

    pub fn push(mut self, layer: impl Layer<T> + 'static) -> Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn layers(&self) -> &[Box<dyn Layer<T>>] {
        &self.layers
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Sequential
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.activations.clear();
        let mut x = input.clone();
        for layer in &mut self.layers {
            let y = layer.forward(&x, mode)?;
            self.activations.push(x);
            x = y;
        }
        Ok(x)
    }

    fn backward(
        &mut self,
        _input: &Tensor<T>,
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        if self.activations.len() != self.layers.len() {
            return Err(NnError::InvalidArgument(
                "backward called without a matching forward".into(),
            ));
        }
        let mut grad = grad_output.clone();
        let mut out = output.clone();
        for (layer, x) in self.layers.iter_mut().zip(&self.activations).rev() {
            grad = layer.backward(x, &out, &grad, mode)?;
            out = x.clone();
        }
        Ok(grad)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
