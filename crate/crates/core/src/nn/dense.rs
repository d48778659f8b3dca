use super::{
    activate, activate_backward, seeded_init, ActivationKind, Layer, LayerKind, Mode, NnError, Param, Result, Scalar,
    Tensor,
};

pub struct DenseGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn rows_and_features(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [] => Err(NnError::ShapeMismatch("dense input must have a batch axis".into())),
        [n, rest @ ..] => Ok((*n, rest.iter().product())),
    }
}

fn check<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, d) = rows_and_features(input.shape())?;
    match *weights.shape() {
        [wd, u] if wd == d => Ok((n, d, u)),
        _ => Err(NnError::ShapeMismatch(format!(
            "dense weights {:?} do not accept {d} input features",
            weights.shape()
        ))),
    }
}

/// `x·W + b`; inputs with more than two axes are flattened row-major to
/// `[N, D]` first.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, u) = check(input, weights)?;
    if bias.len() != u {
        return Err(NnError::ShapeMismatch(format!(
            "dense bias has {} entries for {u} units",
            bias.len()
        )));
    }
    let mut out = vec![T::zero(); n * u];
    T::gemm(n, d, u, input.data(), false, weights.data(), false, &mut out, false);
    for row in out.chunks_exact_mut(u) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
    Tensor::new(vec![n, u], out)
}

/// Gradients of [`dense`]; the input gradient has the original input shape.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, d, u) = check(input, weights)?;
    if grad_output.shape() != [n, u] {
        return Err(NnError::ShapeMismatch(format!(
            "dense gradient {:?}, expected [{n}, {u}]",
            grad_output.shape()
        )));
    }
    let g = grad_output.data();
    let mut dx = vec![T::zero(); n * d];
    T::gemm(n, u, d, g, false, weights.data(), true, &mut dx, false);
    let mut dw = vec![T::zero(); d * u];
    T::gemm(d, n, u, input.data(), true, g, false, &mut dw, false);
    let mut db = vec![T::zero(); u];
    for row in g.chunks_exact(u) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: Tensor::new(vec![d, u], dw)?,
        bias: Tensor::new(vec![u], db)?,
    })
}

pub struct Dense<T: Scalar> {
    name: String,
    weights: Param<T>,
    bias: Param<T>,
    activation: Option<ActivationKind>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(
        name: impl Into<String>,
        in_features: usize,
        units: usize,
        activation: Option<ActivationKind>,
        seed: u64,
    ) -> Result<Self> {
        let w = seeded_init(&[in_features, units], in_features, units, seed)?;
        Ok(Self::from_parts(name, w, Tensor::zeros(&[units]), activation))
    }

    pub fn from_parts(
        name: impl Into<String>,
        weights: Tensor<T>,
        bias: Tensor<T>,
        activation: Option<ActivationKind>,
    ) -> Self {
        let name = name.into();
        Self {
            weights: Param::new(format!("{name}/kernel"), weights, true),
            bias: Param::new(format!("{name}/bias"), bias, true),
            name,
            activation,
        }
    }

    pub fn units(&self) -> usize {
        self.weights.value.shape()[1]
    }

    pub fn in_features(&self) -> usize {
        self.weights.value.shape()[0]
    }

    pub fn activation(&self) -> Option<ActivationKind> {
        self.activation
    }

    /// Backward pass starting from the gradient of the pre-activation
    /// values, skipping the fused activation.
    pub fn backward_preactivation(&mut self, input: &Tensor<T>, grad_z: &Tensor<T>) -> Result<Tensor<T>> {
        let grads = dense_backward(input, &self.weights.value, grad_z)?;
        self.weights.accumulate(&grads.weights)?;
        self.bias.accumulate(&grads.bias)?;
        Ok(grads.input)
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (n, d) = rows_and_features(input)?;
        if d != self.in_features() {
            return Err(NnError::ShapeMismatch(format!(
                "dense layer '{}' expects {} features, got {d}",
                self.name,
                self.in_features()
            )));
        }
        Ok(vec![n, self.units()])
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let z = dense(input, &self.weights.value, &self.bias.value)?;
        Ok(match self.activation {
            Some(kind) => activate(kind, &z),
            None => z,
        })
    }

    fn backward(
        &mut self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        _mode: Mode,
    ) -> Result<Tensor<T>> {
        let grad_z = match self.activation {
            Some(kind) => activate_backward(kind, output, grad_output)?,
            None => grad_output.clone(),
        };
        self.backward_preactivation(input, &grad_z)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weights, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weights, &mut self.bias]
    }
}

/// Row-major flatten to `[N, features]`.
#[derive(Clone, Debug)]
pub struct Flatten {
    name: String,
}

impl Flatten {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Flatten
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (n, d) = rows_and_features(input)?;
        Ok(vec![n, d])
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (n, d) = rows_and_features(input.shape())?;
        input.clone().reshape(&[n, d])
    }

    fn backward(
        &mut self,
        input: &Tensor<T>,
        _output: &Tensor<T>,
        grad_output: &Tensor<T>,
        _mode: Mode,
    ) -> Result<Tensor<T>> {
        grad_output.clone().reshape(input.shape())
    }
}
