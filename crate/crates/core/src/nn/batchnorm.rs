use super::{Layer, LayerKind, Mode, NnError, Param, Result, Scalar, Tensor};

pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

pub struct BatchNormGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn check_channels<T: Scalar>(input: &Tensor<T>, others: &[&Tensor<T>]) -> Result<usize> {
    let c = *input
        .shape()
        .last()
        .ok_or_else(|| NnError::ShapeMismatch("batch norm on a 0-d tensor".into()))?;
    for t in others {
        if t.len() != c {
            return Err(NnError::ChannelMismatch {
                expected: c,
                actual: t.len(),
            });
        }
    }
    Ok(c)
}

/// Per-channel mean and biased variance over every axis but the last.
fn channel_moments<T: Scalar>(input: &Tensor<T>, c: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (input.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for px in input.data().chunks_exact(c) {
        for (acc, &v) in mean.iter_mut().zip(px) {
            *acc += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; c];
    for px in input.data().chunks_exact(c) {
        for ((acc, &v), mu) in var.iter_mut().zip(px).zip(&mean) {
            let d = v.as_f64() - mu;
            *acc += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}

/// Normalizes over N,H,W per channel. Train mode uses batch statistics and
/// folds them into the running statistics with momentum [`BN_MOMENTUM`];
/// inference mode uses the running statistics only.
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mode: Mode,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let c = check_channels(input, &[gamma, beta, running_mean, running_var])?;
    let (mean, var) = match mode {
        Mode::Train => {
            let (mean, var) = channel_moments(input, c);
            let m = T::of(BN_MOMENTUM);
            let one_m = T::of(1.0 - BN_MOMENTUM);
            for (r, &v) in running_mean.data_mut().iter_mut().zip(&mean) {
                *r = m * *r + one_m * T::of(v);
            }
            for (r, &v) in running_var.data_mut().iter_mut().zip(&var) {
                *r = m * *r + one_m * T::of(v);
            }
            (mean, var)
        }
        Mode::Inference => (
            running_mean.data().iter().map(|v| v.as_f64()).collect(),
            running_var.data().iter().map(|v| v.as_f64()).collect(),
        ),
    };
    if var.iter().any(|&v| v < 0.0) {
        return Err(NnError::InvalidArgument("negative variance state".into()));
    }
    let scale: Vec<T> = (0..c)
        .map(|i| T::of(gamma.data()[i].as_f64() / (var[i] + BN_EPSILON).sqrt()))
        .collect();
    let shift: Vec<T> = (0..c).map(|i| beta.data()[i] - scale[i] * T::of(mean[i])).collect();
    let mut out = input.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for ((v, &s), &b) in px.iter_mut().zip(&scale).zip(&shift) {
            *v = *v * s + b;
        }
    }
    Ok(out)
}

/// Gradients of [`batchnorm`]. In train mode the batch statistics are
/// recomputed from `input`.
pub fn batchnorm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    grad_output: &Tensor<T>,
    mode: Mode,
) -> Result<BatchNormGrads<T>> {
    let c = check_channels(input, &[gamma, running_mean, running_var])?;
    if grad_output.shape() != input.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "batch norm gradient {:?} vs input {:?}",
            grad_output.shape(),
            input.shape()
        )));
    }
    let (mean, var) = match mode {
        Mode::Train => channel_moments(input, c),
        Mode::Inference => (
            running_mean.data().iter().map(|v| v.as_f64()).collect(),
            running_var.data().iter().map(|v| v.as_f64()).collect(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let m = (input.len() / c) as f64;

    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (px, gp) in input.data().chunks_exact(c).zip(grad_output.data().chunks_exact(c)) {
        for i in 0..c {
            let xhat = (px[i].as_f64() - mean[i]) * inv_std[i];
            let g = gp[i].as_f64();
            dgamma[i] += g * xhat;
            dbeta[i] += g;
        }
    }

    let mut dx = Tensor::zeros(input.shape());
    for ((dp, px), gp) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(input.data().chunks_exact(c))
        .zip(grad_output.data().chunks_exact(c))
    {
        for i in 0..c {
            let gam = gamma.data()[i].as_f64();
            let g = gp[i].as_f64();
            let v = match mode {
                Mode::Train => {
                    let xhat = (px[i].as_f64() - mean[i]) * inv_std[i];
                    gam * inv_std[i] / m * (m * g - dbeta[i] - xhat * dgamma[i])
                }
                Mode::Inference => gam * inv_std[i] * g,
            };
            dp[i] = T::of(v);
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::from_f64(&[c], &dgamma)?,
        beta: Tensor::from_f64(&[c], &dbeta)?,
    })
}

/// Batch normalization with trainable `gamma`/`beta` and non-trainable
/// running statistics.
pub struct BatchNorm<T: Scalar> {
    name: String,
    gamma: Param<T>,
    beta: Param<T>,
    moving_mean: Param<T>,
    moving_variance: Param<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        let name = name.into();
        Self {
            gamma: Param::new(format!("{name}/gamma"), Tensor::ones(&[channels]), true),
            beta: Param::new(format!("{name}/beta"), Tensor::zeros(&[channels]), true),
            moving_mean: Param::new(format!("{name}/moving_mean"), Tensor::zeros(&[channels]), false),
            moving_variance: Param::new(format!("{name}/moving_variance"), Tensor::ones(&[channels]), false),
            name,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn running_stats(&self) -> (&Tensor<T>, &Tensor<T>) {
        (&self.moving_mean.value, &self.moving_variance.value)
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input.last() {
            Some(&c) if c == self.channels() => Ok(input.to_vec()),
            Some(&c) => Err(NnError::ChannelMismatch {
                expected: self.channels(),
                actual: c,
            }),
            None => Err(NnError::ShapeMismatch("batch norm on a 0-d tensor".into())),
        }
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        batchnorm(
            input,
            &self.gamma.value,
            &self.beta.value,
            mode,
            &mut self.moving_mean.value,
            &mut self.moving_variance.value,
        )
    }

    fn backward(
        &mut self,
        input: &Tensor<T>,
        _output: &Tensor<T>,
        grad_output: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let grads = batchnorm_backward(
            input,
            &self.gamma.value,
            &self.moving_mean.value,
            &self.moving_variance.value,
            grad_output,
            mode,
        )?;
        self.gamma.accumulate(&grads.gamma)?;
        self.beta.accumulate(&grads.beta)?;
        Ok(grads.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta, &self.moving_mean, &self.moving_variance]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.moving_mean,
            &mut self.moving_variance,
        ]
    }
}
