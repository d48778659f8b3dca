use super::{NnError, Result, Scalar, Tensor};

/// Predictions are clamped to `[eps, 1 - eps]` before the logarithm.
pub const BCE_EPSILON: f64 = 1e-7;

fn check<T: Scalar>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<()> {
    if predictions.shape() != targets.shape() || predictions.is_empty() {
        return Err(NnError::ShapeMismatch(format!(
            "predictions {:?} vs targets {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy and its gradient with respect to the
/// predictions. Clamped predictions get zero gradient.
pub fn bce_loss<T: Scalar>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check(predictions, targets)?;
    let n = predictions.len() as f64;
    let (lo, hi) = (BCE_EPSILON, 1.0 - BCE_EPSILON);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &t) in predictions.data().iter().zip(targets.data()) {
        let raw = p.as_f64();
        let t = t.as_f64();
        let p = raw.clamp(lo, hi);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        let g = if raw < lo || raw > hi {
            0.0
        } else {
            (-t / p + (1.0 - t) / (1.0 - p)) / n
        };
        grad.push(T::of(g));
    }
    Ok((loss / n, Tensor::new(predictions.shape().to_vec(), grad)?))
}

/// Gradient of the mean BCE with respect to the logits feeding a sigmoid,
/// `(p - t) / N`. Equal to the chain rule through [`bce_loss`] away from the
/// clamp, and does not vanish when the sigmoid saturates.
pub fn bce_logit_grad<T: Scalar>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    check(predictions, targets)?;
    let n = T::of(predictions.len() as f64);
    let data = predictions
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| (p - t) / n)
        .collect();
    Tensor::new(predictions.shape().to_vec(), data)
}
