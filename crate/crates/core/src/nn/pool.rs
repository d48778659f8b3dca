use super::{Layer, LayerKind, Mode, NnError, Result, Scalar, Tensor};

fn pooled_dims(h: usize, w: usize) -> Result<(usize, usize)> {
    if h < 2 || w < 2 {
        return Err(NnError::InvalidArgument(format!(
            "max pooling needs spatial size >= 2, got {h}x{w}"
        )));
    }
    // odd sizes drop the trailing row/column
    Ok((h / 2, w / 2))
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, for every
/// output element, the flat input index that produced it. Ties go to the first
/// element in row-major window order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = input.dims4()?;
    let (oh, ow) = pooled_dims(h, w)?;
    let src = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = src[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, oh, ow, c], out)?, argmax))
}

/// Routes each upstream gradient to the input position recorded in `argmax`.
pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_output.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} argmax entries for {} gradients",
            argmax.len(),
            grad_output.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_output.data()) {
        d[idx] = d[idx] + g;
    }
    Ok(dx)
}

#[derive(Clone, Debug)]
pub struct MaxPool2d {
    name: String,
}

impl MaxPool2d {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::MaxPool
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [n, h, w, c] => {
                let (oh, ow) = pooled_dims(h, w)?;
                Ok(vec![n, oh, ow, c])
            }
            _ => Err(NnError::ShapeMismatch(format!("pooling needs NHWC, got {input:?}"))),
        }
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        Ok(maxpool2d(input)?.0)
    }

    fn backward(
        &mut self,
        input: &Tensor<T>,
        _output: &Tensor<T>,
        grad_output: &Tensor<T>,
        _mode: Mode,
    ) -> Result<Tensor<T>> {
        let (_, argmax) = maxpool2d(input)?;
        maxpool2d_backward(input.shape(), &argmax, grad_output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::<f32>::from_f64(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, argmax) = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
        let dx = maxpool2d_backward(x.shape(), &argmax, &Tensor::<f32>::ones(y.shape())).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ramp_four_by_four() {
        let ramp: Vec<f64> = (1..=16).map(f64::from).collect();
        let x = Tensor::<f64>::from_f64(&[1, 4, 4, 1], &ramp).unwrap();
        let (y, _) = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 2, 1], &[5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, argmax) = maxpool2d(&x).unwrap();
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn odd_sizes_floor() {
        let x = Tensor::<f32>::zeros(&[2, 5, 7, 3]);
        let (y, _) = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3, 3]);
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(maxpool2d(&Tensor::<f32>::zeros(&[1, 1, 4, 1])).is_err());
    }
}
