use super::{NnError, Result, Scalar, Tensor};

/// Concatenates NHWC tensors along the channel axis, preserving input order.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if inputs.len() < 2 {
        return Err(NnError::InvalidArgument(format!(
            "concatenation needs at least two inputs, got {}",
            inputs.len()
        )));
    }
    let (n, h, w, _) = inputs[0].dims4()?;
    let mut widths = Vec::with_capacity(inputs.len());
    for t in inputs {
        let (tn, th, tw, tc) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(NnError::ShapeMismatch(format!(
                "cannot concatenate {:?} with {:?}",
                t.shape(),
                inputs[0].shape()
            )));
        }
        widths.push(tc);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * h * w * total);
    for px in 0..n * h * w {
        for (t, &c) in inputs.iter().zip(&widths) {
            out.extend_from_slice(&t.data()[px * c..(px + 1) * c]);
        }
    }
    Tensor::new(vec![n, h, w, total], out)
}

/// Inverse of [`concat_channels`]: splits along channels at the given widths.
pub fn split_channels<T: Scalar>(input: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, h, w, c) = input.dims4()?;
    if widths.iter().sum::<usize>() != c {
        return Err(NnError::ShapeMismatch(format!(
            "split widths {widths:?} do not sum to {c} channels"
        )));
    }
    let mut parts: Vec<Vec<T>> = widths.iter().map(|&wc| Vec::with_capacity(n * h * w * wc)).collect();
    for px in input.data().chunks_exact(c) {
        let mut at = 0;
        for (part, &wc) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&px[at..at + wc]);
            at += wc;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(data, &wc)| Tensor::new(vec![n, h, w, wc], data))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_init;

    #[test]
    fn channel_counts_add_up() {
        let a = Tensor::<f32>::zeros(&[2, 4, 4, 3]);
        let b = Tensor::<f32>::zeros(&[2, 4, 4, 5]);
        assert_eq!(concat_channels(&[&a, &b]).unwrap().shape(), &[2, 4, 4, 8]);
        let c = Tensor::<f32>::zeros(&[2, 4, 4, 8]);
        let d = concat_channels(&[&c, &c, &c]).unwrap();
        assert_eq!(d.shape()[3], 24);
    }

    #[test]
    fn split_recovers_inputs() {
        let a = seeded_init::<f64>(&[2, 3, 3, 2], 1, 1, 1).unwrap();
        let b = seeded_init::<f64>(&[2, 3, 3, 4], 1, 1, 2).unwrap();
        let c = seeded_init::<f64>(&[2, 3, 3, 1], 1, 1, 3).unwrap();
        let cat = concat_channels(&[&a, &b, &c]).unwrap();
        let parts = split_channels(&cat, &[2, 4, 1]).unwrap();
        assert_eq!(parts, vec![a, b, c]);
    }

    #[test]
    fn spatial_mismatch_is_an_error() {
        let a = Tensor::<f32>::zeros(&[1, 4, 4, 1]);
        let b = Tensor::<f32>::zeros(&[1, 2, 2, 1]);
        assert!(concat_channels(&[&a, &b]).is_err());
        assert!(concat_channels(&[&a]).is_err());
    }
}
