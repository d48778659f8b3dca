use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NnError, Result, Scalar, Tensor};

/// Glorot-uniform initialization: values drawn from `[-l, l]` with
/// `l = sqrt(6 / (fan_in + fan_out))`. The same seed always yields the same
/// tensor.
pub fn seeded_init<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor<T>> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(NnError::InvalidArgument(format!(
            "cannot initialize shape {shape:?} with a zero dimension"
        )));
    }
    if fan_in == 0 || fan_out == 0 {
        return Err(NnError::InvalidArgument("fan_in and fan_out must be >= 1".into()));
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = shape.iter().product();
    let data = (0..count).map(|_| T::of(dist.sample(&mut rng))).collect();
    Tensor::new(shape.to_vec(), data)
}
