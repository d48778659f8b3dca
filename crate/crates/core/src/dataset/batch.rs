use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, Result, Sample};
use crate::nn::Tensor;

/// Splits `items` into batches of `batch_size`; the last batch may be short.
/// With `shuffle` the order is a seeded permutation.
pub fn make_batches<T: Clone>(items: &[T], batch_size: usize, seed: u64, shuffle: bool) -> Result<Vec<Vec<T>>> {
    if batch_size == 0 {
        return Err(DatasetError::InvalidArgument("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| items[i].clone()).collect())
        .collect())
}

/// Stacks the selected samples into `[N, S, S, 3]` images and `[N, 1]` targets.
pub fn assemble(samples: &[Sample], indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<&Tensor<f32>> = indices.iter().map(|&i| &samples[i].image).collect();
    let x = Tensor::stack(&images)?;
    let y = Tensor::new(
        vec![indices.len(), 1],
        indices.iter().map(|&i| f32::from(samples[i].label)).collect(),
    )?;
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hundred_by_sixteen() {
        let items: Vec<usize> = (0..100).collect();
        let b = make_batches(&items, 16, 1, true).unwrap();
        assert_eq!(b.len(), 7);
        assert_eq!(b.last().unwrap().len(), 4);
    }

    #[test]
    fn unshuffled_keeps_order() {
        let items: Vec<usize> = (0..5).collect();
        let b = make_batches(&items, 2, 9, false).unwrap();
        assert_eq!(b, vec![vec![0, 1], vec![2, 3], vec![4]]);
    }

    #[test]
    fn seed_determines_order() {
        let items: Vec<usize> = (0..50).collect();
        assert_eq!(
            make_batches(&items, 8, 3, true).unwrap(),
            make_batches(&items, 8, 3, true).unwrap()
        );
        assert_ne!(
            make_batches(&items, 8, 3, true).unwrap(),
            make_batches(&items, 8, 4, true).unwrap()
        );
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        assert!(make_batches(&[1, 2], 0, 0, false).is_err());
    }

    proptest! {
        #[test]
        fn every_item_exactly_once(n in 0usize..200, bs in 1usize..40, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let batches = make_batches(&items, bs, seed, true).unwrap();
            prop_assert_eq!(batches.len(), n.div_ceil(bs));
            prop_assert!(batches.iter().all(|b| b.len() <= bs && !b.is_empty()));
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }
    }
}
