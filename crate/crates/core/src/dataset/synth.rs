use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, Result, Sample};
use crate::nn::Tensor;

/// Balanced toy set: even indices are "good" (bright, smooth striped
/// texture, every pixel above 0.5), odd indices are "bad" (dark with salt
/// noise, mean below 0.5). Deterministic in `seed`.
pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(DatasetError::InvalidArgument(format!(
            "sample count must be even and >= 2, got {n}"
        )));
    }
    if size == 0 {
        return Err(DatasetError::InvalidArgument("image size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let good = i % 2 == 0;
        let mut data = Vec::with_capacity(size * size * 3);
        if good {
            let base: f32 = rng.gen_range(0.62..0.85);
            let tint: [f32; 3] = [
                rng.gen_range(-0.03..0.03),
                rng.gen_range(-0.03..0.03),
                rng.gen_range(-0.03..0.03),
            ];
            let freq: f32 = rng.gen_range(0.2..0.6);
            for y in 0..size {
                for _x in 0..size {
                    let stripe = 0.05 * (freq * y as f32).sin();
                    for t in tint {
                        let noise: f32 = rng.gen_range(-0.03..0.03);
                        data.push((base + stripe + t + noise).clamp(0.0, 1.0));
                    }
                }
            }
        } else {
            let base: f32 = rng.gen_range(0.15..0.38);
            for _ in 0..size * size {
                if rng.gen_bool(0.05) {
                    data.extend_from_slice(&[1.0; 3]);
                } else {
                    for _ in 0..3 {
                        let noise: f32 = rng.gen_range(-0.03..0.03);
                        data.push((base + noise).clamp(0.0, 1.0));
                    }
                }
            }
        }
        out.push(Sample {
            image: Tensor::new(vec![size, size, 3], data)?,
            label: u8::from(good),
        });
    }
    Ok(out)
}
