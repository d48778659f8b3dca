use std::path::Path;

use image::RgbImage;

use super::{DatasetError, Result};
use crate::nn::Tensor;

/// Decodes a JPEG/PNG, converts to RGB (grey replicated, alpha dropped),
/// resizes bilinearly to `size × size` and scales to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>, size: usize) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| DatasetError::Decode {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(DatasetError::Decode {
            path: path.display().to_string(),
            message: "image has a zero dimension".into(),
        });
    }
    resize_bilinear(&rgb, size)
}

/// Bilinear resampling with half-pixel centres and edge clamping; the
/// aspect ratio is not preserved.
pub fn resize_bilinear(img: &RgbImage, size: usize) -> Result<Tensor<f32>> {
    if size == 0 {
        return Err(DatasetError::InvalidArgument("target size must be >= 1".into()));
    }
    let (iw, ih) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / size as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let xs = taps(size, iw);
    let ys = taps(size, ih);
    let mut out = Vec::with_capacity(size * size * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let px = |x: usize, y: usize| f64::from(raw[(y * iw + x) * 3 + c]);
                let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
                let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push((v / 255.0) as f32);
            }
        }
    }
    Ok(Tensor::new(vec![size, size, 3], out)?)
}
