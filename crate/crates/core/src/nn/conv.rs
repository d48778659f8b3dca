//! Stride-1 "same" convolution over NHWC tensors.
//!
//! Lowered to GEMM one band of output rows at a time so the im2col buffer
//! stays small even for 1024×1024 inputs.

use super::{
    activate, activate_backward, seeded_init, ActivationKind, Layer, LayerKind, Mode, NnError, Param, Result, Scalar,
    Tensor,
};

/// Target number of output pixels per im2col band.
const BAND_PIXELS: usize = 4096;

pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn band_rows(&self) -> usize {
        (BAND_PIXELS / self.w.max(1)).clamp(1, self.h.max(1))
    }
}

fn geometry<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<Geometry> {
    let (n, h, w, cin) = input.dims4()?;
    let (kh, kw, wcin, cout) = weights.dims4()?;
    if wcin != cin {
        return Err(NnError::ChannelMismatch {
            expected: wcin,
            actual: cin,
        });
    }
    if kh == 0 || kw == 0 || cout == 0 {
        return Err(NnError::InvalidArgument(format!(
            "degenerate kernel shape {:?}",
            weights.shape()
        )));
    }
    // same padding: total padding k-1, extra row/column goes to the bottom/right
    if h + kh - 1 < kh || w + kw - 1 < kw {
        return Err(NnError::InvalidArgument(format!(
            "kernel {kh}x{kw} larger than padded input {h}x{w}"
        )));
    }
    Ok(Geometry {
        n,
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        pad_top: (kh - 1) / 2,
        pad_left: (kw - 1) / 2,
    })
}

/// Fills `col` with the patches for output rows `[y0, y1)` of image `b`.
fn im2col<T: Scalar>(g: &Geometry, src: &[T], b: usize, y0: usize, y1: usize, col: &mut [T]) {
    let k = g.patch();
    let img = &src[b * g.h * g.w * g.cin..(b + 1) * g.h * g.w * g.cin];
    for oy in y0..y1 {
        for ox in 0..g.w {
            let row = &mut col[((oy - y0) * g.w + ox) * k..((oy - y0) * g.w + ox + 1) * k];
            for ky in 0..g.kh {
                let iy = (oy + ky) as isize - g.pad_top as isize;
                for kx in 0..g.kw {
                    let ix = (ox + kx) as isize - g.pad_left as isize;
                    let dst = &mut row[(ky * g.kw + kx) * g.cin..(ky * g.kw + kx + 1) * g.cin];
                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                    } else {
                        let at = (iy as usize * g.w + ix as usize) * g.cin;
                        dst.copy_from_slice(&img[at..at + g.cin]);
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch gradients back into image `b` of `dst`.
fn col2im<T: Scalar>(g: &Geometry, col: &[T], b: usize, y0: usize, y1: usize, dst: &mut [T]) {
    let k = g.patch();
    let img = &mut dst[b * g.h * g.w * g.cin..(b + 1) * g.h * g.w * g.cin];
    for oy in y0..y1 {
        for ox in 0..g.w {
            let row = &col[((oy - y0) * g.w + ox) * k..((oy - y0) * g.w + ox + 1) * k];
            for ky in 0..g.kh {
                let iy = (oy + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let at = (iy as usize * g.w + ix as usize) * g.cin;
                    let src = &row[(ky * g.kw + kx) * g.cin..(ky * g.kw + kx + 1) * g.cin];
                    for (d, &s) in img[at..at + g.cin].iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero "same" padding and stride 1, plus bias.
///
/// `input` is `[n,h,w,cin]`, `weights` is `[kh,kw,cin,cout]`, `bias` is `[cout]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geometry(input, weights)?;
    if bias.len() != g.cout {
        return Err(NnError::ShapeMismatch(format!(
            "bias has {} entries for {} output channels",
            bias.len(),
            g.cout
        )));
    }
    let k = g.patch();
    let band = g.band_rows();
    let mut out = vec![T::zero(); g.n * g.h * g.w * g.cout];
    let mut col = vec![T::zero(); band * g.w * k];
    for b in 0..g.n {
        let mut y0 = 0;
        while y0 < g.h {
            let y1 = (y0 + band).min(g.h);
            let pixels = (y1 - y0) * g.w;
            im2col(&g, input.data(), b, y0, y1, &mut col);
            let start = ((b * g.h + y0) * g.w) * g.cout;
            let dst = &mut out[start..start + pixels * g.cout];
            T::gemm(pixels, k, g.cout, &col, false, weights.data(), false, dst, false);
            y0 = y1;
        }
    }
    let bias = bias.data();
    for px in out.chunks_exact_mut(g.cout) {
        for (v, &bb) in px.iter_mut().zip(bias) {
            *v = *v + bb;
        }
    }
    Tensor::new(vec![g.n, g.h, g.w, g.cout], out)
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weights)?;
    if grad_output.shape() != [g.n, g.h, g.w, g.cout] {
        return Err(NnError::ShapeMismatch(format!(
            "conv gradient {:?} does not match output [{}, {}, {}, {}]",
            grad_output.shape(),
            g.n,
            g.h,
            g.w,
            g.cout
        )));
    }
    let k = g.patch();
    let band = g.band_rows();
    let mut dx = vec![T::zero(); input.len()];
    let mut dw = vec![T::zero(); weights.len()];
    let mut col = vec![T::zero(); band * g.w * k];
    let mut dcol = vec![T::zero(); band * g.w * k];
    let gy = grad_output.data();
    for b in 0..g.n {
        let mut y0 = 0;
        while y0 < g.h {
            let y1 = (y0 + band).min(g.h);
            let pixels = (y1 - y0) * g.w;
            let start = ((b * g.h + y0) * g.w) * g.cout;
            let gband = &gy[start..start + pixels * g.cout];
            im2col(&g, input.data(), b, y0, y1, &mut col);
            // dW += colᵀ · dY
            T::gemm(k, pixels, g.cout, &col, true, gband, false, &mut dw, true);
            // dcol = dY · Wᵀ
            T::gemm(pixels, g.cout, k, gband, false, weights.data(), true, &mut dcol, false);
            col2im(&g, &dcol, b, y0, y1, &mut dx);
            y0 = y1;
        }
    }
    let mut db = vec![T::zero(); g.cout];
    for px in gy.chunks_exact(g.cout) {
        for (d, &v) in db.iter_mut().zip(px) {
            *d = *d + v;
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: Tensor::new(weights.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![g.cout], db)?,
    })
}

/// Convolution layer with an optional fused activation.
pub struct Conv2d<T: Scalar> {
    name: String,
    kernel: Param<T>,
    bias: Param<T>,
    activation: Option<ActivationKind>,
}

impl<T: Scalar> Conv2d<T> {
    /// Glorot-uniform kernel, zero bias.
    pub fn new(
        name: impl Into<String>,
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        activation: Option<ActivationKind>,
        seed: u64,
    ) -> Result<Self> {
        let name = name.into();
        let k = kernel_size;
        let kernel = seeded_init(
            &[k, k, in_channels, out_channels],
            k * k * in_channels,
            k * k * out_channels,
            seed,
        )?;
        Ok(Self::from_parts(
            name,
            kernel,
            Tensor::zeros(&[out_channels]),
            activation,
        ))
    }

    pub fn from_parts(
        name: impl Into<String>,
        kernel: Tensor<T>,
        bias: Tensor<T>,
        activation: Option<ActivationKind>,
    ) -> Self {
        let name = name.into();
        Self {
            kernel: Param::new(format!("{name}/kernel"), kernel, true),
            bias: Param::new(format!("{name}/bias"), bias, true),
            name,
            activation,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.value.shape()[3]
    }

    pub fn activation(&self) -> Option<ActivationKind> {
        self.activation
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Conv
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let ks = self.kernel.value.shape();
        match *input {
            [n, h, w, c] if c == ks[2] => Ok(vec![n, h, w, ks[3]]),
            [_, _, _, c] => Err(NnError::ChannelMismatch {
                expected: ks[2],
                actual: c,
            }),
            _ => Err(NnError::ShapeMismatch(format!("conv needs NHWC, got {input:?}"))),
        }
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let z = conv2d(input, &self.kernel.value, &self.bias.value)?;
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
        let grads = conv2d_backward(input, &self.kernel.value, &grad_z)?;
        self.kernel.accumulate(&grads.weights)?;
        self.bias.accumulate(&grads.bias)?;
        Ok(grads.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.kernel, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }
}
