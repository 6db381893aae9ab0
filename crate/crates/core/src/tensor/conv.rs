//! Convolution kernels built on im2col + GEMM.
//!
//! Convolutions are cross-correlations (no kernel flip). A transposed
//! convolution is the input-gradient of the matching strided convolution, so
//! both share the same column geometry.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Geometry of a convolution from a `cin x h x w` image to `oh x ow`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if k == 0 || stride == 0 {
            return Err(Error::shape("conv2d", format!("kernel {k} and stride {stride} must be >= 1")));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(
                "conv2d",
                format!("padded input {}x{} smaller than kernel {k}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(Self { cin, h, w, k, stride, pad, oh, ow })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `[lo, hi)` whose input index `o * stride + off - pad`
    /// stays inside `0..len`.
    fn valid_range(&self, off: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > off { (self.pad - off).div_ceil(s) } else { 0 };
        let hi = if len + self.pad > off { (len + self.pad - off).div_ceil(s).min(out) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfolds one image into a `(cin*k*k) x (oh*ow)` column matrix.
pub(crate) fn im2col<T: Scalar>(img: &[T], g: &Geom, col: &mut [T]) {
    let (oh, ow, k, s) = (g.oh, g.ow, g.k, g.stride);
    for c in 0..g.cin {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            let (ylo, yhi) = g.valid_range(ky, g.h, oh);
            for kx in 0..k {
                let (xlo, xhi) = g.valid_range(kx, g.w, ow);
                let row = &mut col[((c * k + ky) * k + kx) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if oy < ylo || oy >= yhi || xlo >= xhi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let iy = oy * s + ky - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    dst[..xlo].fill(T::zero());
                    dst[xhi..].fill(T::zero());
                    let ix0 = xlo * s + kx - g.pad;
                    if s == 1 {
                        dst[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for (j, d) in dst[xlo..xhi].iter_mut().enumerate() {
                            *d = src[ix0 + j * s];
                        }
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back onto an image, accumulating overlaps.
pub(crate) fn col2im<T: Scalar>(col: &[T], g: &Geom, img: &mut [T]) {
    let (oh, ow, k, s) = (g.oh, g.ow, g.k, g.stride);
    for c in 0..g.cin {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            let (ylo, yhi) = g.valid_range(ky, g.h, oh);
            for kx in 0..k {
                let (xlo, xhi) = g.valid_range(kx, g.w, ow);
                if xlo >= xhi {
                    continue;
                }
                let row = &col[((c * k + ky) * k + kx) * oh * ow..][..oh * ow];
                for oy in ylo..yhi {
                    let iy = oy * s + ky - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let ix0 = xlo * s + kx - g.pad;
                    for (j, &v) in row[oy * ow + xlo..oy * ow + xhi].iter().enumerate() {
                        dst[ix0 + j * s] += v;
                    }
                }
            }
        }
    }
}

fn check_finite<T: Scalar>(op: &'static str, ts: &[&Tensor<T>]) -> Result<()> {
    if ts.iter().all(|t| t.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn check_bias<T: Scalar>(op: &'static str, bias: &Tensor<T>, cout: usize) -> Result<()> {
    if bias.shape() != [cout] {
        return Err(Error::shape(op, format!("bias shape {:?}, expected [{cout}]", bias.shape())));
    }
    Ok(())
}

/// Validated shapes of a convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvShape {
    pub n: usize,
    pub cout: usize,
    pub geom: Geom,
}

pub(crate) fn conv2d_shape<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvShape> {
    let (n, cin, h, w) = input.dims4("conv2d")?;
    let (cout, wcin, kh, kw) = weight.dims4("conv2d")?;
    if kh != kw {
        return Err(Error::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
    }
    if wcin != cin {
        return Err(Error::shape("conv2d", format!("weight expects {wcin} input channels, input has {cin}")));
    }
    check_bias("conv2d", bias, cout)?;
    Ok(ConvShape { n, cout, geom: Geom::new(cin, h, w, kh, stride, padding)? })
}

/// 2-D cross-correlation of `N x Cin x H x W` input with `Cout x Cin x k x k`
/// weights plus a per-channel bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let cs = conv2d_shape(input, weight, bias, stride, padding)?;
    check_finite("conv2d", &[input, weight, bias])?;
    Ok(conv2d_forward(input, weight, bias, &cs))
}

/// Output channel count at or below which stride-1 convolutions skip
/// im2col and accumulate shifted rows directly.
const DIRECT_MAX_COUT: usize = 4;

fn use_direct(g: &Geom, cout: usize) -> bool {
    g.stride == 1 && cout <= DIRECT_MAX_COUT
}

/// Calls `f(out_row_start, in_row_start, len)` for every output row segment
/// that tap `(ky, kx)` of a stride-1 convolution reads from inside the image.
fn for_each_tap_row(g: &Geom, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
    let (ylo, yhi) = g.valid_range(ky, g.h, g.oh);
    let (xlo, xhi) = g.valid_range(kx, g.w, g.ow);
    if xlo >= xhi {
        return;
    }
    for oy in ylo..yhi {
        let iy = oy + ky - g.pad;
        f(oy * g.ow + xlo, iy * g.w + xlo + kx - g.pad, xhi - xlo);
    }
}

fn direct_forward<T: Scalar>(img: &[T], weight: &[T], g: &Geom, cout: usize, dst: &mut [T]) {
    let (k, plane, oplane) = (g.k, g.h * g.w, g.oh * g.ow);
    for co in 0..cout {
        let out = &mut dst[co * oplane..(co + 1) * oplane];
        for ci in 0..g.cin {
            let src = &img[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((co * g.cin + ci) * k + ky) * k + kx];
                    for_each_tap_row(g, ky, kx, |o, i, n| {
                        for (d, &s) in out[o..o + n].iter_mut().zip(&src[i..i + n]) {
                            *d += wv * s;
                        }
                    });
                }
            }
        }
    }
}

fn direct_backward<T: Scalar>(img: &[T], weight: &[T], gy: &[T], g: &Geom, cout: usize, gw: &mut [T], gx: Option<&mut [T]>) {
    let (k, plane, oplane) = (g.k, g.h * g.w, g.oh * g.ow);
    for co in 0..cout {
        let go = &gy[co * oplane..(co + 1) * oplane];
        for ci in 0..g.cin {
            let src = &img[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = T::zero();
                    for_each_tap_row(g, ky, kx, |o, i, n| {
                        acc += go[o..o + n].iter().zip(&src[i..i + n]).fold(T::zero(), |a, (&x, &y)| a + x * y);
                    });
                    gw[((co * g.cin + ci) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
    if let Some(gx) = gx {
        for co in 0..cout {
            let go = &gy[co * oplane..(co + 1) * oplane];
            for ci in 0..g.cin {
                let dst = &mut gx[ci * plane..(ci + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[((co * g.cin + ci) * k + ky) * k + kx];
                        for_each_tap_row(g, ky, kx, |o, i, n| {
                            for (d, &s) in dst[i..i + n].iter_mut().zip(&go[o..o + n]) {
                                *d += wv * s;
                            }
                        });
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    cs: &ConvShape,
) -> Tensor<T> {
    let g = &cs.geom;
    let (rows, cols) = (g.rows(), g.cols());
    let in_per = g.cin * g.h * g.w;
    let out_per = cs.cout * cols;
    let mut out = vec![T::zero(); cs.n * out_per];
    let mut col = if use_direct(g, cs.cout) { Vec::new() } else { vec![T::zero(); rows * cols] };
    for (img, dst) in input.data().chunks_exact(in_per).zip(out.chunks_exact_mut(out_per)) {
        for (co, plane) in dst.chunks_exact_mut(cols).enumerate() {
            plane.fill(bias.data()[co]);
        }
        if use_direct(g, cs.cout) {
            direct_forward(img, weight.data(), g, cs.cout, dst);
        } else if g.k == 1 && g.stride == 1 && g.pad == 0 {
            T::gemm(cs.cout, rows, cols, T::one(), weight.data(), rows as isize, 1, img, cols as isize, 1, T::one(), dst, cols as isize, 1);
        } else {
            im2col(img, g, &mut col);
            T::gemm(cs.cout, rows, cols, T::one(), weight.data(), rows as isize, 1, &col, cols as isize, 1, T::one(), dst, cols as isize, 1);
        }
    }
    Tensor::new([cs.n, cs.cout, g.oh, g.ow], out).expect("conv output shape")
}

/// Gradients of a convolution w.r.t. input, weight and bias.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    cs: &ConvShape,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let g = &cs.geom;
    let (rows, cols) = (g.rows(), g.cols());
    let in_per = g.cin * g.h * g.w;
    let out_per = cs.cout * cols;
    let pointwise = g.k == 1 && g.stride == 1 && g.pad == 0;
    let mut gw = vec![T::zero(); weight.numel()];
    let mut gb = vec![T::zero(); cs.cout];
    let mut gx = need_input.then(|| vec![T::zero(); input.numel()]);
    let direct = use_direct(g, cs.cout);
    let mut col = if direct { Vec::new() } else { vec![T::zero(); rows * cols] };
    for (i, gy) in grad_out.chunks_exact(out_per).enumerate() {
        let img = &input.data()[i * in_per..(i + 1) * in_per];
        for (co, plane) in gy.chunks_exact(cols).enumerate() {
            gb[co] += plane.iter().copied().sum::<T>();
        }
        if direct {
            let gxi = gx.as_mut().map(|gx| &mut gx[i * in_per..(i + 1) * in_per]);
            direct_backward(img, weight.data(), gy, g, cs.cout, &mut gw, gxi);
            continue;
        }
        let src: &[T] = if pointwise {
            img
        } else {
            im2col(img, g, &mut col);
            &col
        };
        // dW += dY * col^T
        T::gemm(cs.cout, cols, rows, T::one(), gy, cols as isize, 1, src, 1, cols as isize, T::one(), &mut gw, rows as isize, 1);
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[i * in_per..(i + 1) * in_per];
            if pointwise {
                T::gemm(rows, cs.cout, cols, T::one(), weight.data(), 1, rows as isize, gy, cols as isize, 1, T::one(), dst, cols as isize, 1);
            } else {
                // dcol = W^T * dY
                T::gemm(rows, cs.cout, cols, T::one(), weight.data(), 1, rows as isize, gy, cols as isize, 1, T::zero(), &mut col, cols as isize, 1);
                col2im(&col, g, dst);
            }
        }
    }
    (gx, gw, gb)
}

/// Output extent of a transposed convolution.
pub fn upscale_output_size(len: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    ((len.checked_sub(1)? * stride) + k).checked_sub(2 * padding).filter(|&v| v > 0)
}

pub(crate) fn conv_transpose2d_shape<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvShape> {
    let (n, cin, h, w) = input.dims4("conv_transpose2d")?;
    let (wcin, cout, kh, kw) = weight.dims4("conv_transpose2d")?;
    if kh != kw {
        return Err(Error::shape("conv_transpose2d", format!("non-square kernel {kh}x{kw}")));
    }
    if wcin != cin {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("weight expects {wcin} input channels, input has {cin}"),
        ));
    }
    check_bias("conv_transpose2d", bias, cout)?;
    let (oh, ow) = match (upscale_output_size(h, kh, stride, padding), upscale_output_size(w, kw, stride, padding)) {
        (Some(oh), Some(ow)) if stride >= 1 => (oh, ow),
        _ => return Err(Error::shape("conv_transpose2d", "empty output".to_string())),
    };
    // Geometry of the forward convolution that maps the output back onto the input grid.
    let geom = Geom::new(cout, oh, ow, kh, stride, padding)?;
    if geom.oh != h || geom.ow != w {
        return Err(Error::shape("conv_transpose2d", "inconsistent stride/padding".to_string()));
    }
    Ok(ConvShape { n, cout: cin, geom })
}

/// Transposed convolution with `Cin x Cout x k x k` weights.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let cs = conv_transpose2d_shape(input, weight, bias, stride, padding)?;
    check_finite("conv_transpose2d", &[input, weight, bias])?;
    Ok(conv_transpose2d_forward(input, weight, bias, &cs))
}

// In `ConvShape` for a transposed convolution, `geom` describes the adjoint
// forward convolution (from output grid to input grid) and `cout` holds the
// transposed op's *input* channel count.
pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    cs: &ConvShape,
) -> Tensor<T> {
    let g = &cs.geom;
    let cin = cs.cout;
    let (rows, cols) = (g.rows(), g.cols());
    let in_per = cin * cols;
    let out_per = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); cs.n * out_per];
    let mut col = vec![T::zero(); rows * cols];
    for (img, dst) in input.data().chunks_exact(in_per).zip(out.chunks_exact_mut(out_per)) {
        // col = W^T * x, W viewed as cin x rows
        T::gemm(rows, cin, cols, T::one(), weight.data(), 1, rows as isize, img, cols as isize, 1, T::zero(), &mut col, cols as isize, 1);
        col2im(&col, g, dst);
        for (co, plane) in dst.chunks_exact_mut(g.h * g.w).enumerate() {
            let b = bias.data()[co];
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    Tensor::new([cs.n, g.cin, g.h, g.w], out).expect("transposed conv output shape")
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    cs: &ConvShape,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let g = &cs.geom;
    let cin = cs.cout;
    let (rows, cols) = (g.rows(), g.cols());
    let in_per = cin * cols;
    let out_per = g.cin * g.h * g.w;
    let mut gw = vec![T::zero(); weight.numel()];
    let mut gb = vec![T::zero(); g.cin];
    let mut gx = need_input.then(|| vec![T::zero(); input.numel()]);
    let mut col = vec![T::zero(); rows * cols];
    for (i, gy) in grad_out.chunks_exact(out_per).enumerate() {
        for (co, plane) in gy.chunks_exact(g.h * g.w).enumerate() {
            gb[co] += plane.iter().copied().sum::<T>();
        }
        im2col(gy, g, &mut col);
        let img = &input.data()[i * in_per..(i + 1) * in_per];
        // dW += x * col^T
        T::gemm(cin, cols, rows, T::one(), img, cols as isize, 1, &col, 1, cols as isize, T::one(), &mut gw, rows as isize, 1);
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[i * in_per..(i + 1) * in_per];
            T::gemm(cin, rows, cols, T::one(), weight.data(), rows as isize, 1, &col, cols as isize, 1, T::zero(), dst, cols as isize, 1);
        }
    }
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4("t").unwrap();
        let (cout, _, k, _) = w.dims4("t").unwrap();
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        for i in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((i * cin + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((co * cin + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        out.data_mut()[((i * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    /// Scatter-accumulate transposed convolution.
    fn naive_conv_t(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4("t").unwrap();
        let (_, cout, k, _) = w.dims4("t").unwrap();
        let oh = (h - 1) * s + k - 2 * p;
        let ow = (wd - 1) * s + k - 2 * p;
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        for i in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        out.data_mut()[((i * cout + co) * oh + oy) * ow + ox] = b.data()[co];
                    }
                }
            }
            for ci in 0..cin {
                for iy in 0..h {
                    for ix in 0..wd {
                        let v = x.data()[((i * cin + ci) * h + iy) * wd + ix];
                        for co in 0..cout {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let oy = (iy * s + ky) as isize - p as isize;
                                    let ox = (ix * s + kx) as isize - p as isize;
                                    if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                        continue;
                                    }
                                    out.data_mut()[((i * cout + co) * oh + oy as usize) * ow + ox as usize] +=
                                        v * w.data()[((ci * cout + co) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |i| ((i as f64 + seed) * 0.37).sin())
    }

    fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn all_ones_three_by_three() {
        let x = Tensor::<f32>::ones([1, 1, 3, 3]);
        let w = Tensor::ones([1, 1, 3, 3]);
        let y = conv2d(&x, &w, &Tensor::zeros([1]), 1, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = ramp(&[2, 1, 5, 4], 0.0);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let y = conv2d(&x, &w, &Tensor::zeros([1]), 1, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn output_shape_arithmetic() {
        let x = Tensor::<f32>::zeros([2, 4, 8, 8]);
        let w = Tensor::zeros([16, 4, 3, 3]);
        assert_eq!(conv2d(&x, &w, &Tensor::zeros([16]), 1, 1).unwrap().shape(), &[2, 16, 8, 8]);
        assert_eq!(conv2d(&x, &w, &Tensor::zeros([16]), 2, 1).unwrap().shape(), &[2, 16, 4, 4]);
        let x = Tensor::<f32>::zeros([1, 4, 7, 5]);
        assert_eq!(conv2d(&x, &w, &Tensor::zeros([16]), 2, 1).unwrap().shape(), &[1, 16, 4, 3]);
    }

    #[test]
    fn matches_naive_for_many_geometries() {
        for &(k, s, p, h, w) in &[(3, 1, 1, 6, 5), (3, 2, 1, 8, 8), (3, 2, 1, 7, 6), (1, 1, 0, 4, 3), (4, 2, 1, 6, 6), (2, 3, 0, 7, 8), (5, 1, 2, 4, 4)] {
            // one output channel takes the direct kernel, seven the GEMM path
            for cout in [1, 7] {
                let x = ramp(&[2, 3, h, w], 1.0);
                let wt = ramp(&[cout, 3, k, k], 2.0);
                let b = ramp(&[cout], 3.0);
                assert_close(&conv2d(&x, &wt, &b, s, p).unwrap(), &naive_conv(&x, &wt, &b, s, p));
            }
        }
    }

    #[test]
    fn transposed_matches_scatter_oracle() {
        for &(k, s, p, h, w) in &[(4, 2, 1, 1, 1), (4, 2, 1, 3, 2), (3, 1, 1, 4, 4), (3, 2, 0, 2, 3)] {
            let x = ramp(&[2, 3, h, w], 4.0);
            let wt = ramp(&[3, 2, k, k], 5.0);
            let b = ramp(&[2], 6.0);
            assert_close(&conv_transpose2d(&x, &wt, &b, s, p).unwrap(), &naive_conv_t(&x, &wt, &b, s, p));
        }
    }

    #[test]
    fn transposed_single_pixel() {
        // Each of the four output sites is reached by exactly one kernel tap.
        let x = Tensor::<f64>::ones([1, 1, 1, 1]);
        let (w, b) = (Tensor::ones([1, 1, 4, 4]), Tensor::zeros([1]));
        let y = conv_transpose2d(&x, &w, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), naive_conv_t(&x, &w, &b, 2, 1).data());
        assert_eq!(y.data(), &[1.0; 4]);
    }

    #[test]
    fn transposed_doubles_extents() {
        for h in 1..6 {
            for w in 1..6 {
                let x = Tensor::<f32>::zeros([1, 2, h, w]);
                let y = conv_transpose2d(&x, &Tensor::zeros([2, 3, 4, 4]), &Tensor::zeros([3]), 2, 1).unwrap();
                assert_eq!(y.shape(), &[1, 3, 2 * h, 2 * w]);
            }
        }
    }

    #[test]
    fn transposed_zero_kernel_gives_bias() {
        let x = Tensor::<f32>::from_fn([1, 2, 4, 4], |i| i as f32);
        let y = conv_transpose2d(&x, &Tensor::zeros([2, 1, 4, 4]), &Tensor::full([1], 0.75), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros([1, 3, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros([2, 2, 3, 3]), &Tensor::zeros([2]), 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros([2, 3, 3, 3]), &Tensor::zeros([3]), 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros([2, 3, 7, 7]), &Tensor::zeros([2]), 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros([2, 3, 3, 3]), &Tensor::zeros([2]), 0, 1).is_err());
        let mut bad = Tensor::<f32>::zeros([1, 3, 4, 4]);
        bad.data_mut()[3] = f32::NAN;
        assert!(matches!(
            conv2d(&bad, &Tensor::zeros([2, 3, 3, 3]), &Tensor::zeros([2]), 1, 1),
            Err(Error::NonFinite(_))
        ));
    }
}
