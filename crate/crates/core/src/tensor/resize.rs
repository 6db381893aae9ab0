use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-axis sampling table for half-pixel-center bilinear interpolation
/// without corner alignment.
#[derive(Clone, Debug)]
pub(crate) struct Axis<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<T>,
}

impl<T: Scalar> Axis<T> {
    pub fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for o in 0..dst {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(T::lit(if i1 == i0 { 0.0 } else { pos - i0 as f64 }));
        }
        Self { lo, hi, frac }
    }
}

/// Bilinear resize of an `N x C x H x W` tensor to `out_h x out_w`.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("resize_bilinear")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize_bilinear", format!("target {out_h}x{out_w}")));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let ay = Axis::<T>::new(h, out_h);
    let ax = Axis::<T>::new(w, out_w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in x.data().chunks_exact(h * w) {
        for oy in 0..out_h {
            let (r0, r1, fy) = (&plane[ay.lo[oy] * w..], &plane[ay.hi[oy] * w..], ay.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (ax.lo[ox], ax.hi[ox], ax.frac[ox]);
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    Tensor::new([n, c, out_h, out_w], out)
}

/// Adjoint of [`resize_bilinear`]: scatters output gradients back onto the
/// `h x w` source grid.
pub(crate) fn resize_bilinear_backward<T: Scalar>(grad_out: &[T], n: usize, c: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    if (out_h, out_w) == (h, w) {
        return grad_out.to_vec();
    }
    let ay = Axis::<T>::new(h, out_h);
    let ax = Axis::<T>::new(w, out_w);
    let mut gx = vec![T::zero(); n * c * h * w];
    for (dst, src) in gx.chunks_exact_mut(h * w).zip(grad_out.chunks_exact(out_h * out_w)) {
        for oy in 0..out_h {
            let (y0, y1, fy) = (ay.lo[oy], ay.hi[oy], ay.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (ax.lo[ox], ax.hi[ox], ax.frac[ox]);
                let g = src[oy * out_w + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                dst[y0 * w + x0] += gt * (T::one() - fx);
                dst[y0 * w + x1] += gt * fx;
                dst[y1 * w + x0] += gb * (T::one() - fx);
                dst[y1 * w + x1] += gb * fx;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar half-pixel bilinear sample of a single plane.
    fn oracle(plane: &[f64], h: usize, w: usize, out_h: usize, out_w: usize, oy: usize, ox: usize) -> f64 {
        let sy = ((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let sx = ((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        let mut acc = 0.0;
        for iy in 0..h {
            for ix in 0..w {
                let wy = (1.0 - (sy - iy as f64).abs()).max(0.0);
                let wx = (1.0 - (sx - ix as f64).abs()).max(0.0);
                acc += wy * wx * plane[iy * w + ix];
            }
        }
        acc
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f32>::full([1, 2, 3, 5], 3.7);
        for &(oh, ow) in &[(1, 1), (6, 10), (7, 3), (64, 64)] {
            let y = resize_bilinear(&x, oh, ow).unwrap();
            assert!(y.data().iter().all(|&v| (v - 3.7).abs() < 1e-6));
        }
    }

    #[test]
    fn same_size_is_bitwise_identity() {
        let x = Tensor::<f32>::from_fn([1, 1, 4, 4], |i| (i as f32).sqrt());
        assert_eq!(resize_bilinear(&x, 4, 4).unwrap().data(), x.data());
    }

    #[test]
    fn two_by_two_upscale_matches_oracle() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let y = resize_bilinear(&x, 4, 4).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let want = oracle(x.data(), 2, 2, 4, 4, oy, ox);
                assert!((y.data()[oy * 4 + ox] - want).abs() < 1e-12);
            }
        }
        // corners clamp to source values, interior blends 3:1
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn arbitrary_sizes_match_oracle() {
        let x = Tensor::<f64>::from_fn([1, 1, 5, 3], |i| ((i * 7) % 11) as f64);
        for &(oh, ow) in &[(2, 7), (10, 6), (3, 3), (1, 4)] {
            let y = resize_bilinear(&x, oh, ow).unwrap();
            for oy in 0..oh {
                for ox in 0..ow {
                    let want = oracle(x.data(), 5, 3, oh, ow, oy, ox);
                    assert!((y.data()[oy * ow + ox] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn halving_averages_blocks() {
        let x = Tensor::<f64>::from_fn([1, 1, 4, 4], |i| i as f64);
        let y = resize_bilinear(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn backward_is_adjoint() {
        // <resize(x), g> == <x, resize^T(g)>
        let x = Tensor::<f64>::from_fn([1, 2, 3, 4], |i| (i as f64 * 0.3).cos());
        let g: Vec<f64> = (0..2 * 7 * 5).map(|i| (i as f64 * 0.11).sin()).collect();
        let y = resize_bilinear(&x, 7, 5).unwrap();
        let lhs: f64 = y.data().iter().zip(&g).map(|(a, b)| a * b).sum();
        let gx = resize_bilinear_backward(&g, 1, 2, 3, 4, 7, 5);
        let rhs: f64 = x.data().iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
