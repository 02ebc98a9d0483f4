//! Forward and adjoint kernels for the layer types the network uses.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{FeatureMap, Real};

/// Valid destination range `[lo, hi)` for a shift of `d` along an axis of
/// length `n`, so that `i + d` stays in bounds.
#[inline]
fn shifted_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

/// Same-size zero-padded convolution with odd square kernels.
///
/// `weight` is laid out `[out][in][ky][kx]`.
pub fn conv2d<T: Real>(
    input: &FeatureMap<T>,
    weight: &[T],
    bias: Option<&[T]>,
    out_channels: usize,
    k: usize,
) -> FeatureMap<T> {
    let (ic, h, w) = input.shape();
    debug_assert_eq!(weight.len(), out_channels * ic * k * k);
    let p = (k / 2) as isize;
    let mut out = FeatureMap::zeros(out_channels, h, w);
    for o in 0..out_channels {
        let plane = out.plane_mut(o);
        if let Some(b) = bias {
            plane.fill(b[o]);
        }
        for c in 0..ic {
            let src = input.plane(c);
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y_lo, y_hi) = shifted_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x_lo, x_hi) = shifted_range(w, dx);
                    let wv = weight[((o * ic + c) * k + ky) * k + kx];
                    let sx_lo = (x_lo as isize + dx) as usize;
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut plane[y * w + x_lo..y * w + x_hi];
                        let srow = &src[sy * w + sx_lo..sy * w + sx_lo + (x_hi - x_lo)];
                        for (ov, sv) in orow.iter_mut().zip(srow) {
                            *ov = *ov + wv * *sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d`]: `(d weight, d bias, d input)`; the input gradient
/// is only formed when requested.
pub fn conv2d_backward<T: Real>(
    input: &FeatureMap<T>,
    weight: &[T],
    grad_out: &FeatureMap<T>,
    k: usize,
    need_input: bool,
) -> (Vec<T>, Vec<T>, Option<FeatureMap<T>>) {
    let (ic, h, w) = input.shape();
    let oc = grad_out.channels;
    let p = (k / 2) as isize;
    let mut dw = vec![T::zero(); oc * ic * k * k];
    let db: Vec<T> = (0..oc).map(|o| grad_out.plane(o).iter().copied().sum()).collect();
    let mut din = need_input.then(|| FeatureMap::zeros(ic, h, w));
    for o in 0..oc {
        let g = grad_out.plane(o);
        for c in 0..ic {
            let src = input.plane(c);
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y_lo, y_hi) = shifted_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x_lo, x_hi) = shifted_range(w, dx);
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let widx = ((o * ic + c) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let mut acc = T::zero();
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        let grow = &g[y * w + x_lo..y * w + x_hi];
                        let srow = &src[sy * w + sx_lo..sy * w + sx_lo + (x_hi - x_lo)];
                        for (gv, sv) in grow.iter().zip(srow) {
                            acc = acc + *gv * *sv;
                        }
                    }
                    dw[widx] = acc;
                    if let Some(din) = din.as_mut() {
                        let dplane = din.plane_mut(c);
                        for y in y_lo..y_hi {
                            let sy = (y as isize + dy) as usize;
                            let grow = &g[y * w + x_lo..y * w + x_hi];
                            let drow = &mut dplane[sy * w + sx_lo..sy * w + sx_lo + (x_hi - x_lo)];
                            for (dv, gv) in drow.iter_mut().zip(grow) {
                                *dv = *dv + wv * *gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (dw, db, din)
}

pub fn relu<T: Real>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    out
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub fn relu_backward<T: Real>(pre: &FeatureMap<T>, grad: &mut FeatureMap<T>) {
    for (g, z) in grad.data.iter_mut().zip(&pre.data) {
        if *z <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Non-overlapping `f×f` average pooling; spatial sizes must divide by `f`.
pub fn avg_pool<T: Real>(x: &FeatureMap<T>, f: usize) -> FeatureMap<T> {
    let (c, h, w) = x.shape();
    let (oh, ow) = (h / f, w / f);
    let scale = T::from_f64(1.0 / (f * f) as f64);
    let mut out = FeatureMap::zeros(c, oh, ow);
    for ch in 0..c {
        let src = x.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..oh {
            for x_ in 0..ow {
                let mut acc = T::zero();
                for dy in 0..f {
                    for dx in 0..f {
                        acc = acc + src[(y * f + dy) * w + x_ * f + dx];
                    }
                }
                dst[y * ow + x_] = acc * scale;
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Real>(grad: &FeatureMap<T>, f: usize) -> FeatureMap<T> {
    let (c, oh, ow) = grad.shape();
    let (h, w) = (oh * f, ow * f);
    let scale = T::from_f64(1.0 / (f * f) as f64);
    let mut out = FeatureMap::zeros(c, h, w);
    for ch in 0..c {
        let g = grad.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = g[(y / f) * ow + x / f] * scale;
            }
        }
    }
    out
}

/// Bilinear taps for 2× upsampling of an axis of length `n`
/// (half-pixel centers, edge clamped): `(i0, i1, w0, w1)` per output.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let s = (o as f64 + 0.5) / 2.0 - 0.5;
            let f = libm::floor(s);
            let t = s - f;
            let i0 = (f as isize).clamp(0, n as isize - 1) as usize;
            let i1 = (f as isize + 1).clamp(0, n as isize - 1) as usize;
            (i0, i1, 1.0 - t, t)
        })
        .collect()
}

pub fn upsample2<T: Real>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let (c, h, w) = x.shape();
    let tx = upsample_taps(w);
    let ty = upsample_taps(h);
    let mut out = FeatureMap::zeros(c, 2 * h, 2 * w);
    let mut tmp = vec![T::zero(); h * 2 * w];
    for ch in 0..c {
        let src = x.plane(ch);
        for y in 0..h {
            for (o, &(i0, i1, w0, w1)) in tx.iter().enumerate() {
                tmp[y * 2 * w + o] = src[y * w + i0] * T::from_f64(w0) + src[y * w + i1] * T::from_f64(w1);
            }
        }
        let dst = out.plane_mut(ch);
        for (o, &(i0, i1, w0, w1)) in ty.iter().enumerate() {
            let (a, b) = (T::from_f64(w0), T::from_f64(w1));
            for x_ in 0..2 * w {
                dst[o * 2 * w + x_] = tmp[i0 * 2 * w + x_] * a + tmp[i1 * 2 * w + x_] * b;
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`].
pub fn upsample2_backward<T: Real>(grad: &FeatureMap<T>) -> FeatureMap<T> {
    let (c, h2, w2) = grad.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let tx = upsample_taps(w);
    let ty = upsample_taps(h);
    let mut out = FeatureMap::zeros(c, h, w);
    let mut tmp = vec![T::zero(); h * w2];
    for ch in 0..c {
        tmp.iter_mut().for_each(|v| *v = T::zero());
        let g = grad.plane(ch);
        for (o, &(i0, i1, w0, w1)) in ty.iter().enumerate() {
            let (a, b) = (T::from_f64(w0), T::from_f64(w1));
            for x_ in 0..w2 {
                let gv = g[o * w2 + x_];
                tmp[i0 * w2 + x_] = tmp[i0 * w2 + x_] + gv * a;
                tmp[i1 * w2 + x_] = tmp[i1 * w2 + x_] + gv * b;
            }
        }
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for (o, &(i0, i1, w0, w1)) in tx.iter().enumerate() {
                let gv = tmp[y * w2 + o];
                dst[y * w + i0] = dst[y * w + i0] + gv * T::from_f64(w0);
                dst[y * w + i1] = dst[y * w + i1] + gv * T::from_f64(w1);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
        FeatureMap::from_raw(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &FeatureMap<f64>, b: &FeatureMap<f64>) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 2, 5, 6);
        let w: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = [0.1, -0.2, 0.3];
        let y = conv2d(&x, &w, Some(&b), 3, 3);
        for o in 0..3 {
            for yy in 0..5isize {
                for xx in 0..6isize {
                    let mut acc = b[o];
                    for c in 0..2 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                if (0..5).contains(&sy) && (0..6).contains(&sx) {
                                    acc += w[((o * 2 + c) * 3 + ky as usize) * 3 + kx as usize]
                                        * x.at(c, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    assert!((y.at(o, yy as usize, xx as usize) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, conv_backward_input(g)> and the weight gradient
        // is the derivative of <conv(x), g> with respect to the weights.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 3, 4, 7);
        let w: Vec<f64> = (0..2 * 3 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = random(&mut rng, 2, 4, 7);
        let y = conv2d(&x, &w, None, 2, 3);
        let (dw, db, din) = conv2d_backward(&x, &w, &g, 3, true);
        let din = din.unwrap();
        assert!((dot(&y, &g) - dot(&x, &din)).abs() < 1e-10);
        let lin: f64 = dw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((dot(&y, &g) - lin).abs() < 1e-10);
        assert!((db[1] - g.plane(1).iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 2, 6, 4);
        let gp = random(&mut rng, 2, 3, 2);
        assert!((dot(&avg_pool(&x, 2), &gp) - dot(&x, &avg_pool_backward(&gp, 2))).abs() < 1e-12);
        let gu = random(&mut rng, 2, 12, 8);
        assert!((dot(&upsample2(&x), &gu) - dot(&x, &upsample2_backward(&gu))).abs() < 1e-12);
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = FeatureMap::from_raw(1, 3, 3, vec![2.5f64; 9]).unwrap();
        let y = upsample2(&x);
        assert_eq!(y.shape(), (1, 6, 6));
        assert!(y.data.iter().all(|v| (*v - 2.5).abs() < 1e-15));
    }
}
