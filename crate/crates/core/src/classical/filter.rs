use alloc::format;
use alloc::vec;

use crate::density::gaussian_kernel_1d;
use crate::image::GrayImage;
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Separable Gaussian blur with edge replication.
///
/// The kernel spans a window of `4·sigma` pixels (the same window/σ coupling
/// as the ground-truth density blobs), forced odd.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("blur sigma must be > 0, got {sigma}")));
    }
    let taps = gaussian_kernel_1d((4.0 * sigma).max(1.0), sigma)?;
    let r = (taps.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    if w == 0 || h == 0 {
        return Ok(img.clone());
    }
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * img.get_clamped(x as isize + k as isize - r, y as isize);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += t * tmp[yy * w + x];
            }
            out.data[y * w + x] = acc;
        }
    }
    Ok(out)
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Unclipped Sobel gradient magnitude `sqrt(Gx² + Gy²)` with edge
/// replication.
pub fn sobel_magnitude(img: &GrayImage) -> Result<GrayImage> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::InvalidSize(format!(
            "sobel needs at least 3x3, got {}x{}",
            img.width, img.height
        )));
    }
    let mut out = GrayImage::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let (mut gx, mut gy) = (0.0, 0.0);
            for (ky, (row_x, row_y)) in SOBEL_X.iter().zip(SOBEL_Y.iter()).enumerate() {
                for kx in 0..3 {
                    let v = img.get_clamped(x as isize + kx as isize - 1, y as isize + ky as isize - 1);
                    gx += row_x[kx] * v;
                    gy += row_y[kx] * v;
                }
            }
            out.set(x, y, (gx * gx + gy * gy).sqrt());
        }
    }
    Ok(out)
}

/// Sobel magnitude clipped into the gray range `[0, 255]`.
pub fn sobel_edges(img: &GrayImage) -> Result<GrayImage> {
    let mut mag = sobel_magnitude(img)?;
    mag.data.iter_mut().for_each(|v| *v = v.min(255.0));
    Ok(mag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::gaussian_kernel;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blur_preserves_constants() {
        let img = GrayImage::filled(13, 9, 87.0);
        let out = gaussian_blur(&img, 1.7).unwrap();
        assert!(out.data.iter().all(|v| (v - 87.0).abs() < 1e-12));
    }

    #[test]
    fn blur_impulse_response_is_kernel() {
        let sigma = 1.5;
        let mut img = GrayImage::new(21, 21);
        img.set(10, 10, 1.0);
        let out = gaussian_blur(&img, sigma).unwrap();
        let k = gaussian_kernel(4.0 * sigma, sigma).unwrap();
        let r = k.radius();
        for dy in 0..k.side {
            for dx in 0..k.side {
                assert!((out.get(10 + dx - r, 10 + dy - r) - k.at(dx, dy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_matches_dense_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..255.0)).collect();
        let img = GrayImage::from_raw(16, 16, data).unwrap();
        let sigma = 1.3;
        let out = gaussian_blur(&img, sigma).unwrap();
        let k = gaussian_kernel(4.0 * sigma, sigma).unwrap();
        let r = k.radius() as isize;
        for y in 0..16isize {
            for x in 0..16isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        acc += k.at((dx + r) as usize, (dy + r) as usize) * img.get_clamped(x + dx, y + dy);
                    }
                }
                assert!((out.get(x as usize, y as usize) - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blur_rejects_non_positive_sigma() {
        let img = GrayImage::new(4, 4);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap_err().kind(), "invalid-parameter");
        assert_eq!(gaussian_blur(&img, -1.0).unwrap_err().kind(), "invalid-parameter");
    }

    #[test]
    fn sobel_on_constant_is_zero() {
        let out = sobel_edges(&GrayImage::filled(6, 5, 200.0)).unwrap();
        assert!(out.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sobel_vertical_step() {
        let mut img = GrayImage::new(10, 6);
        for y in 0..6 {
            for x in 5..10 {
                img.set(x, y, 255.0);
            }
        }
        let out = sobel_edges(&img).unwrap();
        for y in 0..6 {
            for x in 0..10 {
                let want = if x == 4 || x == 5 { 255.0 } else { 0.0 };
                assert_eq!(out.get(x, y), want);
            }
        }
    }

    #[test]
    fn sobel_matches_unrolled_convolution() {
        #[rustfmt::skip]
        let vals = [
            3.0, 9.0, 1.0, 0.0, 7.0,
            4.0, 2.0, 8.0, 6.0, 5.0,
            1.0, 1.0, 0.0, 9.0, 2.0,
            7.0, 3.0, 5.0, 4.0, 8.0,
            0.0, 6.0, 2.0, 1.0, 3.0,
        ];
        let img = GrayImage::from_raw(5, 5, vals.to_vec()).unwrap();
        let out = sobel_magnitude(&img).unwrap();
        let p = |x: isize, y: isize| img.get_clamped(x, y);
        for y in 0..5isize {
            for x in 0..5isize {
                let gx = (p(x + 1, y - 1) + 2.0 * p(x + 1, y) + p(x + 1, y + 1))
                    - (p(x - 1, y - 1) + 2.0 * p(x - 1, y) + p(x - 1, y + 1));
                let gy = (p(x - 1, y + 1) + 2.0 * p(x, y + 1) + p(x + 1, y + 1))
                    - (p(x - 1, y - 1) + 2.0 * p(x, y - 1) + p(x + 1, y - 1));
                let want = (gx * gx + gy * gy).sqrt();
                assert!((out.get(x as usize, y as usize) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sobel_rejects_tiny_images() {
        assert_eq!(sobel_edges(&GrayImage::new(2, 5)).unwrap_err().kind(), "invalid-size");
    }
}
