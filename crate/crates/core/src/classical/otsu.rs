//! Otsu thresholding over 256 gray levels.
//!
//! A threshold `t` splits levels into `[0, t]` and `[t + 1, 255]`; with
//! several thresholds `t1 < t2 < …` the classes are `[0, t1]`,
//! `[t1 + 1, t2]`, …. Every class must be non-empty. Among equally good
//! choices the lexicographically smallest threshold tuple wins.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::image::{quantize, GrayImage};
use crate::{Error, Result};

pub type Histogram = [u64; 256];

pub fn histogram(img: &GrayImage) -> Histogram {
    let mut h = [0u64; 256];
    for &v in &img.data {
        h[quantize(v) as usize] += 1;
    }
    h
}

fn distinct_levels(hist: &Histogram) -> usize {
    hist.iter().filter(|c| **c > 0).count()
}

/// Single Otsu threshold of an image.
pub fn otsu_threshold(img: &GrayImage) -> Result<u8> {
    otsu_threshold_from_histogram(&histogram(img))
}

/// Threshold maximizing between-class variance, scanning `t` upwards and
/// keeping the first maximum.
pub fn otsu_threshold_from_histogram(hist: &Histogram) -> Result<u8> {
    if distinct_levels(hist) < 2 {
        return Err(Error::DegenerateHistogram("need at least 2 distinct gray levels".into()));
    }
    let total: f64 = hist.iter().map(|&c| c as f64).sum();
    let mean_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(l, &c)| l as f64 * c as f64)
        .sum::<f64>()
        / total;
    let n_total: u64 = hist.iter().sum();
    let (mut n0, mut w0, mut m0) = (0u64, 0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0u8);
    for (t, &c) in hist.iter().enumerate().take(255) {
        n0 += c;
        w0 += c as f64 / total;
        m0 += t as f64 * c as f64 / total;
        if n0 == 0 || n0 == n_total {
            continue;
        }
        let num = mean_total * w0 - m0;
        let var = num * num / (w0 * (1.0 - w0));
        if var > best.0 {
            best = (var, t as u8);
        }
    }
    Ok(best.1)
}

/// `classes − 1` thresholds of an image.
pub fn multi_otsu(img: &GrayImage, classes: usize) -> Result<Vec<u8>> {
    multi_otsu_from_histogram(&histogram(img), classes)
}

/// Multi-level Otsu by dynamic programming over class boundaries.
///
/// Maximizing between-class variance is equivalent to maximizing
/// `Σ_k S_k² / N_k` (per-class level sum squared over class size), which is
/// additive over classes. `best[m][i]` holds the best value for splitting
/// levels `i..=255` into `m` classes; the search is exact for any class
/// count and costs `O(classes · 256²)`.
pub fn multi_otsu_from_histogram(hist: &Histogram, classes: usize) -> Result<Vec<u8>> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 classes, got {classes}")));
    }
    if distinct_levels(hist) < classes {
        return Err(Error::DegenerateHistogram(format!(
            "{} distinct gray levels cannot form {classes} classes",
            distinct_levels(hist)
        )));
    }
    const L: usize = 256;
    let mut count = [0f64; L + 1];
    let mut mass = [0f64; L + 1];
    for l in 0..L {
        count[l + 1] = count[l] + hist[l] as f64;
        mass[l + 1] = mass[l] + l as f64 * hist[l] as f64;
    }
    let term = |a: usize, b: usize| -> f64 {
        let n = count[b + 1] - count[a];
        if n == 0.0 {
            return f64::NEG_INFINITY;
        }
        let s = mass[b + 1] - mass[a];
        s * s / n
    };

    let mut best = vec![[f64::NEG_INFINITY; L]; classes + 1];
    for i in 0..L {
        best[1][i] = term(i, L - 1);
    }
    for m in 2..=classes {
        for i in 0..L {
            let mut v = f64::NEG_INFINITY;
            for j in i..L - 1 {
                let cand = term(i, j) + best[m - 1][j + 1];
                if cand > v {
                    v = cand;
                }
            }
            best[m][i] = v;
        }
    }

    let mut thresholds = Vec::with_capacity(classes - 1);
    let mut start = 0;
    for m in (2..=classes).rev() {
        let target = best[m][start];
        let j = (start..L - 1)
            .find(|&j| term(start, j) + best[m - 1][j + 1] == target)
            .ok_or_else(|| Error::State("multi-otsu backtrack lost the optimum".into()))?;
        thresholds.push(j as u8);
        start = j + 1;
    }
    Ok(thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_of(levels: &[(u8, usize)]) -> GrayImage {
        let data: Vec<f64> = levels
            .iter()
            .flat_map(|&(v, n)| core::iter::repeat(v as f64).take(n))
            .collect();
        GrayImage::from_raw(data.len(), 1, data).unwrap()
    }

    #[test]
    fn bimodal_split() {
        let t = otsu_threshold(&image_of(&[(50, 100), (200, 100)])).unwrap();
        assert!((50..200).contains(&t));
    }

    #[test]
    fn black_white_plateau_takes_lowest() {
        // Every t in 0..=254 gives the same partition and variance.
        assert_eq!(otsu_threshold(&image_of(&[(0, 10), (255, 10)])).unwrap(), 0);
    }

    #[test]
    fn constant_image_is_degenerate() {
        let err = otsu_threshold(&GrayImage::filled(4, 4, 9.0)).unwrap_err();
        assert_eq!(err.kind(), "degenerate-histogram");
    }

    #[test]
    fn three_classes_give_two_thresholds() {
        let img = image_of(&[(30, 50), (128, 50), (220, 50)]);
        let t = multi_otsu(&img, 3).unwrap();
        assert_eq!(t.len(), 2);
        assert!((30..128).contains(&t[0]));
        assert!((128..220).contains(&t[1]));
    }

    #[test]
    fn two_classes_reduce_to_otsu() {
        let img = image_of(&[(10, 7), (60, 30), (61, 4), (140, 22), (250, 9)]);
        assert_eq!(multi_otsu(&img, 2).unwrap(), vec![otsu_threshold(&img).unwrap()]);
    }

    #[test]
    fn too_few_levels_for_classes() {
        let img = image_of(&[(10, 5), (20, 5)]);
        assert_eq!(multi_otsu(&img, 3).unwrap_err().kind(), "degenerate-histogram");
        assert_eq!(multi_otsu(&img, 1).unwrap_err().kind(), "invalid-parameter");
    }

    #[test]
    fn many_classes_stay_sorted() {
        let img = image_of(&[(5, 3), (40, 9), (90, 2), (91, 6), (150, 4), (200, 8), (240, 1)]);
        let t = multi_otsu(&img, 6).unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }
}
