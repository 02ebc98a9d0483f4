use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{FeatureMap, Real};
use crate::geometry::BBox;

/// A `C×k×k` max-pooled exemplar patch with the source index of each value.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledPatch<T> {
    pub channels: usize,
    pub size: usize,
    pub values: Vec<T>,
    /// Flat index into the pooled feature map for each value.
    pub argmax: Vec<usize>,
    /// The box collapsed to nothing after rounding and was widened to one
    /// feature cell.
    pub degenerate: bool,
}

/// Feature-grid cell span `[lo, hi)` covering `[start, end)` in image
/// coordinates, rounded outwards and widened to at least one cell.
fn cell_span(start: f64, end: f64, stride: f64, len: usize) -> (usize, usize, bool) {
    let lo = libm::floor(start / stride).clamp(0.0, len as f64) as usize;
    let hi = libm::ceil(end / stride).clamp(0.0, len as f64) as usize;
    if hi > lo {
        return (lo, hi, false);
    }
    let lo = lo.min(len - 1);
    (lo, lo + 1, true)
}

/// Max-pools the feature cells under `bbox` (image coordinates, mapped by
/// `stride`) into `size × size` bins.
pub fn roi_pool<T: Real>(features: &FeatureMap<T>, bbox: &BBox, stride: f64, size: usize) -> PooledPatch<T> {
    let (c, h, w) = features.shape();
    let (x0, x1, dx) = cell_span(bbox.x, bbox.x + bbox.width, stride, w);
    let (y0, y1, dy) = cell_span(bbox.y, bbox.y + bbox.height, stride, h);
    let bins = |lo: usize, hi: usize| -> Vec<(usize, usize)> {
        let len = hi - lo;
        (0..size)
            .map(|i| {
                let a = lo + i * len / size;
                let b = lo + ((i + 1) * len).div_ceil(size);
                (a, b.max(a + 1).min(hi))
            })
            .collect()
    };
    let xb = bins(x0, x1);
    let yb = bins(y0, y1);
    let mut values = vec![T::zero(); c * size * size];
    let mut argmax = vec![0; c * size * size];
    for ch in 0..c {
        for (i, &(ya, yb_)) in yb.iter().enumerate() {
            for (j, &(xa, xb_)) in xb.iter().enumerate() {
                let mut best = T::neg_infinity();
                let mut best_idx = 0;
                for y in ya..yb_ {
                    for x in xa..xb_ {
                        let idx = (ch * h + y) * w + x;
                        let v = features.data[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let o = (ch * size + i) * size + j;
                values[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    PooledPatch { channels: c, size, values, argmax, degenerate: dx || dy }
}
