//! Training objective: per-pixel density MSE plus a λ-weighted penalty on
//! density predicted where no object is present.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Annotation;
use crate::density::{blob_kernel, DensityMap, DEFAULT_FALLBACK_WINDOW};
use crate::geometry::{fill_polygon, Point};
use crate::{Error, Result};

/// Default weight of the mismatch term.
pub const DEFAULT_LAMBDA: f64 = 1e-9;

/// Binary field; `1` marks pixels with no object of interest, `0` pixels
/// covered by at least one object polygon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

impl ObjectMask {
    pub fn empty_scene(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![1; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }
}

/// Rasterizes object polygons: pixels whose centers fall inside any polygon
/// become 0, everything else stays 1.
pub fn mask_from_polygons<'a, I>(polygons: I, height: usize, width: usize) -> ObjectMask
where
    I: IntoIterator<Item = &'a [Point]>,
{
    let mut mask = ObjectMask::empty_scene(width, height);
    for poly in polygons {
        fill_polygon(poly, width, height, |x, y| mask.values[y * width + x] = 0);
    }
    mask
}

/// [`mask_from_polygons`] over annotation outlines.
pub fn mask_from_annotations(annotations: &[&Annotation], height: usize, width: usize) -> ObjectMask {
    mask_from_polygons(annotations.iter().map(|a| a.polygon.as_slice()), height, width)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MismatchMode {
    /// `Σ pred · mask`; differentiable, used for training.
    #[default]
    Soft,
    /// Count of pixels with `pred ≥ hard_threshold` and `mask = 1`.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub mismatch_mode: MismatchMode,
    /// Absolute density level treated as "an object predicted here".
    pub hard_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            mismatch_mode: MismatchMode::Soft,
            hard_threshold: hard_threshold_for_window(DEFAULT_FALLBACK_WINDOW),
        }
    }
}

/// Half the peak value of a unit-mass blob of the given window.
pub fn hard_threshold_for_window(window: f64) -> f64 {
    blob_kernel(window).map(|k| 0.5 * k.center()).unwrap_or(0.5)
}

fn check_shape(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

/// Mean of squared per-pixel differences.
pub fn mse_density_loss(pred: &DensityMap, gt: &DensityMap) -> Result<f64> {
    check_shape((pred.width, pred.height), (gt.width, gt.height), "mse")?;
    if pred.values.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(p, g)| (p - g) * (p - g))
        .sum();
    Ok(sum / pred.values.len() as f64)
}

pub fn mismatch_loss(pred: &DensityMap, mask: &ObjectMask, config: &LossConfig) -> Result<f64> {
    check_shape((pred.width, pred.height), (mask.width, mask.height), "mismatch")?;
    let pairs = pred.values.iter().zip(&mask.values);
    Ok(match config.mismatch_mode {
        MismatchMode::Soft => pairs.map(|(p, &m)| p * f64::from(m)).sum(),
        MismatchMode::Hard => pairs
            .filter(|(p, m)| **m == 1 && **p >= config.hard_threshold)
            .count() as f64,
    })
}

/// `mse + λ · soft mismatch`. The mode in `config` is ignored here; training
/// always uses the soft relaxation.
pub fn combined_loss(pred: &DensityMap, gt: &DensityMap, mask: &ObjectMask, config: &LossConfig) -> Result<f64> {
    Ok(combined_loss_with_grad(pred, gt, mask, config)?.0.combined)
}

/// Individual loss terms for one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub mse: f64,
    pub mismatch_soft: f64,
    pub mismatch_hard: f64,
    pub combined: f64,
}

/// Combined loss, its terms, and `∂loss/∂pred`.
pub fn combined_loss_with_grad(
    pred: &DensityMap,
    gt: &DensityMap,
    mask: &ObjectMask,
    config: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if config.lambda < 0.0 {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", config.lambda)));
    }
    let mse = mse_density_loss(pred, gt)?;
    let soft = LossConfig { mismatch_mode: MismatchMode::Soft, ..*config };
    let hard = LossConfig { mismatch_mode: MismatchMode::Hard, ..*config };
    let mismatch_soft = mismatch_loss(pred, mask, &soft)?;
    let mismatch_hard = mismatch_loss(pred, mask, &hard)?;
    let n = pred.values.len().max(1) as f64;
    let grad = pred
        .values
        .iter()
        .zip(&gt.values)
        .zip(&mask.values)
        .map(|((p, g), &m)| 2.0 * (p - g) / n + config.lambda * f64::from(m))
        .collect();
    let breakdown = LossBreakdown {
        mse,
        mismatch_soft,
        mismatch_hard,
        combined: mse + config.lambda * mismatch_soft,
    };
    Ok((breakdown, grad))
}
