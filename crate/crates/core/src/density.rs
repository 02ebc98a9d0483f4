//! Ground-truth density maps: one unit-mass Gaussian blob per point
//! annotation, with the blob width taken from the mean nearest-neighbour
//! spacing of the points.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::Point;
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Window used when an image has a single point and 1-NN spacing is undefined.
pub const DEFAULT_FALLBACK_WINDOW: f64 = 32.0;

/// Non-negative per-pixel density; its sum is the (fractional) object count.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height] }
    }

    pub fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} density values for {width}x{height}",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Estimated count.
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Mean distance from each point to its nearest other point.
///
/// A single point yields `fallback`. Uses an x-sorted sweep that stops as soon
/// as the horizontal gap alone exceeds the best distance found.
pub fn nn_window_size(points: &[Point], fallback: f64) -> Result<f64> {
    match points.len() {
        0 => return Err(Error::EmptyInput("no points for nearest-neighbour window".into())),
        1 => return Ok(fallback),
        _ => {}
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x));
    let mut nearest = vec![f64::INFINITY; points.len()];
    for (rank, &i) in order.iter().enumerate() {
        let p = points[i];
        let mut best = f64::INFINITY;
        for &j in order[rank + 1..].iter() {
            if points[j].x - p.x > best {
                break;
            }
            best = best.min(p.distance(points[j]));
        }
        for &j in order[..rank].iter().rev() {
            if p.x - points[j].x > best {
                break;
            }
            best = best.min(p.distance(points[j]));
        }
        nearest[i] = best;
    }
    Ok(nearest.iter().sum::<f64>() / points.len() as f64)
}

/// Odd kernel side for a window length: `round(window)`, plus one if even.
pub fn kernel_side(window: f64) -> usize {
    let side = window.round().max(1.0) as usize;
    if side % 2 == 0 { side + 1 } else { side }
}

/// Normalized 1-D Gaussian taps of length [`kernel_side`]`(window)`.
pub fn gaussian_kernel_1d(window: f64, sigma: f64) -> Result<Vec<f64>> {
    if !(window >= 1.0) || !window.is_finite() {
        return Err(Error::InvalidParameter(format!("kernel window must be >= 1, got {window}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("kernel sigma must be > 0, got {sigma}")));
    }
    let side = kernel_side(window);
    let c = (side / 2) as f64;
    let mut taps: Vec<f64> = (0..side)
        .map(|i| {
            let d = i as f64 - c;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(taps)
}

/// Square, odd-sided, unit-sum Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub side: usize,
    pub values: Vec<f64>,
}

impl Kernel {
    pub fn radius(&self) -> usize {
        self.side / 2
    }

    pub fn center(&self) -> f64 {
        let r = self.radius();
        self.values[r * self.side + r]
    }

    #[inline]
    pub fn at(&self, dx: usize, dy: usize) -> f64 {
        self.values[dy * self.side + dx]
    }
}

/// 2-D Gaussian kernel: outer product of [`gaussian_kernel_1d`] taps,
/// renormalized to sum to one.
pub fn gaussian_kernel(window: f64, sigma: f64) -> Result<Kernel> {
    let taps = gaussian_kernel_1d(window, sigma)?;
    let side = taps.len();
    let mut values = Vec::with_capacity(side * side);
    for a in &taps {
        for b in &taps {
            values.push(a * b);
        }
    }
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    Ok(Kernel { side, values })
}

/// Kernel used for a blob of the given window: `sigma = window / 4`.
pub fn blob_kernel(window: f64) -> Result<Kernel> {
    let window = window.max(1.0);
    gaussian_kernel(window, window / 4.0)
}

/// How the blob window is chosen for an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowPolicy {
    /// Mean 1-NN spacing of the image's own points.
    NearestNeighbor { fallback: f64 },
    Fixed(f64),
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy::NearestNeighbor { fallback: DEFAULT_FALLBACK_WINDOW }
    }
}

impl WindowPolicy {
    /// Window for a point set; `None` when there are no points.
    pub fn window_for(&self, points: &[Point]) -> Option<f64> {
        if points.is_empty() {
            return None;
        }
        Some(match *self {
            WindowPolicy::NearestNeighbor { fallback } => {
                nn_window_size(points, fallback).ok()?.max(1.0)
            }
            WindowPolicy::Fixed(w) => w.max(1.0),
        })
    }
}

/// A density map plus what went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityBuild {
    pub map: DensityMap,
    /// Window length in pixels; `None` for an empty point set.
    pub window: Option<f64>,
    /// Points that fell outside the frame and were moved onto its border.
    pub clamped: usize,
}

/// Renders one unit-mass Gaussian per point.
///
/// Each blob is centred on the pixel containing its point. Parts of a blob
/// falling outside the frame are dropped and the remainder rescaled, so every
/// point contributes exactly 1 to the map sum. Out-of-frame points are clamped
/// onto the border and reported.
pub fn build_density_map(
    points: &[Point],
    height: usize,
    width: usize,
    policy: WindowPolicy,
) -> Result<DensityBuild> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidSize(format!("density map {width}x{height}")));
    }
    let mut map = DensityMap::zeros(width, height);
    let Some(window) = policy.window_for(points) else {
        return Ok(DensityBuild { map, window: None, clamped: 0 });
    };
    let kernel = blob_kernel(window)?;
    let r = kernel.radius() as isize;
    let mut clamped = 0;
    for p in points {
        let mut px = p.x.floor();
        let mut py = p.y.floor();
        if !(px >= 0.0 && px < width as f64 && py >= 0.0 && py < height as f64) {
            log::warn!("point ({}, {}) outside {width}x{height} frame; clamped to border", p.x, p.y);
            clamped += 1;
            px = px.clamp(0.0, (width - 1) as f64);
            py = py.clamp(0.0, (height - 1) as f64);
        }
        let (cx, cy) = (px as isize, py as isize);
        let x0 = (cx - r).max(0);
        let x1 = (cx + r).min(width as isize - 1);
        let y0 = (cy - r).max(0);
        let y1 = (cy + r).min(height as isize - 1);
        let mut inside = 0.0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                inside += kernel.at((x - cx + r) as usize, (y - cy + r) as usize);
            }
        }
        for y in y0..=y1 {
            let row = y as usize * width;
            for x in x0..=x1 {
                map.values[row + x as usize] +=
                    kernel.at((x - cx + r) as usize, (y - cy + r) as usize) / inside;
            }
        }
    }
    Ok(DensityBuild { map, window: Some(window), clamped })
}
