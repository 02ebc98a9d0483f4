use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::geometry::Point;
use crate::image::GrayImage;
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct HoughConfig {
    pub r_min: usize,
    pub r_max: usize,
    /// Minimum fraction of the sampled perimeter that must vote for a circle.
    pub vote_threshold: f64,
    /// Accepted centers must be further apart than this (pixels).
    pub nms_distance: f64,
    /// Edge pixels are those at or above this quantile of the magnitude map.
    pub edge_percentile: f64,
    /// Angles sampled per edge pixel and radius.
    pub angles: usize,
}

impl Default for HoughConfig {
    fn default() -> Self {
        Self {
            r_min: 15,
            r_max: 25,
            vote_threshold: 0.8,
            nms_distance: 15.0,
            edge_percentile: 0.9,
            angles: 64,
        }
    }
}

impl HoughConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_min == 0 || self.r_min > self.r_max {
            return Err(Error::InvalidParameter(format!(
                "need 0 < r_min <= r_max, got {}..{}",
                self.r_min, self.r_max
            )));
        }
        if !(0.0..=1.0).contains(&self.vote_threshold) {
            return Err(Error::InvalidParameter(format!(
                "vote threshold {} outside [0, 1]",
                self.vote_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.edge_percentile) {
            return Err(Error::InvalidParameter(format!(
                "edge percentile {} outside [0, 1)",
                self.edge_percentile
            )));
        }
        if self.angles < 4 || self.nms_distance.is_sign_negative() {
            return Err(Error::InvalidParameter("need >= 4 angles and nms_distance >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleDetection {
    pub center: Point,
    pub radius: f64,
    /// Raw accumulator votes.
    pub accumulator_score: f64,
    /// Votes over the number of distinct perimeter offsets at this radius.
    pub support: f64,
}

/// Distinct integer offsets `(round(r cos θ), round(r sin θ))` over the
/// sampled angles.
fn perimeter_offsets(r: usize, angles: usize) -> Vec<(isize, isize)> {
    let mut offs: Vec<(isize, isize)> = (0..angles)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / angles as f64;
            ((r as f64 * t.cos()).round() as isize, (r as f64 * t.sin()).round() as isize)
        })
        .collect();
    offs.sort_unstable();
    offs.dedup();
    offs
}

/// Binarizes a magnitude map: strictly positive pixels at or above the
/// configured quantile.
fn edge_pixels(edges: &GrayImage, percentile: f64) -> Vec<(usize, usize)> {
    let mut vals = edges.data.clone();
    if vals.is_empty() {
        return Vec::new();
    }
    let k = ((vals.len() - 1) as f64 * percentile).floor() as usize;
    let (_, q, _) = vals.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    let q = *q;
    let mut out = Vec::new();
    for y in 0..edges.height {
        for x in 0..edges.width {
            let v = edges.get(x, y);
            if v > 0.0 && v >= q {
                out.push((x, y));
            }
        }
    }
    out
}

/// Circle detection by voting in a `(radius, cy, cx)` accumulator.
///
/// Each edge pixel votes for every center one sampled perimeter offset away,
/// at every radius in `[r_min, r_max]`. A cell is a candidate when it is a
/// 3×3×3 local maximum and its votes reach `vote_threshold` of the distinct
/// offsets at that radius. Candidates are ranked by support and greedily
/// suppressed within `nms_distance` of a stronger accepted center.
pub fn hough_circles(edges: &GrayImage, config: &HoughConfig) -> Result<Vec<CircleDetection>> {
    config.validate()?;
    let (w, h) = (edges.width, edges.height);
    let pixels = edge_pixels(edges, config.edge_percentile);
    if pixels.is_empty() || w == 0 || h == 0 {
        return Ok(Vec::new());
    }
    let radii: Vec<usize> = (config.r_min..=config.r_max).collect();
    let offsets: Vec<Vec<(isize, isize)>> =
        radii.iter().map(|&r| perimeter_offsets(r, config.angles)).collect();
    let plane = w * h;
    let mut acc = vec![0u16; radii.len() * plane];
    for (ri, offs) in offsets.iter().enumerate() {
        let layer = &mut acc[ri * plane..(ri + 1) * plane];
        for &(x, y) in &pixels {
            for &(dx, dy) in offs {
                let cx = x as isize - dx;
                let cy = y as isize - dy;
                if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
                    layer[cy as usize * w + cx as usize] += 1;
                }
            }
        }
    }

    let at = |ri: usize, x: usize, y: usize| acc[ri * plane + y * w + x];
    let mut candidates: Vec<(f64, u16, usize, usize, usize)> = Vec::new();
    for (ri, offs) in offsets.iter().enumerate() {
        let need = ((config.vote_threshold * offs.len() as f64).ceil() as u16).max(1);
        for y in 0..h {
            for x in 0..w {
                let v = at(ri, x, y);
                if v < need {
                    continue;
                }
                let mut is_max = true;
                'scan: for rj in ri.saturating_sub(1)..(ri + 2).min(radii.len()) {
                    for yy in y.saturating_sub(1)..(y + 2).min(h) {
                        for xx in x.saturating_sub(1)..(x + 2).min(w) {
                            if at(rj, xx, yy) > v {
                                is_max = false;
                                break 'scan;
                            }
                        }
                    }
                }
                if is_max {
                    candidates.push((f64::from(v) / offs.len() as f64, v, ri, y, x));
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
            .then(a.4.cmp(&b.4))
    });

    let mut accepted: Vec<CircleDetection> = Vec::new();
    for (support, votes, ri, y, x) in candidates {
        let center = Point::new(x as f64, y as f64);
        if accepted.iter().any(|d| d.center.distance(center) <= config.nms_distance) {
            continue;
        }
        accepted.push(CircleDetection {
            center,
            radius: radii[ri] as f64,
            accumulator_score: f64::from(votes),
            support,
        });
    }
    Ok(accepted)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// One-pixel-wide ring of value 255.
    pub(crate) fn ring_image(size: usize, circles: &[(f64, f64, f64)]) -> GrayImage {
        let mut img = GrayImage::new(size, size);
        for y in 0..size {
            for x in 0..size {
                for &(cx, cy, r) in circles {
                    let d = (x as f64 - cx).hypot(y as f64 - cy);
                    if (d - r).abs() <= 0.5 {
                        img.set(x, y, 255.0);
                    }
                }
            }
        }
        img
    }

    fn config() -> HoughConfig {
        HoughConfig { r_min: 15, r_max: 25, nms_distance: 10.0, ..HoughConfig::default() }
    }

    #[test]
    fn blank_map_has_no_circles() {
        assert!(hough_circles(&GrayImage::new(64, 64), &config()).unwrap().is_empty());
    }

    #[test]
    fn single_rendered_circle() {
        let img = ring_image(200, &[(100.0, 100.0, 20.0)]);
        let found = hough_circles(&img, &config()).unwrap();
        assert_eq!(found.len(), 1, "{found:?}");
        let d = found[0];
        assert!((d.center.x - 100.0).abs() <= 2.0 && (d.center.y - 100.0).abs() <= 2.0);
        assert!((d.radius - 20.0).abs() <= 2.0);
        assert!(d.accumulator_score > 0.0);
    }

    #[test]
    fn two_separated_circles() {
        let img = ring_image(240, &[(60.0, 70.0, 20.0), (160.0, 150.0, 20.0)]);
        assert_eq!(hough_circles(&img, &config()).unwrap().len(), 2);
    }

    #[test]
    fn rotation_keeps_count() {
        let img = ring_image(160, &[(60.0, 90.0, 18.0)]);
        let mut rot = GrayImage::new(160, 160);
        for y in 0..160 {
            for x in 0..160 {
                rot.set(159 - y, x, img.get(x, y));
            }
        }
        let a = hough_circles(&img, &config()).unwrap();
        let b = hough_circles(&rot, &config()).unwrap();
        assert_eq!(a.len(), b.len());
    }

    #[test]
    fn invalid_radius_range() {
        let cfg = HoughConfig { r_min: 10, r_max: 5, ..HoughConfig::default() };
        assert_eq!(hough_circles(&GrayImage::new(8, 8), &cfg).unwrap_err().kind(), "invalid-parameter");
    }
}
