//! Points, boxes and polygon primitives shared by the annotation, density and
//! mask code.

use alloc::vec::Vec;

use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Signed areas below this magnitude (px²) are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn scaled(self, sx: f64, sy: f64) -> Point {
        Point::new(self.x * sx, self.y * sy)
    }
}

/// Axis-aligned box in COCO convention: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self { x, y, width, height }
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(self.x * sx, self.y * sy, self.width * sx, self.height * sy)
    }

    /// Box with the same center and extent multiplied by `factor`.
    pub fn rescaled_about_center(&self, factor: f64) -> BBox {
        let c = self.center();
        let (w, h) = (self.width * factor, self.height * factor);
        BBox::new(c.x - w / 2.0, c.y - h / 2.0, w, h)
    }

    /// Tight box around a vertex list. Returns `None` for an empty list.
    pub fn enclosing(points: &[Point]) -> Option<BBox> {
        let first = points.first()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for p in &points[1..] {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

/// Shoelace signed area; positive for counter-clockwise vertex order in a
/// y-up frame.
pub fn signed_area(polygon: &[Point]) -> f64 {
    let n = polygon.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// Center of mass of a filled polygon.
///
/// Uses the area-weighted shoelace centroid. Polygons whose signed area is
/// below [`DEGENERATE_AREA`] fall back to the arithmetic mean of the vertices.
pub fn polygon_centroid(polygon: &[Point]) -> Result<Point> {
    if polygon.len() < 3 {
        return Err(Error::InvalidPolygon(alloc::format!(
            "need at least 3 vertices, got {}",
            polygon.len()
        )));
    }
    let area = signed_area(polygon);
    if area.abs() < DEGENERATE_AREA {
        let n = polygon.len() as f64;
        let (sx, sy) = polygon
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        return Ok(Point::new(sx / n, sy / n));
    }
    let n = polygon.len();
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        let cross = a.x * b.y - b.x * a.y;
        cx += (a.x + b.x) * cross;
        cy += (a.y + b.y) * cross;
    }
    Ok(Point::new(cx / (6.0 * area), cy / (6.0 * area)))
}

/// Even-odd point-in-polygon test.
///
/// Edges are lower-inclusive / upper-exclusive in y and a point on a left
/// boundary counts as inside, matching [`fill_polygon`].
pub fn point_in_polygon(polygon: &[Point], p: Point) -> bool {
    let n = polygon.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Scanline fill: calls `set(col, row)` for every pixel of a `width`×`height`
/// grid whose center `(col + 0.5, row + 0.5)` lies inside the polygon.
///
/// Polygons with fewer than three vertices fill nothing.
pub fn fill_polygon(
    polygon: &[Point],
    width: usize,
    height: usize,
    mut set: impl FnMut(usize, usize),
) {
    let n = polygon.len();
    if n < 3 || width == 0 || height == 0 {
        return;
    }
    let ymin = polygon.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let ymax = polygon.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = ((ymin - 0.5).ceil().max(0.0)) as usize;
    let row_hi = ((ymax - 0.5).ceil().max(0.0) as usize).min(height);
    let mut xs: Vec<f64> = Vec::new();
    for row in row_lo..row_hi {
        let yc = row as f64 + 0.5;
        xs.clear();
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (polygon[i], polygon[j]);
            if (a.y > yc) != (b.y > yc) {
                xs.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
            j = i;
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        for span in xs.chunks_exact(2) {
            let lo = (span[0] - 0.5).ceil().max(0.0) as usize;
            let hi = ((span[1] - 0.5).ceil().max(0.0) as usize).min(width);
            for col in lo..hi {
                set(col, row);
            }
        }
    }
}
