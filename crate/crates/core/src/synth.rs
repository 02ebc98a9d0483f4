//! Synthetic multi-view washer scenes with exact annotations.
//!
//! Each scene places `N` identical annuli by rejection sampling inside a disk
//! about the frame center. Every view applies its own small rotation about the
//! center and translation to the whole arrangement and its own lighting
//! gradient, so the object count is shared by all views of a scene.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Annotation;
use crate::geometry::{BBox, Point};
use crate::image::RgbImage;
use crate::{Error, Result};

/// Outline vertex count.
pub const POLYGON_SIDES: usize = 32;
/// Rejection budget per requested object.
const TRIES_PER_OBJECT: usize = 10 * 1000;
const MAX_ROTATION_DEG: f64 = 10.0;
const MAX_SHIFT_FRACTION: f64 = 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scenes: usize,
    pub views_per_scene: usize,
    /// Inclusive object count range; each scene draws uniformly from it.
    pub count_range: (usize, usize),
    /// `(inner, outer)` washer radii in pixels.
    pub radius_range: (f64, f64),
    /// Largest allowed pairwise overlap as a fraction of one washer's disk.
    pub max_overlap: f64,
    /// Relative brightness swing of the linear lighting ramp across the frame.
    pub lighting_gradient: f64,
    /// Amplitude of uniform per-channel pixel noise.
    pub noise: u8,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenes: 10,
            views_per_scene: 9,
            count_range: (5, 40),
            radius_range: (20.0, 45.0),
            max_overlap: 0.1,
            lighting_gradient: 0.3,
            noise: 4,
            image_size: 1080,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Radius of the disk that washer centers are drawn from, chosen so that
    /// every washer stays in frame under any view perturbation.
    pub fn placement_radius(&self) -> f64 {
        let s = self.image_size as f64;
        s / 2.0 - MAX_SHIFT_FRACTION * s * core::f64::consts::SQRT_2 - self.radius_range.1 - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.count_range;
        let (ri, ro) = self.radius_range;
        if lo > hi {
            return Err(Error::InvalidParameter(format!("count range {lo}..{hi} is empty")));
        }
        if !(ri >= 0.0 && ri < ro) {
            return Err(Error::InvalidParameter(format!("radii ({ri}, {ro}) need 0 <= inner < outer")));
        }
        if self.views_per_scene == 0 {
            return Err(Error::InvalidParameter("views per scene must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return Err(Error::InvalidParameter(format!("max overlap {} outside [0, 1]", self.max_overlap)));
        }
        if !(0.0..1.0).contains(&self.lighting_gradient) {
            return Err(Error::InvalidParameter(format!(
                "lighting gradient {} outside [0, 1)",
                self.lighting_gradient
            )));
        }
        if self.placement_radius() <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "frame {} too small for outer radius {ro}",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// One annotated washer in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthObject {
    pub center: Point,
    pub polygon: Vec<Point>,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthView {
    pub angle_index: u32,
    pub image: RgbImage,
    pub objects: Vec<SynthObject>,
}

impl SynthView {
    /// The view's objects as annotations of `image_id`, with ids counting up
    /// from `first_id`.
    pub fn annotations(&self, image_id: u64, first_id: u64) -> Vec<Annotation> {
        self.objects
            .iter()
            .zip(first_id..)
            .map(|(o, id)| Annotation { id, image_id, polygon: o.polygon.clone(), bbox: o.bbox })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub scene_id: String,
    pub count: usize,
    pub views: Vec<SynthView>,
}

pub fn scene_name(scene_index: usize) -> String {
    format!("scene{scene_index:04}")
}

/// Area shared by two disks of radius `r` whose centers are `d` apart.
pub fn lens_area(r: f64, d: f64) -> f64 {
    if d >= 2.0 * r {
        return 0.0;
    }
    let half = d / 2.0;
    2.0 * r * r * libm::acos(half / r) - half * libm::sqrt(4.0 * r * r - d * d)
}

fn place(config: &SynthConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Point>> {
    let r = config.radius_range.1;
    let disk = PI * r * r;
    let radius = config.placement_radius();
    let c = config.image_size as f64 / 2.0;
    let budget = TRIES_PER_OBJECT * n;
    let mut placed: Vec<Point> = Vec::with_capacity(n);
    let mut tries = 0;
    while placed.len() < n {
        if tries == budget {
            return Err(Error::Overcrowded(format!(
                "placed {} of {n} washers (outer radius {r}) within radius {radius:.1} at max overlap {} after {budget} attempts",
                placed.len(),
                config.max_overlap
            )));
        }
        tries += 1;
        let rho = radius * libm::sqrt(rng.random::<f64>());
        let theta = 2.0 * PI * rng.random::<f64>();
        let p = Point::new(c + rho * libm::cos(theta), c + rho * libm::sin(theta));
        if placed.iter().all(|q| lens_area(r, p.distance(*q)) <= config.max_overlap * disk) {
            placed.push(p);
        }
    }
    Ok(placed)
}

fn outline(center: Point, r: f64, phase: f64) -> Vec<Point> {
    (0..POLYGON_SIDES)
        .map(|k| {
            let a = phase + 2.0 * PI * k as f64 / POLYGON_SIDES as f64;
            Point::new(center.x + r * libm::cos(a), center.y + r * libm::sin(a))
        })
        .collect()
}

struct Palette {
    background: f64,
    tints: Vec<[f64; 3]>,
}

fn render(
    config: &SynthConfig,
    palette: &Palette,
    centers: &[Point],
    light_dir: f64,
    rng: &mut ChaCha8Rng,
) -> RgbImage {
    let size = config.image_size;
    let s = size as f64;
    let (ri, ro) = config.radius_range;
    let (dx, dy) = (libm::cos(light_dir), libm::sin(light_dir));
    let light = |x: f64, y: f64| -> f64 {
        let t = ((x - s / 2.0) * dx + (y - s / 2.0) * dy) / (s / 2.0);
        1.0 + config.lighting_gradient * t.clamp(-1.0, 1.0)
    };
    let mut rgb = vec![[0.0f64; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let v = palette.background * light(x as f64 + 0.5, y as f64 + 0.5);
            rgb[y * size + x] = [v; 3];
        }
    }
    for (c, tint) in centers.iter().zip(&palette.tints) {
        let x0 = libm::floor(c.x - ro).max(0.0) as usize;
        let y0 = libm::floor(c.y - ro).max(0.0) as usize;
        let x1 = (libm::ceil(c.x + ro) as usize).min(size - 1);
        let y1 = (libm::ceil(c.y + ro) as usize).min(size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let d = libm::hypot(px - c.x, py - c.y);
                if d < ri || d > ro {
                    continue;
                }
                let t = (d - ri) / (ro - ri);
                let shade = 0.65 + 0.35 * libm::sin(PI * t);
                let l = light(px, py) * shade;
                rgb[y * size + x] = [tint[0] * l, tint[1] * l, tint[2] * l];
            }
        }
    }
    let amp = i32::from(config.noise);
    let mut out = RgbImage::new(size, size);
    for (dst, src) in out.data.chunks_exact_mut(3).zip(&rgb) {
        for ch in 0..3 {
            let jitter = if amp > 0 { rng.random_range(-amp..=amp) } else { 0 };
            dst[ch] = (libm::round(src[ch]) as i32 + jitter).clamp(0, 255) as u8;
        }
    }
    out
}

/// Renders all views of scene `scene_index`; the output depends only on
/// `(config, scene_index)`.
pub fn generate_scene(config: &SynthConfig, scene_index: usize) -> Result<SynthScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(scene_index as u64);
    let (lo, hi) = config.count_range;
    let n = rng.random_range(lo..=hi);
    let base = place(config, n, &mut rng)?;
    let palette = Palette {
        background: rng.random_range(90.0..140.0),
        tints: (0..n)
            .map(|_| {
                let j = rng.random_range(-12.0..12.0);
                [190.0 + j, 150.0 + j, 70.0 + j / 2.0]
            })
            .collect(),
    };
    let s = config.image_size as f64;
    let mid = Point::new(s / 2.0, s / 2.0);
    let ro = config.radius_range.1;
    let mut views = Vec::with_capacity(config.views_per_scene);
    for k in 0..config.views_per_scene {
        let rot = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).to_radians();
        let shift = MAX_SHIFT_FRACTION * s;
        let (tx, ty) = (rng.random_range(-shift..=shift), rng.random_range(-shift..=shift));
        let light_dir = rng.random_range(0.0..2.0 * PI);
        let (sin, cos) = (libm::sin(rot), libm::cos(rot));
        let centers: Vec<Point> = base
            .iter()
            .map(|p| {
                let (x, y) = (p.x - mid.x, p.y - mid.y);
                Point::new(mid.x + cos * x - sin * y + tx, mid.y + sin * x + cos * y + ty)
            })
            .collect();
        let image = render(config, &palette, &centers, light_dir, &mut rng);
        let objects = centers
            .iter()
            .map(|&c| SynthObject {
                center: c,
                polygon: outline(c, ro, rot),
                bbox: BBox::new(c.x - ro, c.y - ro, 2.0 * ro, 2.0 * ro),
            })
            .collect();
        views.push(SynthView { angle_index: k as u32, image, objects });
    }
    Ok(SynthScene { scene_id: scene_name(scene_index), count: n, views })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polygon_centroid;

    fn small(count: (usize, usize), overlap: f64) -> SynthConfig {
        SynthConfig {
            scenes: 1,
            views_per_scene: 3,
            count_range: count,
            radius_range: (5.0, 10.0),
            max_overlap: overlap,
            image_size: 160,
            seed: 42,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn fixed_count_in_every_view() {
        let scene = generate_scene(&small((7, 7), 0.1), 0).unwrap();
        assert_eq!(scene.count, 7);
        assert_eq!(scene.views.len(), 3);
        for (k, v) in scene.views.iter().enumerate() {
            assert_eq!(v.angle_index as usize, k);
            assert_eq!(v.objects.len(), 7);
            assert_eq!(v.image.width, 160);
        }
    }

    #[test]
    fn deterministic_per_scene() {
        let cfg = small((3, 9), 0.1);
        assert_eq!(generate_scene(&cfg, 4).unwrap(), generate_scene(&cfg, 4).unwrap());
        assert_ne!(generate_scene(&cfg, 4).unwrap().views[0].image, generate_scene(&cfg, 5).unwrap().views[0].image);
    }

    #[test]
    fn zero_overlap_means_disjoint_disks() {
        for idx in 0..5 {
            let scene = generate_scene(&small((8, 12), 0.0), idx).unwrap();
            for v in &scene.views {
                for (i, a) in v.objects.iter().enumerate() {
                    for b in &v.objects[i + 1..] {
                        assert!(a.center.distance(b.center) >= 20.0 - 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn objects_stay_in_frame() {
        for idx in 0..5 {
            let scene = generate_scene(&small((10, 15), 0.2), idx).unwrap();
            for o in scene.views.iter().flat_map(|v| &v.objects) {
                assert!(o.bbox.x >= 0.0 && o.bbox.y >= 0.0);
                assert!(o.bbox.x + o.bbox.width <= 160.0 && o.bbox.y + o.bbox.height <= 160.0);
            }
        }
    }

    #[test]
    fn centroid_inside_outer_circle() {
        let scene = generate_scene(&small((5, 5), 0.1), 1).unwrap();
        for o in scene.views.iter().flat_map(|v| &v.objects) {
            assert_eq!(o.polygon.len(), POLYGON_SIDES);
            let c = polygon_centroid(&o.polygon).unwrap();
            assert!(c.distance(o.center) < 10.0);
            assert!(c.distance(o.center) < 1e-6);
        }
    }

    #[test]
    fn washers_are_saturated_background_is_not() {
        let cfg = SynthConfig { noise: 0, ..small((1, 1), 0.0) };
        let scene = generate_scene(&cfg, 0).unwrap();
        let v = &scene.views[0];
        let c = v.objects[0].center;
        let ring = v.image.get((c.x + 7.5) as usize, c.y as usize);
        assert!(ring[0] > ring[2] + 40, "{ring:?}");
        let corner = v.image.get(0, 0);
        assert!(corner[0] == corner[1] && corner[1] == corner[2]);
        let hole = v.image.get(c.x as usize, c.y as usize);
        assert!(hole[0] == hole[2], "hole should show background: {hole:?}");
    }

    #[test]
    fn overcrowding_reported() {
        let err = generate_scene(&small((200, 200), 0.0), 0).unwrap_err();
        assert_eq!(err.kind(), "overcrowded");
        assert!(format!("{err}").contains("max overlap"));
    }

    #[test]
    fn invalid_configs() {
        assert!(SynthConfig { radius_range: (10.0, 10.0), ..small((1, 1), 0.0) }.validate().is_err());
        assert!(SynthConfig { count_range: (3, 2), ..small((1, 1), 0.0) }.validate().is_err());
        assert!(SynthConfig { views_per_scene: 0, ..small((1, 1), 0.0) }.validate().is_err());
        assert!(SynthConfig { image_size: 20, ..small((1, 1), 0.0) }.validate().is_err());
    }

    #[test]
    fn lens_area_limits() {
        assert_eq!(lens_area(3.0, 6.0), 0.0);
        assert!((lens_area(3.0, 0.0) - PI * 9.0).abs() < 1e-9);
    }
}
