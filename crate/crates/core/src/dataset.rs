//! Annotation records, scene grouping and the scene-level train/dev/test split.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{polygon_centroid, BBox, Point};
use crate::{Error, Result};

/// One object instance: a single outline polygon and its box.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub polygon: Vec<Point>,
    pub bbox: BBox,
}

impl Annotation {
    /// Point annotation at the polygon's center of mass.
    pub fn center(&self) -> Result<Point> {
        polygon_centroid(&self.polygon)
    }

    /// Copy with every coordinate multiplied by `(sx, sy)`.
    pub fn scaled(&self, sx: f64, sy: f64) -> Annotation {
        Annotation {
            id: self.id,
            image_id: self.image_id,
            polygon: self.polygon.iter().map(|p| p.scaled(sx, sy)).collect(),
            bbox: self.bbox.scaled(sx, sy),
        }
    }

    /// Clamps every vertex and the box into `[0, width] × [0, height]`.
    /// Returns `true` when anything moved.
    pub fn clamp_to(&mut self, width: f64, height: f64) -> bool {
        let mut moved = false;
        for p in &mut self.polygon {
            let (x, y) = (p.x.clamp(0.0, width), p.y.clamp(0.0, height));
            moved |= x != p.x || y != p.y;
            *p = Point::new(x, y);
        }
        let b = self.bbox;
        let (x1, y1) = (b.x + b.width, b.y + b.height);
        let inside = |v: f64, hi: f64| (0.0..=hi).contains(&v);
        if !(inside(b.x, width) && inside(b.y, height) && inside(x1, width) && inside(y1, height)) {
            let (x0, y0) = (b.x.clamp(0.0, width), b.y.clamp(0.0, height));
            let (x1, y1) = (x1.clamp(0.0, width), y1.clamp(0.0, height));
            self.bbox = BBox::new(x0, y0, x1 - x0, y1 - y0);
            moved = true;
        }
        moved
    }

    pub fn validate(&self) -> Result<()> {
        if self.polygon.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "annotation {} has {} vertices",
                self.id,
                self.polygon.len()
            )));
        }
        if !(self.bbox.width > 0.0 && self.bbox.height > 0.0) {
            return Err(Error::Input(format!(
                "annotation {} has non-positive bbox extent",
                self.id
            )));
        }
        Ok(())
    }
}

/// One captured view of a scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: u64,
    pub file_name: String,
    pub scene_id: String,
    pub angle_index: u32,
    pub width: u32,
    pub height: u32,
}

/// Parses `<scene>_angle<k>` out of a file name such as `134_angle4_img.png`.
///
/// The scene is everything before the last `_angle` marker; `k` is the run of
/// digits directly after it.
pub fn scene_from_file_name(file_name: &str) -> Option<(String, u32)> {
    let base = file_name.rsplit(['/', '\\']).next().unwrap_or(file_name);
    let pos = base.rfind("_angle")?;
    let scene = &base[..pos];
    let digits: String = base[pos + "_angle".len()..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    if scene.is_empty() || digits.is_empty() {
        return None;
    }
    Some((scene.to_string(), digits.parse().ok()?))
}

/// Rejects duplicate image ids and duplicate `(scene, angle)` pairs.
pub fn validate_records(records: &[ImageRecord]) -> Result<()> {
    let mut ids = BTreeSet::new();
    let mut views = BTreeSet::new();
    for r in records {
        if !ids.insert(r.image_id) {
            return Err(Error::DataIntegrity(format!("duplicate image id {}", r.image_id)));
        }
        if !views.insert((r.scene_id.as_str(), r.angle_index)) {
            return Err(Error::DataIntegrity(format!(
                "duplicate view: scene {} angle {}",
                r.scene_id, r.angle_index
            )));
        }
    }
    Ok(())
}

/// Groups annotations by image id, with an entry (possibly empty) for every
/// record.
pub fn annotations_by_image<'a>(
    records: &[ImageRecord],
    annotations: &'a [Annotation],
) -> BTreeMap<u64, Vec<&'a Annotation>> {
    let mut map: BTreeMap<u64, Vec<&Annotation>> =
        records.iter().map(|r| (r.image_id, Vec::new())).collect();
    for a in annotations {
        map.entry(a.image_id).or_default().push(a);
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, dev: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let all = [self.train, self.dev, self.test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidParameter(format!("split ratios must be non-negative: {self:?}")));
        }
        if ((self.train + self.dev + self.test) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bucket {
    Train,
    Dev,
    Test,
}

impl Bucket {
    pub fn name(self) -> &'static str {
        match self {
            Bucket::Train => "train",
            Bucket::Dev => "dev",
            Bucket::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Bucket> {
        match s {
            "train" => Some(Bucket::Train),
            "dev" => Some(Bucket::Dev),
            "test" => Some(Bucket::Test),
            _ => None,
        }
    }
}

/// Scene-level partition. Every view of a scene lives in exactly one bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn scenes(&self, bucket: Bucket) -> &[String] {
        match bucket {
            Bucket::Train => &self.train,
            Bucket::Dev => &self.dev,
            Bucket::Test => &self.test,
        }
    }

    pub fn bucket_of(&self, scene_id: &str) -> Option<Bucket> {
        [Bucket::Train, Bucket::Dev, Bucket::Test]
            .into_iter()
            .find(|b| self.scenes(*b).iter().any(|s| s == scene_id))
    }

    /// Records whose scene belongs to `bucket`, in input order.
    pub fn select<'a>(&self, bucket: Bucket, records: &'a [ImageRecord]) -> Vec<&'a ImageRecord> {
        let scenes: BTreeSet<&str> = self.scenes(bucket).iter().map(String::as_str).collect();
        records
            .iter()
            .filter(|r| scenes.contains(r.scene_id.as_str()))
            .collect()
    }
}

/// Deterministic scene-level split.
///
/// Scenes are sorted, shuffled with a ChaCha8 stream seeded by `seed`, and cut
/// into train/dev/test. Dev and test sizes are `floor(n · ratio)` (at least one
/// scene when the ratio is non-zero); the remainder goes to train.
pub fn grouped_split(records: &[ImageRecord], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut scenes: Vec<String> = records
        .iter()
        .map(|r| r.scene_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = scenes.len();
    let wanted = [ratios.train, ratios.dev, ratios.test];
    let nonzero = wanted.iter().filter(|r| **r > 0.0).count();
    if n < nonzero {
        return Err(Error::InsufficientScenes(format!(
            "{n} scenes cannot fill {nonzero} non-empty buckets"
        )));
    }

    let floor_count = |r: f64| -> usize {
        let c = libm::floor(n as f64 * r + 1e-9) as usize;
        if r > 0.0 { c.max(1) } else { c }
    };
    let mut dev = floor_count(ratios.dev);
    let mut test = floor_count(ratios.test);
    let min_train = usize::from(ratios.train > 0.0);
    while n < dev + test + min_train {
        // Only reachable when minimum-one bumps overfill tiny datasets.
        if dev >= test && dev > 1 {
            dev -= 1;
        } else if test > 1 {
            test -= 1;
        } else {
            break;
        }
    }
    let train = n - dev - test;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scenes.shuffle(&mut rng);
    let mut it = scenes.into_iter();
    let mut take = |k: usize| -> Vec<String> {
        let mut v: Vec<String> = it.by_ref().take(k).collect();
        v.sort();
        v
    };
    let train = take(train);
    let dev = take(dev);
    let test = take(test);
    Ok(DatasetSplit { seed, train, dev, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn records(scenes: usize, views: u32) -> Vec<ImageRecord> {
        let mut out = Vec::new();
        for s in 0..scenes {
            for a in 0..views {
                out.push(ImageRecord {
                    image_id: (s as u64) * 100 + a as u64,
                    file_name: format!("{s}_angle{a}.png"),
                    scene_id: format!("{s}"),
                    angle_index: a,
                    width: 64,
                    height: 64,
                });
            }
        }
        out
    }

    #[test]
    fn clamping_leaves_inside_annotations_alone() {
        let poly = vec![Point::new(33.69803117027779, 76.2545), Point::new(65.69, 76.3), Point::new(50.0, 108.25)];
        let mut a = Annotation {
            id: 1,
            image_id: 1,
            polygon: poly.clone(),
            bbox: BBox::new(33.696533580017295, 76.2530262791837, 32.0, 32.0),
        };
        assert!(!a.clamp_to(256.0, 256.0));
        assert_eq!(a.polygon, poly);

        a.bbox = BBox::new(-2.0, 250.0, 10.0, 10.0);
        assert!(a.clamp_to(256.0, 256.0));
        assert_eq!(a.bbox, BBox::new(0.0, 250.0, 8.0, 6.0));
    }

    #[test]
    fn parses_scene_and_angle() {
        assert_eq!(scene_from_file_name("134_angle4_img_rgb.png"), Some(("134".into(), 4)));
        assert_eq!(scene_from_file_name("images/s_07_angle12.png"), Some(("s_07".into(), 12)));
        assert_eq!(scene_from_file_name("plain.png"), None);
        assert_eq!(scene_from_file_name("_angle3.png"), None);
    }

    #[test]
    fn eighty_ten_ten_on_ten_scenes() {
        for seed in [0, 1, 7, 1234] {
            let s = grouped_split(&records(10, 9), SplitRatios::default(), seed).unwrap();
            assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (8, 1, 1));
        }
    }

    #[test]
    fn all_views_of_a_scene_share_a_bucket() {
        let recs = records(10, 9);
        let s = grouped_split(&recs, SplitRatios::default(), 3).unwrap();
        let mut seen: BTreeMap<&str, Bucket> = BTreeMap::new();
        for r in &recs {
            let b = s.bucket_of(&r.scene_id).unwrap();
            assert_eq!(*seen.entry(&r.scene_id).or_insert(b), b);
        }
        let total: usize = [Bucket::Train, Bucket::Dev, Bucket::Test]
            .iter()
            .map(|b| s.select(*b, &recs).len())
            .sum();
        assert_eq!(total, 90);
    }

    #[test]
    fn same_seed_same_split() {
        let recs = records(25, 2);
        let a = grouped_split(&recs, SplitRatios::default(), 7).unwrap();
        let b = grouped_split(&recs, SplitRatios::default(), 7).unwrap();
        assert_eq!(a, b);
        let c = grouped_split(&recs, SplitRatios::default(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn remainder_goes_to_train() {
        let s = grouped_split(&records(17, 1), SplitRatios::default(), 0).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (15, 1, 1));
    }

    #[test]
    fn too_few_scenes() {
        let err = grouped_split(&records(2, 9), SplitRatios::default(), 0).unwrap_err();
        assert_eq!(err.kind(), "insufficient-scenes");
        let ok = grouped_split(
            &records(1, 9),
            SplitRatios { train: 1.0, dev: 0.0, test: 0.0 },
            0,
        )
        .unwrap();
        assert_eq!(ok.train, vec![String::from("0")]);
    }

    #[test]
    fn small_datasets_keep_every_requested_bucket() {
        let s = grouped_split(&records(3, 1), SplitRatios::default(), 5).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (1, 1, 1));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let bad = SplitRatios { train: 0.8, dev: 0.1, test: 0.2 };
        assert_eq!(grouped_split(&records(10, 1), bad, 0).unwrap_err().kind(), "invalid-parameter");
    }

    #[test]
    fn duplicate_views_are_rejected() {
        let mut recs = records(2, 2);
        recs[1].angle_index = 0;
        assert_eq!(validate_records(&recs).unwrap_err().kind(), "data-integrity");
    }
}
