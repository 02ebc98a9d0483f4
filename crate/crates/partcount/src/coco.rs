//! The COCO subset used for annotations.
//!
//! `images` entries carry `id`, `file_name`, `width`, `height` and optionally
//! `scene_id` and `angle`; without those, scene and angle come from a
//! `<scene>_angle<k>` file name. `annotations` entries carry `id`,
//! `image_id`, a single-polygon `segmentation` and `bbox`. Other fields are
//! ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use partcount_core::dataset::{scene_from_file_name, validate_records, Annotation, ImageRecord};
use partcount_core::{BBox, Point};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
}

impl Dataset {
    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_annotations(&text).map_err(|e| match e {
            Error::Parse { offset, message, .. } => {
                Error::Parse { context: path.display().to_string(), offset, message }
            }
            other => other,
        })
    }

    pub fn record(&self, image_id: u64) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn annotations_for(&self, image_id: u64) -> Vec<&Annotation> {
        self.annotations.iter().filter(|a| a.image_id == image_id).collect()
    }

    /// Annotation count per image id, with zero entries for empty images.
    pub fn counts(&self) -> BTreeMap<u64, usize> {
        let mut counts: BTreeMap<u64, usize> = self.records.iter().map(|r| (r.image_id, 0)).collect();
        for a in &self.annotations {
            *counts.entry(a.image_id).or_default() += 1;
        }
        counts
    }

    pub fn to_json(&self) -> String {
        serialize_annotations(&self.records, &self.annotations)
    }
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum SceneKey {
    Text(String),
    Number(u64),
}

#[derive(Deserialize)]
struct RawDoc {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
struct RawImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(default)]
    scene_id: Option<SceneKey>,
    #[serde(default)]
    angle: Option<u32>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    segmentation: Vec<Vec<f64>>,
    bbox: [f64; 4],
}

#[derive(Serialize)]
struct OutDoc<'a> {
    images: Vec<OutImage<'a>>,
    annotations: Vec<OutAnnotation>,
    categories: [OutCategory; 1],
}

#[derive(Serialize)]
struct OutImage<'a> {
    id: u64,
    file_name: &'a str,
    width: u32,
    height: u32,
    scene_id: &'a str,
    angle: u32,
}

#[derive(Serialize)]
struct OutAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    segmentation: [Vec<f64>; 1],
    bbox: [f64; 4],
    iscrowd: u8,
}

#[derive(Serialize)]
struct OutCategory {
    id: u32,
    name: &'static str,
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

fn scene_of(raw: &RawImage) -> Result<(String, u32)> {
    let from_name = scene_from_file_name(&raw.file_name);
    let scene = match &raw.scene_id {
        Some(SceneKey::Text(s)) => Some(s.clone()),
        Some(SceneKey::Number(n)) => Some(n.to_string()),
        None => from_name.as_ref().map(|(s, _)| s.clone()),
    };
    let angle = raw.angle.or(from_name.as_ref().map(|(_, a)| *a));
    match (scene, angle) {
        (Some(s), Some(a)) => Ok((s, a)),
        _ => Err(partcount_core::Error::Input(format!(
            "image {} ({}) has no scene_id/angle and its name does not match <scene>_angle<k>",
            raw.id, raw.file_name
        ))
        .into()),
    }
}

fn polygon_of(raw: &RawAnnotation) -> Result<Vec<Point>> {
    let [poly] = raw.segmentation.as_slice() else {
        return Err(partcount_core::Error::InvalidPolygon(format!(
            "annotation {} has {} polygons; exactly one is supported",
            raw.id,
            raw.segmentation.len()
        ))
        .into());
    };
    if poly.len() % 2 != 0 {
        return Err(partcount_core::Error::InvalidPolygon(format!(
            "annotation {} has an odd number of coordinates",
            raw.id
        ))
        .into());
    }
    Ok(poly.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
}

/// Parses annotation JSON. Vertices outside their image are clamped onto its
/// border with a warning.
pub fn parse_annotations(text: &str) -> Result<Dataset> {
    let doc: RawDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: "annotation JSON".into(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mut records = Vec::with_capacity(doc.images.len());
    let mut sizes = BTreeMap::new();
    for raw in &doc.images {
        let (scene_id, angle_index) = scene_of(raw)?;
        sizes.insert(raw.id, (f64::from(raw.width), f64::from(raw.height)));
        records.push(ImageRecord {
            image_id: raw.id,
            file_name: raw.file_name.clone(),
            scene_id,
            angle_index,
            width: raw.width,
            height: raw.height,
        });
    }
    validate_records(&records)?;
    let mut ids = BTreeSet::new();
    let mut annotations = Vec::with_capacity(doc.annotations.len());
    for raw in &doc.annotations {
        let Some(&(w, h)) = sizes.get(&raw.image_id) else {
            return Err(partcount_core::Error::DataIntegrity(format!(
                "annotation {} references missing image {}",
                raw.id, raw.image_id
            ))
            .into());
        };
        if !ids.insert(raw.id) {
            return Err(partcount_core::Error::DataIntegrity(format!("duplicate annotation id {}", raw.id)).into());
        }
        let [x, y, bw, bh] = raw.bbox;
        let mut ann = Annotation {
            id: raw.id,
            image_id: raw.image_id,
            polygon: polygon_of(raw)?,
            bbox: BBox::new(x, y, bw, bh),
        };
        if ann.clamp_to(w, h) {
            log::warn!("annotation {} extends outside image {}; clamped", raw.id, raw.image_id);
        }
        ann.validate()?;
        annotations.push(ann);
    }
    Ok(Dataset { records, annotations })
}

/// Inverse of [`parse_annotations`]; scene and angle are always written
/// explicitly.
pub fn serialize_annotations(records: &[ImageRecord], annotations: &[Annotation]) -> String {
    let doc = OutDoc {
        images: records
            .iter()
            .map(|r| OutImage {
                id: r.image_id,
                file_name: &r.file_name,
                width: r.width,
                height: r.height,
                scene_id: &r.scene_id,
                angle: r.angle_index,
            })
            .collect(),
        annotations: annotations
            .iter()
            .map(|a| OutAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: 1,
                segmentation: [a.polygon.iter().flat_map(|p| [p.x, p.y]).collect()],
                bbox: [a.bbox.x, a.bbox.y, a.bbox.width, a.bbox.height],
                iscrowd: 0,
            })
            .collect(),
        categories: [OutCategory { id: 1, name: "washer" }],
    };
    serde_json::to_string_pretty(&doc).expect("annotation documents always serialize")
}
