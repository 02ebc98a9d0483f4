//! Writes synthetic datasets to disk.

use std::path::Path;

use partcount_core::dataset::ImageRecord;
use partcount_core::synth::{generate_scene, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::coco::serialize_annotations;
use crate::error::Result;
use crate::io::{atomic_write, write_json, write_png};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub scene_id: String,
    pub count: usize,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub image_size: usize,
    pub views_per_scene: usize,
    pub count_range: (usize, usize),
    pub radius_range: (f64, f64),
    pub max_overlap: f64,
    pub scenes: Vec<SceneEntry>,
    pub mean_count: f64,
}

/// Renders `config.scenes` scenes into `dir/images/`, and writes
/// `dir/annotation.json` and `dir/manifest.json`.
///
/// Image ids run from 1 in scene-then-angle order; annotation ids from 1 in
/// the same order.
pub fn generate_dataset(config: &SynthConfig, dir: impl AsRef<Path>) -> Result<SynthManifest> {
    config.validate()?;
    let dir = dir.as_ref();
    let mut records = Vec::new();
    let mut annotations = Vec::new();
    let mut scenes = Vec::with_capacity(config.scenes);
    for index in 0..config.scenes {
        let scene = generate_scene(config, index)?;
        let mut images = Vec::with_capacity(scene.views.len());
        for view in &scene.views {
            let image_id = records.len() as u64 + 1;
            let file_name = format!("{}_angle{}.png", scene.scene_id, view.angle_index);
            write_png(dir.join("images").join(&file_name), &view.image)?;
            records.push(ImageRecord {
                image_id,
                file_name: file_name.clone(),
                scene_id: scene.scene_id.clone(),
                angle_index: view.angle_index,
                width: config.image_size as u32,
                height: config.image_size as u32,
            });
            let first_id = annotations.len() as u64 + 1;
            annotations.extend(view.annotations(image_id, first_id));
            images.push(file_name);
        }
        log::info!("{}: {} washers, {} views", scene.scene_id, scene.count, images.len());
        scenes.push(SceneEntry { scene_id: scene.scene_id, count: scene.count, images });
    }
    atomic_write(dir.join("annotation.json"), serialize_annotations(&records, &annotations).as_bytes())?;
    let mean_count = if scenes.is_empty() {
        0.0
    } else {
        scenes.iter().map(|s| s.count as f64).sum::<f64>() / scenes.len() as f64
    };
    let manifest = SynthManifest {
        seed: config.seed,
        image_size: config.image_size,
        views_per_scene: config.views_per_scene,
        count_range: config.count_range,
        radius_range: config.radius_range,
        max_overlap: config.max_overlap,
        scenes,
        mean_count,
    };
    write_json(dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
