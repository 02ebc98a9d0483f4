//! Dataset directories: split manifests, image lookup and a caching sample
//! loader for training and evaluation.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use partcount_core::dataset::{Bucket, DatasetSplit, ImageRecord};
use partcount_core::density::WindowPolicy;
use partcount_core::train::{prepare_sample, Access, SampleSource, TrainSample};
use serde::{Deserialize, Serialize};

use crate::coco::Dataset;
use crate::error::Result;
use crate::io::{read_json, read_rgb, write_json};

/// On-disk form of a [`DatasetSplit`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl From<&DatasetSplit> for SplitManifest {
    fn from(s: &DatasetSplit) -> Self {
        Self { seed: s.seed, train: s.train.clone(), dev: s.dev.clone(), test: s.test.clone() }
    }
}

impl From<SplitManifest> for DatasetSplit {
    fn from(m: SplitManifest) -> Self {
        DatasetSplit { seed: m.seed, train: m.train, dev: m.dev, test: m.test }
    }
}

pub fn write_split(path: impl AsRef<Path>, split: &DatasetSplit) -> Result<()> {
    write_json(path, &SplitManifest::from(split))
}

pub fn read_split(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    Ok(read_json::<SplitManifest>(path)?.into())
}

/// Image ids of a split bucket, in annotation order.
pub fn bucket_ids(split: &DatasetSplit, bucket: Bucket, records: &[ImageRecord]) -> Vec<u64> {
    split.select(bucket, records).iter().map(|r| r.image_id).collect()
}

/// Finds an image named in the annotations: next to the annotation file
/// first, then in its `images/` subdirectory.
pub fn resolve_image(root: &Path, file_name: &str) -> PathBuf {
    let direct = root.join(file_name);
    if direct.exists() {
        return direct;
    }
    let nested = root.join("images").join(file_name);
    if nested.exists() {
        nested
    } else {
        direct
    }
}

/// Loads, resizes and caches samples for one annotated dataset.
pub struct DiskSource {
    root: PathBuf,
    dataset: Dataset,
    image_size: usize,
    policy: WindowPolicy,
    cache: HashMap<u64, TrainSample>,
}

impl DiskSource {
    /// `annotations` is the path of the annotation file; images are resolved
    /// relative to its directory.
    pub fn open(annotations: impl AsRef<Path>, image_size: usize, policy: WindowPolicy) -> Result<Self> {
        let annotations = annotations.as_ref();
        let dataset = Dataset::load(annotations)?;
        let root = annotations.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(root, dataset, image_size, policy))
    }

    pub fn new(root: PathBuf, dataset: Dataset, image_size: usize, policy: WindowPolicy) -> Self {
        Self { root, dataset, image_size, policy, cache: HashMap::new() }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        resolve_image(&self.root, &record.file_name)
    }
}

impl SampleSource for DiskSource {
    fn load(&mut self, image_id: u64, _access: Access) -> partcount_core::Result<TrainSample> {
        if let Some(s) = self.cache.get(&image_id) {
            return Ok(s.clone());
        }
        let record = self
            .dataset
            .record(image_id)
            .ok_or_else(|| partcount_core::Error::Input(format!("unknown image id {image_id}")))?;
        let path = self.image_path(record);
        let rgb = read_rgb(&path).map_err(|e| partcount_core::Error::Input(e.to_string()))?;
        if (rgb.width, rgb.height) != (record.width as usize, record.height as usize) {
            return Err(partcount_core::Error::DataIntegrity(format!(
                "{} is {}x{} but annotated as {}x{}",
                path.display(),
                rgb.width,
                rgb.height,
                record.width,
                record.height
            )));
        }
        let anns = self.dataset.annotations_for(image_id);
        let sample = prepare_sample(image_id, &rgb, &anns, self.image_size, self.policy)?;
        self.cache.insert(image_id, sample.clone());
        Ok(sample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_manifest_json_shape() {
        let split = DatasetSplit { seed: 7, train: vec!["a".into()], dev: vec!["b".into()], test: vec!["c".into()] };
        let text = serde_json::to_string(&SplitManifest::from(&split)).unwrap();
        assert_eq!(text, r#"{"seed":7,"train":["a"],"dev":["b"],"test":["c"]}"#);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.json");
        write_split(&p, &split).unwrap();
        assert_eq!(read_split(&p).unwrap(), split);
    }

    #[test]
    fn image_resolution_prefers_direct_path() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::write(dir.path().join("images/a.png"), b"").unwrap();
        assert_eq!(resolve_image(dir.path(), "a.png"), dir.path().join("images/a.png"));
        std::fs::write(dir.path().join("a.png"), b"").unwrap();
        assert_eq!(resolve_image(dir.path(), "a.png"), dir.path().join("a.png"));
    }
}
