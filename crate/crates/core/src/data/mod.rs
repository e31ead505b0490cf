//! Datasets: the procedural benchmark, image-folder ingestion, augmentation,
//! and the on-disk layout shared by both.

mod augment;
mod folder;
mod synthetic;

pub use augment::{augment, center_view, resize_bilinear, AugmentConfig};
pub use folder::{load_image, load_image_folder, write_dataset};
pub use synthetic::{
    class_channel_means, distance_signature, generate_synthetic, generate_synthetic_with, SyntheticClassSpec,
    SyntheticConfig,
};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

/// `[channels, height, width]` raster with values in `[0,1]`.
pub type ImageTensor = Array3<f32>;

pub const MIN_IMAGE_SIDE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub image: ImageTensor,
    pub label: usize,
}

impl LabeledSample {
    pub fn one_hot(&self, classes: usize) -> Vec<f32> {
        let mut v = vec![0.0; classes];
        v[self.label] = 1.0;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Where a dataset came from, echoed into the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        config: SyntheticConfig,
        class_specs: Vec<SyntheticClassSpec>,
    },
    Folder {
        root: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub image_size: usize,
    pub per_class_train: usize,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub source: DatasetSource,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, split: Split) -> &[LabeledSample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Keep only the first `classes` classes (by index), e.g. for a quick
    /// subset of the benchmark.
    pub fn restrict_classes(&self, classes: usize) -> DatasetManifest {
        let keep = |s: &&LabeledSample| s.label < classes;
        DatasetManifest {
            class_names: self.class_names.iter().take(classes).cloned().collect(),
            image_size: self.image_size,
            per_class_train: self.per_class_train,
            train: self.train.iter().filter(keep).cloned().collect(),
            test: self.test.iter().filter(keep).cloned().collect(),
            source: self.source.clone(),
        }
    }
}

/// JSON sidecar written next to the PNG files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSidecar {
    pub format_version: u32,
    pub image_size: usize,
    pub class_names: Vec<String>,
    pub per_class_train: usize,
    pub source: DatasetSource,
    pub train: Vec<SidecarEntry>,
    pub test: Vec<SidecarEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub path: String,
    pub label: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
