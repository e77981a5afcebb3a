//! Crowd samples, manifests, density-map targets, and synthetic data.

mod density;
mod io;
mod synth;

pub use density::{
    generate_density_map, read_density_cache, write_density_cache, DensityMap, CACHE_MAGIC,
};
pub use io::{load_dataset, save_dataset, scan_dataset_root, Annotation, LoadReport};
pub use synth::synthesize_dataset;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Real,
    Synthetic,
}

/// A crowd image with head-point annotations.
///
/// The image is stored channels-first (C, H, W) with intensities in [0, 1].
/// Head coordinates are sub-pixel (x, y) positions in full-resolution image
/// space, satisfying 0 <= x < W and 0 <= y < H.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSample {
    pub id: String,
    pub image: Array3<f32>,
    pub heads: Vec<(f64, f64)>,
    pub source: SampleSource,
}

impl AnnotatedSample {
    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Checks the head-in-bounds invariant.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height() as f64, self.width() as f64);
        for &(x, y) in &self.heads {
            if !(0.0..w).contains(&x) || !(0.0..h).contains(&y) {
                return Err(Error::parameter(
                    "heads",
                    format!("sample {}: head ({x}, {y}) outside {w}x{h} image", self.id),
                ));
            }
        }
        Ok(())
    }
}

/// An in-memory dataset: a named split with its samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub samples: Vec<AnnotatedSample>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Checks id uniqueness, head bounds, and non-emptiness of train splits.
    pub fn validate(&self) -> Result<()> {
        if self.split == Split::Train && self.samples.is_empty() {
            return Err(Error::Config(format!(
                "train manifest '{}' has no samples",
                self.name
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate sample id '{}'", s.id)));
            }
            s.validate()?;
        }
        Ok(())
    }

    /// Keeps only the samples whose ids appear in `ids`, preserving order.
    pub fn restricted_to(&self, ids: &std::collections::BTreeSet<String>) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            split: self.split,
            samples: self
                .samples
                .iter()
                .filter(|s| ids.contains(&s.id))
                .cloned()
                .collect(),
        }
    }
}
