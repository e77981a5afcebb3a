//! Desk-scale crowd density regressors behind a uniform interface.

mod checkpoint;
mod layers;
mod net;

pub use checkpoint::{ModelCheckpoint, TrainingMeta, CHECKPOINT_MAGIC};
pub use layers::{Conv2d, ConvGrad, FeatureMap, Scalar};
pub use net::{
    build_net, density_loss, gradient_check, ForwardCache, GradCheckReport, Layer, Net, NetGrads,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::AnnotatedSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Three parallel columns with different kernel sizes; output stride 4.
    MultiColumn,
    /// One deep column with dilated 3x3 convolutions; output stride 8.
    DilatedSingleColumn,
    /// Plug-in point for full-scale implementations provided by the user.
    External,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelFamily::MultiColumn => write!(f, "multi_column"),
            ModelFamily::DilatedSingleColumn => write!(f, "dilated_single_column"),
            ModelFamily::External => write!(f, "external"),
        }
    }
}

/// Architecture selection plus derived facts (output stride, parameter
/// count), materialized so persisted configs are self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    /// Width multiplier for channel counts.
    pub channels: u32,
    /// Display name; defaults to `<family>_c<channels>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub downsample_factor: u32,
    #[serde(default)]
    pub param_count: usize,
}

impl ModelSpec {
    pub fn new(family: ModelFamily, channels: u32) -> Self {
        let mut spec = ModelSpec {
            family,
            channels,
            label: None,
            downsample_factor: 0,
            param_count: 0,
        };
        spec.resolve();
        spec
    }

    /// The default multi-column toy (~43k parameters).
    pub fn multi_column() -> Self {
        ModelSpec::new(ModelFamily::MultiColumn, 5)
    }

    /// The default dilated single-column toy (~177k parameters).
    pub fn dilated_single_column() -> Self {
        ModelSpec::new(ModelFamily::DilatedSingleColumn, 12)
    }

    /// Recomputes the derived fields from family and width. Call after
    /// deserializing hand-written configs.
    pub fn resolve(&mut self) {
        match self.family {
            ModelFamily::External => {
                self.downsample_factor = 0;
                self.param_count = 0;
            }
            _ => {
                if let Ok(net) = build_net::<f32>(self, 0) {
                    self.downsample_factor = net.stride;
                    self.param_count = net.parameter_count();
                }
            }
        }
    }

    pub fn display_label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("{}_c{}", self.family, self.channels))
    }
}

/// Anything that can turn a sample into a predicted density map. The
/// interface external full-scale models plug into.
pub trait DensityPredictor {
    /// Ratio of input resolution to output resolution.
    fn output_stride(&self) -> u32;
    fn predict_density(&self, sample: &AnnotatedSample) -> Result<Array2<f32>>;
}

/// A built toy model: spec plus weights.
#[derive(Debug, Clone)]
pub struct CrowdModel {
    pub spec: ModelSpec,
    pub net: Net<f32>,
}

/// Builds a model with deterministic seed-dependent initialization. The
/// `external` family has no built-in constructor and returns an error.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<CrowdModel> {
    let net = build_net::<f32>(spec, seed)?;
    let mut spec = spec.clone();
    spec.resolve();
    Ok(CrowdModel { spec, net })
}

/// Converts a sample image to a network input, zero-padding the bottom and
/// right edges up to the next multiple of `stride`.
pub fn sample_to_input(sample: &AnnotatedSample, stride: u32) -> Result<FeatureMap<f32>> {
    if sample.channels() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "sample {} has {} channels, expected 3",
            sample.id,
            sample.channels()
        )));
    }
    let stride = stride.max(1) as usize;
    let (h, w) = (sample.height(), sample.width());
    let ph = h.div_ceil(stride) * stride;
    let pw = w.div_ceil(stride) * stride;
    let mut input = FeatureMap::zeros(3, ph, pw);
    for c in 0..3 {
        let plane = input.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                plane[y * pw + x] = sample.image[(c, y, x)];
            }
        }
    }
    Ok(input)
}

impl CrowdModel {
    pub fn forward_input(&self, input: FeatureMap<f32>) -> FeatureMap<f32> {
        self.net.forward(input).output().clone()
    }

    /// Estimated head count: the sum of the predicted density map.
    pub fn predict_count(&self, sample: &AnnotatedSample) -> Result<f64> {
        Ok(self.predict_density(sample)?.iter().map(|&v| v as f64).sum())
    }
}

impl DensityPredictor for CrowdModel {
    fn output_stride(&self) -> u32 {
        self.net.stride
    }

    fn predict_density(&self, sample: &AnnotatedSample) -> Result<Array2<f32>> {
        let input = sample_to_input(sample, self.net.stride)?;
        let out = self.net.forward(input);
        let out = out.output();
        Ok(Array2::from_shape_vec((out.height, out.width), out.plane(0).to_vec())
            .expect("plane length matches shape"))
    }
}
