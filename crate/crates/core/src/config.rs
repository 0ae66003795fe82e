//! Model and training configuration.
//!
//! Configs are JSON documents merged over [`ModelConfig::default`], which is
//! the two-layer masked model used for Urbansound8k: layer widths 300/200,
//! masks (20, -5) and (5, 3), order 15, five extra frames, and two dense
//! layers of 100 neurons. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskgen::MaskSpec;
use crate::netcore::segment_width;

pub const CONFIG_VERSION: u32 = 1;

/// Urbansound8k class labels in alphabetical order.
pub const URBANSOUND8K_CLASSES: [&str; 10] = [
    "air_conditioner",
    "car_horn",
    "children_playing",
    "dog_bark",
    "drilling",
    "engine_idling",
    "gun_shot",
    "jackhammer",
    "siren",
    "street_music",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub hidden: usize,
    #[serde(default = "default_masked")]
    pub masked: bool,
    #[serde(default)]
    pub bandwidth: usize,
    #[serde(default)]
    pub overlap: i64,
}

fn default_masked() -> bool {
    true
}

impl LayerConfig {
    pub fn masked(hidden: usize, bandwidth: usize, overlap: i64) -> Self {
        LayerConfig {
            hidden,
            masked: true,
            bandwidth,
            overlap,
        }
    }

    pub fn unmasked(hidden: usize) -> Self {
        LayerConfig {
            hidden,
            masked: false,
            bandwidth: 0,
            overlap: 0,
        }
    }

    pub fn mask_spec(&self) -> Option<MaskSpec> {
        self.masked.then_some(MaskSpec {
            bandwidth: self.bandwidth,
            overlap: self.overlap,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub train_hop: usize,
    pub inference_hop: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 200,
            max_epochs: 200,
            patience: 20,
            train_hop: 1,
            inference_hop: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub version: u32,
    pub feature_length: usize,
    /// Temporal order shared by every conditional layer.
    pub order: usize,
    pub layers: Vec<LayerConfig>,
    pub extra_frames: usize,
    pub dense: Vec<usize>,
    pub classes: Vec<String>,
    pub dropout: f64,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            version: CONFIG_VERSION,
            feature_length: 120,
            order: 15,
            layers: vec![LayerConfig::masked(300, 20, -5), LayerConfig::masked(200, 5, 3)],
            extra_frames: 5,
            dense: vec![100, 100],
            classes: URBANSOUND8K_CLASSES.iter().map(|s| s.to_string()).collect(),
            dropout: 0.5,
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ModelConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Segment width `q = 2·order·layers + extra_frames`.
    pub fn segment_width(&self) -> usize {
        segment_width(self.order, self.layers.len(), self.extra_frames)
            .expect("validated config has positive order, depth, and extra frames")
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Input width of each conditional layer, in order.
    pub fn layer_inputs(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.feature_length).chain(self.layers.iter().map(|l| l.hidden))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, msg: String| Err(Error::Config(format!("{path}: {msg}")));
        if self.version != CONFIG_VERSION {
            return err(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            );
        }
        if self.feature_length < 1 {
            return err("feature_length", "must be at least 1".into());
        }
        if self.order < 1 {
            return err("order", "must be at least 1".into());
        }
        if self.layers.is_empty() {
            return err("layers", "at least one conditional layer is required".into());
        }
        if self.extra_frames < 1 {
            return err("extra_frames", "must be at least 1".into());
        }
        for (i, (layer, input)) in self.layers.iter().zip(self.layer_inputs()).enumerate() {
            if layer.hidden < 1 {
                return err(&format!("layers[{i}].hidden"), "must be at least 1".into());
            }
            if let Some(spec) = layer.mask_spec() {
                if let Err(e) = spec.validate() {
                    let field = if spec.bandwidth < 1 { "bandwidth" } else { "overlap" };
                    return err(&format!("layers[{i}].{field}"), e.to_string());
                }
                if spec.bandwidth > input {
                    return err(
                        &format!("layers[{i}].bandwidth"),
                        format!("bandwidth {} exceeds layer input width {input}", spec.bandwidth),
                    );
                }
            }
        }
        if let Some(i) = self.dense.iter().position(|&w| w < 1) {
            return err(&format!("dense[{i}]"), "must be at least 1".into());
        }
        if self.classes.len() < 2 {
            return err("classes", "at least two classes are required".into());
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return err(&format!("classes[{i}]"), format!("duplicate class {c:?}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err("dropout", format!("rate {} must be in [0, 1)", self.dropout));
        }
        let o = &self.optimizer;
        if !(o.learning_rate.is_finite() && o.learning_rate > 0.0) {
            return err("optimizer.learning_rate", "must be positive and finite".into());
        }
        if !(0.0..1.0).contains(&o.beta1) {
            return err("optimizer.beta1", "must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&o.beta2) {
            return err("optimizer.beta2", "must be in [0, 1)".into());
        }
        if !(o.epsilon.is_finite() && o.epsilon > 0.0) {
            return err("optimizer.epsilon", "must be positive and finite".into());
        }
        let t = &self.training;
        for (name, v) in [
            ("batch_size", t.batch_size),
            ("max_epochs", t.max_epochs),
            ("train_hop", t.train_hop),
            ("inference_hop", t.inference_hop),
        ] {
            if v < 1 {
                return err(&format!("training.{name}"), "must be at least 1".into());
            }
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelConfig::from_json(&text)
}
