use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::diffcore::AdamConfig;

/// The four evaluation frameworks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Conditioned decoder, adversarial term in the objective.
    #[serde(rename = "ACVAE")]
    Acvae,
    /// Conditioned decoder; the adversary trains alongside but never feeds back.
    #[serde(rename = "CVAE")]
    Cvae,
    /// Unconditioned decoder, adversarial term in the objective.
    #[serde(rename = "AVAE")]
    Avae,
    /// Encoder μ-head straight into the classifier, trained end-to-end.
    #[serde(rename = "CNN")]
    Cnn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Acvae, Variant::Cvae, Variant::Avae, Variant::Cnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Acvae => "ACVAE",
            Self::Cvae => "CVAE",
            Self::Avae => "AVAE",
            Self::Cnn => "CNN",
        }
    }

    /// Whether the decoder sees the subject one-hot.
    pub fn conditioned(self) -> bool {
        matches!(self, Self::Acvae | Self::Cvae)
    }

    /// Whether `λ · adversarial_term` enters the generator objective.
    pub fn adversarial_objective(self) -> bool {
        matches!(self, Self::Acvae | Self::Avae)
    }

    pub fn has_decoder(self) -> bool {
        self != Self::Cnn
    }

    pub fn has_adversary(self) -> bool {
        self != Self::Cnn
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase();
        match key.as_str() {
            "ACVAE" => Ok(Self::Acvae),
            "CVAE" => Ok(Self::Cvae),
            "AVAE" => Ok(Self::Avae),
            "CNN" => Ok(Self::Cnn),
            _ => Err(ModelError::Config(format!("unknown variant {s:?} (expected ACVAE, CVAE, AVAE or CNN)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialConvMode {
    /// Every spatial kernel mixes all incoming feature maps.
    #[default]
    Full,
    /// One spatial kernel per feature map.
    Depthwise,
}

/// Normalization of the squared reconstruction error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    /// Sum over channels and samples per trial, mean over the batch.
    #[default]
    Sum,
    /// Mean over every element.
    Mean,
}

/// Architecture and optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub samples: usize,
    /// Temporal kernel length W.
    pub kernel_width: usize,
    pub latent_dim: usize,
    /// Number of training-pool subjects S.
    pub subjects: usize,
    pub classes: usize,
    /// Adversarial weight λ.
    pub lambda: f64,
    pub filters: usize,
    pub dropout: f64,
    /// Hidden width of the adversary and classifier.
    pub hidden: usize,
    pub variant: Variant,
    /// Apply BatchNorm + ReLU + dropout after the last deconvolution.
    pub faithful_final_layer: bool,
    pub spatial_conv_mode: SpatialConvMode,
    pub recon_mode: ReconMode,
    /// Clamp on the encoder log-variance head.
    pub logvar_limit: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub optimizer: AdamConfig,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            samples: 320,
            kernel_width: 100,
            latent_dim: 100,
            subjects: 90,
            classes: 2,
            lambda: 1.0,
            filters: 40,
            dropout: 0.25,
            hidden: 100,
            variant: Variant::Acvae,
            faithful_final_layer: false,
            spatial_conv_mode: SpatialConvMode::Full,
            recon_mode: ReconMode::Sum,
            logvar_limit: 10.0,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            optimizer: AdamConfig::default(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(self, variant: Variant) -> Self {
        Self { variant, ..self }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("channels", self.channels),
            ("samples", self.samples),
            ("kernel_width", self.kernel_width),
            ("latent_dim", self.latent_dim),
            ("subjects", self.subjects),
            ("classes", self.classes),
            ("filters", self.filters),
            ("hidden", self.hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 || self.logvar_limit <= 0.0 {
            return Err(ModelError::Config("bn_momentum in [0, 1), bn_eps > 0 and logvar_limit > 0 required".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return Err(ModelError::Config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }

    /// Width of the flattened encoder features, `filters · samples`.
    pub fn flat_features(&self) -> usize {
        self.filters * self.samples
    }

    /// Decoder input width: `d_z + S` when conditioned, `d_z` otherwise.
    pub fn decoder_input(&self) -> usize {
        self.latent_dim + if self.variant.conditioned() { self.subjects } else { 0 }
    }

    pub fn spatial_groups(&self) -> usize {
        match self.spatial_conv_mode {
            SpatialConvMode::Full => 1,
            SpatialConvMode::Depthwise => self.filters,
        }
    }
}
