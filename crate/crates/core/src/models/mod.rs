//! Encoder, decoder, adversary and classifier networks and the per-variant
//! assembly of them.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod mlp;
pub mod params;

use ndarray::{ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::{DiffError, RunningStats, Scalar};

pub use config::{ModelConfig, ReconMode, SpatialConvMode, Variant};
pub use decoder::{Decoder, DecoderCache, DecoderParams};
pub use encoder::{Encoder, EncoderCache, EncoderParams, GaussianPosterior};
pub use mlp::{Mlp, MlpCache, MlpParams};
pub use params::ParamSet;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("variant error: {0}")]
    Variant(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// What the training driver does for a variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Recipe {
    pub variant: Variant,
    pub decoder_conditioned: bool,
    /// `λ · adversarial_term` is part of the generator objective.
    pub adversarial_term: bool,
    /// An adversary is trained alongside the representation.
    pub trains_adversary: bool,
    /// Two-stage (representation, then classifier) rather than end-to-end.
    pub two_stage: bool,
}

impl Recipe {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            decoder_conditioned: variant.conditioned(),
            adversarial_term: variant.adversarial_objective(),
            trains_adversary: variant.has_adversary(),
            two_stage: variant != Variant::Cnn,
        }
    }
}

// Independent generator streams so that adding or removing a network does not
// shift the initialization of the others.
const ENCODER_STREAM: u64 = 1;
const DECODER_STREAM: u64 = 2;
const ADVERSARY_STREAM: u64 = 3;
const CLASSIFIER_STREAM: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Encoder φ, decoder θ, adversary Ψ and classifier Ω for one variant.
#[derive(Clone, Debug)]
pub struct ParameterStore<F> {
    pub config: ModelConfig,
    pub encoder: Encoder<F>,
    pub decoder: Option<Decoder<F>>,
    pub adversary: Option<Mlp<F>>,
    pub classifier: Mlp<F>,
}

impl<F: Scalar> ParameterStore<F> {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.init_seed;
        let v = config.variant;
        Ok(Self {
            config: *config,
            encoder: Encoder::new(config, &mut stream(seed, ENCODER_STREAM)),
            decoder: v.has_decoder().then(|| Decoder::new(config, &mut stream(seed, DECODER_STREAM))),
            adversary: v
                .has_adversary()
                .then(|| Mlp::new(config.latent_dim, config.hidden, config.subjects, &mut stream(seed, ADVERSARY_STREAM))),
            classifier: Mlp::new(config.latent_dim, config.hidden, config.classes, &mut stream(seed, CLASSIFIER_STREAM)),
        })
    }

    pub fn decoder(&self) -> Result<&Decoder<F>> {
        self.decoder.as_ref().ok_or_else(|| ModelError::Variant(format!("{} has no decoder", self.config.variant)))
    }

    pub fn adversary(&self) -> Result<&Mlp<F>> {
        self.adversary.as_ref().ok_or_else(|| ModelError::Variant(format!("{} has no adversary", self.config.variant)))
    }

    /// Trainable tensors, named `network.tensor`.
    pub fn named_parameters(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = prefixed("encoder", self.encoder.params.tensors());
        if let Some(d) = &self.decoder {
            out.extend(prefixed("decoder", d.params.tensors()));
        }
        if let Some(a) = &self.adversary {
            out.extend(prefixed("adversary", a.params.tensors()));
        }
        out.extend(prefixed("classifier", self.classifier.params.tensors()));
        out
    }

    /// Batch-norm running statistics.
    pub fn named_buffers(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        push_stats(&mut out, "encoder.bn1", &self.encoder.bn1);
        push_stats(&mut out, "encoder.bn2", &self.encoder.bn2);
        if let Some(d) = &self.decoder {
            push_stats(&mut out, "decoder.bn", &d.bn);
            if let Some(s) = &d.final_stats {
                push_stats(&mut out, "decoder.final_bn", s);
            }
        }
        out
    }

    /// Parameters followed by buffers, mutable, in the order of
    /// [`Self::named_parameters`] then [`Self::named_buffers`].
    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = prefixed_mut("encoder", self.encoder.params.tensors_mut());
        let mut buffers = Vec::new();
        push_stats_mut(&mut buffers, "encoder.bn1", &mut self.encoder.bn1);
        push_stats_mut(&mut buffers, "encoder.bn2", &mut self.encoder.bn2);
        if let Some(d) = &mut self.decoder {
            out.extend(prefixed_mut("decoder", d.params.tensors_mut()));
            push_stats_mut(&mut buffers, "decoder.bn", &mut d.bn);
            if let Some(s) = &mut d.final_stats {
                push_stats_mut(&mut buffers, "decoder.final_bn", s);
            }
        }
        if let Some(a) = &mut self.adversary {
            out.extend(prefixed_mut("adversary", a.params.tensors_mut()));
        }
        out.extend(prefixed_mut("classifier", self.classifier.params.tensors_mut()));
        out.extend(buffers);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }
}

fn prefixed<'a, F>(net: &str, t: Vec<(&'static str, ArrayViewD<'a, F>)>) -> Vec<(String, ArrayViewD<'a, F>)> {
    t.into_iter().map(|(n, v)| (format!("{net}.{n}"), v)).collect()
}

fn prefixed_mut<'a, F>(net: &str, t: Vec<(&'static str, ArrayViewMutD<'a, F>)>) -> Vec<(String, ArrayViewMutD<'a, F>)> {
    t.into_iter().map(|(n, v)| (format!("{net}.{n}"), v)).collect()
}

fn push_stats<'a, F: Scalar>(out: &mut Vec<(String, ArrayViewD<'a, F>)>, name: &str, s: &'a RunningStats<F>) {
    out.push((format!("{name}.running_mean"), s.mean.view().into_dyn()));
    out.push((format!("{name}.running_var"), s.var.view().into_dyn()));
}

fn push_stats_mut<'a, F: Scalar>(out: &mut Vec<(String, ArrayViewMutD<'a, F>)>, name: &str, s: &'a mut RunningStats<F>) {
    out.push((format!("{name}.running_mean"), s.mean.view_mut().into_dyn()));
    out.push((format!("{name}.running_var"), s.var.view_mut().into_dyn()));
}

/// Allocates the networks a variant needs together with its training recipe.
pub fn build_variant<F: Scalar>(config: &ModelConfig) -> Result<(ParameterStore<F>, Recipe)> {
    Ok((ParameterStore::new(config)?, Recipe::for_variant(config.variant)))
}
