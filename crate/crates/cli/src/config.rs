//! Flat JSON experiment configuration with `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use acvae_core::dataio::NormMode;
use acvae_core::diffcore::AdamConfig;
use acvae_core::evaluation::{EvalOptions, LatentMode};
use acvae_core::models::{ModelConfig, ReconMode, SpatialConvMode, Variant};
use acvae_core::training::{LatentInput, TrainConfig};
use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::UsageError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalLatent {
    #[default]
    Mean,
    Sampled,
}

/// Every key of the experiment file. Unknown keys are rejected and every
/// missing key takes its default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub split_seed: u64,
    pub norm_mode: NormMode,
    /// Kept-subject count `prepare` insists on; `null` accepts any.
    pub expected_subjects: Option<usize>,
    /// Restrict training to the first N pool subjects (all when `null`).
    pub pool_subjects: Option<usize>,
    /// Restrict transfer evaluation to the first N held-out subjects.
    pub heldout_subjects: Option<usize>,

    pub variant: Variant,
    pub lambda: f64,
    pub latent_dim: usize,
    pub kernel_width: usize,
    pub filters: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub faithful_final_layer: bool,
    pub spatial_conv_mode: SpatialConvMode,
    pub recon_mode: ReconMode,
    pub logvar_limit: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub init_seed: u64,

    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,

    pub batch_size: usize,
    pub epochs: usize,
    pub classifier_epochs: usize,
    pub classifier_input: LatentInput,
    pub train_seed: u64,
    pub monitor_every: usize,

    pub eval_latent: EvalLatent,
    pub eval_draws: usize,
    pub eval_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let o = AdamConfig::default();
        let t = TrainConfig::default();
        Self {
            corpus_dir: PathBuf::from("data/eegmmidb"),
            cache_dir: PathBuf::from("cache"),
            output_dir: PathBuf::from("runs"),
            split_seed: 0,
            norm_mode: NormMode::PerChannel,
            expected_subjects: Some(103),
            pool_subjects: None,
            heldout_subjects: None,
            variant: m.variant,
            lambda: m.lambda,
            latent_dim: m.latent_dim,
            kernel_width: m.kernel_width,
            filters: m.filters,
            hidden: m.hidden,
            dropout: m.dropout,
            faithful_final_layer: m.faithful_final_layer,
            spatial_conv_mode: m.spatial_conv_mode,
            recon_mode: m.recon_mode,
            logvar_limit: m.logvar_limit,
            bn_momentum: m.bn_momentum,
            bn_eps: m.bn_eps,
            init_seed: m.init_seed,
            learning_rate: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            adam_epsilon: o.epsilon,
            batch_size: t.batch_size,
            epochs: t.epochs,
            classifier_epochs: t.classifier_epochs,
            classifier_input: t.classifier_input,
            train_seed: t.seed,
            monitor_every: t.monitor_every,
            eval_latent: EvalLatent::Mean,
            eval_draws: 10,
            eval_seed: 0,
        }
    }
}

/// Keys that legitimately differ between runs being compared.
pub const RUN_KEYS: [&str; 5] = ["variant", "init_seed", "train_seed", "split_seed", "output_dir"];

impl ExperimentConfig {
    /// Defaults, then the file, then `--smoke`, then each override in order.
    pub fn resolve(file: Option<&Path>, smoke: bool, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let raw = fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
            let doc: Value = serde_json::from_slice(&raw).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
            merge(&mut value, doc)?;
        }
        if smoke {
            merge(&mut value, serde_json::to_value(SmokePreset::default())?)?;
        }
        for o in overrides {
            let (key, v) = parse_override(o)?;
            merge(&mut value, Value::Object([(key, v)].into_iter().collect()))?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
        cfg.model_config(90).validate().map_err(|e| UsageError(e.to_string()))?;
        if cfg.batch_size == 0 {
            return Err(UsageError("batch_size must be positive".into()).into());
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_slice(&raw).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }

    /// Network configuration for a training pool of `subjects` subjects.
    pub fn model_config(&self, subjects: usize) -> ModelConfig {
        ModelConfig {
            subjects,
            lambda: self.lambda,
            latent_dim: self.latent_dim,
            kernel_width: self.kernel_width,
            filters: self.filters,
            hidden: self.hidden,
            dropout: self.dropout,
            variant: self.variant,
            faithful_final_layer: self.faithful_final_layer,
            spatial_conv_mode: self.spatial_conv_mode,
            recon_mode: self.recon_mode,
            logvar_limit: self.logvar_limit,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
            init_seed: self.init_seed,
            optimizer: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.adam_epsilon,
            },
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            classifier_epochs: self.classifier_epochs,
            classifier_input: self.classifier_input,
            seed: self.train_seed,
            monitor_every: self.monitor_every,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        let latent = match self.eval_latent {
            EvalLatent::Mean => LatentMode::Mean,
            EvalLatent::Sampled => LatentMode::Sampled { draws: self.eval_draws, seed: self.eval_seed },
        };
        EvalOptions { latent, batch_size: self.batch_size }
    }

    /// Default run directory name, e.g. `acvae-s0-i0`.
    pub fn run_name(&self) -> String {
        format!("{}-s{}-i{}", self.variant.as_str().to_lowercase(), self.train_seed, self.init_seed)
    }
}

#[derive(Serialize)]
struct SmokePreset {
    pool_subjects: usize,
    heldout_subjects: usize,
    epochs: usize,
    classifier_epochs: usize,
}

impl Default for SmokePreset {
    fn default() -> Self {
        Self { pool_subjects: 10, heldout_subjects: 3, epochs: 10, classifier_epochs: 5 }
    }
}

fn merge(base: &mut Value, doc: Value) -> Result<()> {
    let (Value::Object(base), Value::Object(doc)) = (base, doc) else {
        return Err(UsageError("configuration must be a JSON object".into()).into());
    };
    for (k, v) in doc {
        if !base.contains_key(&k) {
            return Err(UsageError(format!("unknown configuration key `{k}`")).into());
        }
        base.insert(k, v);
    }
    Ok(())
}

/// `key=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text.split_once('=').ok_or_else(|| UsageError(format!("override `{text}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(anyhow!(UsageError(format!("override `{text}` has an empty key"))));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Keys whose values differ between two configurations, ignoring [`RUN_KEYS`].
pub fn conflicting_keys(a: &ExperimentConfig, b: &ExperimentConfig) -> Vec<String> {
    let (Ok(Value::Object(a)), Ok(Value::Object(b))) = (serde_json::to_value(a), serde_json::to_value(b)) else {
        return Vec::new();
    };
    a.iter().filter(|(k, v)| !RUN_KEYS.contains(&k.as_str()) && b.get(*k) != Some(*v)).map(|(k, _)| k.clone()).collect()
}
