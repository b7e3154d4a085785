//! Stage 1 alternating generator/adversary updates, stage 2 frozen-encoder
//! classifier training, and the end-to-end CNN baseline.

pub mod checkpoint;
pub mod history;

use ndarray::{Array2, Array3, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::TrialSet;
use crate::diffcore::gaussian::standard_normal;
use crate::diffcore::softmax::one_hot;
use crate::diffcore::{argmax_rows, softmax_xent_backward, Adam, DiffError, Mode, Scalar};
use crate::evaluation::{self, EvalError, EvalOptions};
use crate::models::{
    DecoderCache, DecoderParams, EncoderCache, EncoderParams, ModelError, ParamSet, ParameterStore, Recipe, Variant,
};
use crate::objectives::{generator_backward, loss_acvae, loss_adversary, loss_classifier, loss_cvae, LossBreakdown};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry, CHECKPOINT_FORMAT};
pub use history::{EpochRecord, IterationRecord, Stage, TrainHistory};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("data error: {0}")]
    Data(String),
    #[error("state error: {0}")]
    State(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<DiffError> for TrainError {
    fn from(e: DiffError) -> Self {
        Self::Model(e.into())
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// What the stage-2 classifier sees for each trial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentInput {
    /// A fresh posterior sample per batch.
    #[default]
    Sample,
    /// The posterior mean.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Stage-1 epochs, also the CNN baseline budget.
    pub epochs: usize,
    pub classifier_epochs: usize,
    pub classifier_input: LatentInput,
    pub seed: u64,
    /// Validation accuracy every this many epochs (and after the last one);
    /// 0 turns validation monitoring off.
    pub monitor_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 100, epochs: 750, classifier_epochs: 50, classifier_input: LatentInput::Sample, seed: 0, monitor_every: 1 }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()).into());
        }
        Ok(())
    }

    fn monitors(&self, epoch: usize, last: usize) -> bool {
        self.monitor_every > 0 && (epoch.is_multiple_of(self.monitor_every) || epoch == last)
    }
}

// Stage-specific generator streams derived from the training seed.
const STAGE1_STREAM: u64 = 11;
const STAGE2_STREAM: u64 = 12;
const END_TO_END_STREAM: u64 = 13;

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded permutation of `0..n` cut into batches; the last batch may be short.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size.max(1))
}

/// One minibatch in network precision.
#[derive(Clone, Debug)]
pub struct Batch<F> {
    pub x: Array3<F>,
    pub labels: Vec<usize>,
    pub subjects: Vec<usize>,
    /// One-hot subjects, `B × S`; empty (`B × 0`) when subjects are not needed.
    pub s: Array2<F>,
}

impl<F: Scalar> Batch<F> {
    /// Gathers `indices` of `set`. With `subjects = Some(S)` every trial must
    /// belong to one of the `S` pool subjects.
    pub fn gather(set: &TrialSet, indices: &[usize], subjects: Option<usize>) -> Result<Self> {
        let x = set.x.select(Axis(0), indices).mapv(|v| F::lit(v as f64));
        let labels = indices.iter().map(|&i| set.labels[i].index()).collect();
        let (subjects, s) = match subjects {
            Some(count) => {
                let idx = indices
                    .iter()
                    .map(|&i| match set.subject_index[i] {
                        Some(k) if k < count => Ok(k),
                        _ => Err(TrainError::Data(format!("trial {i} ({}) is not a pool subject", set.subject_ids[i]))),
                    })
                    .collect::<Result<Vec<usize>>>()?;
                let s = one_hot(&idx, count);
                (idx, s)
            }
            None => (Vec::new(), Array2::zeros((indices.len(), 0))),
        };
        Ok(Self { x, labels, subjects, s })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len().max(1) as f64
}

fn chain<'a, F>(a: Vec<(&'static str, ArrayViewD<'a, F>)>, b: Vec<(&'static str, ArrayViewD<'a, F>)>) -> Vec<ArrayViewD<'a, F>> {
    a.into_iter().chain(b).map(|(_, t)| t).collect()
}

fn chain_mut<'a, F>(
    a: Vec<(&'static str, ArrayViewMutD<'a, F>)>,
    b: Vec<(&'static str, ArrayViewMutD<'a, F>)>,
) -> Vec<ArrayViewMutD<'a, F>> {
    a.into_iter().chain(b).map(|(_, t)| t).collect()
}

/// Everything one generator pass produces: the objective, gradients for
/// encoder and decoder, and the caches whose batch statistics feed the
/// running averages.
pub struct GeneratorPass<F> {
    pub loss: LossBreakdown,
    pub encoder: EncoderParams<F>,
    pub decoder: DecoderParams<F>,
    pub encoder_cache: EncoderCache<F>,
    pub decoder_cache: DecoderCache<F>,
}

/// Forward and backward of the variant objective with respect to (θ, φ).
/// The adversary is read, never written. `eps` overrides the
/// reparameterization noise; otherwise it is drawn from `rng` between the
/// encoder and decoder passes.
pub fn generator_gradients<F: Scalar, R: Rng + ?Sized>(
    store: &ParameterStore<F>,
    batch: &Batch<F>,
    eps: Option<ArrayView2<F>>,
    rng: &mut R,
) -> Result<GeneratorPass<F>> {
    let cfg = &store.config;
    let recipe = Recipe::for_variant(cfg.variant);
    let decoder = store.decoder()?;
    let (post, enc_cache) = store.encoder.forward(batch.x.view(), Mode::Train, rng)?;
    let enc_cache = enc_cache.expect("train mode caches");
    let eps = match eps {
        Some(e) => e.to_owned(),
        None => standard_normal(rng, post.mu.dim()),
    };
    let z = &post.mu + &(&post.sigma * &eps);
    let s = recipe.decoder_conditioned.then(|| batch.s.view());
    let (xhat, dec_cache) = decoder.forward(z.view(), s, Mode::Train, rng)?;
    let dec_cache = dec_cache.expect("train mode caches");

    let adv = if recipe.adversarial_term {
        let (logits, cache) = store.adversary()?.forward(z.view())?;
        Some((logits, cache))
    } else {
        None
    };
    let (x, mu, sigma) = (batch.x.view(), post.mu.view(), post.sigma.view());
    let loss = match &adv {
        Some((logits, _)) => loss_acvae(x, xhat.view(), mu, sigma, logits.view(), batch.s.view(), cfg.lambda, cfg.recon_mode)?,
        None => loss_cvae(x, xhat.view(), mu, sigma, cfg.recon_mode)?,
    };
    let grads = generator_backward(
        x,
        xhat.view(),
        mu,
        sigma,
        adv.as_ref().map(|(l, _)| (l.view(), batch.s.view())),
        cfg.lambda,
        cfg.recon_mode,
    )?;
    drop(xhat);
    let (dec_grads, mut d_z) = decoder.backward(&dec_cache, grads.xhat.view())?;
    if let (Some(d_logits), Some((_, cache))) = (&grads.adv_logits, &adv) {
        let (_, d_z_adv) = store.adversary()?.backward(cache, d_logits.view())?;
        d_z.zip_mut_with(&d_z_adv, |a, &b| *a = *a + b);
    }
    let mut d_mu = grads.mu;
    d_mu.zip_mut_with(&d_z, |a, &b| *a = *a + b);
    let mut d_sigma = grads.sigma;
    ndarray::Zip::from(&mut d_sigma).and(&d_z).and(&eps).for_each(|a, &g, &e| *a = *a + g * e);
    let enc_grads = store.encoder.backward(&enc_cache, d_mu.view(), Some(d_sigma.view()))?;
    Ok(GeneratorPass { loss, encoder: enc_grads, decoder: dec_grads, encoder_cache: enc_cache, decoder_cache: dec_cache })
}

/// Step (a): one optimizer step on (θ, φ) with Ψ frozen. Batch-norm running
/// statistics advance here and only here.
pub fn generator_step<F: Scalar, R: Rng + ?Sized>(
    store: &mut ParameterStore<F>,
    optimizer: &mut Adam<F>,
    batch: &Batch<F>,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let pass = generator_gradients(store, batch, None, rng)?;
    let decoder = store.decoder.as_mut().ok_or_else(|| ModelError::Variant("no decoder".into()))?;
    store.encoder.update_running_stats(&pass.encoder_cache);
    decoder.update_running_stats(&pass.decoder_cache);
    let GeneratorPass { loss, encoder, decoder: dec_grads, encoder_cache, decoder_cache } = pass;
    drop((encoder_cache, decoder_cache));
    optimizer.step(
        chain_mut(store.encoder.params.tensors_mut(), decoder.params.tensors_mut()),
        chain(encoder.tensors(), dec_grads.tensors()),
    )?;
    Ok(loss)
}

/// Step (b): re-encode the batch with fresh noise and update Ψ on `L_A` with
/// (θ, φ) frozen. Returns the adversary loss and batch accuracy.
pub fn adversary_step<F: Scalar, R: Rng + ?Sized>(
    store: &mut ParameterStore<F>,
    optimizer: &mut Adam<F>,
    batch: &Batch<F>,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let (post, cache) = store.encoder.forward(batch.x.view(), Mode::Train, rng)?;
    drop(cache);
    let eps: Array2<F> = standard_normal(rng, post.mu.dim());
    let z = &post.mu + &(&post.sigma * &eps);
    let adversary = store.adversary.as_mut().ok_or_else(|| ModelError::Variant("no adversary".into()))?;
    let (logits, cache) = adversary.forward(z.view())?;
    let loss = loss_adversary(logits.view(), batch.s.view())?;
    let acc = accuracy(&argmax_rows(logits.view()), &batch.subjects);
    let d_logits = softmax_xent_backward(logits.view(), batch.s.view())?;
    let (grads, _) = adversary.backward(&cache, d_logits.view())?;
    optimizer.step(
        adversary.params.tensors_mut().into_iter().map(|(_, t)| t).collect(),
        grads.tensors().into_iter().map(|(_, t)| t).collect(),
    )?;
    Ok((loss, acc))
}

fn require_data(set: &TrialSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(TrainError::Data(format!("{what} set is empty")));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn eval_opts(cfg: &TrainConfig) -> EvalOptions {
    EvalOptions { batch_size: cfg.batch_size, ..EvalOptions::default() }
}

/// Stage 1 for ACVAE, CVAE and AVAE.
pub fn train_representation<F: Scalar>(
    store: &mut ParameterStore<F>,
    train: &TrialSet,
    validation: Option<&TrialSet>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.check()?;
    let variant = store.config.variant;
    if variant == Variant::Cnn {
        return Err(ModelError::Variant("the CNN baseline has no representation stage".into()).into());
    }
    require_data(train, "training")?;
    let subjects = store.config.subjects;
    let mut rng = stage_rng(cfg.seed, STAGE1_STREAM);
    let mut gen_opt = Adam::new(store.config.optimizer);
    let mut adv_opt = Adam::new(store.config.optimizer);
    let mut history = TrainHistory::new(Stage::Representation, variant, cfg, store.config.init_seed, train.len());
    for epoch in 1..=cfg.epochs {
        let start = history.iterations.len();
        let mut correct = 0.0;
        for idx in epoch_batches(train.len(), cfg.batch_size, &mut rng) {
            let batch = Batch::<F>::gather(train, &idx, Some(subjects))?;
            let loss = generator_step(store, &mut gen_opt, &batch, &mut rng)?;
            let (adv_loss, adv_acc) = adversary_step(store, &mut adv_opt, &batch, &mut rng)?;
            if !loss.total.is_finite() {
                return Err(TrainError::State(format!("non-finite generator loss at epoch {epoch}")));
            }
            correct += adv_acc * batch.len() as f64;
            history.iterations.push(IterationRecord::generator(history.iterations.len() + 1, epoch, batch.len(), loss, adv_loss));
        }
        let recs = &history.iterations[start..];
        let mut rec = EpochRecord::new(epoch, history.iterations.len());
        rec.mean_total = mean(recs.iter().filter_map(|r| r.total));
        rec.mean_adversary_loss = mean(recs.iter().filter_map(|r| r.adversary_loss));
        rec.adversary_train_accuracy = Some(correct / train.len() as f64);
        if let (Some(val), true) = (validation, cfg.monitors(epoch, cfg.epochs)) {
            rec.adversary_validation_accuracy = Some(evaluation::adversary_accuracy(store, val, &eval_opts(cfg))?);
        }
        log::info!("{}", rec.describe(variant));
        history.epochs.push(rec);
    }
    Ok(history)
}

/// Stage 2: Ω on latent codes of the frozen, eval-mode encoder.
pub fn train_classifier<F: Scalar>(
    store: &mut ParameterStore<F>,
    train: &TrialSet,
    validation: Option<&TrialSet>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.check()?;
    require_data(train, "training")?;
    if !store.encoder.params.is_finite() {
        return Err(TrainError::State("encoder parameters are missing or not finite".into()));
    }
    let variant = store.config.variant;
    let mut rng = stage_rng(cfg.seed, STAGE2_STREAM);
    let mut opt = Adam::new(store.config.optimizer);
    let mut history = TrainHistory::new(Stage::Classifier, variant, cfg, store.config.init_seed, train.len());
    let post = evaluation::encode_posterior(&store.encoder, train, cfg.batch_size)?;
    let labels = train.label_indices();
    for epoch in 1..=cfg.classifier_epochs {
        let mut correct = 0.0;
        let start = history.iterations.len();
        for idx in epoch_batches(train.len(), cfg.batch_size, &mut rng) {
            let mu = post.mu.select(Axis(0), &idx);
            let z = match cfg.classifier_input {
                LatentInput::Mean => mu,
                LatentInput::Sample => {
                    let eps: Array2<F> = standard_normal(&mut rng, mu.dim());
                    &mu + &(&post.sigma.select(Axis(0), &idx) * &eps)
                }
            };
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let onehot = one_hot::<F>(&y, store.config.classes);
            let (logits, cache) = store.classifier.forward(z.view())?;
            let loss = loss_classifier(logits.view(), onehot.view())?;
            correct += accuracy(&argmax_rows(logits.view()), &y) * y.len() as f64;
            let d_logits = softmax_xent_backward(logits.view(), onehot.view())?;
            let (grads, _) = store.classifier.backward(&cache, d_logits.view())?;
            opt.step(
                store.classifier.params.tensors_mut().into_iter().map(|(_, t)| t).collect(),
                grads.tensors().into_iter().map(|(_, t)| t).collect(),
            )?;
            history.iterations.push(IterationRecord::classifier(history.iterations.len() + 1, epoch, y.len(), loss));
        }
        let mut rec = EpochRecord::new(epoch, history.iterations.len());
        rec.mean_classifier_loss = mean(history.iterations[start..].iter().filter_map(|r| r.classifier_loss));
        rec.classifier_train_accuracy = Some(correct / train.len() as f64);
        if let (Some(val), true) = (validation, cfg.monitors(epoch, cfg.classifier_epochs)) {
            rec.classifier_validation_accuracy = Some(evaluation::classifier_accuracy(store, val, &eval_opts(cfg))?);
        }
        log::info!("{}", rec.describe(variant));
        history.epochs.push(rec);
    }
    Ok(history)
}

/// End-to-end CNN: classifier on the μ head, one optimizer over both.
pub fn train_cnn_baseline<F: Scalar>(
    store: &mut ParameterStore<F>,
    train: &TrialSet,
    validation: Option<&TrialSet>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.check()?;
    let variant = store.config.variant;
    if variant != Variant::Cnn {
        return Err(ModelError::Variant(format!("{variant} is not trained end-to-end")).into());
    }
    require_data(train, "training")?;
    let mut rng = stage_rng(cfg.seed, END_TO_END_STREAM);
    let mut opt = Adam::new(store.config.optimizer);
    let mut history = TrainHistory::new(Stage::EndToEnd, variant, cfg, store.config.init_seed, train.len());
    for epoch in 1..=cfg.epochs {
        let mut correct = 0.0;
        let start = history.iterations.len();
        for idx in epoch_batches(train.len(), cfg.batch_size, &mut rng) {
            let batch = Batch::<F>::gather(train, &idx, None)?;
            let onehot = one_hot::<F>(&batch.labels, store.config.classes);
            let (post, cache) = store.encoder.forward(batch.x.view(), Mode::Train, &mut rng)?;
            let cache = cache.expect("train mode caches");
            let (logits, cls_cache) = store.classifier.forward(post.mu.view())?;
            let loss = loss_classifier(logits.view(), onehot.view())?;
            correct += accuracy(&argmax_rows(logits.view()), &batch.labels) * batch.len() as f64;
            let d_logits = softmax_xent_backward(logits.view(), onehot.view())?;
            let (cls_grads, d_mu) = store.classifier.backward(&cls_cache, d_logits.view())?;
            let enc_grads = store.encoder.backward(&cache, d_mu.view(), None)?;
            store.encoder.update_running_stats(&cache);
            drop(cache);
            opt.step(
                chain_mut(store.encoder.params.tensors_mut(), store.classifier.params.tensors_mut()),
                chain(enc_grads.tensors(), cls_grads.tensors()),
            )?;
            if !loss.is_finite() {
                return Err(TrainError::State(format!("non-finite classifier loss at epoch {epoch}")));
            }
            history.iterations.push(IterationRecord::classifier(history.iterations.len() + 1, epoch, batch.len(), loss));
        }
        let mut rec = EpochRecord::new(epoch, history.iterations.len());
        rec.mean_classifier_loss = mean(history.iterations[start..].iter().filter_map(|r| r.classifier_loss));
        rec.classifier_train_accuracy = Some(correct / train.len() as f64);
        if let (Some(val), true) = (validation, cfg.monitors(epoch, cfg.epochs)) {
            rec.classifier_validation_accuracy = Some(evaluation::classifier_accuracy(store, val, &eval_opts(cfg))?);
        }
        log::info!("{}", rec.describe(variant));
        history.epochs.push(rec);
    }
    Ok(history)
}
