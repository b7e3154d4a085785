//! Stochastic convolutional encoder `q_φ(z|X)`.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::params::{bn_relu_dropout, bn_relu_dropout_backward, fan_in_uniform, ParamSet};
use super::{ModelConfig, ModelError, Result};
use crate::diffcore::conv::{conv2d, conv2d_backward, conv2d_grouped, conv2d_grouped_backward};
use crate::diffcore::gaussian::{sigma_from_logvar, sigma_from_logvar_backward};
use crate::diffcore::{dense, dense_backward, BatchNormCache, Mode, Padding, RunningStats, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F> {
    /// `filters × 1 × 1 × W`.
    pub temporal: Array4<F>,
    pub bn1_gamma: Array1<F>,
    pub bn1_beta: Array1<F>,
    /// `filters × (filters / groups) × C × 1`.
    pub spatial: Array4<F>,
    pub bn2_gamma: Array1<F>,
    pub bn2_beta: Array1<F>,
    /// `d_z × filters·T`.
    pub mu_weight: Array2<F>,
    pub mu_bias: Array1<F>,
    pub logvar_weight: Array2<F>,
    pub logvar_bias: Array1<F>,
}

impl<F: Scalar> ParamSet<F> for EncoderParams<F> {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, F>)> {
        vec![
            ("temporal", self.temporal.view().into_dyn()),
            ("bn1_gamma", self.bn1_gamma.view().into_dyn()),
            ("bn1_beta", self.bn1_beta.view().into_dyn()),
            ("spatial", self.spatial.view().into_dyn()),
            ("bn2_gamma", self.bn2_gamma.view().into_dyn()),
            ("bn2_beta", self.bn2_beta.view().into_dyn()),
            ("mu_weight", self.mu_weight.view().into_dyn()),
            ("mu_bias", self.mu_bias.view().into_dyn()),
            ("logvar_weight", self.logvar_weight.view().into_dyn()),
            ("logvar_bias", self.logvar_bias.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, F>)> {
        vec![
            ("temporal", self.temporal.view_mut().into_dyn()),
            ("bn1_gamma", self.bn1_gamma.view_mut().into_dyn()),
            ("bn1_beta", self.bn1_beta.view_mut().into_dyn()),
            ("spatial", self.spatial.view_mut().into_dyn()),
            ("bn2_gamma", self.bn2_gamma.view_mut().into_dyn()),
            ("bn2_beta", self.bn2_beta.view_mut().into_dyn()),
            ("mu_weight", self.mu_weight.view_mut().into_dyn()),
            ("mu_bias", self.mu_bias.view_mut().into_dyn()),
            ("logvar_weight", self.logvar_weight.view_mut().into_dyn()),
            ("logvar_bias", self.logvar_bias.view_mut().into_dyn()),
        ]
    }
}

/// Diagonal Gaussian `q(z|X)`; `sigma = exp(½ · clamp(logvar))`.
#[derive(Clone, Debug)]
pub struct GaussianPosterior<F> {
    pub mu: Array2<F>,
    pub logvar: Array2<F>,
    pub sigma: Array2<F>,
}

/// Activations kept from a train-mode forward pass.
#[derive(Debug)]
pub struct EncoderCache<F> {
    input: Array4<F>,
    bn1: BatchNormCache<F>,
    a1: Array4<F>,
    bn2: BatchNormCache<F>,
    a2: Array4<F>,
    logvar: Array2<F>,
    sigma: Array2<F>,
}

impl<F: Scalar> EncoderCache<F> {
    pub fn batch_size(&self) -> usize {
        self.input.dim().0
    }
}

#[derive(Clone, Debug)]
pub struct Encoder<F> {
    pub params: EncoderParams<F>,
    pub bn1: RunningStats<F>,
    pub bn2: RunningStats<F>,
    config: ModelConfig,
}

impl<F: Scalar> Encoder<F> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (f, c, w, dz) = (config.filters, config.channels, config.kernel_width, config.latent_dim);
        let per_group = f / config.spatial_groups();
        let flat = config.flat_features();
        let params = EncoderParams {
            temporal: fan_in_uniform(rng, (f, 1, 1, w), w),
            bn1_gamma: Array1::ones(f),
            bn1_beta: Array1::zeros(f),
            spatial: fan_in_uniform(rng, (f, per_group, c, 1), per_group * c),
            bn2_gamma: Array1::ones(f),
            bn2_beta: Array1::zeros(f),
            mu_weight: fan_in_uniform(rng, (dz, flat), flat),
            mu_bias: Array1::zeros(dz),
            logvar_weight: fan_in_uniform(rng, (dz, flat), flat),
            logvar_bias: Array1::zeros(dz),
        };
        Self { params, bn1: RunningStats::new(f), bn2: RunningStats::new(f), config: *config }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn temporal_padding(&self) -> Padding {
        Padding::same_width(self.config.kernel_width)
    }

    /// `x: B × C × T` → posterior. Train mode returns the cache for
    /// [`Encoder::backward`]; running statistics are left untouched (see
    /// [`Encoder::update_running_stats`]).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView3<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(GaussianPosterior<F>, Option<EncoderCache<F>>)> {
        let cfg = &self.config;
        let (b, c, t) = x.dim();
        if c != cfg.channels || t != cfg.samples {
            return Err(ModelError::Shape(format!("encoder expects B×{}×{}, got {:?}", cfg.channels, cfg.samples, x.dim())));
        }
        let p = &self.params;
        let input = x.insert_axis(Axis(1)).as_standard_layout().into_owned();
        let h1 = conv2d(input.view(), p.temporal.view(), self.temporal_padding())?;
        let (a1, bn1) = bn_relu_dropout(h1.view(), p.bn1_gamma.view(), p.bn1_beta.view(), &self.bn1, cfg.bn_eps, cfg.dropout, mode, rng)?;
        drop(h1);
        let h2 = conv2d_grouped(a1.view(), p.spatial.view(), Padding::NONE, cfg.spatial_groups())?;
        let (a2, bn2) = bn_relu_dropout(h2.view(), p.bn2_gamma.view(), p.bn2_beta.view(), &self.bn2, cfg.bn_eps, cfg.dropout, mode, rng)?;
        let flat = a2.view().into_shape_with_order((b, cfg.flat_features())).expect("contiguous");
        let mu = dense(flat, p.mu_weight.view(), p.mu_bias.view())?;
        let logvar = dense(flat, p.logvar_weight.view(), p.logvar_bias.view())?;
        let sigma = sigma_from_logvar(logvar.view(), cfg.logvar_limit);
        let cache = match (bn1, bn2) {
            (Some(bn1), Some(bn2)) => {
                Some(EncoderCache { input, bn1, a1, bn2, a2, logvar: logvar.clone(), sigma: sigma.clone() })
            }
            _ => None,
        };
        Ok((GaussianPosterior { mu, logvar, sigma }, cache))
    }

    /// Folds the batch statistics of a train-mode pass into the running averages.
    pub fn update_running_stats(&mut self, cache: &EncoderCache<F>) {
        self.bn1.update(&cache.bn1.stats, self.config.bn_momentum);
        self.bn2.update(&cache.bn2.stats, self.config.bn_momentum);
    }

    /// Parameter gradients from upstream gradients on `μ` and, optionally, `σ`.
    pub fn backward(&self, cache: &EncoderCache<F>, d_mu: ArrayView2<F>, d_sigma: Option<ArrayView2<F>>) -> Result<EncoderParams<F>> {
        let cfg = &self.config;
        let p = &self.params;
        let b = cache.batch_size();
        let flat = cache.a2.view().into_shape_with_order((b, cfg.flat_features())).expect("contiguous");
        let gmu = dense_backward(flat, p.mu_weight.view(), d_mu)?;
        let mut d_flat = gmu.input;
        let (logvar_weight, logvar_bias) = match d_sigma {
            Some(ds) => {
                let d_lv = sigma_from_logvar_backward(cache.logvar.view(), cache.sigma.view(), ds, cfg.logvar_limit);
                let glv = dense_backward(flat, p.logvar_weight.view(), d_lv.view())?;
                d_flat.zip_mut_with(&glv.input, |a, &b| *a = *a + b);
                (glv.weight, glv.bias)
            }
            None => (Array2::zeros(p.logvar_weight.raw_dim()), Array1::zeros(p.logvar_bias.raw_dim())),
        };
        let d_a2 = d_flat.into_shape_with_order(cache.a2.raw_dim()).expect("contiguous");
        let g2 = bn_relu_dropout_backward(d_a2.view(), cache.a2.view(), &cache.bn2, p.bn2_gamma.view(), cfg.dropout)?;
        let gs = conv2d_grouped_backward(cache.a1.view(), p.spatial.view(), Padding::NONE, g2.input.view(), true, cfg.spatial_groups())?;
        let d_a1 = gs.input.expect("input gradient requested");
        let g1 = bn_relu_dropout_backward(d_a1.view(), cache.a1.view(), &cache.bn1, p.bn1_gamma.view(), cfg.dropout)?;
        drop(d_a1);
        let gt = conv2d_backward(cache.input.view(), p.temporal.view(), self.temporal_padding(), g1.input.view(), false)?;
        Ok(EncoderParams {
            temporal: gt.kernels,
            bn1_gamma: g1.gamma,
            bn1_beta: g1.beta,
            spatial: gs.kernels,
            bn2_gamma: g2.gamma,
            bn2_beta: g2.beta,
            mu_weight: gmu.weight,
            mu_bias: gmu.bias,
            logvar_weight,
            logvar_bias,
        })
    }
}
