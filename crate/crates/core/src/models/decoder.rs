//! Deterministic deconvolutional decoder `p_θ(X|z, s)`.

use ndarray::{concatenate, s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::params::{bn_relu_dropout, bn_relu_dropout_backward, fan_in_uniform, ParamSet};
use super::{ModelConfig, ModelError, Result};
use crate::diffcore::activation::relu_inplace;
use crate::diffcore::conv::{conv2d_transpose, conv2d_transpose_backward, conv2d_transpose_grouped, conv2d_transpose_grouped_backward};
use crate::diffcore::{dense, dense_backward, relu_backward, BatchNormCache, Mode, Padding, RunningStats, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<F> {
    /// `filters·T × (d_z [+ S])`.
    pub fc_weight: Array2<F>,
    pub fc_bias: Array1<F>,
    /// Forward-orientation kernels `filters × (filters / groups) × C × 1`,
    /// applied transposed (`filters × 1 × T` → `filters × C × T`).
    pub spatial: Array4<F>,
    pub bn_gamma: Array1<F>,
    pub bn_beta: Array1<F>,
    /// Forward-orientation kernels `filters × 1 × 1 × W`, applied transposed
    /// (`filters × C × T` → `1 × C × T`).
    pub temporal: Array4<F>,
    /// Scale/shift of the terminal batch norm, present with `faithful_final_layer`.
    pub final_bn: Option<(Array1<F>, Array1<F>)>,
}

impl<F: Scalar> ParamSet<F> for DecoderParams<F> {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, F>)> {
        let mut v = vec![
            ("fc_weight", self.fc_weight.view().into_dyn()),
            ("fc_bias", self.fc_bias.view().into_dyn()),
            ("spatial", self.spatial.view().into_dyn()),
            ("bn_gamma", self.bn_gamma.view().into_dyn()),
            ("bn_beta", self.bn_beta.view().into_dyn()),
            ("temporal", self.temporal.view().into_dyn()),
        ];
        if let Some((g, b)) = &self.final_bn {
            v.push(("final_bn_gamma", g.view().into_dyn()));
            v.push(("final_bn_beta", b.view().into_dyn()));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, F>)> {
        let mut v = vec![
            ("fc_weight", self.fc_weight.view_mut().into_dyn()),
            ("fc_bias", self.fc_bias.view_mut().into_dyn()),
            ("spatial", self.spatial.view_mut().into_dyn()),
            ("bn_gamma", self.bn_gamma.view_mut().into_dyn()),
            ("bn_beta", self.bn_beta.view_mut().into_dyn()),
            ("temporal", self.temporal.view_mut().into_dyn()),
        ];
        if let Some((g, b)) = &mut self.final_bn {
            v.push(("final_bn_gamma", g.view_mut().into_dyn()));
            v.push(("final_bn_beta", b.view_mut().into_dyn()));
        }
        v
    }
}

#[derive(Debug)]
pub struct DecoderCache<F> {
    input: Array2<F>,
    /// Dense output after ReLU, `B × filters·T`.
    a0: Array2<F>,
    bn: BatchNormCache<F>,
    a1: Array4<F>,
    final_bn: Option<(BatchNormCache<F>, Array4<F>)>,
}

#[derive(Clone, Debug)]
pub struct Decoder<F> {
    pub params: DecoderParams<F>,
    pub bn: RunningStats<F>,
    pub final_stats: Option<RunningStats<F>>,
    config: ModelConfig,
}

impl<F: Scalar> Decoder<F> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (f, c, w) = (config.filters, config.channels, config.kernel_width);
        let per_group = f / config.spatial_groups();
        let input = config.decoder_input();
        let flat = config.flat_features();
        // Fan-in of a transposed layer is what feeds one of its outputs.
        let params = DecoderParams {
            fc_weight: fan_in_uniform(rng, (flat, input), input),
            fc_bias: Array1::zeros(flat),
            spatial: fan_in_uniform(rng, (f, per_group, c, 1), per_group),
            bn_gamma: Array1::ones(f),
            bn_beta: Array1::zeros(f),
            temporal: fan_in_uniform(rng, (f, 1, 1, w), f * w),
            final_bn: config.faithful_final_layer.then(|| (Array1::ones(1), Array1::zeros(1))),
        };
        Self {
            params,
            bn: RunningStats::new(f),
            final_stats: config.faithful_final_layer.then(|| RunningStats::new(1)),
            config: *config,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn input_matrix(&self, z: ArrayView2<F>, s: Option<ArrayView2<F>>) -> Result<Array2<F>> {
        let cfg = &self.config;
        if z.ncols() != cfg.latent_dim {
            return Err(ModelError::Shape(format!("decoder expects z of width {}, got {}", cfg.latent_dim, z.ncols())));
        }
        match (cfg.variant.conditioned(), s) {
            (true, Some(s)) => {
                if s.dim() != (z.nrows(), cfg.subjects) {
                    return Err(ModelError::Shape(format!("subject one-hot {:?}, expected ({}, {})", s.dim(), z.nrows(), cfg.subjects)));
                }
                Ok(concatenate(Axis(1), &[z, s]).expect("row counts checked"))
            }
            (false, None) => Ok(z.to_owned()),
            (true, None) => Err(ModelError::Variant(format!("{} decoder needs the subject one-hot", cfg.variant))),
            (false, Some(_)) => Err(ModelError::Variant(format!("{} decoder takes no subject input", cfg.variant))),
        }
    }

    /// `z: B × d_z` (plus `s: B × S` when conditioned) → `X̂: B × C × T`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        z: ArrayView2<F>,
        s: Option<ArrayView2<F>>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array3<F>, Option<DecoderCache<F>>)> {
        let cfg = &self.config;
        let p = &self.params;
        let input = self.input_matrix(z, s)?;
        let b = input.nrows();
        let mut a0 = dense(input.view(), p.fc_weight.view(), p.fc_bias.view())?;
        relu_inplace(&mut a0);
        let a0_maps = a0.view().into_shape_with_order((b, cfg.filters, 1, cfg.samples)).expect("contiguous");
        let h1 = conv2d_transpose_grouped(a0_maps, p.spatial.view(), Padding::NONE, cfg.spatial_groups())?;
        let (a1, bn) = bn_relu_dropout(h1.view(), p.bn_gamma.view(), p.bn_beta.view(), &self.bn, cfg.bn_eps, cfg.dropout, mode, rng)?;
        drop(h1);
        let mut out = conv2d_transpose(a1.view(), p.temporal.view(), Padding::same_width(cfg.kernel_width))?;
        let mut final_cache = None;
        if let (Some((g, beta)), Some(stats)) = (&p.final_bn, &self.final_stats) {
            let (o, c) = bn_relu_dropout(out.view(), g.view(), beta.view(), stats, cfg.bn_eps, cfg.dropout, mode, rng)?;
            out = o;
            final_cache = c;
        }
        let xhat = out.clone().into_shape_with_order((b, cfg.channels, cfg.samples)).expect("contiguous");
        let cache = bn.map(|bn| DecoderCache { input, a0, bn, a1, final_bn: final_cache.map(|c| (c, out)) });
        Ok((xhat, cache))
    }

    pub fn update_running_stats(&mut self, cache: &DecoderCache<F>) {
        let m = self.config.bn_momentum;
        self.bn.update(&cache.bn.stats, m);
        if let (Some(stats), Some((c, _))) = (&mut self.final_stats, &cache.final_bn) {
            stats.update(&c.stats, m);
        }
    }

    /// Returns parameter gradients and the gradient with respect to `z`.
    pub fn backward(&self, cache: &DecoderCache<F>, d_xhat: ArrayView3<F>) -> Result<(DecoderParams<F>, Array2<F>)> {
        let cfg = &self.config;
        let p = &self.params;
        let b = cache.input.nrows();
        if d_xhat.dim() != (b, cfg.channels, cfg.samples) {
            return Err(ModelError::Shape(format!("decoder gradient {:?}", d_xhat.dim())));
        }
        let mut d_out = d_xhat.insert_axis(Axis(1)).as_standard_layout().into_owned();
        let mut final_bn = None;
        if let (Some((c, out)), Some((g, _))) = (&cache.final_bn, &p.final_bn) {
            let gf = bn_relu_dropout_backward(d_out.view(), out.view(), c, g.view(), cfg.dropout)?;
            d_out = gf.input;
            final_bn = Some((gf.gamma, gf.beta));
        }
        let (d_a1, d_temporal) =
            conv2d_transpose_backward(cache.a1.view(), p.temporal.view(), Padding::same_width(cfg.kernel_width), d_out.view())?;
        drop(d_out);
        let g1 = bn_relu_dropout_backward(d_a1.view(), cache.a1.view(), &cache.bn, p.bn_gamma.view(), cfg.dropout)?;
        drop(d_a1);
        let a0_maps = cache.a0.view().into_shape_with_order((b, cfg.filters, 1, cfg.samples)).expect("contiguous");
        let (d_a0, d_spatial) =
            conv2d_transpose_grouped_backward(a0_maps, p.spatial.view(), Padding::NONE, g1.input.view(), cfg.spatial_groups())?;
        let d_a0 = d_a0.into_shape_with_order((b, cfg.flat_features())).expect("contiguous");
        let d_h0 = relu_backward(d_a0.view(), cache.a0.view());
        let gfc = dense_backward(cache.input.view(), p.fc_weight.view(), d_h0.view())?;
        let d_z = gfc.input.slice(s![.., ..cfg.latent_dim]).to_owned();
        let grads = DecoderParams {
            fc_weight: gfc.weight,
            fc_bias: gfc.bias,
            spatial: d_spatial,
            bn_gamma: g1.gamma,
            bn_beta: g1.beta,
            temporal: d_temporal,
            final_bn,
        };
        Ok((grads, d_z))
    }
}
