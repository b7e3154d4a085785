use ndarray::{Array, Array4, ArrayView1, ArrayView4, ArrayViewD, ArrayViewMutD, Dimension, ShapeBuilder};
use rand::Rng;

use crate::diffcore::activation::{relu_dropout_inplace, relu_inplace};
use crate::diffcore::batchnorm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BatchNormGrads};
use crate::diffcore::{relu_dropout_backward, BatchNormCache, Mode, Result, RunningStats, Scalar};

/// A fixed, ordered collection of named tensors. The same type holds
/// parameters and their gradients.
pub trait ParamSet<F: Scalar>: Clone {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, F>)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, F>)>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(F::zero());
        }
        z
    }

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Largest absolute entry over all tensors; handy for NaN/blow-up checks.
    fn max_abs(&self) -> F {
        let mut m = F::zero();
        for (_, t) in self.tensors() {
            m = t.iter().fold(m, |m, v| m.max(v.abs()));
        }
        m
    }

    /// All entries in tensor order, as `f64`.
    fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().map(|v| v.to_f64().unwrap()).collect::<Vec<_>>()).collect()
    }

    /// Inverse of [`ParamSet::to_flat`]; `values` must hold exactly
    /// [`ParamSet::parameter_count`] entries.
    fn assign_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.parameter_count(), "flat parameter length");
        let mut it = values.iter();
        for (_, mut t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = F::lit(*it.next().unwrap()));
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Uniform `[-1/√fan_in, 1/√fan_in]` initialization.
pub fn fan_in_uniform<F, Sh, R>(rng: &mut R, shape: Sh, fan_in: usize) -> Array<F, Sh::Dim>
where
    F: Scalar,
    Sh: ShapeBuilder,
    Sh::Dim: Dimension,
    R: Rng + ?Sized,
{
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array::from_shape_simple_fn(shape, || F::lit(rng.random_range(-bound..=bound)))
}

/// BatchNorm → ReLU → dropout as one block. Only the normalized input and the
/// block output are kept for the backward pass.
pub(crate) fn bn_relu_dropout<F: Scalar, R: Rng + ?Sized>(
    h: ArrayView4<F>,
    gamma: ArrayView1<F>,
    beta: ArrayView1<F>,
    running: &RunningStats<F>,
    eps: f64,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Array4<F>, Option<BatchNormCache<F>>)> {
    match mode {
        Mode::Train => {
            let (mut out, cache) = batchnorm_train(h, gamma, beta, eps)?;
            relu_dropout_inplace(&mut out, rate, mode, rng);
            Ok((out, Some(cache)))
        }
        Mode::Eval => {
            let mut out = batchnorm_eval(h, gamma, beta, running, eps)?;
            relu_inplace(&mut out);
            Ok((out, None))
        }
    }
}

pub(crate) fn bn_relu_dropout_backward<F: Scalar>(
    grad_out: ArrayView4<F>,
    out: ArrayView4<F>,
    cache: &BatchNormCache<F>,
    gamma: ArrayView1<F>,
    rate: f64,
) -> Result<BatchNormGrads<F>> {
    let g = relu_dropout_backward(grad_out, out, rate);
    batchnorm_backward(g.view(), cache, gamma)
}
