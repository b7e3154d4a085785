//! Generator, adversary and classifier losses with their gradients.
//!
//! All scalars are batch means accumulated in `f64`.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::diffcore::gaussian::{batch_mean, kl_standard_normal_backward};
use crate::diffcore::{kl_standard_normal, softmax_xent, softmax_xent_backward, Scalar};
use crate::models::{ModelError, ReconMode, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    /// Mean adversary log-likelihood of the true subject, `−L_A`.
    pub adversarial_term: f64,
    pub total: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Config(format!("lambda must be >= 0, got {lambda}")))
    }
}

fn check_recon<F: Scalar>(x: &ArrayView3<F>, xhat: &ArrayView3<F>) -> Result<()> {
    if x.dim() != xhat.dim() {
        return Err(ModelError::Shape(format!("reconstruction {:?} vs input {:?}", xhat.dim(), x.dim())));
    }
    Ok(())
}

/// Squared reconstruction error: per-trial sum averaged over the batch, or
/// the mean over all elements.
pub fn reconstruction_loss<F: Scalar>(x: ArrayView3<F>, xhat: ArrayView3<F>, mode: ReconMode) -> Result<f64> {
    check_recon(&x, &xhat)?;
    let b = x.dim().0.max(1) as f64;
    let mut total = 0.0f64;
    Zip::from(&x).and(&xhat).for_each(|&a, &r| {
        let d = r.to_f64().unwrap() - a.to_f64().unwrap();
        total += d * d;
    });
    Ok(match mode {
        ReconMode::Sum => total / b,
        ReconMode::Mean => total / (x.len().max(1) as f64),
    })
}

pub fn reconstruction_backward<F: Scalar>(x: ArrayView3<F>, xhat: ArrayView3<F>, mode: ReconMode) -> Array3<F> {
    let denom = match mode {
        ReconMode::Sum => x.dim().0.max(1) as f64,
        ReconMode::Mean => x.len().max(1) as f64,
    };
    let k = F::lit(2.0 / denom);
    Zip::from(&xhat).and(&x).map_collect(|&r, &a| k * (r - a))
}

/// cVAE objective: reconstruction + KL, no adversarial term.
pub fn loss_cvae<F: Scalar>(
    x: ArrayView3<F>,
    xhat: ArrayView3<F>,
    mu: ArrayView2<F>,
    sigma: ArrayView2<F>,
    mode: ReconMode,
) -> Result<LossBreakdown> {
    let reconstruction = reconstruction_loss(x, xhat, mode)?;
    let kl = batch_mean(&kl_standard_normal(mu, sigma)?);
    Ok(LossBreakdown { reconstruction, kl, adversarial_term: 0.0, total: reconstruction + kl })
}

/// Adversarially censored objective `recon + KL + λ · mean log q_Ψ(s|z)`.
#[allow(clippy::too_many_arguments)]
pub fn loss_acvae<F: Scalar>(
    x: ArrayView3<F>,
    xhat: ArrayView3<F>,
    mu: ArrayView2<F>,
    sigma: ArrayView2<F>,
    adv_logits: ArrayView2<F>,
    s: ArrayView2<F>,
    lambda: f64,
    mode: ReconMode,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let base = loss_cvae(x, xhat, mu, sigma, mode)?;
    let adversarial_term = -softmax_xent(adv_logits, s)?;
    Ok(LossBreakdown { adversarial_term, total: base.total + lambda * adversarial_term, ..base })
}

/// `L_A`, mean cross-entropy of the adversary.
pub fn loss_adversary<F: Scalar>(adv_logits: ArrayView2<F>, s: ArrayView2<F>) -> Result<f64> {
    Ok(softmax_xent(adv_logits, s)?)
}

/// `L_C`, mean cross-entropy of the classifier.
pub fn loss_classifier<F: Scalar>(cls_logits: ArrayView2<F>, y: ArrayView2<F>) -> Result<f64> {
    Ok(softmax_xent(cls_logits, y)?)
}

/// Gradients of a generator objective with respect to its inputs.
#[derive(Clone, Debug)]
pub struct GeneratorGrads<F> {
    pub xhat: Array3<F>,
    pub mu: Array2<F>,
    pub sigma: Array2<F>,
    /// Present when the adversarial term contributes (λ > 0).
    pub adv_logits: Option<Array2<F>>,
}

/// Backward of [`loss_acvae`] (or [`loss_cvae`] when `adversary` is `None`).
/// `adversary` is `(logits, one-hot subjects)`.
pub fn generator_backward<F: Scalar>(
    x: ArrayView3<F>,
    xhat: ArrayView3<F>,
    mu: ArrayView2<F>,
    sigma: ArrayView2<F>,
    adversary: Option<(ArrayView2<F>, ArrayView2<F>)>,
    lambda: f64,
    mode: ReconMode,
) -> Result<GeneratorGrads<F>> {
    check_lambda(lambda)?;
    check_recon(&x, &xhat)?;
    let b = mu.nrows().max(1) as f64;
    let (d_mu, d_sigma) = kl_standard_normal_backward(mu, sigma, 1.0 / b);
    let adv_logits = match adversary {
        Some((logits, s)) if lambda > 0.0 => {
            let neg = F::lit(-lambda);
            Some(softmax_xent_backward(logits, s)?.mapv(|g| g * neg))
        }
        _ => None,
    };
    Ok(GeneratorGrads { xhat: reconstruction_backward(x, xhat, mode), mu: d_mu, sigma: d_sigma, adv_logits })
}
