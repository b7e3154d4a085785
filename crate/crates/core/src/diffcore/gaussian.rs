//! Diagonal Gaussian posterior utilities: sampling by reparameterization and
//! the closed-form divergence to the unit normal prior.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{shape_err, DiffError, Result, Scalar};

fn check_pair<F: Scalar>(mu: &ArrayView2<F>, sigma: &ArrayView2<F>) -> Result<()> {
    if mu.dim() != sigma.dim() {
        return shape_err(format!("mu {:?} vs sigma {:?}", mu.dim(), sigma.dim()));
    }
    if let Some(bad) = sigma.iter().find(|&&s| !(s > F::zero())) {
        return Err(DiffError::Domain(format!("sigma must be positive, got {bad}")));
    }
    Ok(())
}

/// `z = μ + σ ⊙ ε`.
pub fn reparameterize<F: Scalar>(mu: ArrayView2<F>, sigma: ArrayView2<F>, eps: ArrayView2<F>) -> Result<Array2<F>> {
    check_pair(&mu, &sigma)?;
    if eps.dim() != mu.dim() {
        return shape_err(format!("eps {:?} vs mu {:?}", eps.dim(), mu.dim()));
    }
    Ok(Zip::from(mu).and(sigma).and(eps).map_collect(|&m, &s, &e| m + s * e))
}

pub fn standard_normal<F: Scalar, R: Rng + ?Sized>(rng: &mut R, dim: (usize, usize)) -> Array2<F> {
    Array2::from_shape_simple_fn(dim, || F::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Per-row `½ Σ_j (σ_j² + μ_j² − 1 − log σ_j²)`.
pub fn kl_standard_normal<F: Scalar>(mu: ArrayView2<F>, sigma: ArrayView2<F>) -> Result<Array1<f64>> {
    check_pair(&mu, &sigma)?;
    Ok(Zip::from(mu.rows()).and(sigma.rows()).map_collect(|m, s| {
        0.5 * m
            .iter()
            .zip(s.iter())
            .map(|(&m, &s)| {
                let (m, s) = (m.to_f64().unwrap(), s.to_f64().unwrap());
                s * s + m * m - 1.0 - (s * s).ln()
            })
            .sum::<f64>()
    }))
}

/// Gradients of `Σ_rows kl · weight` with respect to `(μ, σ)`.
pub fn kl_standard_normal_backward<F: Scalar>(mu: ArrayView2<F>, sigma: ArrayView2<F>, weight: f64) -> (Array2<F>, Array2<F>) {
    let w = F::lit(weight);
    (mu.mapv(|m| m * w), sigma.mapv(|s| (s - s.recip()) * w))
}

/// `σ = exp(½ · clamp(logvar, −limit, limit))`.
pub fn sigma_from_logvar<F: Scalar>(logvar: ArrayView2<F>, limit: f64) -> Array2<F> {
    let lim = F::lit(limit);
    let half = F::lit(0.5);
    logvar.mapv(|v| (v.max(-lim).min(lim) * half).exp())
}

/// Chain rule from `dσ` back to `dlogvar`; zero where the clamp is active.
pub fn sigma_from_logvar_backward<F: Scalar>(
    logvar: ArrayView2<F>,
    sigma: ArrayView2<F>,
    grad_sigma: ArrayView2<F>,
    limit: f64,
) -> Array2<F> {
    let lim = F::lit(limit);
    let half = F::lit(0.5);
    Zip::from(logvar).and(sigma).and(grad_sigma).map_collect(|&v, &s, &g| {
        if v < -lim || v > lim {
            F::zero()
        } else {
            g * s * half
        }
    })
}

/// Mean of a per-row quantity, as used for batch-averaged loss terms.
pub fn batch_mean(values: &Array1<f64>) -> f64 {
    values.mean_axis(Axis(0)).map(|a| a.into_scalar()).unwrap_or(0.0)
}
