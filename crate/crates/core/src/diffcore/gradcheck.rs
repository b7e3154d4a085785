//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Above this many coordinates a seeded random subsample of this size is probed.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, max_coords: 256, seed: 0 }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self { tolerance, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    /// Up to ten coordinates with the largest relative error, worst first.
    pub worst: Vec<CoordError>,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} coords, max rel err {:.3e} (tol {:.1e})", self.checked, self.max_relative_error, self.tolerance)?;
        for w in self.worst.iter().take(3) {
            write!(f, "; [{}] analytic {:.6e} numeric {:.6e}", w.index, w.analytic, w.numeric)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("gradient check failed: {0}")]
    Failed(GradCheckReport),
    #[error("analytic gradient has {analytic} entries, point has {point}")]
    Length { analytic: usize, point: usize },
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` around `point`.
pub fn check_gradients<Fun>(
    mut f: Fun,
    point: &[f64],
    analytic: &[f64],
    opts: GradCheckOptions,
) -> Result<GradCheckReport, GradCheckError>
where
    Fun: FnMut(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(GradCheckError::Length { analytic: analytic.len(), point: point.len() });
    }
    let coords: Vec<usize> = if point.len() > opts.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, point.len(), opts.max_coords).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..point.len()).collect()
    };
    let mut x = point.to_vec();
    let mut errors = Vec::with_capacity(coords.len());
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + opts.step;
        let up = f(&x);
        x[i] = orig - opts.step;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        errors.push(CoordError { index: i, analytic: analytic[i], numeric, relative: relative_error(analytic[i], numeric) });
    }
    errors.sort_by(|a, b| b.relative.total_cmp(&a.relative));
    let report = GradCheckReport {
        checked: coords.len(),
        max_relative_error: errors.first().map_or(0.0, |e| e.relative),
        tolerance: opts.tolerance,
        worst: errors.into_iter().take(10).collect(),
    };
    if report.max_relative_error > opts.tolerance {
        Err(GradCheckError::Failed(report))
    } else {
        Ok(report)
    }
}
