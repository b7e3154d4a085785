use ndarray::{Array, ArrayView, Dimension, Zip};
use rand::Rng;

use super::{Mode, Scalar};

pub fn relu<F: Scalar, D: Dimension>(x: ArrayView<F, D>) -> Array<F, D> {
    x.mapv(|v| v.max(F::zero()))
}

pub fn relu_inplace<F: Scalar, D: Dimension>(x: &mut Array<F, D>) {
    x.mapv_inplace(|v| v.max(F::zero()));
}

/// Gradient through ReLU given the layer's *output*; the kink at 0 gets gradient 0.
pub fn relu_backward<F: Scalar, D: Dimension>(grad_out: ArrayView<F, D>, output: ArrayView<F, D>) -> Array<F, D> {
    Zip::from(grad_out).and(output).map_collect(|&g, &y| if y > F::zero() { g } else { F::zero() })
}

/// Inverted dropout. Returns the output and the keep mask; eval mode or a zero
/// rate is the identity with an all-true mask.
pub fn dropout<F: Scalar, D: Dimension, R: Rng + ?Sized>(
    x: ArrayView<F, D>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> (Array<F, D>, Array<bool, D>) {
    let mut out = x.to_owned();
    let mask = dropout_inplace(&mut out, rate, mode, rng);
    (out, mask)
}

pub fn dropout_inplace<F: Scalar, D: Dimension, R: Rng + ?Sized>(
    x: &mut Array<F, D>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Array<bool, D> {
    let mut mask = Array::from_elem(x.raw_dim(), true);
    if mode == Mode::Eval || rate <= 0.0 {
        return mask;
    }
    let scale = F::lit(1.0 / (1.0 - rate));
    // Raw 32-bit draws against the scaled rate, one per unit in logical
    // (row-major) order so masks do not depend on memory layout.
    let threshold = (rate * 4_294_967_296.0).min(u32::MAX as f64) as u32;
    let mut draws = vec![0u32; 4096];
    let mut next = draws.len();
    for (v, m) in x.iter_mut().zip(mask.iter_mut()) {
        if next == draws.len() {
            rng.fill(&mut draws[..]);
            next = 0;
        }
        let keep = draws[next] >= threshold;
        next += 1;
        if keep {
            *v = *v * scale;
        } else {
            *m = false;
            *v = F::zero();
        }
    }
    mask
}

/// `dropout(relu(x))` in place without materializing the mask; pair with
/// [`relu_dropout_backward`]. Draws the same mask as [`dropout_inplace`].
pub fn relu_dropout_inplace<F: Scalar, D: Dimension, R: Rng + ?Sized>(x: &mut Array<F, D>, rate: f64, mode: Mode, rng: &mut R) {
    if mode == Mode::Eval || rate <= 0.0 {
        relu_inplace(x);
        return;
    }
    let scale = F::lit(1.0 / (1.0 - rate));
    let threshold = (rate * 4_294_967_296.0).min(u32::MAX as f64) as u32;
    let mut draws = vec![0u32; 4096];
    let mut next = draws.len();
    for v in x.iter_mut() {
        if next == draws.len() {
            rng.fill(&mut draws[..]);
            next = 0;
        }
        let keep = draws[next] >= threshold;
        next += 1;
        *v = if keep && *v > F::zero() { *v * scale } else { F::zero() };
    }
}

pub fn dropout_backward<F: Scalar, D: Dimension>(grad_out: ArrayView<F, D>, mask: ArrayView<bool, D>, rate: f64) -> Array<F, D> {
    let scale = if rate > 0.0 { F::lit(1.0 / (1.0 - rate)) } else { F::one() };
    Zip::from(grad_out).and(mask).map_collect(|&g, &k| if k { g * scale } else { F::zero() })
}

/// Combined backward of `dropout(relu(y))` from the block output alone: a unit
/// passes gradient iff its output is positive (ReLU open and kept by dropout).
pub fn relu_dropout_backward<F: Scalar, D: Dimension>(grad_out: ArrayView<F, D>, output: ArrayView<F, D>, rate: f64) -> Array<F, D> {
    let scale = if rate > 0.0 { F::lit(1.0 / (1.0 - rate)) } else { F::one() };
    Zip::from(grad_out).and(output).map_collect(|&g, &y| if y > F::zero() { g * scale } else { F::zero() })
}
