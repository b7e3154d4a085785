use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{shape_err, Result, Scalar};

/// Row-wise log-softmax, shifted by the row max.
pub fn log_softmax<F: Scalar>(logits: ArrayView2<F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Mean over rows of `−Σ_k target_k · log softmax(logits)_k`.
pub fn softmax_xent<F: Scalar>(logits: ArrayView2<F>, onehot: ArrayView2<F>) -> Result<f64> {
    Ok(softmax_xent_rows(logits, onehot)?.mean().unwrap_or(0.0))
}

/// Per-row cross-entropy, accumulated in f64.
pub fn softmax_xent_rows<F: Scalar>(logits: ArrayView2<F>, onehot: ArrayView2<F>) -> Result<Array1<f64>> {
    if logits.dim() != onehot.dim() {
        return shape_err(format!("logits {:?} vs targets {:?}", logits.dim(), onehot.dim()));
    }
    let lp = log_softmax(logits);
    Ok(Zip::from(lp.rows()).and(onehot.rows()).map_collect(|l, t| {
        -l.iter().zip(t.iter()).map(|(&l, &t)| l.to_f64().unwrap() * t.to_f64().unwrap()).sum::<f64>()
    }))
}

/// Gradient of [`softmax_xent`] (the batch mean) with respect to the logits.
pub fn softmax_xent_backward<F: Scalar>(logits: ArrayView2<F>, onehot: ArrayView2<F>) -> Result<Array2<F>> {
    if logits.dim() != onehot.dim() {
        return shape_err(format!("logits {:?} vs targets {:?}", logits.dim(), onehot.dim()));
    }
    let inv_b = F::lit(1.0 / logits.nrows().max(1) as f64);
    let mut g = log_softmax(logits).mapv(|v| v.exp());
    for (mut grow, trow) in g.rows_mut().into_iter().zip(onehot.rows()) {
        let mass = trow.sum();
        Zip::from(&mut grow).and(&trow).for_each(|p, &t| *p = (*p * mass - t) * inv_b);
    }
    Ok(g)
}

pub fn one_hot<F: Scalar>(indices: &[usize], classes: usize) -> Array2<F> {
    let mut out = Array2::zeros((indices.len(), classes));
    for (r, &i) in indices.iter().enumerate() {
        out[[r, i]] = F::one();
    }
    out
}

/// Argmax per row; ties go to the lowest index.
pub fn argmax_rows<F: Scalar>(values: ArrayView2<F>) -> Vec<usize> {
    values
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
