use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{shape_err, Result, Scalar};

/// Fully connected layer `y = x · Wᵀ + b` with `x: batch × n`, `W: m × n`, `b: m`.
pub fn dense<F: Scalar>(x: ArrayView2<F>, weight: ArrayView2<F>, bias: ArrayView1<F>) -> Result<Array2<F>> {
    check(x, weight, bias)?;
    let mut out = Array2::zeros((x.nrows(), weight.nrows()));
    ndarray::linalg::general_mat_mul(F::one(), &x, &weight.t(), F::zero(), &mut out);
    for mut row in out.rows_mut() {
        row.zip_mut_with(&bias, |o, &b| *o = *o + b);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<F> {
    pub input: Array2<F>,
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

pub fn dense_backward<F: Scalar>(
    x: ArrayView2<F>,
    weight: ArrayView2<F>,
    grad_out: ArrayView2<F>,
) -> Result<DenseGrads<F>> {
    if grad_out.dim() != (x.nrows(), weight.nrows()) || x.ncols() != weight.ncols() {
        return shape_err(format!(
            "dense backward: x {:?}, weight {:?}, grad {:?}",
            x.dim(),
            weight.dim(),
            grad_out.dim()
        ));
    }
    Ok(DenseGrads {
        input: grad_out.dot(&weight),
        weight: grad_out.t().dot(&x),
        bias: grad_out.sum_axis(Axis(0)),
    })
}

fn check<F: Scalar>(x: ArrayView2<F>, weight: ArrayView2<F>, bias: ArrayView1<F>) -> Result<()> {
    if x.ncols() != weight.ncols() || bias.len() != weight.nrows() {
        return shape_err(format!("dense: x {:?}, weight {:?}, bias {}", x.dim(), weight.dim(), bias.len()));
    }
    Ok(())
}
