//! Stride-1 2-D cross-correlation and its adjoint.
//!
//! Tensors are `batch × maps × height × width`. Kernels are always stored in the
//! orientation of the forward convolution, `out_maps × in_maps × kh × kw`; the
//! transposed convolution maps an `out_maps` tensor back to `in_maps`.
//!
//! Both directions go through a per-sample im2col buffer and one GEMM, which is
//! what makes the 40×64×320 feature maps tractable on a CPU.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array4, ArrayView2, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use super::{shape_err, Result, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding { top: 0, bottom: 0, left: 0, right: 0 };

    pub fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Self { top, bottom, left, right }
    }

    /// Split "same" padding along the width for an odd or even kernel length;
    /// the extra column goes left, so a kernel of 100 gives (50, 49).
    pub fn same_width(kernel_width: usize) -> Self {
        let total = kernel_width.saturating_sub(1);
        let left = total.div_ceil(2);
        Self { top: 0, bottom: 0, left, right: total - left }
    }
}

/// Geometry of a forward convolution from `in_maps × h × w` to `out_maps × h_out × w_out`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    in_maps: usize,
    h: usize,
    w: usize,
    out_maps: usize,
    kh: usize,
    kw: usize,
    pad: Padding,
    h_out: usize,
    w_out: usize,
}

impl Geometry {
    fn from_input(x: (usize, usize, usize, usize), k: (usize, usize, usize, usize), pad: Padding) -> Result<Self> {
        let (batch, in_maps, h, w) = x;
        let (out_maps, k_in, kh, kw) = k;
        if k_in != in_maps {
            return shape_err(format!("kernel expects {k_in} input maps, input has {in_maps}"));
        }
        if kh == 0 || kw == 0 {
            return shape_err("empty kernel");
        }
        let hp = h + pad.top + pad.bottom;
        let wp = w + pad.left + pad.right;
        if kh > hp || kw > wp {
            return shape_err(format!("kernel {kh}x{kw} does not fit padded input {hp}x{wp}"));
        }
        Ok(Self { batch, in_maps, h, w, out_maps, kh, kw, pad, h_out: hp - kh + 1, w_out: wp - kw + 1 })
    }

    /// Geometry seen from the output side, as needed by the transposed convolution.
    fn from_output(y: (usize, usize, usize, usize), k: (usize, usize, usize, usize), pad: Padding) -> Result<Self> {
        let (batch, out_maps, h_out, w_out) = y;
        let (k_out, in_maps, kh, kw) = k;
        if k_out != out_maps {
            return shape_err(format!("kernel produces {k_out} maps, transposed input has {out_maps}"));
        }
        let h = (h_out + kh).checked_sub(1 + pad.top + pad.bottom).filter(|&v| v > 0);
        let w = (w_out + kw).checked_sub(1 + pad.left + pad.right).filter(|&v| v > 0);
        match (h, w) {
            (Some(h), Some(w)) => Self::from_input((batch, in_maps, h, w), k, pad),
            _ => shape_err(format!("transposed convolution of {h_out}x{w_out} with kernel {kh}x{kw} is empty")),
        }
    }

    fn rows(&self) -> usize {
        self.in_maps * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Valid output column range for kernel column `j`, i.e. where the input index is inside `[0, w)`.
    fn q_range(&self, j: usize) -> (usize, usize) {
        let lo = self.pad.left.saturating_sub(j);
        let hi = (self.w + self.pad.left).saturating_sub(j).min(self.w_out);
        (lo, hi.max(lo))
    }
}

fn im2col<F: Scalar>(x: &[F], g: &Geometry, cols: &mut [F]) {
    let l = g.cols();
    for c in 0..g.in_maps {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * l..(row + 1) * l];
                let (qlo, qhi) = g.q_range(j);
                for p in 0..g.h_out {
                    let d = &mut dst[p * g.w_out..(p + 1) * g.w_out];
                    let hin = (p + i) as isize - g.pad.top as isize;
                    if hin < 0 || hin as usize >= g.h || qlo >= qhi {
                        d.fill(F::zero());
                        continue;
                    }
                    d[..qlo].fill(F::zero());
                    d[qhi..].fill(F::zero());
                    let base = (c * g.h + hin as usize) * g.w;
                    let off = base + qlo + j - g.pad.left;
                    d[qlo..qhi].copy_from_slice(&x[off..off + (qhi - qlo)]);
                }
            }
        }
    }
}

fn col2im<F: Scalar>(cols: &[F], g: &Geometry, x: &mut [F]) {
    let l = g.cols();
    x.fill(F::zero());
    for c in 0..g.in_maps {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * l..(row + 1) * l];
                let (qlo, qhi) = g.q_range(j);
                if qlo >= qhi {
                    continue;
                }
                for p in 0..g.h_out {
                    let hin = (p + i) as isize - g.pad.top as isize;
                    if hin < 0 || hin as usize >= g.h {
                        continue;
                    }
                    let base = (c * g.h + hin as usize) * g.w;
                    let off = base + qlo + j - g.pad.left;
                    let dst = &mut x[off..off + (qhi - qlo)];
                    for (d, &s) in dst.iter_mut().zip(&src[p * g.w_out + qlo..p * g.w_out + qhi]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

fn kernel_matrix<F: Scalar>(k: &ArrayView4<F>, g: &Geometry) -> Array2<F> {
    k.as_standard_layout()
        .into_owned()
        .into_shape_with_order((g.out_maps, g.rows()))
        .expect("standard layout")
}

/// Cross-correlation `out[b,o,p,q] = Σ_{c,i,j} k[o,c,i,j] · xpad[b,c,p+i,q+j]`.
pub fn conv2d<F: Scalar>(x: ArrayView4<F>, kernels: ArrayView4<F>, pad: Padding) -> Result<Array4<F>> {
    let g = Geometry::from_input(x.dim(), kernels.dim(), pad)?;
    let kmat = kernel_matrix(&kernels, &g);
    let x = x.as_standard_layout();
    let mut out = Array4::<F>::zeros((g.batch, g.out_maps, g.h_out, g.w_out));
    let mut cols = Array2::<F>::zeros((g.rows(), g.cols()));
    for (xb, ob) in x.outer_iter().zip(out.outer_iter_mut()) {
        im2col(xb.as_slice().expect("standard layout"), &g, cols.as_slice_mut().unwrap());
        let mut ob = ob.into_shape_with_order((g.out_maps, g.cols())).expect("contiguous");
        general_mat_mul(F::one(), &kmat, &cols, F::zero(), &mut ob);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<F> {
    /// Gradient with respect to the layer input, when requested.
    pub input: Option<Array4<F>>,
    pub kernels: Array4<F>,
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
///
/// The input gradient is skipped when `input_grad` is false (first layer).
pub fn conv2d_backward<F: Scalar>(
    x: ArrayView4<F>,
    kernels: ArrayView4<F>,
    pad: Padding,
    grad_out: ArrayView4<F>,
    input_grad: bool,
) -> Result<ConvGrads<F>> {
    let g = Geometry::from_input(x.dim(), kernels.dim(), pad)?;
    if grad_out.dim() != (g.batch, g.out_maps, g.h_out, g.w_out) {
        return shape_err(format!("conv gradient has shape {:?}", grad_out.dim()));
    }
    let kmat = kernel_matrix(&kernels, &g);
    let x = x.as_standard_layout();
    let grad_out = grad_out.as_standard_layout();
    let mut dk = Array2::<F>::zeros((g.out_maps, g.rows()));
    let mut dx = input_grad.then(|| Array4::<F>::zeros((g.batch, g.in_maps, g.h, g.w)));
    let mut cols = Array2::<F>::zeros((g.rows(), g.cols()));
    for b in 0..g.batch {
        let gb = grad_out.index_axis(Axis(0), b);
        let gb: ArrayView2<F> = gb.into_shape_with_order((g.out_maps, g.cols())).expect("contiguous");
        im2col(x.index_axis(Axis(0), b).as_slice().unwrap(), &g, cols.as_slice_mut().unwrap());
        general_mat_mul(F::one(), &gb, &cols.t(), F::one(), &mut dk);
        if let Some(dx) = dx.as_mut() {
            general_mat_mul(F::one(), &kmat.t(), &gb, F::zero(), &mut cols);
            let mut dxb = dx.index_axis_mut(Axis(0), b);
            col2im(cols.as_slice().unwrap(), &g, dxb.as_slice_mut().unwrap());
        }
    }
    let kernels = dk.into_shape_with_order((g.out_maps, g.in_maps, g.kh, g.kw)).expect("contiguous");
    Ok(ConvGrads { input: dx, kernels })
}

/// Adjoint of [`conv2d`] with the same kernels and padding: maps a
/// `batch × out_maps × h_out × w_out` tensor to `batch × in_maps × h × w`.
pub fn conv2d_transpose<F: Scalar>(y: ArrayView4<F>, kernels: ArrayView4<F>, pad: Padding) -> Result<Array4<F>> {
    let g = Geometry::from_output(y.dim(), kernels.dim(), pad)?;
    let kmat = kernel_matrix(&kernels, &g);
    let y = y.as_standard_layout();
    let mut out = Array4::<F>::zeros((g.batch, g.in_maps, g.h, g.w));
    let mut cols = Array2::<F>::zeros((g.rows(), g.cols()));
    for (yb, mut ob) in y.outer_iter().zip(out.outer_iter_mut()) {
        let yb = yb.into_shape_with_order((g.out_maps, g.cols())).expect("contiguous");
        general_mat_mul(F::one(), &kmat.t(), &yb, F::zero(), &mut cols);
        col2im(cols.as_slice().unwrap(), &g, ob.as_slice_mut().unwrap());
    }
    Ok(out)
}

/// Gradients of [`conv2d_transpose`]: `(d input, d kernels)`.
pub fn conv2d_transpose_backward<F: Scalar>(
    y: ArrayView4<F>,
    kernels: ArrayView4<F>,
    pad: Padding,
    grad_out: ArrayView4<F>,
) -> Result<(Array4<F>, Array4<F>)> {
    let g = Geometry::from_output(y.dim(), kernels.dim(), pad)?;
    if grad_out.dim() != (g.batch, g.in_maps, g.h, g.w) {
        return shape_err(format!("transposed conv gradient has shape {:?}", grad_out.dim()));
    }
    let kmat = kernel_matrix(&kernels, &g);
    let y = y.as_standard_layout();
    let grad_out = grad_out.as_standard_layout();
    let mut dy = Array4::<F>::zeros(y.dim());
    let mut dk = Array2::<F>::zeros((g.out_maps, g.rows()));
    let mut cols = Array2::<F>::zeros((g.rows(), g.cols()));
    for b in 0..g.batch {
        im2col(grad_out.index_axis(Axis(0), b).as_slice().unwrap(), &g, cols.as_slice_mut().unwrap());
        let yb = y.index_axis(Axis(0), b);
        let yb = yb.into_shape_with_order((g.out_maps, g.cols())).expect("contiguous");
        general_mat_mul(F::one(), &yb, &cols.t(), F::one(), &mut dk);
        let dyb = dy.index_axis_mut(Axis(0), b);
        let mut dyb = dyb.into_shape_with_order((g.out_maps, g.cols())).expect("contiguous");
        general_mat_mul(F::one(), &kmat, &cols, F::zero(), &mut dyb);
    }
    let dk = dk.into_shape_with_order(kernels.dim()).expect("contiguous");
    Ok((dy, dk))
}

fn group_sizes(maps: usize, kernel_maps: usize, groups: usize, what: &str) -> Result<(usize, usize)> {
    if groups == 0 || !maps.is_multiple_of(groups) || !kernel_maps.is_multiple_of(groups) {
        return shape_err(format!("{what}: {maps} maps / {kernel_maps} kernels not divisible into {groups} groups"));
    }
    Ok((maps / groups, kernel_maps / groups))
}

/// Grouped convolution; kernels are `out_maps × (in_maps / groups) × kh × kw`.
/// `groups == in_maps == out_maps` is a depthwise convolution.
pub fn conv2d_grouped<F: Scalar>(
    x: ArrayView4<F>,
    kernels: ArrayView4<F>,
    pad: Padding,
    groups: usize,
) -> Result<Array4<F>> {
    if groups == 1 {
        return conv2d(x, kernels, pad);
    }
    let (cin, cout) = group_sizes(x.dim().1, kernels.dim().0, groups, "conv2d_grouped")?;
    let mut parts = Vec::with_capacity(groups);
    for gi in 0..groups {
        let xg = x.slice(s![.., gi * cin..(gi + 1) * cin, .., ..]);
        let kg = kernels.slice(s![gi * cout..(gi + 1) * cout, .., .., ..]);
        parts.push(conv2d(xg, kg, pad)?);
    }
    concat_maps(parts)
}

pub fn conv2d_grouped_backward<F: Scalar>(
    x: ArrayView4<F>,
    kernels: ArrayView4<F>,
    pad: Padding,
    grad_out: ArrayView4<F>,
    input_grad: bool,
    groups: usize,
) -> Result<ConvGrads<F>> {
    if groups == 1 {
        return conv2d_backward(x, kernels, pad, grad_out, input_grad);
    }
    let (cin, cout) = group_sizes(x.dim().1, kernels.dim().0, groups, "conv2d_grouped_backward")?;
    let mut dk = Array4::<F>::zeros(kernels.dim());
    let mut dx = input_grad.then(|| Array4::<F>::zeros(x.dim()));
    for gi in 0..groups {
        let r = conv2d_backward(
            x.slice(s![.., gi * cin..(gi + 1) * cin, .., ..]),
            kernels.slice(s![gi * cout..(gi + 1) * cout, .., .., ..]),
            pad,
            grad_out.slice(s![.., gi * cout..(gi + 1) * cout, .., ..]),
            input_grad,
        )?;
        dk.slice_mut(s![gi * cout..(gi + 1) * cout, .., .., ..]).assign(&r.kernels);
        if let (Some(dx), Some(part)) = (dx.as_mut(), r.input) {
            dx.slice_mut(s![.., gi * cin..(gi + 1) * cin, .., ..]).assign(&part);
        }
    }
    Ok(ConvGrads { input: dx, kernels: dk })
}

pub fn conv2d_transpose_grouped<F: Scalar>(
    y: ArrayView4<F>,
    kernels: ArrayView4<F>,
    pad: Padding,
    groups: usize,
) -> Result<Array4<F>> {
    if groups == 1 {
        return conv2d_transpose(y, kernels, pad);
    }
    let (cout, _) = group_sizes(y.dim().1, kernels.dim().0, groups, "conv2d_transpose_grouped")?;
    let mut parts = Vec::with_capacity(groups);
    for gi in 0..groups {
        let yg = y.slice(s![.., gi * cout..(gi + 1) * cout, .., ..]);
        let kg = kernels.slice(s![gi * cout..(gi + 1) * cout, .., .., ..]);
        parts.push(conv2d_transpose(yg, kg, pad)?);
    }
    concat_maps(parts)
}

pub fn conv2d_transpose_grouped_backward<F: Scalar>(
    y: ArrayView4<F>,
    kernels: ArrayView4<F>,
    pad: Padding,
    grad_out: ArrayView4<F>,
    groups: usize,
) -> Result<(Array4<F>, Array4<F>)> {
    if groups == 1 {
        return conv2d_transpose_backward(y, kernels, pad, grad_out);
    }
    let (cout, _) = group_sizes(y.dim().1, kernels.dim().0, groups, "conv2d_transpose_grouped_backward")?;
    let cin = kernels.dim().1;
    let mut dy = Array4::<F>::zeros(y.dim());
    let mut dk = Array4::<F>::zeros(kernels.dim());
    for gi in 0..groups {
        let (dyg, dkg) = conv2d_transpose_backward(
            y.slice(s![.., gi * cout..(gi + 1) * cout, .., ..]),
            kernels.slice(s![gi * cout..(gi + 1) * cout, .., .., ..]),
            pad,
            grad_out.slice(s![.., gi * cin..(gi + 1) * cin, .., ..]),
        )?;
        dy.slice_mut(s![.., gi * cout..(gi + 1) * cout, .., ..]).assign(&dyg);
        dk.slice_mut(s![gi * cout..(gi + 1) * cout, .., .., ..]).assign(&dkg);
    }
    Ok((dy, dk))
}

fn concat_maps<F: Scalar>(parts: Vec<Array4<F>>) -> Result<Array4<F>> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(1), &views).or_else(|e| shape_err(e.to_string()))
}
