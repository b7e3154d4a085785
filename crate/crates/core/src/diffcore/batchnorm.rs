//! Batch normalization over `batch × maps × h × w` tensors, one statistic per map.

use ndarray::{Array1, Array4, ArrayView1, ArrayView4};

use super::{shape_err, Result, Scalar};

/// Exponential moving averages used at evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<F> {
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

impl<F: Scalar> RunningStats<F> {
    pub fn new(maps: usize) -> Self {
        Self { mean: Array1::zeros(maps), var: Array1::ones(maps) }
    }

    /// `running ← momentum · running + (1 − momentum) · batch`, with the
    /// unbiased batch variance.
    pub fn update(&mut self, batch: &BatchStats<F>, momentum: f64) {
        let m = F::lit(momentum);
        let one_m = F::lit(1.0 - momentum);
        let n = batch.count as f64;
        let unbias = if batch.count > 1 { F::lit(n / (n - 1.0)) } else { F::one() };
        self.mean.zip_mut_with(&batch.mean, |r, &b| *r = m * *r + one_m * b);
        self.var.zip_mut_with(&batch.var, |r, &b| *r = m * *r + one_m * b * unbias);
    }
}

/// Biased per-map statistics of one batch.
#[derive(Debug, Clone)]
pub struct BatchStats<F> {
    pub mean: Array1<F>,
    pub var: Array1<F>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<F> {
    pub xhat: Array4<F>,
    pub inv_std: Array1<F>,
    pub stats: BatchStats<F>,
}

fn check<F: Scalar>(x: &ArrayView4<F>, gamma: &ArrayView1<F>, beta: &ArrayView1<F>) -> Result<usize> {
    let maps = x.dim().1;
    if gamma.len() != maps || beta.len() != maps {
        return shape_err(format!("batchnorm: {maps} maps, gamma {}, beta {}", gamma.len(), beta.len()));
    }
    Ok(maps)
}

/// Train-mode forward: normalizes with the batch statistics.
///
/// Running statistics are not touched here; the caller folds `cache.stats`
/// into its [`RunningStats`] when the step should count.
pub fn batchnorm_train<F: Scalar>(
    x: ArrayView4<F>,
    gamma: ArrayView1<F>,
    beta: ArrayView1<F>,
    eps: f64,
) -> Result<(Array4<F>, BatchNormCache<F>)> {
    let maps = check(&x, &gamma, &beta)?;
    let (b, _, h, w) = x.dim();
    let count = b * h * w;
    if count == 0 {
        return shape_err("batchnorm over an empty batch");
    }
    let plane = h * w;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    // One pass for both moments; accumulation in f64 keeps E[x²] − E[x]² accurate.
    let mut sum = vec![0.0f64; maps];
    let mut sq = vec![0.0f64; maps];
    for (i, chunk) in xs.chunks_exact(plane).enumerate() {
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for v in chunk {
            let v = v.to_f64().unwrap();
            a += v;
            b += v * v;
        }
        sum[i % maps] += a;
        sq[i % maps] += b;
    }
    let mu: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let var: Vec<f64> = sq.iter().zip(&mu).map(|(s, m)| (s / count as f64 - m * m).max(0.0)).collect();
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let (mean_f, is_f): (Vec<F>, Vec<F>) = mu.iter().zip(&inv).map(|(&m, &i)| (F::lit(m), F::lit(i))).unzip();
    let mut xhat = Array4::<F>::zeros(x.raw_dim());
    let mut out = Array4::<F>::zeros(x.raw_dim());
    let hs = xhat.as_slice_mut().unwrap().chunks_exact_mut(plane);
    let os = out.as_slice_mut().unwrap().chunks_exact_mut(plane);
    for (i, ((xc, hc), oc)) in xs.chunks_exact(plane).zip(hs).zip(os).enumerate() {
        let c = i % maps;
        let (m, is, g, bt) = (mean_f[c], is_f[c], gamma[c], beta[c]);
        for ((&xv, hv), ov) in xc.iter().zip(hc.iter_mut()).zip(oc.iter_mut()) {
            *hv = (xv - m) * is;
            *ov = g * *hv + bt;
        }
    }
    let stats = BatchStats {
        mean: Array1::from(mean_f),
        var: var.iter().map(|&v| F::lit(v)).collect(),
        count,
    };
    Ok((out, BatchNormCache { xhat, inv_std: Array1::from(is_f), stats }))
}

/// Eval-mode forward with running statistics.
pub fn batchnorm_eval<F: Scalar>(
    x: ArrayView4<F>,
    gamma: ArrayView1<F>,
    beta: ArrayView1<F>,
    running: &RunningStats<F>,
    eps: f64,
) -> Result<Array4<F>> {
    let maps = check(&x, &gamma, &beta)?;
    if running.mean.len() != maps {
        return shape_err("batchnorm running stats size");
    }
    let plane = x.dim().2 * x.dim().3;
    let mut out = x.as_standard_layout().into_owned();
    if plane == 0 {
        return Ok(out);
    }
    for (i, chunk) in out.as_slice_mut().unwrap().chunks_exact_mut(plane).enumerate() {
        let c = i % maps;
        let scale = gamma[c] / (running.var[c] + F::lit(eps)).sqrt();
        let shift = beta[c] - running.mean[c] * scale;
        chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<F> {
    pub input: Array4<F>,
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

/// Backward of [`batchnorm_train`].
pub fn batchnorm_backward<F: Scalar>(
    grad_out: ArrayView4<F>,
    cache: &BatchNormCache<F>,
    gamma: ArrayView1<F>,
) -> Result<BatchNormGrads<F>> {
    if grad_out.dim() != cache.xhat.dim() {
        return shape_err(format!("batchnorm backward: grad {:?} vs {:?}", grad_out.dim(), cache.xhat.dim()));
    }
    let maps = gamma.len();
    let (_, _, h, w) = grad_out.dim();
    let plane = h * w;
    let n = cache.stats.count as f64;
    let grad_out = grad_out.as_standard_layout();
    let gs = grad_out.as_slice().expect("standard layout");
    let xh = cache.xhat.as_slice().expect("cache is standard layout");
    let mut sg = vec![0.0f64; maps];
    let mut sgx = vec![0.0f64; maps];
    for (i, (gc, xc)) in gs.chunks_exact(plane).zip(xh.chunks_exact(plane)).enumerate() {
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for (&gv, &xv) in gc.iter().zip(xc) {
            let gv = gv.to_f64().unwrap();
            a += gv;
            b += gv * xv.to_f64().unwrap();
        }
        sg[i % maps] += a;
        sgx[i % maps] += b;
    }
    let coef: Vec<(F, F, F)> = (0..maps)
        .map(|c| (gamma[c] * cache.inv_std[c], F::lit(sg[c] / n), F::lit(sgx[c] / n)))
        .collect();
    let mut dx = Array4::<F>::zeros(grad_out.raw_dim());
    let ds = dx.as_slice_mut().unwrap().chunks_exact_mut(plane);
    for (i, ((dc, gc), xc)) in ds.zip(gs.chunks_exact(plane)).zip(xh.chunks_exact(plane)).enumerate() {
        let (k, mg, mgx) = coef[i % maps];
        for ((d, &gv), &xv) in dc.iter_mut().zip(gc).zip(xc) {
            *d = k * (gv - mg - xv * mgx);
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: sgx.iter().map(|&v| F::lit(v)).collect(),
        beta: sg.iter().map(|&v| F::lit(v)).collect(),
    })
}
