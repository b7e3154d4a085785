//! Adversary leakage and held-out transfer accuracies, summary statistics and
//! report files.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Label, TrialSet, TRIALS_PER_SUBJECT};
use crate::diffcore::gaussian::standard_normal;
use crate::diffcore::softmax::log_softmax;
use crate::diffcore::{argmax_rows, Mode, Scalar};
use crate::models::{Encoder, GaussianPosterior, Mlp, ModelError, ParameterStore, Variant};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trial {trial} belongs to {subject}, which is not a training-pool subject")]
    SubjectIndex { trial: usize, subject: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("nothing to summarize: {0}")]
    Empty(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// How the latent code is formed at evaluation time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LatentMode {
    /// `z = μ_z`.
    #[default]
    Mean,
    /// Average of the softmax outputs over `draws` posterior samples.
    Sampled { draws: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub latent: LatentMode,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { latent: LatentMode::Mean, batch_size: 100 }
    }
}

fn cast_chunk<F: Scalar>(x: ArrayView3<f32>) -> Array3<F> {
    x.mapv(|v| F::lit(v as f64))
}

/// Eval-mode posterior for every trial of `set`, computed in batches.
pub fn encode_posterior<F: Scalar>(encoder: &Encoder<F>, set: &TrialSet, batch_size: usize) -> Result<GaussianPosterior<F>> {
    let n = set.len();
    let dz = encoder.config().latent_dim;
    let mut post = GaussianPosterior { mu: Array2::zeros((n, dz)), logvar: Array2::zeros((n, dz)), sigma: Array2::zeros((n, dz)) };
    // Eval mode draws nothing from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for start in (0..n).step_by(batch_size.max(1)) {
        let end = (start + batch_size.max(1)).min(n);
        let x = cast_chunk::<F>(set.x.slice(s![start..end, .., ..]));
        let (p, _) = encoder.forward(x.view(), Mode::Eval, &mut rng)?;
        post.mu.slice_mut(s![start..end, ..]).assign(&p.mu);
        post.logvar.slice_mut(s![start..end, ..]).assign(&p.logvar);
        post.sigma.slice_mut(s![start..end, ..]).assign(&p.sigma);
    }
    Ok(post)
}

/// Argmax predictions of `head` on latent codes of `set`.
pub fn predict<F: Scalar>(encoder: &Encoder<F>, head: &Mlp<F>, set: &TrialSet, opts: &EvalOptions) -> Result<Vec<usize>> {
    let post = encode_posterior(encoder, set, opts.batch_size)?;
    predict_from_posterior(head, &post, opts.latent)
}

pub fn predict_from_posterior<F: Scalar>(head: &Mlp<F>, post: &GaussianPosterior<F>, latent: LatentMode) -> Result<Vec<usize>> {
    match latent {
        LatentMode::Mean => Ok(argmax_rows(head.logits(post.mu.view())?.view())),
        LatentMode::Sampled { draws, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut prob = Array2::<f64>::zeros((post.mu.nrows(), head.output_dim()));
            for _ in 0..draws.max(1) {
                let eps: Array2<F> = standard_normal(&mut rng, post.mu.dim());
                let z = &post.mu + &(&post.sigma * &eps);
                let lp = log_softmax(head.logits(z.view())?.view());
                prob.zip_mut_with(&lp, |p, &l| *p += l.to_f64().unwrap().exp());
            }
            Ok(argmax_rows(prob.view()))
        }
    }
}

fn fraction_equal(pred: &[usize], truth: impl Iterator<Item = usize>) -> f64 {
    let mut hits = 0usize;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        hits += usize::from(*p == t);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Subject indices of a pool set; held-out trials are an error.
pub fn pool_subjects(set: &TrialSet, subjects: usize) -> Result<Vec<usize>> {
    set.subject_index
        .iter()
        .enumerate()
        .map(|(i, s)| match s {
            Some(k) if *k < subjects => Ok(*k),
            _ => Err(EvalError::SubjectIndex { trial: i, subject: set.subject_ids[i].clone() }),
        })
        .collect()
}

/// Fraction of trials whose adversary argmax equals the true subject index.
pub fn adversary_accuracy<F: Scalar>(store: &ParameterStore<F>, set: &TrialSet, opts: &EvalOptions) -> Result<f64> {
    let adversary = store.adversary()?;
    let truth = pool_subjects(set, adversary.output_dim())?;
    let pred = predict(&store.encoder, adversary, set, opts)?;
    Ok(fraction_equal(&pred, truth.into_iter()))
}

pub fn classifier_accuracy<F: Scalar>(store: &ParameterStore<F>, set: &TrialSet, opts: &EvalOptions) -> Result<f64> {
    let pred = predict(&store.encoder, &store.classifier, set, opts)?;
    Ok(fraction_equal(&pred, set.labels.iter().map(|l| l.index())))
}

/// Accuracy of a constant or arbitrary prediction vector against labels.
pub fn label_accuracy(pred: &[usize], labels: &[Label]) -> f64 {
    fraction_equal(pred, labels.iter().map(|l| l.index()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectAccuracy {
    pub subject_id: String,
    pub trials: usize,
    pub accuracy: f64,
}

/// Order statistics of a sample; quartiles interpolate linearly between
/// order statistics (position `p·(n−1)` in the sorted sample).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(EvalError::Empty("no values".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(EvalError::Data(format!("non-finite value {v}")));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            n: sorted.len(),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: quantile_sorted(&sorted, 0.5),
            q1: quantile_sorted(&sorted, 0.25),
            q3: quantile_sorted(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub per_subject: Vec<SubjectAccuracy>,
    pub summary: Summary,
}

/// Per-subject classifier accuracy on held-out subjects. Every subject must
/// contribute `expected_trials` trials when given.
pub fn transfer_accuracy<F: Scalar>(
    store: &ParameterStore<F>,
    heldout: &[TrialSet],
    opts: &EvalOptions,
    expected_trials: Option<usize>,
) -> Result<TransferResult> {
    let mut per_subject = Vec::with_capacity(heldout.len());
    for set in heldout {
        let id = set.subject_ids.first().cloned().unwrap_or_default();
        if set.subject_ids.iter().any(|s| *s != id) {
            return Err(EvalError::Data(format!("held-out set for {id} mixes subjects")));
        }
        if let Some(want) = expected_trials {
            if set.len() != want {
                return Err(EvalError::Data(format!("held-out subject {id} has {} trials, expected {want}", set.len())));
            }
        }
        per_subject.push(SubjectAccuracy { subject_id: id, trials: set.len(), accuracy: classifier_accuracy(store, set, opts)? });
    }
    let values: Vec<f64> = per_subject.iter().map(|s| s.accuracy).collect();
    Ok(TransferResult { summary: Summary::from_values(&values)?, per_subject })
}

/// Default trial count per held-out subject.
pub const HELDOUT_TRIALS: Option<usize> = Some(TRIALS_PER_SUBJECT);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub variant: Variant,
    pub split_seed: u64,
    pub init_seed: u64,
    pub train_seed: u64,
    /// Absent for the CNN baseline, which has no adversary.
    pub adversary_train: Option<f64>,
    pub adversary_validation: Option<f64>,
    /// Chance level of the adversary, `1 / S`.
    pub adversary_chance: f64,
    pub classifier_train: f64,
    pub classifier_validation: f64,
    pub transfer: Vec<SubjectAccuracy>,
    pub transfer_summary: Summary,
}

impl ExperimentReport {
    pub fn check(&self) -> Result<()> {
        let accs = [self.adversary_train, self.adversary_validation, Some(self.classifier_train), Some(self.classifier_validation)];
        let all = accs.into_iter().flatten().chain(self.transfer.iter().map(|t| t.accuracy));
        if let Some(bad) = all.into_iter().find(|a| !(0.0..=1.0).contains(a)) {
            return Err(EvalError::Data(format!("accuracy {bad} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.check()?;
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_vec_pretty(self)?)?;
        let mut csv = String::from("kind,key,value\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        csv += &format!("meta,variant,{}\n", self.variant);
        csv += &format!("adversary,train,{}\n", opt(self.adversary_train));
        csv += &format!("adversary,validation,{}\n", opt(self.adversary_validation));
        csv += &format!("classifier,train,{:.6}\n", self.classifier_train);
        csv += &format!("classifier,validation,{:.6}\n", self.classifier_validation);
        for t in &self.transfer {
            csv += &format!("transfer,{},{:.6}\n", t.subject_id, t.accuracy);
        }
        let s = &self.transfer_summary;
        for (k, v) in [("mean", s.mean), ("median", s.median), ("q1", s.q1), ("q3", s.q3), ("min", s.min), ("max", s.max)] {
            csv += &format!("summary,{k},{v:.6}\n");
        }
        fs::write(dir.join("report.csv"), csv)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join("report.json"))?)?)
    }
}

/// One row of the cross-run comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: Variant,
    pub split_seed: u64,
    pub init_seed: u64,
    pub train_seed: u64,
    pub adversary_train: Option<f64>,
    pub adversary_validation: Option<f64>,
    pub transfer_mean: f64,
    pub transfer_median: f64,
}

/// Box-plot geometry for one variant; whiskers sit at the extreme samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPlot {
    pub variant: Variant,
    /// Runs pooled into this box.
    pub runs: usize,
    /// Per-subject accuracies, averaged over runs, in subject order.
    pub values: Vec<f64>,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub boxes: Vec<BoxPlot>,
}

/// Comparison table plus one box per variant (in first-seen order). Runs of
/// the same variant are averaged per held-out subject.
pub fn summarize(reports: &[ExperimentReport]) -> Result<Comparison> {
    if reports.is_empty() {
        return Err(EvalError::Empty("no reports to summarize".into()));
    }
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            variant: r.variant,
            split_seed: r.split_seed,
            init_seed: r.init_seed,
            train_seed: r.train_seed,
            adversary_train: r.adversary_train,
            adversary_validation: r.adversary_validation,
            transfer_mean: r.transfer_summary.mean,
            transfer_median: r.transfer_summary.median,
        })
        .collect();
    let mut order: Vec<Variant> = Vec::new();
    for r in reports {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
    }
    let mut boxes = Vec::new();
    for v in order {
        let runs: Vec<&ExperimentReport> = reports.iter().filter(|r| r.variant == v).collect();
        let n = runs[0].transfer.len();
        if runs.iter().any(|r| r.transfer.len() != n) {
            return Err(EvalError::Data(format!("{v} runs disagree on the number of held-out subjects")));
        }
        let values: Vec<f64> =
            (0..n).map(|i| runs.iter().map(|r| r.transfer[i].accuracy).sum::<f64>() / runs.len() as f64).collect();
        boxes.push(BoxPlot { variant: v, runs: runs.len(), summary: Summary::from_values(&values)?, values });
    }
    Ok(Comparison { rows, boxes })
}

impl Comparison {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("comparison.json"), serde_json::to_vec_pretty(self)?)?;
        let mut f = fs::File::create(dir.join("comparison.csv"))?;
        writeln!(f, "variant,split_seed,init_seed,train_seed,adversary_train,adversary_validation,transfer_mean,transfer_median")?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{:.6},{:.6}",
                r.variant,
                r.split_seed,
                r.init_seed,
                r.train_seed,
                opt(r.adversary_train),
                opt(r.adversary_validation),
                r.transfer_mean,
                r.transfer_median
            )?;
        }
        Ok(())
    }
}

/// Means of a few rows of a latent matrix; used by diagnostics and tests.
pub fn row_means<F: Scalar>(m: &Array2<F>) -> Vec<f64> {
    m.axis_iter(Axis(0)).map(|r| r.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / r.len().max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_known_values() {
        let s = Summary::from_values(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        let s = Summary::from_values(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
    }

    #[test]
    fn empty_summary_is_an_error() {
        assert!(matches!(Summary::from_values(&[]), Err(EvalError::Empty(_))));
        assert!(matches!(summarize(&[]), Err(EvalError::Empty(_))));
    }

    #[test]
    fn constant_prediction_gives_class_prior() {
        let labels: Vec<Label> = (0..45).map(|i| if i < 20 { Label::Left } else { Label::Right }).collect();
        assert!((label_accuracy(&[0; 45], &labels) - 20.0 / 45.0).abs() < 1e-15);
        assert!((label_accuracy(&[1; 45], &labels) - 25.0 / 45.0).abs() < 1e-15);
    }
}
