use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Label, Result, TRIALS_PER_SUBJECT};

/// Trial labels of one kept subject, in trial order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectTrials {
    pub subject_id: String,
    pub labels: Vec<Label>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub subject_id: String,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub pool_subjects: Vec<String>,
    pub heldout_subjects: Vec<String>,
    /// One entry per pool subject, same order as `pool_subjects`.
    pub per_subject: Vec<SubjectSplit>,
    pub rng_seed: u64,
}

impl SplitSpec {
    pub fn train_count(&self) -> usize {
        self.per_subject.iter().map(|s| s.train.len()).sum()
    }

    pub fn validation_count(&self) -> usize {
        self.per_subject.iter().map(|s| s.validation.len()).sum()
    }

    /// Index of a pool subject, i.e. its position in the one-hot encoding.
    pub fn subject_index(&self, subject_id: &str) -> Option<usize> {
        self.pool_subjects.iter().position(|s| s == subject_id)
    }
}

/// Sizes of a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Required number of kept subjects; `None` accepts any count above `heldout`.
    pub expected_subjects: Option<usize>,
    pub heldout: usize,
    pub trials_per_subject: usize,
    pub validation_per_subject: usize,
}

impl SplitPlan {
    /// 103 subjects, 13 held out, 36/9 trials per pool subject.
    pub const PROTOCOL: SplitPlan =
        SplitPlan { expected_subjects: Some(103), heldout: 13, trials_per_subject: TRIALS_PER_SUBJECT, validation_per_subject: 9 };
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self::PROTOCOL
    }
}

/// Holds out 13 of the 103 kept subjects and splits every pool subject 36/9.
pub fn make_splits(kept: &[SubjectTrials], seed: u64) -> Result<SplitSpec> {
    make_splits_with(kept, seed, SplitPlan::PROTOCOL)
}

pub fn make_splits_with(kept: &[SubjectTrials], seed: u64, plan: SplitPlan) -> Result<SplitSpec> {
    if let Some(n) = plan.expected_subjects {
        if kept.len() != n {
            return Err(DataError::Split(format!("expected {n} kept subjects, got {}", kept.len())));
        }
    }
    if kept.len() <= plan.heldout {
        return Err(DataError::Split(format!("{} subjects cannot leave a pool after holding out {}", kept.len(), plan.heldout)));
    }
    if plan.validation_per_subject > plan.trials_per_subject {
        return Err(DataError::Split("validation share exceeds trials per subject".into()));
    }
    if let Some(s) = kept.iter().find(|s| s.labels.len() != plan.trials_per_subject) {
        return Err(DataError::Split(format!("{} has {} trials, expected {}", s.subject_id, s.labels.len(), plan.trials_per_subject)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.shuffle(&mut rng);
    let mut heldout = order[..plan.heldout].to_vec();
    heldout.sort_unstable();
    let pool: Vec<usize> = (0..kept.len()).filter(|i| !heldout.contains(i)).collect();

    let per_subject = pool
        .iter()
        .map(|&i| stratified_split(&kept[i], plan.validation_per_subject, &mut rng))
        .collect();
    Ok(SplitSpec {
        pool_subjects: pool.iter().map(|&i| kept[i].subject_id.clone()).collect(),
        heldout_subjects: heldout.iter().map(|&i| kept[i].subject_id.clone()).collect(),
        per_subject,
        rng_seed: seed,
    })
}

/// Per-class validation quotas by largest remainder, then a shuffled draw per class.
fn stratified_split(subject: &SubjectTrials, validation: usize, rng: &mut ChaCha8Rng) -> SubjectSplit {
    let total = subject.labels.len();
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &l) in subject.labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut quotas: Vec<(Label, usize, f64)> = by_class
        .iter()
        .map(|(&l, idx)| {
            let exact = validation as f64 * idx.len() as f64 / total as f64;
            (l, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &q in by_remainder.iter().take(validation - assigned) {
        quotas[q].1 += 1;
    }
    let mut train = Vec::with_capacity(total - validation);
    let mut val = Vec::with_capacity(validation);
    for (label, quota, _) in quotas {
        let mut idx = by_class[&label].clone();
        idx.shuffle(rng);
        val.extend_from_slice(&idx[..quota]);
        train.extend_from_slice(&idx[quota..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    SubjectSplit { subject_id: subject.subject_id.clone(), train, validation: val }
}
