use ndarray::{ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use super::{DataError, Result, TrialRecord, TrialSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    PerChannel,
    Global,
}

/// Mean subtraction with statistics taken from the training split only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    /// Microvolts, one per channel (replicated scalar in global mode).
    pub channel_means: Vec<f64>,
    pub mode: NormMode,
}

impl Normalizer {
    pub fn zero(channels: usize) -> Self {
        Self { channel_means: vec![0.0; channels], mode: NormMode::PerChannel }
    }

    /// `x ← x − channel_means`, broadcast over time.
    pub fn apply(&self, mut x: ArrayViewMut2<'_, f32>) -> Result<()> {
        if x.nrows() != self.channel_means.len() {
            return Err(DataError::Shape(format!("trial has {} channels, normalizer {}", x.nrows(), self.channel_means.len())));
        }
        for (mut row, &m) in x.axis_iter_mut(Axis(0)).zip(&self.channel_means) {
            row.mapv_inplace(|v| (v as f64 - m) as f32);
        }
        Ok(())
    }

    pub fn apply_trials(&self, trials: &mut [TrialRecord]) -> Result<()> {
        trials.iter_mut().try_for_each(|t| self.apply(t.x.view_mut()))
    }

    pub fn apply_set(&self, set: &mut TrialSet) -> Result<()> {
        set.x.axis_iter_mut(Axis(0)).try_for_each(|t| self.apply(t))
    }
}

/// Per-channel (or global) mean over every training trial and time point.
pub fn fit_normalizer<'a>(trials: impl IntoIterator<Item = ArrayView2<'a, f32>>, mode: NormMode) -> Result<Normalizer> {
    let mut sums: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for x in trials {
        if sums.is_empty() {
            sums = vec![0.0; x.nrows()];
        } else if x.nrows() != sums.len() {
            return Err(DataError::Shape(format!("trial has {} channels, expected {}", x.nrows(), sums.len())));
        }
        for (s, row) in sums.iter_mut().zip(x.axis_iter(Axis(0))) {
            *s += row.iter().map(|&v| v as f64).sum::<f64>();
        }
        count += x.ncols();
    }
    if count == 0 {
        return Err(DataError::Fit("no training samples".into()));
    }
    let channel_means = match mode {
        NormMode::PerChannel => sums.iter().map(|s| s / count as f64).collect(),
        NormMode::Global => {
            let g = sums.iter().sum::<f64>() / (count * sums.len()) as f64;
            vec![g; sums.len()]
        }
    };
    Ok(Normalizer { channel_means, mode })
}
