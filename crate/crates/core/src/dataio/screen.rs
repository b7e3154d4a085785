use serde::{Deserialize, Serialize};

use super::epoch::cue_window;
use super::{DataError, Recording, Result, CHANNELS, IMAGERY_RUNS, SAMPLE_RATE, TRIALS_PER_SUBJECT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ScreenReason {
    SampleRate { run: u32, rate: f64 },
    ChannelCount { run: u32, channels: usize },
    TrialCount { trials: usize },
    WindowOutOfBounds { run: u32, onset: f64 },
    MissingRuns { runs: Vec<u32> },
    /// The subject's files could not be read or parsed at all.
    Unreadable { detail: String },
}

impl std::fmt::Display for ScreenReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::SampleRate { run, rate } => write!(f, "sample_rate {rate} Hz in run {run}"),
            Self::ChannelCount { run, channels } => write!(f, "{channels} channels in run {run}"),
            Self::TrialCount { trials } => write!(f, "trial_count {trials} (expected {TRIALS_PER_SUBJECT})"),
            Self::WindowOutOfBounds { run, onset } => write!(f, "window out of bounds for cue at {onset} s in run {run}"),
            Self::MissingRuns { runs } => write!(f, "missing imagery runs {runs:?}"),
            Self::Unreadable { detail } => write!(f, "unreadable: {detail}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub subject_id: String,
    pub keep: bool,
    pub reasons: Vec<ScreenReason>,
}

impl ScreenResult {
    pub fn discard(subject_id: impl Into<String>, reason: ScreenReason) -> Self {
        Self { subject_id: subject_id.into(), keep: false, reasons: vec![reason] }
    }
}

/// Rule-based screen over the three imagery runs of one subject.
pub fn screen_subject(recordings: &[Recording]) -> Result<ScreenResult> {
    let subject_id = recordings.first().map(|r| r.subject_id.clone()).unwrap_or_default();
    let missing: Vec<u32> =
        IMAGERY_RUNS.iter().copied().filter(|run| !recordings.iter().any(|r| r.run_id == *run)).collect();
    if !missing.is_empty() {
        return Err(DataError::MissingRun { subject: subject_id, missing });
    }
    let mut reasons = Vec::new();
    let mut trials = 0;
    for rec in recordings.iter().filter(|r| IMAGERY_RUNS.contains(&r.run_id)) {
        if (rec.sample_rate - SAMPLE_RATE).abs() > 1e-9 {
            reasons.push(ScreenReason::SampleRate { run: rec.run_id, rate: rec.sample_rate });
        }
        if rec.signals.nrows() != CHANNELS {
            reasons.push(ScreenReason::ChannelCount { run: rec.run_id, channels: rec.signals.nrows() });
        }
        for (ann, _) in rec.cues() {
            trials += 1;
            let (_, end) = cue_window(ann.onset, rec.sample_rate);
            if end > rec.samples() {
                reasons.push(ScreenReason::WindowOutOfBounds { run: rec.run_id, onset: ann.onset });
            }
        }
    }
    if trials != TRIALS_PER_SUBJECT {
        reasons.push(ScreenReason::TrialCount { trials });
    }
    Ok(ScreenResult { subject_id, keep: reasons.is_empty(), reasons })
}
