use ndarray::s;

use super::{DataError, Recording, Result, TrialRecord, WINDOW_END_S, WINDOW_START_S};

/// Sample range `[start, end)` of the post-cue window for a cue at `onset` seconds.
pub fn cue_window(onset: f64, sample_rate: f64) -> (usize, usize) {
    let cue = (onset * sample_rate).round().max(0.0) as usize;
    let start = cue + (WINDOW_START_S * sample_rate).round() as usize;
    let end = cue + (WINDOW_END_S * sample_rate).round() as usize;
    (start, end)
}

/// Cuts one trial per T1/T2 cue; rest (T0) segments are ignored.
///
/// Trials come back without a subject index; the split assigns it.
pub fn extract_trials(recording: &Recording) -> Result<Vec<TrialRecord>> {
    let len = recording.samples();
    let mut out = Vec::new();
    for (i, (ann, label)) in recording.cues().enumerate() {
        let (start, end) = cue_window(ann.onset, recording.sample_rate);
        if end > len {
            return Err(DataError::Window { run: recording.run_id, start, end, len });
        }
        out.push(TrialRecord {
            x: recording.signals.slice(s![.., start..end]).mapv(|v| v as f32),
            label,
            subject_id: recording.subject_id.clone(),
            subject_index: None,
            run_id: recording.run_id,
            trial_index: i,
        });
    }
    Ok(out)
}
