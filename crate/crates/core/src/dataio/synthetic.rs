//! Synthetic motor-imagery corpus in the PhysioNet file layout.
//!
//! Used to exercise the whole pipeline where the real recordings are not
//! available. Each subject gets a fixed per-channel offset and a background
//! rhythm with its own frequency and topography; each cue adds a class-specific
//! lateralized response. Selected subjects can be made irregular so that the
//! screen has something to discard.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::edf::{write_edf, EdfSpec};
use super::{Annotation, AnnotationCode, Result, CHANNELS, IMAGERY_RUNS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Irregularity {
    /// One imagery run recorded at 128 Hz.
    SampleRate128,
    /// The last run is one cue short.
    MissingCue,
    /// The last cue of a run sits too close to the end of the file.
    LateCue,
    /// Run 12 is absent.
    MissingRun,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub subjects: usize,
    pub seed: u64,
    /// 1-based subject numbers and what is wrong with them.
    pub irregular: Vec<(usize, Irregularity)>,
    pub noise_uv: f64,
    pub offset_uv: f64,
    pub rhythm_uv: f64,
    pub response_uv: f64,
    pub cues_per_run: usize,
    /// Cue-to-cue spacing in seconds; at least 3.5 so windows do not overlap.
    pub cue_period_s: f64,
}

impl SyntheticCorpus {
    /// 109 subjects of which 6 fail screening, leaving 103.
    pub fn protocol(seed: u64) -> Self {
        Self {
            subjects: 109,
            seed,
            irregular: vec![
                (38, Irregularity::MissingCue),
                (88, Irregularity::SampleRate128),
                (89, Irregularity::LateCue),
                (92, Irregularity::SampleRate128),
                (100, Irregularity::SampleRate128),
                (104, Irregularity::MissingRun),
            ],
            noise_uv: 6.0,
            offset_uv: 4.0,
            rhythm_uv: 5.0,
            response_uv: 6.0,
            cues_per_run: 15,
            cue_period_s: 4.0,
        }
    }

    pub fn small(subjects: usize, seed: u64) -> Self {
        Self { subjects, irregular: vec![], ..Self::protocol(seed) }
    }

    pub fn subject_id(n: usize) -> String {
        format!("S{n:03}")
    }

    fn irregularity(&self, n: usize) -> Option<Irregularity> {
        self.irregular.iter().find(|(s, _)| *s == n).map(|(_, i)| *i)
    }

    /// Writes `root/Sxxx/SxxxRyy.edf` for the three imagery runs of every subject.
    pub fn write(&self, root: &Path) -> Result<()> {
        let names: Vec<String> = (0..CHANNELS).map(|c| format!("C{c:02}..")).collect();
        let left_pattern = lateral_pattern(true);
        let right_pattern = lateral_pattern(false);
        for n in 1..=self.subjects {
            let sid = Self::subject_id(n);
            let dir = root.join(&sid);
            fs::create_dir_all(&dir)?;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let unit = Normal::new(0.0, 1.0).expect("valid normal");
            let offsets: Vec<f64> = (0..CHANNELS).map(|_| unit.sample(&mut rng) * self.offset_uv).collect();
            let topo: Vec<f64> = (0..CHANNELS).map(|_| unit.sample(&mut rng)).collect();
            let freq = rng.random_range(7.0..14.0);
            let irregular = self.irregularity(n);
            for (k, &run) in IMAGERY_RUNS.iter().enumerate() {
                if irregular == Some(Irregularity::MissingRun) && run == 12 {
                    continue;
                }
                let rate = if irregular == Some(Irregularity::SampleRate128) && k == 1 { 128.0 } else { 160.0 };
                let mut cues = self.cues_per_run;
                if irregular == Some(Irregularity::MissingCue) && k == 2 {
                    cues -= 1;
                }
                let mut labels: Vec<AnnotationCode> =
                    (0..cues).map(|i| if i % 2 == 0 { AnnotationCode::T1 } else { AnnotationCode::T2 }).collect();
                labels.shuffle(&mut rng);
                let lead = 0.5;
                let seconds = (lead + cues as f64 * self.cue_period_s).ceil();
                let samples = (seconds * rate) as usize;
                let mut annotations = Vec::with_capacity(2 * cues);
                let mut signals = Array2::<f64>::zeros((CHANNELS, samples));
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                for c in 0..CHANNELS {
                    for t in 0..samples {
                        let time = t as f64 / rate;
                        signals[[c, t]] = offsets[c]
                            + self.rhythm_uv * topo[c] * (std::f64::consts::TAU * freq * time + phase).sin()
                            + self.noise_uv * unit.sample(&mut rng);
                    }
                }
                for (i, &code) in labels.iter().enumerate() {
                    let mut onset = lead + i as f64 * self.cue_period_s;
                    if irregular == Some(Irregularity::LateCue) && k == 0 && i + 1 == cues {
                        onset = seconds - 2.0;
                    }
                    annotations.push(Annotation { onset: onset - lead.min(onset), duration: lead.min(onset), code: AnnotationCode::T0 });
                    annotations.push(Annotation { onset, duration: 3.0, code });
                    let pattern = if code == AnnotationCode::T1 { &left_pattern } else { &right_pattern };
                    let start = (onset * rate).round() as usize;
                    let len = ((3.5 * rate) as usize).min(samples.saturating_sub(start));
                    for c in 0..CHANNELS {
                        for j in 0..len {
                            let time = j as f64 / rate;
                            signals[[c, start + j]] += self.response_uv * pattern[c] * response_shape(time);
                        }
                    }
                }
                annotations.sort_by(|a, b| a.onset.total_cmp(&b.onset));
                let bytes = write_edf(&EdfSpec {
                    signals: &signals,
                    channel_names: &names,
                    sample_rate: rate,
                    record_duration: 1.0,
                    annotations: &annotations,
                    physical_limit: 500.0,
                })?;
                fs::write(dir.join(format!("{sid}R{run:02}.edf")), bytes)?;
            }
        }
        Ok(())
    }
}

/// Smooth bump peaking about 2 s after the cue, modulated at 10 Hz.
fn response_shape(t: f64) -> f64 {
    let env = (-((t - 2.0) / 0.8).powi(2)).exp();
    env * (0.6 + 0.4 * (std::f64::consts::TAU * 10.0 * t).cos())
}

/// Contralateral pattern over an 8×8 montage: positive over one half, negative over the other.
fn lateral_pattern(left_hand: bool) -> Vec<f64> {
    (0..CHANNELS)
        .map(|c| {
            let col = (c % 8) as f64 - 3.5;
            let v = (col / 3.5).clamp(-1.0, 1.0);
            if left_hand { v } else { -v }
        })
        .collect()
}
