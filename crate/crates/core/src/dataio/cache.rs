//! Epoch cache: `manifest.json` plus one little-endian f32 file per subject,
//! trial-major, channel-major, time-minor. Values are raw microvolts; the
//! normalizer is stored alongside and applied at load time.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DataError, Label, Normalizer, Result, ScreenResult, SplitSpec, TrialRecord};

pub const CACHE_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct CacheContents {
    pub trials: Vec<TrialRecord>,
    pub splits: SplitSpec,
    pub normalizer: Normalizer,
    pub screening: Vec<ScreenResult>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub file: String,
    pub trials: usize,
    pub labels: Vec<Label>,
    pub runs: Vec<u32>,
    pub trial_indices: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub channels: usize,
    pub samples: usize,
    pub split_seed: u64,
    pub subjects: Vec<SubjectEntry>,
    pub split: SplitSpec,
    pub normalizer: Normalizer,
    pub screening: Vec<ScreenResult>,
}

pub fn write_cache(contents: &CacheContents, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (channels, samples) = contents.trials.first().map_or((0, 0), |t| t.x.dim());
    let mut groups: Vec<(String, Vec<&TrialRecord>)> = Vec::new();
    for t in &contents.trials {
        if t.x.dim() != (channels, samples) {
            return Err(DataError::Shape(format!("trial of {} has shape {:?}", t.subject_id, t.x.dim())));
        }
        match groups.last_mut() {
            Some((id, g)) if *id == t.subject_id => g.push(t),
            _ => {
                if groups.iter().any(|(id, _)| *id == t.subject_id) {
                    return Err(DataError::Shape(format!("trials of {} are not contiguous", t.subject_id)));
                }
                groups.push((t.subject_id.clone(), vec![t]));
            }
        }
    }
    let mut subjects = Vec::with_capacity(groups.len());
    for (id, trials) in &groups {
        let file = format!("{id}.bin");
        let mut bytes = Vec::with_capacity(trials.len() * channels * samples * 4);
        for t in trials {
            for v in t.x.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(dir.join(&file), bytes)?;
        subjects.push(SubjectEntry {
            id: id.clone(),
            file,
            trials: trials.len(),
            labels: trials.iter().map(|t| t.label).collect(),
            runs: trials.iter().map(|t| t.run_id).collect(),
            trial_indices: trials.iter().map(|t| t.trial_index).collect(),
        });
    }
    let manifest = Manifest {
        version: CACHE_VERSION,
        channels,
        samples,
        split_seed: contents.splits.rng_seed,
        subjects,
        split: contents.splits.clone(),
        normalizer: contents.normalizer.clone(),
        screening: contents.screening.clone(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let raw = fs::read(dir.join(MANIFEST))?;
    let value: serde_json::Value = serde_json::from_slice(&raw)?;
    let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CACHE_VERSION {
        return Err(DataError::CacheVersion { found, expected: CACHE_VERSION });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn read_cache(dir: &Path) -> Result<CacheContents> {
    let manifest = read_manifest(dir)?;
    let (c, t) = (manifest.channels, manifest.samples);
    let mut trials = Vec::new();
    for s in &manifest.subjects {
        if s.labels.len() != s.trials || s.runs.len() != s.trials || s.trial_indices.len() != s.trials {
            return Err(DataError::Truncation(format!("manifest entry for {} is inconsistent", s.id)));
        }
        let bytes = fs::read(dir.join(&s.file))?;
        let expected = s.trials * c * t * 4;
        if bytes.len() != expected {
            return Err(DataError::Truncation(format!("{}: {} bytes, expected {expected}", s.file, bytes.len())));
        }
        let subject_index = manifest.split.subject_index(&s.id);
        for (k, chunk) in bytes.chunks_exact((c * t * 4).max(1)).enumerate().take(s.trials) {
            let values: Vec<f32> = chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            trials.push(TrialRecord {
                x: Array2::from_shape_vec((c, t), values).map_err(|e| DataError::Shape(e.to_string()))?,
                label: s.labels[k],
                subject_id: s.id.clone(),
                subject_index,
                run_id: s.runs[k],
                trial_index: s.trial_indices[k],
            });
        }
    }
    Ok(CacheContents { trials, splits: manifest.split, normalizer: manifest.normalizer, screening: manifest.screening })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::NormMode;

    fn contents() -> CacheContents {
        let mk = |sid: &str, idx: Option<usize>, k: usize| TrialRecord {
            x: Array2::from_shape_fn((3, 4), |(c, t)| (k * 100 + c * 10 + t) as f32 * 0.1 - 1.3),
            label: if k.is_multiple_of(2) { Label::Left } else { Label::Right },
            subject_id: sid.into(),
            subject_index: idx,
            run_id: 4,
            trial_index: k,
        };
        CacheContents {
            trials: vec![mk("S001", Some(0), 0), mk("S001", Some(0), 1), mk("S002", None, 0)],
            splits: SplitSpec {
                pool_subjects: vec!["S001".into()],
                heldout_subjects: vec!["S002".into()],
                per_subject: vec![],
                rng_seed: 5,
            },
            normalizer: Normalizer { channel_means: vec![0.5, -0.25, 1.0 / 3.0], mode: NormMode::PerChannel },
            screening: vec![],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = contents();
        write_cache(&c, dir.path()).unwrap();
        assert_eq!(read_cache(dir.path()).unwrap(), c);
    }

    #[test]
    fn truncated_subject_file() {
        let dir = tempfile::tempdir().unwrap();
        write_cache(&contents(), dir.path()).unwrap();
        let f = dir.path().join("S001.bin");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_cache(dir.path()), Err(DataError::Truncation(_))));
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_cache(&contents(), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&p).unwrap().replacen("\"version\": 1", "\"version\": 99", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(read_cache(dir.path()), Err(DataError::CacheVersion { found: 99, .. })));
    }

    #[test]
    fn identical_inputs_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_cache(&contents(), a.path()).unwrap();
        write_cache(&contents(), b.path()).unwrap();
        for f in [MANIFEST, "S001.bin", "S002.bin"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }
}
