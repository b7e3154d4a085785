//! EEG ingestion: EDF+ parsing, subject screening, cue-locked epoching,
//! subject/trial splits, mean normalization and the on-disk epoch cache.

pub mod cache;
pub mod corpus;
pub mod edf;
pub mod epoch;
pub mod normalize;
pub mod screen;
pub mod split;
pub mod synthetic;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{read_cache, write_cache, CacheContents};
pub use corpus::{assemble_datasets, discover_corpus, prepare_corpus, subset_protocol, Datasets, PreparedCorpus};
pub use edf::{parse_edf, write_edf, EdfSpec};
pub use epoch::extract_trials;
pub use normalize::{fit_normalizer, NormMode, Normalizer};
pub use screen::{screen_subject, ScreenReason, ScreenResult};
pub use split::{make_splits, make_splits_with, SplitPlan, SplitSpec, SubjectSplit, SubjectTrials};

/// Runs holding left/right hand motor imagery.
pub const IMAGERY_RUNS: [u32; 3] = [4, 8, 12];
pub const SAMPLE_RATE: f64 = 160.0;
pub const CHANNELS: usize = 64;
pub const TRIAL_SAMPLES: usize = 320;
pub const TRIALS_PER_SUBJECT: usize = 45;
/// Epoch window relative to cue onset, in seconds: `[1, 3)`.
pub const WINDOW_START_S: f64 = 1.0;
pub const WINDOW_END_S: f64 = 3.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("EDF parse error: {0}")]
    Parse(String),
    #[error("truncated data: {0}")]
    Truncation(String),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("subject {subject}: missing imagery runs {missing:?}")]
    MissingRun { subject: String, missing: Vec<u32> },
    #[error("trial window [{start}, {end}) exceeds recording length {len} (run {run})")]
    Window { run: u32, start: usize, end: usize, len: usize },
    #[error("split error: {0}")]
    Split(String),
    #[error("normalizer fit error: {0}")]
    Fit(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("cache version {found}, expected {expected}")]
    CacheVersion { found: u32, expected: u32 },
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Event code carried by the annotation channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnnotationCode {
    /// Rest.
    T0,
    /// Left hand imagery cue.
    T1,
    /// Right hand imagery cue.
    T2,
}

impl AnnotationCode {
    pub fn parse(text: &str) -> Option<Self> {
        match text.trim() {
            "T0" => Some(Self::T0),
            "T1" => Some(Self::T1),
            "T2" => Some(Self::T2),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::T0 => "T0",
            Self::T1 => "T1",
            Self::T2 => "T2",
        }
    }

    pub fn label(self) -> Option<Label> {
        match self {
            Self::T0 => None,
            Self::T1 => Some(Label::Left),
            Self::T2 => Some(Label::Right),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub onset: f64,
    pub duration: f64,
    pub code: AnnotationCode,
}

/// One EDF recording with signals in microvolts, `channels × samples`.
#[derive(Clone, Debug)]
pub struct Recording {
    pub subject_id: String,
    pub run_id: u32,
    pub signals: Array2<f64>,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
    pub annotations: Vec<Annotation>,
}

impl Recording {
    pub fn with_identity(mut self, subject_id: impl Into<String>, run_id: u32) -> Self {
        self.subject_id = subject_id.into();
        self.run_id = run_id;
        self
    }

    pub fn samples(&self) -> usize {
        self.signals.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.samples() as f64 / self.sample_rate
    }

    /// Imagery cues (T1/T2) in onset order.
    pub fn cues(&self) -> impl Iterator<Item = (&Annotation, Label)> {
        self.annotations.iter().filter_map(|a| a.code.label().map(|l| (a, l)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Left,
    Right,
}

impl Label {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        match self {
            Self::Left => 0,
            Self::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Self::Left),
            1 => Some(Self::Right),
            _ => None,
        }
    }
}

/// One cue-locked epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    /// `channels × samples`, microvolts.
    pub x: Array2<f32>,
    pub label: Label,
    pub subject_id: String,
    /// Index among the training-pool subjects; `None` for held-out subjects.
    pub subject_index: Option<usize>,
    pub run_id: u32,
    pub trial_index: usize,
}

/// A stack of trials as one tensor, ready for batching.
#[derive(Clone, Debug)]
pub struct TrialSet {
    /// `trials × channels × samples`.
    pub x: Array3<f32>,
    pub labels: Vec<Label>,
    pub subject_index: Vec<Option<usize>>,
    pub subject_ids: Vec<String>,
}

impl TrialSet {
    pub fn from_trials<'a>(trials: impl IntoIterator<Item = &'a TrialRecord>) -> Result<Self> {
        let trials: Vec<&TrialRecord> = trials.into_iter().collect();
        let (c, t) = trials.first().map_or((0, 0), |r| r.x.dim());
        let mut x = Array3::<f32>::zeros((trials.len(), c, t));
        for (i, tr) in trials.iter().enumerate() {
            if tr.x.dim() != (c, t) {
                return Err(DataError::Shape(format!("trial {} has shape {:?}, expected {:?}", i, tr.x.dim(), (c, t))));
            }
            x.index_axis_mut(Axis(0), i).assign(&tr.x);
        }
        Ok(Self {
            x,
            labels: trials.iter().map(|t| t.label).collect(),
            subject_index: trials.iter().map(|t| t.subject_index).collect(),
            subject_ids: trials.iter().map(|t| t.subject_id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn trial(&self, i: usize) -> ArrayView2<'_, f32> {
        self.x.index_axis(Axis(0), i)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subject_index: indices.iter().map(|&i| self.subject_index[i]).collect(),
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
        }
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.index()).collect()
    }
}
