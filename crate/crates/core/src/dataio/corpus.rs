//! Corpus discovery and the prepare pipeline: parse → screen → epoch → split → fit normalizer.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::{
    extract_trials, fit_normalizer, make_splits_with, parse_edf, screen_subject, CacheContents, DataError, NormMode,
    Normalizer, Recording, Result, ScreenReason, ScreenResult, SplitPlan, SplitSpec, SubjectTrials, TrialRecord,
    TrialSet, IMAGERY_RUNS,
};

pub type PreparedCorpus = CacheContents;

/// `SxxxRyy.edf` → (`Sxxx`, yy).
pub fn parse_run_filename(name: &str) -> Option<(String, u32)> {
    let stem = name.strip_suffix(".edf").or_else(|| name.strip_suffix(".EDF"))?;
    let r = stem.find('R')?;
    let (subject, run) = (&stem[..r], &stem[r + 1..]);
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if subject.len() < 2 || !subject.starts_with('S') || !digits(&subject[1..]) || !digits(run) {
        return None;
    }
    Some((subject.to_string(), run.parse().ok()?))
}

/// Finds run files at the root or one directory below it (PhysioNet puts each
/// subject in its own `Sxxx/` folder).
pub fn discover_corpus(root: &Path) -> Result<BTreeMap<String, BTreeMap<u32, PathBuf>>> {
    if !root.is_dir() {
        return Err(DataError::Corpus(format!("corpus directory {} does not exist", root.display())));
    }
    let mut out: BTreeMap<String, BTreeMap<u32, PathBuf>> = BTreeMap::new();
    let visit = |dir: &Path, out: &mut BTreeMap<String, BTreeMap<u32, PathBuf>>| -> Result<Vec<PathBuf>> {
        let mut subdirs = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                subdirs.push(path);
            } else if let Some((subject, run)) = path.file_name().and_then(|n| n.to_str()).and_then(parse_run_filename) {
                out.entry(subject).or_default().insert(run, path);
            }
        }
        Ok(subdirs)
    };
    for sub in visit(root, &mut out)? {
        visit(&sub, &mut out)?;
    }
    Ok(out)
}

pub fn read_recording(path: &Path, subject: &str, run: u32) -> Result<Recording> {
    let bytes = fs::read(path)?;
    Ok(parse_edf(&bytes)?.with_identity(subject, run))
}

/// Screens one subject and, when kept, returns its 45 trials in run order.
pub fn ingest_subject(subject: &str, runs: &BTreeMap<u32, PathBuf>) -> (ScreenResult, Vec<TrialRecord>) {
    let mut recordings = Vec::new();
    for run in IMAGERY_RUNS {
        let Some(path) = runs.get(&run) else { continue };
        match read_recording(path, subject, run) {
            Ok(r) => recordings.push(r),
            Err(e) => {
                return (ScreenResult::discard(subject, ScreenReason::Unreadable { detail: format!("run {run}: {e}") }), vec![]);
            }
        }
    }
    let screen = match screen_subject(&recordings) {
        Ok(s) => s,
        Err(DataError::MissingRun { missing, .. }) => {
            return (ScreenResult::discard(subject, ScreenReason::MissingRuns { runs: missing }), vec![]);
        }
        Err(e) => return (ScreenResult::discard(subject, ScreenReason::Unreadable { detail: e.to_string() }), vec![]),
    };
    if !screen.keep {
        return (screen, vec![]);
    }
    let mut trials = Vec::new();
    for rec in &recordings {
        match extract_trials(rec) {
            Ok(t) => trials.extend(t),
            Err(e) => return (ScreenResult::discard(subject, ScreenReason::Unreadable { detail: e.to_string() }), vec![]),
        }
    }
    (screen, trials)
}

/// Full preparation of a corpus directory.
pub fn prepare_corpus(root: &Path, seed: u64, plan: SplitPlan, mode: NormMode) -> Result<PreparedCorpus> {
    let runs = discover_corpus(root)?;
    if runs.is_empty() {
        return Err(DataError::Corpus(format!("no SxxxRyy.edf files under {}", root.display())));
    }
    let mut screening = Vec::with_capacity(runs.len());
    let mut trials = Vec::new();
    for (subject, files) in &runs {
        let (screen, t) = ingest_subject(subject, files);
        if screen.keep {
            trials.extend(t);
        } else {
            let why: Vec<String> = screen.reasons.iter().map(|r| r.to_string()).collect();
            warn!("discarding {subject}: {}", why.join("; "));
        }
        screening.push(screen);
    }
    info!("{} kept, {} discarded", screening.iter().filter(|s| s.keep).count(), screening.iter().filter(|s| !s.keep).count());
    let (splits, normalizer) = split_and_fit(&mut trials, seed, plan, mode)?;
    Ok(CacheContents { trials, splits, normalizer, screening })
}

fn kept_subjects(trials: &[TrialRecord]) -> Vec<SubjectTrials> {
    let mut out: Vec<SubjectTrials> = Vec::new();
    for t in trials {
        match out.last_mut() {
            Some(s) if s.subject_id == t.subject_id => s.labels.push(t.label),
            _ => out.push(SubjectTrials { subject_id: t.subject_id.clone(), labels: vec![t.label] }),
        }
    }
    out
}

/// Draws the split, assigns subject indices, and fits the normalizer on the
/// training trials only.
pub fn split_and_fit(trials: &mut [TrialRecord], seed: u64, plan: SplitPlan, mode: NormMode) -> Result<(SplitSpec, Normalizer)> {
    let splits = make_splits_with(&kept_subjects(trials), seed, plan)?;
    assign_indices(trials, &splits);
    let normalizer = fit_on_training(trials, &splits, mode)?;
    Ok((splits, normalizer))
}

fn assign_indices(trials: &mut [TrialRecord], splits: &SplitSpec) {
    for t in trials.iter_mut() {
        t.subject_index = splits.subject_index(&t.subject_id);
    }
}

fn by_subject(trials: &[TrialRecord]) -> BTreeMap<&str, Vec<&TrialRecord>> {
    let mut m: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for t in trials {
        m.entry(t.subject_id.as_str()).or_default().push(t);
    }
    m
}

fn fit_on_training(trials: &[TrialRecord], splits: &SplitSpec, mode: NormMode) -> Result<Normalizer> {
    let groups = by_subject(trials);
    let mut train = Vec::new();
    for s in &splits.per_subject {
        let g = groups.get(s.subject_id.as_str()).ok_or_else(|| DataError::Split(format!("no trials for {}", s.subject_id)))?;
        train.extend(s.train.iter().map(|&i| g[i].x.view()));
    }
    fit_normalizer(train, mode)
}

/// Restricts a prepared corpus to the first `pool` pool subjects and first
/// `heldout` held-out subjects, keeping their trial splits, re-indexing the
/// pool and refitting the normalizer on the reduced training split.
pub fn subset_protocol(contents: &CacheContents, pool: usize, heldout: usize, mode: NormMode) -> Result<CacheContents> {
    let s = &contents.splits;
    if pool == 0 || pool > s.pool_subjects.len() || heldout > s.heldout_subjects.len() {
        return Err(DataError::Split(format!(
            "cannot take {pool}/{heldout} subjects from a {}/{} split",
            s.pool_subjects.len(),
            s.heldout_subjects.len()
        )));
    }
    let splits = SplitSpec {
        pool_subjects: s.pool_subjects[..pool].to_vec(),
        heldout_subjects: s.heldout_subjects[..heldout].to_vec(),
        per_subject: s.per_subject[..pool].to_vec(),
        rng_seed: s.rng_seed,
    };
    let mut trials: Vec<TrialRecord> = contents
        .trials
        .iter()
        .filter(|t| splits.pool_subjects.contains(&t.subject_id) || splits.heldout_subjects.contains(&t.subject_id))
        .cloned()
        .collect();
    assign_indices(&mut trials, &splits);
    let normalizer = fit_on_training(&trials, &splits, mode)?;
    let screening = contents.screening.clone();
    Ok(CacheContents { trials, splits, normalizer, screening })
}

/// Re-draws the split for another seed from already-epoched trials.
pub fn resplit(contents: &CacheContents, seed: u64, plan: SplitPlan, mode: NormMode) -> Result<CacheContents> {
    let mut trials = contents.trials.clone();
    let (splits, normalizer) = split_and_fit(&mut trials, seed, plan, mode)?;
    Ok(CacheContents { trials, splits, normalizer, screening: contents.screening.clone() })
}

/// Normalized tensors for training, validation, and per-subject transfer.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: TrialSet,
    pub validation: TrialSet,
    /// One set per held-out subject, in `splits.heldout_subjects` order.
    pub heldout: Vec<TrialSet>,
    pub splits: SplitSpec,
    pub normalizer: Normalizer,
}

impl Datasets {
    pub fn subjects(&self) -> usize {
        self.splits.pool_subjects.len()
    }
}

pub fn assemble_datasets(contents: &CacheContents) -> Result<Datasets> {
    let groups = by_subject(&contents.trials);
    let s = &contents.splits;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for split in &s.per_subject {
        let g = groups.get(split.subject_id.as_str()).ok_or_else(|| DataError::Split(format!("no trials for {}", split.subject_id)))?;
        let pick = |i: &usize| g.get(*i).copied().ok_or_else(|| DataError::Split(format!("{}: trial {i} missing", split.subject_id)));
        for i in &split.train {
            train.push(pick(i)?);
        }
        for i in &split.validation {
            validation.push(pick(i)?);
        }
    }
    let mut train = TrialSet::from_trials(train)?;
    let mut validation = TrialSet::from_trials(validation)?;
    contents.normalizer.apply_set(&mut train)?;
    contents.normalizer.apply_set(&mut validation)?;
    let mut heldout = Vec::with_capacity(s.heldout_subjects.len());
    for id in &s.heldout_subjects {
        let g = groups.get(id.as_str()).ok_or_else(|| DataError::Split(format!("no trials for held-out {id}")))?;
        let mut set = TrialSet::from_trials(g.iter().copied())?;
        contents.normalizer.apply_set(&mut set)?;
        heldout.push(set);
    }
    Ok(Datasets { train, validation, heldout, splits: s.clone(), normalizer: contents.normalizer.clone() })
}
