use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use acvae_core::dataio::cache::read_manifest;
use acvae_core::dataio::corpus::resplit;
use acvae_core::dataio::synthetic::SyntheticCorpus;
use acvae_core::dataio::{assemble_datasets, prepare_corpus, read_cache, subset_protocol, write_cache, Datasets, SplitPlan};
use acvae_core::evaluation::{
    adversary_accuracy, classifier_accuracy, summarize, transfer_accuracy, ExperimentReport, HELDOUT_TRIALS,
};
use acvae_core::models::{ModelConfig, ParameterStore, Variant};
use acvae_core::training::{
    load_checkpoint, save_checkpoint, train_classifier, train_cnn_baseline, train_representation, EpochRecord, Stage,
    TrainHistory, TrainError,
};
use anyhow::{bail, Context, Result};

use crate::config::{conflicting_keys, ExperimentConfig};
use crate::svg::box_plot_svg;
use crate::DataProblem;

pub const CONFIG_FILE: &str = "config.json";
pub const STAGE1_DIR: &str = "stage1";
pub const STAGE2_DIR: &str = "stage2";

fn plan(cfg: &ExperimentConfig) -> SplitPlan {
    SplitPlan { expected_subjects: cfg.expected_subjects, ..SplitPlan::PROTOCOL }
}

fn cache_is_current(cfg: &ExperimentConfig) -> bool {
    read_manifest(&cfg.cache_dir).is_ok_and(|m| m.split_seed == cfg.split_seed && m.normalizer.mode == cfg.norm_mode)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<()> {
    if cache_is_current(cfg) {
        println!("cache up to date: {}", cfg.cache_dir.display());
        return Ok(());
    }
    if !cfg.corpus_dir.is_dir() {
        bail!(DataProblem(format!("corpus directory {} does not exist", cfg.corpus_dir.display())));
    }
    let prepared = prepare_corpus(&cfg.corpus_dir, cfg.split_seed, plan(cfg), cfg.norm_mode)
        .with_context(|| format!("preparing corpus {}", cfg.corpus_dir.display()))?;
    for s in &prepared.screening {
        if s.keep {
            println!("{:<6} kept", s.subject_id);
        } else {
            let why: Vec<String> = s.reasons.iter().map(ToString::to_string).collect();
            println!("{:<6} discarded: {}", s.subject_id, why.join("; "));
        }
    }
    let kept = prepared.screening.iter().filter(|s| s.keep).count();
    println!("{kept} kept, {} discarded", prepared.screening.len() - kept);
    let sp = &prepared.splits;
    println!(
        "split: {} training / {} validation trials over {} subjects, {} held-out subjects",
        sp.train_count(),
        sp.validation_count(),
        sp.pool_subjects.len(),
        sp.heldout_subjects.len()
    );
    write_cache(&prepared, &cfg.cache_dir).with_context(|| format!("writing cache {}", cfg.cache_dir.display()))?;
    println!("cache written to {}", cfg.cache_dir.display());
    Ok(())
}

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let mut contents = read_cache(&cfg.cache_dir)
        .with_context(|| format!("loading cache {} (run `acvae prepare` first)", cfg.cache_dir.display()))?;
    let s = &contents.splits;
    if s.rng_seed != cfg.split_seed || contents.normalizer.mode != cfg.norm_mode {
        let p = SplitPlan { expected_subjects: None, heldout: s.heldout_subjects.len(), ..SplitPlan::PROTOCOL };
        contents = resplit(&contents, cfg.split_seed, p, cfg.norm_mode)?;
    }
    if cfg.pool_subjects.is_some() || cfg.heldout_subjects.is_some() {
        let pool = cfg.pool_subjects.unwrap_or(contents.splits.pool_subjects.len());
        let heldout = cfg.heldout_subjects.unwrap_or(contents.splits.heldout_subjects.len());
        contents = subset_protocol(&contents, pool, heldout, cfg.norm_mode)?;
    }
    Ok(assemble_datasets(&contents)?)
}

fn model_config(cfg: &ExperimentConfig, data: &Datasets) -> ModelConfig {
    let (_, channels, samples) = data.train.x.dim();
    ModelConfig { channels, samples, ..cfg.model_config(data.subjects()) }
}

fn metrics(rec: Option<&EpochRecord>) -> BTreeMap<String, f64> {
    let Some(r) = rec else { return BTreeMap::new() };
    let fields = [
        ("mean_total", r.mean_total),
        ("mean_adversary_loss", r.mean_adversary_loss),
        ("adversary_train_accuracy", r.adversary_train_accuracy),
        ("adversary_validation_accuracy", r.adversary_validation_accuracy),
        ("mean_classifier_loss", r.mean_classifier_loss),
        ("classifier_train_accuracy", r.classifier_train_accuracy),
        ("classifier_validation_accuracy", r.classifier_validation_accuracy),
    ];
    fields.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))).collect()
}

fn checkpoint(store: &ParameterStore<f32>, dir: &Path, stage: Stage, h: &TrainHistory) -> Result<()> {
    h.write(dir)?;
    let last = h.last_epoch();
    save_checkpoint(store, dir, stage, h.iterations.len(), last.map_or(0, |e| e.epoch), metrics(last))?;
    println!("{} checkpoint: {}", stage.as_str(), dir.display());
    Ok(())
}

pub fn run_dir(cfg: &ExperimentConfig, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| cfg.output_dir.join(cfg.run_name()))
}

pub fn train(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let data = load_datasets(cfg)?;
    let model = model_config(cfg, &data);
    fs::create_dir_all(dir).with_context(|| format!("creating run directory {}", dir.display()))?;
    cfg.write(&dir.join(CONFIG_FILE))?;
    let tc = cfg.train_config();
    let mut store = ParameterStore::<f32>::new(&model)?;
    println!(
        "training {} on {} trials from {} subjects ({} parameters)",
        cfg.variant,
        data.train.len(),
        data.subjects(),
        store.parameter_count()
    );
    if cfg.variant == Variant::Cnn {
        let h = train_cnn_baseline(&mut store, &data.train, Some(&data.validation), &tc)?;
        checkpoint(&store, &dir.join(STAGE2_DIR), Stage::EndToEnd, &h)?;
    } else {
        let h1 = train_representation(&mut store, &data.train, Some(&data.validation), &tc)?;
        checkpoint(&store, &dir.join(STAGE1_DIR), Stage::Representation, &h1)?;
        let h2 = train_classifier(&mut store, &data.train, Some(&data.validation), &tc)?;
        checkpoint(&store, &dir.join(STAGE2_DIR), Stage::Classifier, &h2)?;
    }
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{:.1}%", 100.0 * v))
}

pub fn evaluate(dir: &Path) -> Result<ExperimentReport> {
    let cfg = ExperimentConfig::read(&dir.join(CONFIG_FILE))?;
    let data = load_datasets(&cfg)?;
    let (store, _) = load_checkpoint::<f32>(&dir.join(STAGE2_DIR))?;
    let expected = model_config(&cfg, &data);
    if store.config != expected {
        return Err(TrainError::State(format!("checkpoint in {} does not match its config.json and cache", dir.display())).into());
    }
    let opts = cfg.eval_options();
    let (adv_train, adv_val) = if store.adversary.is_some() {
        (Some(adversary_accuracy(&store, &data.train, &opts)?), Some(adversary_accuracy(&store, &data.validation, &opts)?))
    } else {
        (None, None)
    };
    let transfer = transfer_accuracy(&store, &data.heldout, &opts, HELDOUT_TRIALS)?;
    let report = ExperimentReport {
        variant: cfg.variant,
        split_seed: cfg.split_seed,
        init_seed: cfg.init_seed,
        train_seed: cfg.train_seed,
        adversary_train: adv_train,
        adversary_validation: adv_val,
        adversary_chance: 1.0 / data.subjects() as f64,
        classifier_train: classifier_accuracy(&store, &data.train, &opts)?,
        classifier_validation: classifier_accuracy(&store, &data.validation, &opts)?,
        transfer: transfer.per_subject,
        transfer_summary: transfer.summary,
    };
    report.write(dir)?;
    println!("{} ({})", cfg.variant, dir.display());
    println!(
        "  adversary  train {}  validation {}  (chance {})",
        pct(report.adversary_train),
        pct(report.adversary_validation),
        pct(Some(report.adversary_chance))
    );
    println!("  classifier train {}  validation {}", pct(Some(report.classifier_train)), pct(Some(report.classifier_validation)));
    for t in &report.transfer {
        println!("  transfer {:<6} {}", t.subject_id, pct(Some(t.accuracy)));
    }
    let s = &report.transfer_summary;
    println!(
        "  transfer mean {}  median {}  q1 {}  q3 {}  min {}  max {}",
        pct(Some(s.mean)),
        pct(Some(s.median)),
        pct(Some(s.q1)),
        pct(Some(s.q3)),
        pct(Some(s.min)),
        pct(Some(s.max))
    );
    Ok(report)
}

pub fn report(run_dirs: &[PathBuf], out: &Path) -> Result<()> {
    let mut reports = Vec::new();
    let mut configs = Vec::new();
    for d in run_dirs {
        reports.push(ExperimentReport::read(d).with_context(|| format!("reading report in {} (run `acvae eval` first)", d.display()))?);
        configs.push(ExperimentConfig::read(&d.join(CONFIG_FILE))?);
    }
    let comparison = summarize(&reports)?;
    let mut conflicts: Vec<String> = Vec::new();
    for c in configs.iter().skip(1) {
        for k in conflicting_keys(&configs[0], c) {
            if !conflicts.contains(&k) {
                conflicts.push(k);
            }
        }
    }
    let warning = (!conflicts.is_empty()).then(|| format!("runs were configured differently: {}", conflicts.join(", ")));
    if let Some(w) = &warning {
        println!("WARNING: {w}");
    }
    comparison.write(out)?;
    fs::write(out.join("figure.svg"), box_plot_svg(&comparison.boxes, warning.as_deref()))?;
    println!("{:<6} {:>6} {:>10} {:>10} {:>10} {:>10}", "variant", "runs", "adv train", "adv val", "mean", "median");
    for b in &comparison.boxes {
        let rows: Vec<_> = comparison.rows.iter().filter(|r| r.variant == b.variant).collect();
        let avg = |f: &dyn Fn(&acvae_core::evaluation::ComparisonRow) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        println!(
            "{:<6} {:>6} {:>10} {:>10} {:>10} {:>10}",
            b.variant.as_str(),
            b.runs,
            pct(avg(&|r| r.adversary_train)),
            pct(avg(&|r| r.adversary_validation)),
            pct(Some(b.summary.mean)),
            pct(Some(b.summary.median))
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn synth_corpus(out: &Path, subjects: Option<usize>, seed: u64) -> Result<()> {
    let corpus = match subjects {
        Some(n) => SyntheticCorpus::small(n, seed),
        None => SyntheticCorpus::protocol(seed),
    };
    corpus.write(out).with_context(|| format!("writing synthetic corpus to {}", out.display()))?;
    println!("wrote {} synthetic subjects to {}", corpus.subjects, out.display());
    Ok(())
}
