use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{batches_per_epoch, Result, TrainConfig};
use crate::models::Variant;
use crate::objectives::LossBreakdown;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Representation,
    Classifier,
    EndToEnd,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Representation => "representation",
            Self::Classifier => "classifier",
            Self::EndToEnd => "end_to_end",
        }
    }
}

/// One optimizer iteration. Fields that a stage does not produce are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub batch_size: usize,
    pub reconstruction: Option<f64>,
    pub kl: Option<f64>,
    pub adversarial_term: Option<f64>,
    pub total: Option<f64>,
    pub adversary_loss: Option<f64>,
    pub classifier_loss: Option<f64>,
}

impl IterationRecord {
    pub fn generator(iteration: usize, epoch: usize, batch_size: usize, loss: LossBreakdown, adversary_loss: f64) -> Self {
        Self {
            iteration,
            epoch,
            batch_size,
            reconstruction: Some(loss.reconstruction),
            kl: Some(loss.kl),
            adversarial_term: Some(loss.adversarial_term),
            total: Some(loss.total),
            adversary_loss: Some(adversary_loss),
            classifier_loss: None,
        }
    }

    pub fn classifier(iteration: usize, epoch: usize, batch_size: usize, loss: f64) -> Self {
        Self {
            iteration,
            epoch,
            batch_size,
            reconstruction: None,
            kl: None,
            adversarial_term: None,
            total: None,
            adversary_loss: None,
            classifier_loss: Some(loss),
        }
    }
}

/// Per-epoch aggregates. Train accuracies are running accuracies over the
/// epoch's batches; validation accuracies are eval-mode passes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Iterations completed at the end of this epoch.
    pub iterations: usize,
    pub mean_total: Option<f64>,
    pub mean_adversary_loss: Option<f64>,
    pub adversary_train_accuracy: Option<f64>,
    pub adversary_validation_accuracy: Option<f64>,
    pub mean_classifier_loss: Option<f64>,
    pub classifier_train_accuracy: Option<f64>,
    pub classifier_validation_accuracy: Option<f64>,
}

impl EpochRecord {
    pub fn new(epoch: usize, iterations: usize) -> Self {
        Self { epoch, iterations, ..Self::default() }
    }

    pub fn describe(&self, variant: Variant) -> String {
        let mut s = format!("{variant} epoch {} (iter {})", self.epoch, self.iterations);
        let fields = [
            ("loss", self.mean_total),
            ("adv_loss", self.mean_adversary_loss),
            ("adv_acc", self.adversary_train_accuracy),
            ("adv_val", self.adversary_validation_accuracy),
            ("cls_loss", self.mean_classifier_loss),
            ("cls_acc", self.classifier_train_accuracy),
            ("cls_val", self.classifier_validation_accuracy),
        ];
        for (k, v) in fields {
            if let Some(v) = v {
                let _ = write!(s, " {k}={v:.4}");
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub stage: Stage,
    pub variant: Variant,
    pub train_seed: u64,
    pub init_seed: u64,
    pub batch_size: usize,
    pub trials: usize,
    pub batches_per_epoch: usize,
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

impl TrainHistory {
    pub(crate) fn new(stage: Stage, variant: Variant, cfg: &TrainConfig, init_seed: u64, trials: usize) -> Self {
        Self {
            stage,
            variant,
            train_seed: cfg.seed,
            init_seed,
            batch_size: cfg.batch_size,
            trials,
            batches_per_epoch: batches_per_epoch(trials, cfg.batch_size),
            iterations: Vec::new(),
            epochs: Vec::new(),
        }
    }

    pub fn last_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Iteration records as CSV, one row per iteration; missing values are
    /// empty cells.
    pub fn iterations_csv(&self) -> String {
        let mut out = String::from("iteration,epoch,reconstruction,kl,adversarial_term,total,adversary_loss,classifier_loss\n");
        for r in &self.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iteration,
                r.epoch,
                cell(r.reconstruction),
                cell(r.kl),
                cell(r.adversarial_term),
                cell(r.total),
                cell(r.adversary_loss),
                cell(r.classifier_loss)
            );
        }
        out
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from(
            "epoch,iterations,mean_total,mean_adversary_loss,adversary_train_accuracy,adversary_validation_accuracy,mean_classifier_loss,classifier_train_accuracy,classifier_validation_accuracy\n",
        );
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.iterations,
                cell(r.mean_total),
                cell(r.mean_adversary_loss),
                cell(r.adversary_train_accuracy),
                cell(r.adversary_validation_accuracy),
                cell(r.mean_classifier_loss),
                cell(r.classifier_train_accuracy),
                cell(r.classifier_validation_accuracy)
            );
        }
        out
    }

    /// Writes `history.json`, `history.csv` and `epochs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("history.json"), serde_json::to_vec(self)?)?;
        fs::write(dir.join("history.csv"), self.iterations_csv())?;
        fs::write(dir.join("epochs.csv"), self.epochs_csv())?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join("history.json"))?)?)
    }
}
