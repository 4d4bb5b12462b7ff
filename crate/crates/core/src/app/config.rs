use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_TRAIN_FRACTION;
use crate::error::{Error, Result};
use crate::metrics::{Aggregation, ReportFormat};
use crate::nn::{ModelSpec, DEFAULT_INPUT_SIZE};
use crate::optim::{CosineSchedule, LrSchedule, DEFAULT_LR, DEFAULT_WEIGHT_DECAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Cosine annealing stepped once per batch.
    #[default]
    Cosine,
    /// Cosine annealing stepped once per epoch.
    CosineEpoch,
    Constant,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ScheduleKind::Cosine),
            "cosine-epoch" => Ok(ScheduleKind::CosineEpoch),
            "constant" => Ok(ScheduleKind::Constant),
            other => Err(Error::invalid(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Single tree split into train and holdout.
    pub data_dir: Option<PathBuf>,
    /// Pre-split trees; used when `data_dir` is unset.
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    /// Optional `directory_name,canonical_name` CSV.
    pub class_mapping: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
    pub seed: u64,
    pub img_size: usize,
    pub schedule: ScheduleKind,
    pub deterministic: bool,
    /// Worker threads; 0 picks one thread in deterministic mode and all
    /// cores otherwise.
    pub threads: usize,
    pub train_fraction: f64,
    /// Also write `epoch_<n>.ckpt` every this many epochs.
    pub save_every: Option<usize>,
    pub report_format: ReportFormat,
    pub aggregation: Aggregation,
    /// Use the `class,accuracy,recall,precision,f1,support` CSV layout.
    pub table4_layout: bool,
    /// Custom layer stack; the standard network is built when unset.
    pub architecture: Option<ModelSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data_dir: None,
            train_dir: None,
            val_dir: None,
            class_mapping: None,
            out_dir: PathBuf::from("runs/latest"),
            epochs: 5,
            batch_size: 32,
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            decoupled_weight_decay: false,
            seed: 42,
            img_size: DEFAULT_INPUT_SIZE,
            schedule: ScheduleKind::Cosine,
            deterministic: true,
            threads: 0,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            save_every: None,
            report_format: ReportFormat::Csv,
            aggregation: Aggregation::Weighted,
            table4_layout: false,
            architecture: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.data_dir, &self.train_dir, &self.val_dir) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            _ => {
                return Err(Error::invalid(
                    "give either a data directory or both train and validation directories",
                ))
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.img_size == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.save_every == Some(0) {
            return Err(Error::invalid("save-every must be positive"));
        }
        Ok(())
    }

    pub fn effective_threads(&self) -> usize {
        match (self.threads, self.deterministic) {
            (0, true) => 1,
            (0, false) => std::thread::available_parallelism().map_or(1, |n| n.get()),
            (n, _) => n,
        }
    }

    pub fn lr_schedule(&self, steps_per_epoch: u64) -> LrSchedule {
        let epochs = self.epochs as u64;
        match self.schedule {
            ScheduleKind::Constant => LrSchedule::Constant { lr: self.lr },
            ScheduleKind::Cosine => LrSchedule::Cosine {
                schedule: CosineSchedule::new(self.lr, epochs * steps_per_epoch),
            },
            ScheduleKind::CosineEpoch => LrSchedule::CosineByEpoch {
                schedule: CosineSchedule::new(self.lr, epochs),
                steps_per_epoch,
            },
        }
    }
}
