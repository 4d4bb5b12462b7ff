use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::config::TrainConfig;
use super::evaluate::{evaluate, write_eval_files};
use crate::checkpoint;
use crate::data::{read_mapping, stratified_split, BatchIter, DatasetManifest, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::nn::{Mode, ModelSpec, ResNet9};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Rng, Tape, Tensor};

/// Stream offset so batch shuffling does not replay the initializer's draws.
const SHUFFLE_STREAM: u64 = 0x5eed_0f_5bu64;

/// One optimizer step on a batch: train-mode forward, cross-entropy,
/// backward, Adam update. Returns the batch's mean loss.
pub fn train_step(
    model: &mut ResNet9<f32>,
    adam: &mut Adam<f32>,
    images: &Tensor<f32>,
    labels: &[usize],
    lr: f64,
) -> Result<f32> {
    let mut tape = Tape::new();
    let x = tape.leaf(images.clone());
    let logits = model.forward(&mut tape, x, Mode::Train)?;
    let loss_var = tape.cross_entropy(logits, labels)?;
    let loss = tape.value(loss_var).item()?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss is {loss}")));
    }
    let grads = tape.backward(loss_var)?;
    let mut params = model.params_mut();
    let grad_refs = params
        .iter()
        .map(|p| {
            grads
                .param(&p.name)
                .ok_or_else(|| Error::invalid(format!("no gradient recorded for {}", p.name)))
        })
        .collect::<Result<Vec<&Tensor<f32>>>>()?;
    adam.step(&mut params, &grad_refs, lr)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub class_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the best checkpoint (0 when no training happened).
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub steps: u64,
}

fn load_datasets(config: &TrainConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    let mapping = config.class_mapping.as_deref().map(read_mapping).transpose()?;
    let (train, holdout) = match (&config.data_dir, &config.train_dir, &config.val_dir) {
        (Some(root), _, _) => {
            let (all, _) = DatasetManifest::scan(root, mapping.as_ref())?;
            let spec = SplitSpec {
                train_fraction: config.train_fraction,
                seed: config.seed,
            };
            stratified_split(&all, &spec)?
        }
        (None, Some(train_dir), Some(val_dir)) => {
            let (train, _) = DatasetManifest::scan(train_dir, mapping.as_ref())?;
            let (val, _) = DatasetManifest::scan(val_dir, mapping.as_ref())?;
            let val = val.remap_to(&train.class_names)?;
            (train, val)
        }
        _ => unreachable!("validated config names a data source"),
    };
    if train.num_classes() < 2 {
        return Err(Error::data("training needs at least two classes"));
    }
    if holdout.is_empty() {
        return Err(Error::data("holdout set is empty"));
    }
    Ok((train, holdout))
}

fn model_spec(config: &TrainConfig, num_classes: usize) -> Result<ModelSpec> {
    let spec = match &config.architecture {
        Some(spec) => spec.clone(),
        None => ModelSpec::resnet9(num_classes, config.img_size),
    };
    if spec.num_classes != num_classes || spec.input_size != config.img_size {
        return Err(Error::invalid(format!(
            "architecture expects {} classes at {}px, data has {num_classes} classes at {}px",
            spec.num_classes, spec.input_size, config.img_size
        )));
    }
    spec.validate()?;
    Ok(spec)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs a full training job and writes its artifacts to `config.out_dir`:
/// `config.json`, `train_manifest.csv`, `holdout_manifest.csv`,
/// `epoch_log.csv`, `best.ckpt`, `final.ckpt`, `report.<ext>` and
/// `confusion.csv`.
pub fn cmd_train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.effective_threads())
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| run(config))
}

fn run(config: &TrainConfig) -> Result<TrainOutcome> {
    let (train, holdout) = load_datasets(config)?;
    let class_names = train.class_names.clone();
    let spec = model_spec(config, class_names.len())?;

    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let echo = json!({
        "config": config,
        "num_classes": class_names.len(),
        "class_names": class_names,
        "train_samples": train.len(),
        "holdout_samples": holdout.len(),
        "architecture": spec,
    });
    write_text(&dir.join("config.json"), &serde_json::to_string_pretty(&echo)?)?;
    train.write_csv(&dir.join("train_manifest.csv"))?;
    holdout.write_csv(&dir.join("holdout_manifest.csv"))?;

    let mut init_rng = Rng::new(config.seed);
    let mut model = ResNet9::<f32>::init(spec, &mut init_rng)?;
    let mut adam = Adam::new(AdamConfig {
        weight_decay: config.weight_decay,
        decoupled: config.decoupled_weight_decay,
        ..AdamConfig::default()
    });
    let steps_per_epoch = train.len().div_ceil(config.batch_size) as u64;
    let schedule = config.lr_schedule(steps_per_epoch);
    let mut shuffle_rng = Rng::new(config.seed ^ SHUFFLE_STREAM);

    let metadata = |epoch: usize, acc: f64| {
        json!({"config": config, "epoch": epoch, "val_accuracy": acc})
    };
    let best_path = dir.join("best.ckpt");
    let final_path = dir.join("final.ckpt");
    let log_path = dir.join("epoch_log.csv");
    let mut log = String::from("epoch,train_loss,val_accuracy,lr\n");
    write_text(&log_path, &log)?;

    let mut records = Vec::new();
    let mut step: u64 = 0;
    let mut batch_index: u64 = 0;
    let mut best: Option<(usize, f64)> = None;
    let mut last_eval: Option<ConfusionMatrix> = None;

    for epoch in 1..=config.epochs {
        let mut batches =
            BatchIter::shuffled(&train.samples, config.batch_size, config.img_size, &mut shuffle_rng);
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for batch in batches.by_ref() {
            let lr = schedule.lr(step);
            let loss = train_step(&mut model, &mut adam, &batch.images, &batch.labels, lr).map_err(
                |e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!(
                        "epoch {epoch}, batch {batch_index}: {msg}"
                    )),
                    other => other,
                },
            )?;
            loss_sum += loss as f64 * batch.labels.len() as f64;
            seen += batch.labels.len();
            step += 1;
            batch_index += 1;
        }
        if seen == 0 {
            return Err(Error::data("no training image could be decoded"));
        }
        let (cm, _) = evaluate(&model, &holdout.samples, config.batch_size)?;
        let accuracy = cm.accuracy()?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_accuracy: accuracy,
            lr: schedule.lr(step),
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, holdout accuracy {:.4}, lr {:e}",
            record.train_loss,
            record.val_accuracy,
            record.lr
        );
        let _ = writeln!(
            log,
            "{},{},{},{}",
            record.epoch, record.train_loss, record.val_accuracy, record.lr
        );
        write_text(&log_path, &log)?;
        records.push(record);

        if best.is_none_or(|(_, b)| accuracy > b) {
            best = Some((epoch, accuracy));
            checkpoint::save(&best_path, &model, &class_names, &metadata(epoch, accuracy))?;
        }
        if config.save_every.is_some_and(|k| epoch % k == 0) {
            let path = dir.join(format!("epoch_{epoch}.ckpt"));
            checkpoint::save(&path, &model, &class_names, &metadata(epoch, accuracy))?;
        }
        last_eval = Some(cm);
    }

    let confusion = match last_eval {
        Some(cm) => cm,
        None => evaluate(&model, &holdout.samples, config.batch_size)?.0,
    };
    let final_accuracy = confusion.accuracy()?;
    let final_epoch = config.epochs;
    checkpoint::save(&final_path, &model, &class_names, &metadata(final_epoch, final_accuracy))?;
    let (best_epoch, best_accuracy) = match best {
        Some(b) => b,
        None => {
            checkpoint::save(&best_path, &model, &class_names, &metadata(0, final_accuracy))?;
            (0, final_accuracy)
        }
    };

    let report = MetricsReport::from_confusion(&confusion, &class_names, config.aggregation)?;
    write_eval_files(
        dir,
        &report,
        &confusion,
        &class_names,
        config.report_format,
        config.table4_layout,
    )?;

    Ok(TrainOutcome {
        run_dir: dir.clone(),
        class_names,
        epochs: records,
        best_epoch,
        best_accuracy,
        final_accuracy,
        report,
        confusion,
        final_checkpoint: final_path,
        best_checkpoint: best_path,
        steps: step,
    })
}
