use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::{self, Checkpoint};
use crate::data::{load_image, read_mapping, BatchIter, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::metrics::{Aggregation, ConfusionMatrix, MetricsReport, ReportFormat};
use crate::nn::ResNet9;
use crate::tensor::{kernels, Tensor};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode predictions over `samples`, accumulated into a confusion
/// matrix. Returns the matrix and the paths that failed to decode.
pub fn evaluate(
    model: &ResNet9<f32>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<(ConfusionMatrix, Vec<PathBuf>)> {
    let k = model.num_classes();
    let mut cm = ConfusionMatrix::new(k);
    let mut batches = BatchIter::sequential(samples, batch_size, model.spec().input_size);
    for batch in batches.by_ref() {
        let logits = model.infer(&batch.images)?;
        for (row, &truth) in logits.data().chunks(k).zip(&batch.labels) {
            cm.update(truth, argmax(row))?;
        }
    }
    Ok((cm, batches.skipped().to_vec()))
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub report_format: ReportFormat,
    pub aggregation: Aggregation,
    pub table4_layout: bool,
    pub class_mapping: Option<PathBuf>,
    /// Directory for `report.<ext>` and `confusion.csv`; nothing is written
    /// when unset.
    pub out_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            batch_size: 32,
            report_format: ReportFormat::Csv,
            aggregation: Aggregation::Weighted,
            table4_layout: false,
            class_mapping: None,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub class_names: Vec<String>,
    pub skipped: Vec<PathBuf>,
}

pub(crate) fn write_eval_files(
    out_dir: &Path,
    report: &MetricsReport,
    confusion: &ConfusionMatrix,
    class_names: &[String],
    format: ReportFormat,
    table4: bool,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    report.write(&out_dir.join(format!("report.{}", format.extension())), format, table4)?;
    let grid = out_dir.join("confusion.csv");
    std::fs::write(&grid, confusion.to_csv(class_names)?).map_err(|e| Error::io(&grid, e))
}

/// Scores a loaded checkpoint on an already-built manifest. The manifest's
/// classes must all be known to the checkpoint.
pub fn eval_manifest(ck: &Checkpoint, manifest: &DatasetManifest, opts: &EvalOptions) -> Result<EvalOutcome> {
    let manifest = manifest.remap_to(&ck.class_names)?;
    let (confusion, skipped) = evaluate(&ck.model, &manifest.samples, opts.batch_size)?;
    if confusion.total() == 0 {
        return Err(Error::data("no evaluable images"));
    }
    let report = MetricsReport::from_confusion(&confusion, &ck.class_names, opts.aggregation)?;
    if let Some(dir) = &opts.out_dir {
        write_eval_files(
            dir,
            &report,
            &confusion,
            &ck.class_names,
            opts.report_format,
            opts.table4_layout,
        )?;
    }
    Ok(EvalOutcome {
        report,
        confusion,
        class_names: ck.class_names.clone(),
        skipped,
    })
}

/// Evaluates `checkpoint_path` on a directory-per-class tree.
pub fn cmd_eval(checkpoint_path: &Path, data_dir: &Path, opts: &EvalOptions) -> Result<EvalOutcome> {
    let ck = checkpoint::load(checkpoint_path)?;
    let mapping = opts.class_mapping.as_deref().map(read_mapping).transpose()?;
    let (manifest, _) = DatasetManifest::scan(data_dir, mapping.as_ref())?;
    eval_manifest(&ck, &manifest, opts)
}

/// Evaluates on a manifest CSV such as the holdout list a training run
/// writes.
pub fn cmd_eval_manifest(checkpoint_path: &Path, manifest_csv: &Path, opts: &EvalOptions) -> Result<EvalOutcome> {
    let ck = checkpoint::load(checkpoint_path)?;
    let text = std::fs::read_to_string(manifest_csv).map_err(|e| Error::io(manifest_csv, e))?;
    let root = manifest_csv.parent().unwrap_or(Path::new("."));
    let manifest = DatasetManifest::from_csv(&text, root)?;
    eval_manifest(&ck, &manifest, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class_index: usize,
    pub class_name: String,
    pub probability: f64,
}

/// Softmax over one row of logits, sorted by descending probability with
/// ties broken by class index, truncated to `top_k`.
pub fn rank_logits(logits: &[f32], class_names: &[String], top_k: usize) -> Result<Vec<Prediction>> {
    let k = class_names.len();
    if logits.len() != k {
        return Err(Error::shape(format!("{} logits for {k} classes", logits.len())));
    }
    if top_k == 0 || top_k > k {
        return Err(Error::invalid(format!("top-k must lie in 1..={k}, got {top_k}")));
    }
    let wide: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
    let probs = kernels::softmax(&Tensor::from_vec(&[1, k], wide)?)?;
    let mut ranked: Vec<Prediction> = probs
        .data()
        .iter()
        .enumerate()
        .map(|(i, &p)| Prediction {
            class_index: i,
            class_name: class_names[i].clone(),
            probability: p,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then(a.class_index.cmp(&b.class_index))
    });
    ranked.truncate(top_k);
    Ok(ranked)
}

pub fn predict_image(ck: &Checkpoint, image: &Path, top_k: usize) -> Result<Vec<Prediction>> {
    let size = ck.model.spec().input_size;
    let x = load_image(image, size)?.reshape(&[1, 3, size, size])?;
    let logits = ck.model.infer(&x)?;
    rank_logits(logits.data(), &ck.class_names, top_k)
}

pub fn cmd_predict(checkpoint_path: &Path, image: &Path, top_k: usize) -> Result<Vec<Prediction>> {
    let ck = checkpoint::load(checkpoint_path)?;
    predict_image(&ck, image, top_k)
}
