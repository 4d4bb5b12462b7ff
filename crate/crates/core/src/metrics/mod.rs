//! Confusion matrices and the precision / recall / F1 / accuracy suite.
//!
//! Per-class figures are one-vs-rest: for class k, TP is the diagonal entry,
//! FP the rest of column k and FN the rest of row k. Every ratio with a zero
//! denominator is reported as 0.

mod report;

use serde::{Deserialize, Serialize};

pub use report::{format_fixed4, ClassRow, MetricsReport, OverallRow, ReportFormat};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Micro,
    Macro,
    #[default]
    Weighted,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Aggregation::Micro),
            "macro" => Ok(Aggregation::Macro),
            "weighted" => Ok(Aggregation::Weighted),
            other => Err(Error::invalid(format!("unknown aggregation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverallMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// `counts[true][pred]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn update(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::invalid(format!(
                "label pair ({truth}, {pred}) out of range for {} classes",
                self.k
            )));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    /// Elementwise sum with another matrix of the same size.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    fn column_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    pub fn per_class(&self, class: usize) -> ClassMetrics {
        let tp = self.get(class, class);
        let predicted = self.column_sum(class);
        let support = self.row(class).iter().sum::<u64>();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        ClassMetrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
            support,
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::invalid("confusion matrix is empty"));
        }
        Ok(ratio(self.trace(), total))
    }

    /// Aggregate precision, recall and F1. Micro pools the one-vs-rest
    /// counts (so precision and recall both reduce to accuracy); macro is
    /// the unweighted mean over classes; weighted weights each class by
    /// its support.
    pub fn overall(&self, mode: Aggregation) -> Result<OverallMetrics> {
        let accuracy = self.accuracy()?;
        let total = self.total();
        let per: Vec<ClassMetrics> = (0..self.k).map(|c| self.per_class(c)).collect();
        let (precision, recall, f1) = match mode {
            Aggregation::Micro => {
                let tp: u64 = self.trace();
                let fp: u64 = (0..self.k).map(|c| self.column_sum(c) - self.get(c, c)).sum();
                let fn_: u64 = (0..self.k)
                    .map(|c| per[c].support - self.get(c, c))
                    .sum();
                let p = ratio(tp, tp + fp);
                let r = ratio(tp, tp + fn_);
                (p, r, f1_score(p, r))
            }
            Aggregation::Macro => {
                let k = self.k as f64;
                (
                    per.iter().map(|m| m.precision).sum::<f64>() / k,
                    per.iter().map(|m| m.recall).sum::<f64>() / k,
                    per.iter().map(|m| m.f1).sum::<f64>() / k,
                )
            }
            Aggregation::Weighted => {
                let w = |f: fn(&ClassMetrics) -> f64| {
                    per.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
                };
                (w(|m| m.precision), w(|m| m.recall), w(|m| m.f1))
            }
        };
        Ok(OverallMetrics {
            accuracy,
            precision,
            recall,
            f1,
        })
    }

    /// Grid CSV: header `true\pred,<names>`, then one row per true class.
    pub fn to_csv(&self, class_names: &[String]) -> Result<String> {
        if class_names.len() != self.k {
            return Err(Error::shape(format!(
                "{} class names for a {}-class matrix",
                class_names.len(),
                self.k
            )));
        }
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec!["true\\pred".to_string()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header)?;
        for (t, name) in class_names.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.row(t).iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv flush: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}
