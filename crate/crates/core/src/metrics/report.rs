use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Aggregation, ConfusionMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid(format!("unknown report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Overall row. Precision and recall are pooled (micro) and so equal the
/// accuracy; `f1` follows the report's aggregation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallRow {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aggregation_mode: Aggregation,
    pub per_class: Vec<ClassRow>,
    pub overall: OverallRow,
}

/// Four decimal places, rounding half away from zero on the shortest
/// decimal representation of `x` (so 0.99025 prints as 0.9903).
pub fn format_fixed4(x: f64) -> String {
    const PLACES: usize = 4;
    if !x.is_finite() {
        return x.to_string();
    }
    let repr = format!("{}", x.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes()).map(|b| b - b'0').collect();
    let int_len = int_part.len();
    let keep = int_len + PLACES;
    let round_up = digits.get(keep).is_some_and(|&d| d >= 5);
    digits.resize(keep, 0);
    let mut int_len = int_len;
    if round_up {
        let mut i = keep;
        loop {
            if i == 0 {
                digits.insert(0, 1);
                int_len += 1;
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let text: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
    let sign = if x < 0.0 && digits.iter().any(|&d| d != 0) { "-" } else { "" };
    format!("{sign}{}.{}", &text[..int_len], &text[int_len..])
}

fn round4(x: f64) -> f64 {
    format_fixed4(x).parse().expect("formatted number parses")
}

impl MetricsReport {
    pub fn from_confusion(
        cm: &ConfusionMatrix,
        class_names: &[String],
        mode: Aggregation,
    ) -> Result<Self> {
        if class_names.len() != cm.num_classes() {
            return Err(Error::shape(format!(
                "{} class names for a {}-class matrix",
                class_names.len(),
                cm.num_classes()
            )));
        }
        let per_class = class_names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let m = cm.per_class(k);
                ClassRow {
                    class: name.clone(),
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                    support: m.support,
                }
            })
            .collect();
        let micro = cm.overall(Aggregation::Micro)?;
        let agg = cm.overall(mode)?;
        Ok(MetricsReport {
            aggregation_mode: mode,
            per_class,
            overall: OverallRow {
                accuracy: micro.accuracy,
                precision: micro.precision,
                recall: micro.recall,
                f1: agg.f1,
                support: cm.total(),
            },
        })
    }

    /// The report as it reads back after rendering: every value rounded to
    /// four places.
    pub fn rounded(&self) -> Self {
        MetricsReport {
            aggregation_mode: self.aggregation_mode,
            per_class: self
                .per_class
                .iter()
                .map(|r| ClassRow {
                    class: r.class.clone(),
                    precision: round4(r.precision),
                    recall: round4(r.recall),
                    f1: round4(r.f1),
                    support: r.support,
                })
                .collect(),
            overall: OverallRow {
                accuracy: round4(self.overall.accuracy),
                precision: round4(self.overall.precision),
                recall: round4(self.overall.recall),
                f1: round4(self.overall.f1),
                support: self.overall.support,
            },
        }
    }

    /// CSV with header `class,precision,recall,f1,support` and a final
    /// `__overall__` row.
    ///
    /// With `table4` set, an `accuracy` column is added in front, echoing
    /// each class's precision (and the true accuracy on the overall row),
    /// and columns follow the published layout
    /// `class,accuracy,recall,precision,f1,support`.
    pub fn to_csv(&self, table4: bool) -> Result<String> {
        let f = format_fixed4;
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        if table4 {
            w.write_record(["class", "accuracy", "recall", "precision", "f1", "support"])?;
            for r in &self.per_class {
                w.write_record([
                    r.class.clone(),
                    f(r.precision),
                    f(r.recall),
                    f(r.precision),
                    f(r.f1),
                    r.support.to_string(),
                ])?;
            }
            let o = &self.overall;
            w.write_record([
                "__overall__".to_string(),
                f(o.accuracy),
                f(o.recall),
                f(o.precision),
                f(o.f1),
                o.support.to_string(),
            ])?;
        } else {
            w.write_record(["class", "precision", "recall", "f1", "support"])?;
            for r in &self.per_class {
                w.write_record([
                    r.class.clone(),
                    f(r.precision),
                    f(r.recall),
                    f(r.f1),
                    r.support.to_string(),
                ])?;
            }
            let o = &self.overall;
            w.write_record([
                "__overall__".to_string(),
                f(o.precision),
                f(o.recall),
                f(o.f1),
                o.support.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv flush: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// JSON mirroring the struct fields, numbers written with four places.
    pub fn to_json(&self) -> String {
        let f = format_fixed4;
        let mode = serde_json::to_string(&self.aggregation_mode).expect("enum serializes");
        let mut s = String::new();
        let _ = writeln!(s, "{{");
        let _ = writeln!(s, "  \"aggregation_mode\": {mode},");
        let _ = writeln!(s, "  \"per_class\": [");
        for (i, r) in self.per_class.iter().enumerate() {
            let name = serde_json::to_string(&r.class).expect("string serializes");
            let comma = if i + 1 < self.per_class.len() { "," } else { "" };
            let _ = writeln!(
                s,
                "    {{\"class\": {name}, \"precision\": {}, \"recall\": {}, \"f1\": {}, \"support\": {}}}{comma}",
                f(r.precision),
                f(r.recall),
                f(r.f1),
                r.support
            );
        }
        let _ = writeln!(s, "  ],");
        let o = &self.overall;
        let _ = writeln!(
            s,
            "  \"overall\": {{\"accuracy\": {}, \"precision\": {}, \"recall\": {}, \"f1\": {}, \"support\": {}}}",
            f(o.accuracy),
            f(o.precision),
            f(o.recall),
            f(o.f1),
            o.support
        );
        let _ = writeln!(s, "}}");
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render(&self, format: ReportFormat, table4: bool) -> Result<String> {
        match format {
            ReportFormat::Csv => self.to_csv(table4),
            ReportFormat::Json => Ok(self.to_json()),
        }
    }

    pub fn write(&self, path: &Path, format: ReportFormat, table4: bool) -> Result<()> {
        let text = self.render(format, table4)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed4_rounding() {
        assert_eq!(format_fixed4(0.99025), "0.9903");
        assert_eq!(format_fixed4(0.99024), "0.9902");
        assert_eq!(format_fixed4(1.0), "1.0000");
        assert_eq!(format_fixed4(0.0), "0.0000");
        assert_eq!(format_fixed4(0.99995), "1.0000");
        assert_eq!(format_fixed4(0.5), "0.5000");
        assert_eq!(format_fixed4(2.0 / 3.0), "0.6667");
        assert_eq!(format_fixed4(1e-9), "0.0000");
        assert_eq!(format_fixed4(12.34565), "12.3457");
        assert_eq!(format_fixed4(-0.00004), "0.0000");
        assert_eq!(format_fixed4(-0.25), "-0.2500");
    }

    fn perfect_two_class() -> MetricsReport {
        let mut cm = ConfusionMatrix::new(2);
        for _ in 0..3 {
            cm.update(0, 0).unwrap();
            cm.update(1, 1).unwrap();
        }
        MetricsReport::from_confusion(&cm, &["a".into(), "b".into()], Aggregation::Weighted)
            .unwrap()
    }

    #[test]
    fn perfect_csv() {
        let csv = perfect_two_class().to_csv(false).unwrap();
        assert_eq!(
            csv,
            "class,precision,recall,f1,support\n\
             a,1.0000,1.0000,1.0000,3\n\
             b,1.0000,1.0000,1.0000,3\n\
             __overall__,1.0000,1.0000,1.0000,6\n"
        );
    }

    #[test]
    fn table4_layout() {
        let csv = perfect_two_class().to_csv(true).unwrap();
        assert!(csv.starts_with("class,accuracy,recall,precision,f1,support\n"));
    }

    #[test]
    fn json_round_trip() {
        let mut cm = ConfusionMatrix::new(3);
        for (t, p) in [(0, 0), (0, 1), (1, 1), (2, 2), (2, 0), (2, 2), (1, 1)] {
            cm.update(t, p).unwrap();
        }
        let names = vec!["x \"quoted\"".to_string(), "y".into(), "z".into()];
        let report = MetricsReport::from_confusion(&cm, &names, Aggregation::Macro).unwrap();
        let text = report.to_json();
        let parsed = MetricsReport::from_json(&text).unwrap();
        assert_eq!(parsed, report.rounded());
        assert_eq!(parsed.to_json(), text);
    }
}
