//! Result tables: one row per (model, features, setting) with the four
//! headline metrics. Written as CSV and rendered as Markdown.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub features: String,
    /// Sweep setting such as `hidden=64`; empty outside sweeps.
    pub setting: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub pr_auc: Option<f64>,
    /// Failure message for rows that did not produce a report.
    pub error: String,
}

impl MetricsRow {
    pub fn new(model: &str, features: &str, setting: &str, outcome: std::result::Result<&EvalReport, String>) -> Self {
        let (r, error) = match outcome {
            Ok(r) => (Some(r), String::new()),
            Err(e) => (None, e),
        };
        MetricsRow {
            model: model.into(),
            features: features.into(),
            setting: setting.into(),
            precision: r.map(|r| r.precision),
            recall: r.map(|r| r.recall),
            f1: r.map(|r| r.f1),
            pr_auc: r.map(|r| r.pr_auc),
            error,
        }
    }

    fn metrics(&self) -> [Option<f64>; 4] {
        [self.precision, self.recall, self.f1, self.pr_auc]
    }
}

pub fn write_table(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Vec<MetricsRow>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(BufReader::new(f))
        .deserialize()
        .map(|r| {
            r.map_err(|e| Error::Parse {
                path: path.into(),
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Markdown table with each metric column's maximum in bold.
pub fn render_markdown(rows: &[MetricsRow]) -> String {
    let mut best = [f64::NEG_INFINITY; 4];
    for r in rows {
        for (b, v) in best.iter_mut().zip(r.metrics()) {
            if let Some(v) = v {
                *b = b.max(v);
            }
        }
    }
    let with_setting = rows.iter().any(|r| !r.setting.is_empty());
    let mut s = String::from("| Model | Features |");
    if with_setting {
        s += " Setting |";
    }
    s += " Precision | Recall | F1 | PR-AUC |\n|---|---|";
    if with_setting {
        s += "---|";
    }
    s += "---:|---:|---:|---:|\n";
    for r in rows {
        s += &format!("| {} | {} |", r.model, r.features);
        if with_setting {
            s += &format!(" {} |", r.setting);
        }
        for (k, v) in r.metrics().iter().enumerate() {
            match v {
                Some(v) if *v == best[k] => s += &format!(" **{v:.4}** |"),
                Some(v) => s += &format!(" {v:.4} |"),
                None => s += " failed |",
            }
        }
        s.push('\n');
    }
    for r in rows.iter().filter(|r| !r.error.is_empty()) {
        s += &format!("\n{} {} {}: {}", r.model, r.features, r.setting, r.error);
    }
    s
}

pub fn write_markdown(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(render_markdown(rows).as_bytes()).map_err(|e| Error::io(path, e))
}
