//! CSV emission with fixed headers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dagcomm_core::metrics::MetricsRecord;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const METRICS_HEADER: [&str; 7] = ["epoch", "success_rate", "avg_steps", "c_comm", "iei", "sei", "loss"];

/// Streams [`MetricsRecord`] rows; the header is written even when no row follows.
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(File::create(path)?));
        inner.write_record(METRICS_HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, record: &MetricsRecord) -> Result<(), HarnessError> {
        self.inner.serialize(record)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != METRICS_HEADER {
        return Err(HarnessError::Other(format!("{}: unexpected header {header:?}", path.display())));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Final evaluation of one (variant, seed) run of an ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub variant: String,
    pub seed: u64,
    pub success_rate: f64,
    pub avg_steps: f64,
    pub c_comm: f64,
    pub iei: f64,
    pub sei: f64,
    pub convergence_epoch: Option<usize>,
    /// Edge count of the evaluation DAG; empty for broadcast.
    pub edges: Option<usize>,
}

/// Per-variant medians over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub runs: usize,
    pub success_rate: f64,
    pub avg_steps: f64,
    pub c_comm: f64,
    pub iei: f64,
    pub sei: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// One comparison row per variant, in first-appearance order.
pub fn compare(rows: &[RunRow]) -> Vec<ComparisonRow> {
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    variants
        .into_iter()
        .map(|v| {
            let group: Vec<&RunRow> = rows.iter().filter(|r| r.variant == v).collect();
            let col = |f: fn(&RunRow) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            ComparisonRow {
                variant: v.to_string(),
                runs: group.len(),
                success_rate: col(|r| r.success_rate),
                avg_steps: col(|r| r.avg_steps),
                c_comm: col(|r| r.c_comm),
                iei: col(|r| r.iei),
                sei: col(|r| r.sei),
            }
        })
        .collect()
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    Ok(csv::Reader::from_path(path)?.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn metrics_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            MetricsRecord {
                epoch: 1,
                success_rate: 0.25,
                avg_steps: 19.5,
                c_comm: 390.0,
                iei: 2.123456789012345,
                sei: -0.1,
                loss: 1e-12,
            },
            MetricsRecord {
                epoch: 2,
                ..Default::default()
            },
        ];
        let mut w = MetricsWriter::create(&path).unwrap();
        for r in &rows {
            w.push(r).unwrap();
        }
        drop(w);
        assert_eq!(read_metrics(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,success_rate,avg_steps,c_comm,iei,sei,loss\n"));
    }

    #[test]
    fn comparison_keeps_variant_order() {
        let row = |v: &str, s: u64, steps: f64| RunRow {
            variant: v.into(),
            seed: s,
            success_rate: 1.0,
            avg_steps: steps,
            c_comm: 0.0,
            iei: 0.0,
            sei: 0.0,
            convergence_epoch: None,
            edges: Some(3),
        };
        let rows = vec![row("b", 0, 5.0), row("a", 0, 1.0), row("b", 1, 7.0), row("b", 2, 6.0)];
        let c = compare(&rows);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].variant.as_str(), c[0].runs, c[0].avg_steps), ("b", 3, 6.0));
        assert_eq!((c[1].variant.as_str(), c[1].runs), ("a", 1));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("runs.csv");
        write_rows(&p, &rows).unwrap();
        assert_eq!(read_rows::<RunRow>(&p).unwrap(), rows);
    }
}
