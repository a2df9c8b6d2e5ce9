use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// One line of `results.csv`. Field order is the column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub method: String,
    pub split: String,
    pub top1: f64,
    pub chance: f64,
    pub seed: u64,
}

/// Writes `results.csv` and `summary.json` into `out_dir`.
pub fn emit_metrics(rows: &[ResultRow], summary: &serde_json::Value, out_dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::validation("no result rows to emit"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(RESULTS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = out_dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(summary)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes any serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<ResultRow> {
        vec![
            ResultRow {
                run_id: "abc".into(),
                method: "erm".into(),
                split: "causal".into(),
                top1: 0.1062,
                chance: 0.1,
                seed: 7,
            },
            ResultRow {
                run_id: "abc".into(),
                method: "irm".into(),
                split: "confounded".into(),
                top1: 1.0 / 3.0,
                chance: 0.1,
                seed: 7,
            },
        ]
    }

    #[test]
    fn round_trip_and_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let s = serde_json::json!({"a": 1});
        emit_metrics(&rows(), &s, dir.path()).unwrap();
        let first = fs::read(dir.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(read_results(&dir.path().join(RESULTS_FILE)).unwrap(), rows());
        emit_metrics(&rows(), &s, dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(RESULTS_FILE)).unwrap(), first);
        let header = String::from_utf8(first).unwrap();
        assert!(header.starts_with("run_id,method,split,top1,chance,seed\n"));
    }

    #[test]
    fn empty_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_metrics(&[], &serde_json::Value::Null, dir.path()),
            Err(Error::Validation(_))
        ));
    }
}
