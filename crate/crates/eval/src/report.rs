//! CSV (one row per game or table row) and JSON summary writers.

use std::path::Path;

use serde::Serialize;

use nes_core::io::{write_atomic, write_json};

use crate::error::Result;

/// Writes `rows` as CSV with a header derived from the row type. Missing
/// optional values are empty cells.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn write_summary<T: Serialize + ?Sized>(path: &Path, summary: &T) -> Result<()> {
    Ok(write_json(path, summary)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Row {
        index: usize,
        gap: f64,
        solver_gap: Option<f64>,
    }

    #[test]
    fn csv_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("games.csv");
        let rows = vec![
            Row { index: 0, gap: 0.1, solver_gap: Some(0.2) },
            Row { index: 1, gap: 1e-17, solver_gap: None },
        ];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("index,gap,solver_gap\n"));
        let back: Vec<Row> = csv::Reader::from_path(&path).unwrap().deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(back, rows);
    }
}
