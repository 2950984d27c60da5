//! Result tables, lossless CSV serialization, and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

/// One table cell. Floats are serialized with 17 significant digits so the
/// CSV round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Rectangular table with named columns, time column first where applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: Vec<&str>) -> Self {
        Self { columns: columns.into_iter().map(String::from).collect(), rows: Vec::new() }
    }

    pub fn push_row(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// First non-finite float in the table, as (row, column).
    pub fn find_non_finite(&self) -> Option<(usize, String)> {
        for (i, row) in self.rows.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if let Cell::Float(x) = cell {
                    if !x.is_finite() {
                        return Some((i, self.columns[j].clone()));
                    }
                }
            }
        }
        None
    }

    /// RFC 4180 CSV with a header row.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Run manifest written alongside outputs: reruns with identical manifests
/// produce identical output bytes. Deliberately timestamp-free.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub paths: usize,
    pub grid_steps: usize,
    pub quad_points: usize,
    pub version: String,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config_json: &str, seed: u64, paths: usize, grid_steps: usize, quad_points: usize) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(config_json.as_bytes());
        let digest = hasher.finalize();
        let config_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            command: command.into(),
            config_sha256,
            seed,
            paths,
            grid_steps,
            quad_points,
            version: env!("CARGO_PKG_VERSION").into(),
            outputs: BTreeMap::new(),
        }
    }

    /// Record an output file and its content hash.
    pub fn add_output(&mut self, name: &str, bytes: &[u8]) {
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        let digest = hasher.finalize();
        self.outputs.insert(name.into(), digest.iter().map(|b| format!("{b:02x}")).collect());
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_lossless_for_floats() {
        let mut t = ResultTable::new(vec!["t", "v"]);
        let x = 0.08622588488881042_f64;
        t.push_row(vec![Cell::Float(0.0), Cell::Float(x)]);
        let csv = t.to_csv_string();
        let cell = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap();
        let back: f64 = cell.parse().unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn non_finite_detection() {
        let mut t = ResultTable::new(vec!["a"]);
        t.push_row(vec![Cell::Float(1.0)]);
        assert!(t.find_non_finite().is_none());
        t.push_row(vec![Cell::Float(f64::NAN)]);
        assert_eq!(t.find_non_finite(), Some((1, "a".to_string())));
    }

    #[test]
    fn manifest_is_deterministic() {
        let mut a = Manifest::new("hedge", "{}", 7, 100, 50, 32);
        let mut b = Manifest::new("hedge", "{}", 7, 100, 50, 32);
        a.add_output("x.csv", b"data");
        b.add_output("x.csv", b"data");
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
