//! Helpers shared by the acceptance suite in `tests/acceptance.rs`.

use std::fs;
use std::io::Write;
use std::path::Path;

/// Prints one result line straight to stderr, past the test harness's
/// output capture, so every run shows it.
pub fn report(criterion: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {criterion} [{title}]: {verdict} ({detail})\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// A CSV file written by the CLI: header names and numeric rows.
#[derive(Clone, Debug)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Csv {
    pub fn read(path: &Path) -> Csv {
        let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let mut lines = text.lines();
        let header = lines
            .next()
            .expect("header row")
            .split(',')
            .map(String::from)
            .collect();
        let rows = lines
            .map(|l| l.split(',').map(|c| c.parse().expect("numeric cell")).collect())
            .collect();
        Csv { header, rows }
    }

    /// The column whose header is `name`.
    pub fn column(&self, name: &str) -> Vec<f64> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .unwrap_or_else(|| panic!("no column {name:?} in {:?}", self.header));
        self.rows.iter().map(|r| r[i]).collect()
    }
}

/// Indices of strict interior local maxima.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] > values[i + 1])
        .collect()
}
