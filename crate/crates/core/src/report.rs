//! Plain CSV tables for experiment outputs.
//!
//! Every table has a header row and ends with a metadata comment line
//! `# seed=<seed>, version=<crate version>`. Floats use Rust's shortest
//! round-trip formatting so identical inputs give identical bytes.

use std::fmt::Write as _;

use crate::abstractmodel::OrderingReport;
use crate::reconerr::TraceRow;
use crate::search::{AblationRow, SearchReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    /// Renders the table followed by the metadata comment line.
    pub fn render(&self, seed: Option<u64>) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        let _ = writeln!(out, "# seed={seed}, version={VERSION}");
        out
    }
}

pub fn trace_table(rows: &[TraceRow]) -> CsvTable {
    let mut t = CsvTable::new(["layer_index", "rate", "error", "sigma_min_sq", "bound_rhs"]);
    for r in rows {
        t.push([
            r.layer_index.to_string(),
            fmt_f64(r.rate),
            fmt_f64(r.error),
            fmt_opt(r.sigma_min_sq),
            fmt_opt(r.bound_rhs),
        ]);
    }
    t
}

pub fn search_table(report: &SearchReport) -> CsvTable {
    let mut t = CsvTable::new(["beta", "objective"]);
    for c in &report.candidates {
        t.push([fmt_opt(c.beta), fmt_f64(c.objective)]);
    }
    t
}

pub fn ablation_table(rows: &[AblationRow]) -> CsvTable {
    let mut t = CsvTable::new(["step", "evaluations", "best_beta", "best_objective"]);
    for r in rows {
        t.push([
            fmt_f64(r.step),
            r.evaluations.to_string(),
            fmt_f64(r.best_beta),
            fmt_f64(r.best_objective),
        ]);
    }
    t
}

/// Orderings as dash-joined source indices with their totals, best first.
pub fn ordering_table(report: &OrderingReport) -> CsvTable {
    let mut t = CsvTable::new(["permutation", "total"]);
    for r in &report.ranking {
        let perm: Vec<String> = r.order.iter().map(usize::to_string).collect();
        t.push([perm.join("-"), fmt_f64(r.total)]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_layout() {
        let mut t = CsvTable::new(["a", "b"]);
        t.push(["1", "0.5"]);
        let s = t.render(Some(7));
        assert_eq!(s, format!("a,b\n1,0.5\n# seed=7, version={VERSION}\n"));
        assert!(t.render(None).ends_with(&format!("# seed=none, version={VERSION}\n")));
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_opt(None), "");
    }
}
