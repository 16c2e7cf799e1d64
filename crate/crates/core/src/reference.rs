//! Published F1 scores shipped for side-by-side display with computed
//! results. The values are transcribed, never recomputed.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{select_threshold, Aggregate, SelectionMode};

const BUILTIN: &str = include_str!("../data/reference_f1.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCell {
    /// Verbatim text, e.g. `0.8030 (0.0142)`.
    pub value: String,
    pub same_split: bool,
}

impl ReferenceCell {
    pub fn display(&self) -> String {
        if self.same_split {
            format!("{}*", self.value)
        } else {
            self.value.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: String,
    pub year: Option<u16>,
    pub category: String,
    pub citation: Option<String>,
    /// Keyed by dataset name; missing entries were not reported.
    pub f1: std::collections::BTreeMap<String, ReferenceCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub name: String,
    pub title: String,
    pub rows: Vec<ReferenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub version: u32,
    pub note: String,
    pub footnote: String,
    pub datasets: Vec<String>,
    pub tables: Vec<ReferenceTable>,
}

impl ReferenceSet {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN).expect("bundled reference table parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn table(&self, name: &str) -> Option<&ReferenceTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn lookup(&self, table: &str, method: &str, dataset: &str) -> Option<&ReferenceCell> {
        self.table(table)?
            .rows
            .iter()
            .find(|r| r.method == method)?
            .f1
            .get(dataset)
    }
}

/// A computed micro F1 summary for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputedResult {
    pub label: String,
    pub dataset: String,
    pub threshold: f64,
    pub f1_micro_mean: f64,
    pub f1_micro_std: f64,
}

impl ComputedResult {
    /// Summary at the threshold chosen by `mode`.
    pub fn from_aggregate(
        label: &str,
        dataset: &str,
        agg: &Aggregate,
        mode: SelectionMode,
        train_agg: Option<&Aggregate>,
    ) -> Result<Self> {
        let threshold = select_threshold(agg, mode, train_agg)?;
        let row = agg
            .row_at(threshold)
            .ok_or_else(|| Error::invalid(format!("threshold {threshold} is not on the test grid")))?;
        Ok(Self {
            label: label.to_string(),
            dataset: dataset.to_string(),
            threshold,
            f1_micro_mean: row.f1_micro_mean,
            f1_micro_std: row.f1_micro_std,
        })
    }

    pub fn display(&self) -> String {
        format!("{:.4} ({:.4})", self.f1_micro_mean, self.f1_micro_std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub text: String,
    pub warnings: Vec<String>,
}

fn push_row(out: &mut String, cells: &[String]) {
    out.push('|');
    for c in cells {
        let _ = write!(out, " {c} |");
    }
    out.push('\n');
}

/// Markdown tables of the reference rows with the computed rows appended.
pub fn compare(reference: &ReferenceSet, computed: &[ComputedResult]) -> CompareReport {
    let mut warnings = Vec::new();
    if computed.is_empty() {
        warnings.push("no computed results; showing reference values only".to_string());
    }
    for c in computed {
        if !reference.datasets.contains(&c.dataset) {
            warnings.push(format!("dataset {:?} has no reference column", c.dataset));
        }
    }

    let mut header = vec!["Method".to_string(), "Year".to_string()];
    header.extend(reference.datasets.iter().cloned());
    let rule: Vec<String> = header.iter().map(|_| "---".to_string()).collect();

    let mut text = String::new();
    for table in &reference.tables {
        let _ = writeln!(text, "## {}\n", table.title);
        push_row(&mut text, &header);
        push_row(&mut text, &rule);
        for r in &table.rows {
            let mut cells = vec![r.method.clone(), r.year.map(|y| y.to_string()).unwrap_or_default()];
            cells.extend(
                reference
                    .datasets
                    .iter()
                    .map(|d| r.f1.get(d).map(ReferenceCell::display).unwrap_or_else(|| "-".into())),
            );
            push_row(&mut text, &cells);
        }
        if table.name == "overview" {
            let mut labels: Vec<&str> = computed.iter().map(|c| c.label.as_str()).collect();
            labels.dedup();
            for label in labels {
                let mut cells = vec![format!("{label} (computed)"), String::new()];
                cells.extend(reference.datasets.iter().map(|d| {
                    computed
                        .iter()
                        .find(|c| c.label == label && &c.dataset == d)
                        .map(ComputedResult::display)
                        .unwrap_or_else(|| "-".into())
                }));
                push_row(&mut text, &cells);
            }
        }
        text.push('\n');
    }
    let _ = writeln!(text, "{}", reference.footnote);
    for w in &warnings {
        let _ = writeln!(text, "\nwarning: {w}");
    }
    CompareReport { text, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_table_values() {
        let r = ReferenceSet::builtin();
        let cell = r.lookup("overview", "2nd human observer", "DRIVE").unwrap();
        assert_eq!(cell.display(), "0.7931*");
        let cell = r.lookup("overview", "M2U-Net COVD-", "HRF").unwrap();
        assert_eq!(cell.display(), "0.8020 (0.0445)");
        assert_eq!(r.lookup("overview", "M2U-Net Target", "DRIVE").unwrap().value, "0.8030 (0.0142)");
        assert!(r.lookup("overview", "Fraz et al.", "HRF").is_none());
        assert_eq!(r.lookup("baselines", "U-Net", "STARE").unwrap().value, "0.829 (0.042)");
    }

    #[test]
    fn reference_only_report_warns() {
        let rep = compare(&ReferenceSet::builtin(), &[]);
        assert_eq!(rep.warnings.len(), 1);
        assert!(rep.text.contains("| 2nd human observer |  | 0.7931* | 0.752 | 0.7686 | - | - |"));
        assert!(rep.text.contains("*Same train-test split as adopted in this work"));
    }

    #[test]
    fn computed_rows_are_appended() {
        let c = ComputedResult {
            label: "toy".into(),
            dataset: "DRIVE".into(),
            threshold: 0.5,
            f1_micro_mean: 0.71234,
            f1_micro_std: 0.01,
        };
        let rep = compare(&ReferenceSet::builtin(), &[c]);
        assert!(rep.warnings.is_empty());
        assert!(rep.text.contains("| toy (computed) |  | 0.7123 (0.0100) | - |"));
    }
}
