use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use vesselbench::metrics::{read_aggregate_csv, AnnotatorPoint, SelectionMode};
use vesselbench::plots::{default_iso_levels, pr_curve, render, AnnotatorMarker, PlotSpec};
use vesselbench::reference::{compare, ComputedResult, ReferenceSet};
use vesselbench::Error;

use super::required;
use crate::Global;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlotArgs {
    /// Aggregate CSVs, one curve each
    #[arg(required = false)]
    pub aggregates: Vec<PathBuf>,

    /// Curve labels, in the order of the CSVs (default: file stems)
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,

    /// Summary JSON whose `annotator` entry is drawn as a marker
    #[arg(long)]
    pub annotator: Option<PathBuf>,

    /// Comma-separated iso-F levels
    #[arg(long, value_delimiter = ',', default_values_t = default_iso_levels())]
    pub iso_levels: Vec<f64>,

    #[arg(long, default_value = "")]
    pub title: String,
}

fn stem(p: &std::path::Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("series").to_string()
}

pub fn run_plot(a: &PlotArgs, g: &Global) -> Result<()> {
    if !a.labels.is_empty() && a.labels.len() != a.aggregates.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} aggregates",
            a.labels.len(),
            a.aggregates.len()
        ))
        .into());
    }
    let mut curves = Vec::with_capacity(a.aggregates.len());
    for (i, path) in a.aggregates.iter().enumerate() {
        let agg = read_aggregate_csv(path)?;
        let label = a.labels.get(i).cloned().unwrap_or_else(|| stem(path));
        curves.push(pr_curve(&agg, &label)?);
    }
    let annotator = match &a.annotator {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let point: Option<AnnotatorPoint> = serde_json::from_value(v["annotator"].clone())?;
            point.as_ref().map(AnnotatorMarker::from)
        }
        None => None,
    };
    let spec = PlotSpec {
        title: a.title.clone(),
        curves,
        annotator,
        iso_f_levels: a.iso_levels.clone(),
        ..Default::default()
    };
    let (svg, csv) = render(&spec)?;
    crate::write_file(&g.out.join("pr_curve.svg"), svg.as_bytes())?;
    crate::write_file(&g.out.join("pr_curve.csv"), csv.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Apriori,
    Aposteriori,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    /// Aggregate CSV of the computed test-set results
    #[arg(long)]
    pub aggregate: Option<PathBuf>,

    /// Train-set aggregate CSV, required for a priori selection
    #[arg(long)]
    pub train_aggregate: Option<PathBuf>,

    /// Dataset column the computed result belongs to
    #[arg(long, default_value = "DRIVE")]
    pub dataset: String,

    #[arg(long, default_value = "computed")]
    pub label: String,

    #[arg(long, value_enum, default_value = "aposteriori")]
    pub mode: ModeArg,

    /// Reference table JSON (default: the bundled published results)
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

pub fn run_compare(a: &CompareArgs, g: &Global) -> Result<()> {
    let reference = match &a.reference {
        Some(p) => ReferenceSet::load(p)?,
        None => ReferenceSet::builtin(),
    };
    let mut computed = Vec::new();
    if let Some(path) = &a.aggregate {
        let agg = read_aggregate_csv(path)?;
        if !agg.rows.is_empty() {
            let mode = match a.mode {
                ModeArg::Apriori => SelectionMode::Apriori,
                ModeArg::Aposteriori => SelectionMode::Aposteriori,
            };
            let train = match (mode, &a.train_aggregate) {
                (SelectionMode::Apriori, p) => Some(read_aggregate_csv(required(p, "train-aggregate")?)?),
                _ => None,
            };
            computed.push(ComputedResult::from_aggregate(&a.label, &a.dataset, &agg, mode, train.as_ref())?);
        }
    }
    let report = compare(&reference, &computed);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", report.text);
    crate::write_file(&g.out.join("compare.md"), report.text.as_bytes())?;
    Ok(())
}
