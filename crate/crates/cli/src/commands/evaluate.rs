use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vesselbench::datasets::{Manifest, SamplePair, Split};
use vesselbench::imagegrid::{load_mask_file, load_probability_file, BinaryMask, EvalRegion};
use vesselbench::metrics::{
    aggregate, aggregate_csv, annotator_point_in, default_thresholds, per_image_csv, select_threshold, sweep,
    Aggregate, AggregateRow, AnnotatorPoint, SelectionMode, ThresholdSweep,
};
use vesselbench::plots::{pr_curve, render, AnnotatorMarker, PlotSpec};
use vesselbench::Error;

use super::{file_stem, required};
use crate::{Global, Incomplete};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Dataset manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Directory of test-split predictions named `<id>.png` or `<id>.pmap`
    #[arg(long)]
    pub predictions: Option<PathBuf>,

    /// Train-split predictions, enabling a priori threshold selection
    #[arg(long)]
    pub train_predictions: Option<PathBuf>,

    /// Series name used in the plot and summary
    #[arg(long, default_value = "predictions")]
    pub label: String,

    /// Score only pixels inside each sample's field-of-view mask
    #[arg(long)]
    pub use_mask: bool,
}

/// Finds `<id>.pmap` or `<id>.png` under `dir`.
pub fn prediction_path(dir: &Path, id: &str) -> Option<PathBuf> {
    let stem = file_stem(id);
    ["pmap", "png"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn sweep_sample(s: &SamplePair, dir: &Path, use_mask: bool) -> Result<ThresholdSweep> {
    let path = prediction_path(dir, &s.id)
        .ok_or_else(|| Error::InvalidArgument(format!("no prediction for {:?} in {}", s.id, dir.display())))?;
    let p = load_probability_file(&path)?;
    let gt = load_mask_file(&s.gt)?;
    let mask = match (&s.mask, use_mask) {
        (Some(m), true) => Some(load_mask_file(m)?),
        _ => None,
    };
    let s2 = sweep(&p, &gt, &default_thresholds(), EvalRegion::from_option(mask.as_ref()))?;
    Ok(s2.with_id(&s.id))
}

#[derive(Debug, Serialize)]
struct Failure {
    id: String,
    error: String,
}

/// Sweeps every sample of `split`; failures are collected, not fatal.
fn sweep_split(m: &Manifest, split: Split, dir: &Path, use_mask: bool) -> (Vec<ThresholdSweep>, Vec<Failure>) {
    let samples: Vec<&SamplePair> = m.split(split).collect();
    let results: Vec<_> = samples.par_iter().map(|s| sweep_sample(s, dir, use_mask)).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (s, r) in samples.iter().zip(results) {
        match r {
            Ok(sw) => ok.push(sw),
            Err(e) => failed.push(Failure { id: s.id.clone(), error: format!("{e:#}") }),
        }
    }
    (ok, failed)
}

#[derive(Debug, Serialize)]
struct Selected {
    mode: SelectionMode,
    #[serde(flatten)]
    row: AggregateRow,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    dataset: &'a str,
    label: &'a str,
    n_images: usize,
    a_posteriori: Selected,
    a_priori: Option<Selected>,
    annotator: Option<AnnotatorPoint>,
    failed: Vec<Failure>,
}

fn selected(agg: &Aggregate, mode: SelectionMode, train: Option<&Aggregate>) -> Result<Selected> {
    let t = select_threshold(agg, mode, train)?;
    let row = *agg
        .row_at(t)
        .ok_or_else(|| Error::InvalidArgument(format!("threshold {t} missing from test grid")))?;
    Ok(Selected { mode, row })
}

fn annotator(m: &Manifest, use_mask: bool) -> Result<Option<AnnotatorPoint>> {
    let test: Vec<&SamplePair> = m.split(Split::Test).collect();
    if test.is_empty() || test.iter().any(|s| s.gt2.is_none()) {
        return Ok(None);
    }
    let load = |p: &Path| load_mask_file(p);
    let gt2 = test.iter().map(|s| load(s.gt2.as_deref().expect("checked"))).collect::<Result<Vec<_>, _>>()?;
    let gt = test.iter().map(|s| load(&s.gt)).collect::<Result<Vec<_>, _>>()?;
    let masks: Vec<Option<BinaryMask>> = test
        .iter()
        .map(|s| match (&s.mask, use_mask) {
            (Some(p), true) => load(p).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_, _>>()?;
    let regions: Vec<EvalRegion<'_>> = masks.iter().map(|m| EvalRegion::from_option(m.as_ref())).collect();
    Ok(Some(annotator_point_in(&gt2, &gt, &regions)?))
}

pub fn run(a: &EvaluateArgs, g: &Global) -> Result<()> {
    let m = Manifest::load(required(&a.manifest, "manifest")?)?;
    let dir = required(&a.predictions, "predictions")?;
    let (sweeps, mut failed) = sweep_split(&m, Split::Test, dir, a.use_mask);
    for f in &failed {
        eprintln!("{}: {}", f.id, f.error);
    }
    if sweeps.is_empty() {
        return Err(Incomplete(format!("none of the {} test samples could be scored", failed.len())).into());
    }
    let agg = aggregate(&sweeps)?;

    let train_agg = match &a.train_predictions {
        Some(tdir) => {
            let (tsweeps, tfailed) = sweep_split(&m, Split::Train, tdir, a.use_mask);
            for f in &tfailed {
                eprintln!("train {}: {}", f.id, f.error);
            }
            failed.extend(tfailed);
            if tsweeps.is_empty() {
                None
            } else {
                Some(aggregate(&tsweeps)?)
            }
        }
        None => None,
    };

    let annotator = annotator(&m, a.use_mask)?;
    let summary = Summary {
        dataset: &m.dataset,
        label: &a.label,
        n_images: agg.n_images,
        a_posteriori: selected(&agg, SelectionMode::Aposteriori, None)?,
        a_priori: train_agg
            .as_ref()
            .map(|t| selected(&agg, SelectionMode::Apriori, Some(t)))
            .transpose()?,
        annotator,
        failed,
    };

    let spec = PlotSpec {
        title: format!("{} ({})", m.dataset, a.label),
        curves: vec![pr_curve(&agg, &a.label)?],
        annotator: annotator.as_ref().map(AnnotatorMarker::from),
        ..Default::default()
    };
    let (svg, plot_csv) = render(&spec)?;

    let out = &g.out;
    crate::write_file(&out.join("per_image.csv"), per_image_csv(&sweeps)?.as_bytes())?;
    crate::write_file(&out.join("aggregate.csv"), aggregate_csv(&agg)?.as_bytes())?;
    if let Some(t) = &train_agg {
        crate::write_file(&out.join("train_aggregate.csv"), aggregate_csv(t)?.as_bytes())?;
    }
    crate::write_file(&out.join("summary.json"), (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    crate::write_file(&out.join("pr_curve.svg"), svg.as_bytes())?;
    crate::write_file(&out.join("pr_curve.csv"), plot_csv.as_bytes())?;

    let best = &summary.a_posteriori.row;
    println!(
        "{}: {} images, a posteriori t={:.2} F1={:.4} ({:.4})",
        m.dataset, agg.n_images, best.threshold, best.f1_micro_mean, best.f1_micro_std
    );
    if let Some(s) = &summary.a_priori {
        println!(
            "a priori t={:.2} F1={:.4} ({:.4})",
            s.row.threshold, s.row.f1_micro_mean, s.row.f1_micro_std
        );
    }
    if !summary.failed.is_empty() {
        return Err(Incomplete(format!("{} samples could not be scored", summary.failed.len())).into());
    }
    Ok(())
}
