//! Confusion counts, per-image scores, threshold sweeps and micro/macro F1
//! aggregation.
//!
//! A sweep evaluates every threshold of a grid in one pass over the image:
//! pixels are bucketed into two histograms (vessel / background) keyed by
//! how many thresholds they clear, and suffix sums over the buckets give
//! the counts at each threshold. Quantized maps bucket by their exact
//! integer level instead, so no floating-point tie can land in the wrong
//! bucket.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagegrid::{ensure_dims, BinaryMask, EvalRegion, ProbabilityMap};

/// The 101-point grid `0.00, 0.01, ..., 1.00`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct DegenerateFlags {
    pub no_positive_predictions: bool,
    pub no_positive_truth: bool,
    pub no_negative_truth: bool,
    /// Aggregate over a single image: standard deviations are reported as 0.
    pub single_sample: bool,
}

impl DegenerateFlags {
    const NAMES: [&'static str; 4] = [
        "no_positive_predictions",
        "no_positive_truth",
        "no_negative_truth",
        "single_sample",
    ];

    fn bits(&self) -> [bool; 4] {
        [
            self.no_positive_predictions,
            self.no_positive_truth,
            self.no_negative_truth,
            self.single_sample,
        ]
    }

    pub fn is_empty(&self) -> bool {
        !self.bits().iter().any(|&b| b)
    }

    pub fn union(self, other: Self) -> Self {
        Self {
            no_positive_predictions: self.no_positive_predictions || other.no_positive_predictions,
            no_positive_truth: self.no_positive_truth || other.no_positive_truth,
            no_negative_truth: self.no_negative_truth || other.no_negative_truth,
            single_sample: self.single_sample || other.single_sample,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut flags = Self::default();
        if s.is_empty() || s == "none" {
            return Ok(flags);
        }
        for name in s.split('|') {
            match name {
                "no_positive_predictions" => flags.no_positive_predictions = true,
                "no_positive_truth" => flags.no_positive_truth = true,
                "no_negative_truth" => flags.no_negative_truth = true,
                "single_sample" => flags.single_sample = true,
                other => return Err(Error::Format(format!("unknown flag {other:?}"))),
            }
        }
        Ok(flags)
    }
}

impl fmt::Display for DegenerateFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<_> = Self::NAMES
            .iter()
            .zip(self.bits())
            .filter(|(_, b)| *b)
            .map(|(n, _)| *n)
            .collect();
        f.write_str(&names.join("|"))
    }
}

impl Serialize for DegenerateFlags {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DegenerateFlags {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub pr: f64,
    pub re: f64,
    pub sp: f64,
    pub acc: f64,
    pub f1: f64,
    pub flags: DegenerateFlags,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from(pr: f64, re: f64) -> f64 {
    if pr + re > 0.0 {
        2.0 * pr * re / (pr + re)
    } else {
        0.0
    }
}

fn ratio_or_one(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (1.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn scores(c: &Counts) -> Scores {
    let (pr, no_pred) = ratio_or_one(c.tp, c.tp + c.fp);
    let (re, no_truth) = ratio_or_one(c.tp, c.tp + c.fn_);
    let (sp, no_neg) = ratio_or_one(c.tn, c.tn + c.fp);
    let (acc, _) = ratio_or_one(c.tp + c.tn, c.total());
    Scores {
        pr,
        re,
        sp,
        acc,
        f1: f1_from(pr, re),
        flags: DegenerateFlags {
            no_positive_predictions: no_pred,
            no_positive_truth: no_truth,
            no_negative_truth: no_neg,
            single_sample: false,
        },
    }
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask, region: EvalRegion<'_>) -> Result<Counts> {
    ensure_dims(gt.dims(), pred.dims())?;
    region.check(gt.dims())?;
    let mut c = Counts::default();
    for (i, (&p, &g)) in pred.values().iter().zip(gt.values()).enumerate() {
        if !region.includes(i) {
            continue;
        }
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    pub image_id: String,
    pub thresholds: Vec<f64>,
    pub counts: Vec<Counts>,
}

impl ThresholdSweep {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.image_id = id.into();
        self
    }

    pub fn scores(&self) -> impl Iterator<Item = (f64, Scores)> + '_ {
        self.thresholds
            .iter()
            .zip(&self.counts)
            .map(|(&t, c)| (t, scores(c)))
    }
}

fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::invalid("empty threshold grid"));
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid(format!("threshold {t} outside [0, 1]")));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("thresholds must be sorted ascending"));
    }
    Ok(())
}

/// Number of thresholds `t` in the ascending grid with `t <= p`.
fn thresholds_cleared(p: f64, thresholds: &[f64], lo: f64, scale: f64) -> usize {
    let n = thresholds.len();
    let mut k = (((p - lo) * scale).floor().max(-1.0) as isize + 1).clamp(0, n as isize) as usize;
    while k < n && thresholds[k] <= p {
        k += 1;
    }
    while k > 0 && thresholds[k - 1] > p {
        k -= 1;
    }
    k
}

/// Counts at every threshold (pixel positive iff `p >= t`) in
/// O(pixels + thresholds).
pub fn sweep(
    p: &ProbabilityMap,
    gt: &BinaryMask,
    thresholds: &[f64],
    region: EvalRegion<'_>,
) -> Result<ThresholdSweep> {
    ensure_dims(gt.dims(), p.dims())?;
    region.check(gt.dims())?;
    validate_thresholds(thresholds)?;

    // hist[b] counts pixels that clear exactly the first b "buckets"; the
    // counts at threshold j are the suffix sums from the first bucket that
    // satisfies it.
    let (pos_hist, neg_hist, first_bucket): (Vec<u64>, Vec<u64>, Vec<usize>) =
        match p.quantization().levels() {
            Some(denom) => {
                let denom_f = f64::from(denom);
                let n = denom as usize + 1;
                let (mut pos, mut neg) = (vec![0u64; n], vec![0u64; n]);
                for (i, (&v, &g)) in p.values().iter().zip(gt.values()).enumerate() {
                    if region.includes(i) {
                        let k = (v * denom_f).round() as usize;
                        if g { pos[k] += 1 } else { neg[k] += 1 }
                    }
                }
                // smallest level whose value clears each threshold, found with
                // the same comparison the per-pixel rule uses
                let mut first = Vec::with_capacity(thresholds.len());
                let mut k = 0usize;
                for &t in thresholds {
                    while k < n && (k as f64 / denom_f) < t {
                        k += 1;
                    }
                    first.push(k);
                }
                (pos, neg, first)
            }
            None => {
                let n = thresholds.len();
                let lo = thresholds[0];
                let span = thresholds[n - 1] - lo;
                let scale = if span > 0.0 { (n - 1) as f64 / span } else { 0.0 };
                let (mut pos, mut neg) = (vec![0u64; n + 1], vec![0u64; n + 1]);
                for (i, (&v, &g)) in p.values().iter().zip(gt.values()).enumerate() {
                    if region.includes(i) {
                        let b = thresholds_cleared(v, thresholds, lo, scale);
                        if g { pos[b] += 1 } else { neg[b] += 1 }
                    }
                }
                // threshold j is satisfied by pixels clearing more than j thresholds
                (pos, neg, (1..=n).collect())
            }
        };

    let suffix = |hist: &[u64]| {
        let mut s = vec![0u64; hist.len() + 1];
        for i in (0..hist.len()).rev() {
            s[i] = s[i + 1] + hist[i];
        }
        s
    };
    let (pos_suffix, neg_suffix) = (suffix(&pos_hist), suffix(&neg_hist));
    let (pos_total, neg_total) = (pos_suffix[0], neg_suffix[0]);

    let counts = first_bucket
        .iter()
        .map(|&b| {
            let tp = pos_suffix[b];
            let fp = neg_suffix[b];
            Counts {
                tp,
                fp,
                tn: neg_total - fp,
                fn_: pos_total - tp,
            }
        })
        .collect();

    Ok(ThresholdSweep {
        image_id: String::new(),
        thresholds: thresholds.to_vec(),
        counts,
    })
}

/// One image's inputs for [`par_sweep`].
pub struct SweepInput<'a> {
    pub id: &'a str,
    pub prediction: &'a ProbabilityMap,
    pub gt: &'a BinaryMask,
    pub region: EvalRegion<'a>,
}

/// Sweeps images on the rayon pool; results keep input order.
pub fn par_sweep(inputs: &[SweepInput<'_>], thresholds: &[f64]) -> Vec<Result<ThresholdSweep>> {
    inputs
        .par_iter()
        .map(|x| sweep(x.prediction, x.gt, thresholds, x.region).map(|s| s.with_id(x.id)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub threshold: f64,
    pub mean_pr: f64,
    pub std_pr: f64,
    pub mean_re: f64,
    pub std_re: f64,
    pub f1_macro: f64,
    pub f1_micro_mean: f64,
    pub f1_micro_std: f64,
    pub degenerate_flags: DegenerateFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub rows: Vec<AggregateRow>,
    pub n_images: usize,
}

impl Aggregate {
    pub fn thresholds(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.threshold).collect()
    }

    pub fn row_at(&self, threshold: f64) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.threshold == threshold)
    }
}

/// Mean and sample standard deviation. The mean is taken relative to the
/// first value, so a sample of identical values yields that value exactly.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let x0 = xs[0];
    let mean = x0 + xs.iter().map(|x| x - x0).sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per threshold: mean/std of per-image precision, recall and F1 (micro),
/// and F1 of the mean precision and recall (macro). Images are reduced in
/// id order.
pub fn aggregate(sweeps: &[ThresholdSweep]) -> Result<Aggregate> {
    let first = sweeps
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate zero images"))?;
    if let Some(s) = sweeps.iter().find(|s| s.thresholds != first.thresholds) {
        return Err(Error::invalid(format!(
            "image {:?} was swept on a different threshold grid",
            s.image_id
        )));
    }
    let mut ordered: Vec<&ThresholdSweep> = sweeps.iter().collect();
    ordered.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let n = ordered.len();

    let rows = first
        .thresholds
        .iter()
        .enumerate()
        .map(|(j, &threshold)| {
            let per_image: Vec<Scores> = ordered.iter().map(|s| scores(&s.counts[j])).collect();
            let column = |f: fn(&Scores) -> f64| per_image.iter().map(f).collect::<Vec<_>>();
            let (mean_pr, std_pr) = mean_std(&column(|s| s.pr));
            let (mean_re, std_re) = mean_std(&column(|s| s.re));
            let (f1_micro_mean, f1_micro_std) = mean_std(&column(|s| s.f1));
            let mut flags = per_image
                .iter()
                .fold(DegenerateFlags::default(), |acc, s| acc.union(s.flags));
            flags.single_sample = n == 1;
            AggregateRow {
                threshold,
                mean_pr,
                std_pr,
                mean_re,
                std_re,
                f1_macro: f1_from(mean_pr, mean_re),
                f1_micro_mean,
                f1_micro_std,
                degenerate_flags: flags,
            }
        })
        .collect();

    Ok(Aggregate { rows, n_images: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Threshold maximizing training-set F1, applied unchanged to test.
    Apriori,
    /// Threshold maximizing test-set F1.
    Aposteriori,
}

/// Index of the maximum, ties to the lowest index.
pub(crate) fn argmax_first(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

pub fn select_threshold(agg: &Aggregate, mode: SelectionMode, train_agg: Option<&Aggregate>) -> Result<f64> {
    let source = match mode {
        SelectionMode::Aposteriori => agg,
        SelectionMode::Apriori => {
            train_agg.ok_or_else(|| Error::invalid("a priori selection needs a training aggregate"))?
        }
    };
    argmax_first(source.rows.iter().map(|r| r.f1_micro_mean))
        .map(|i| source.rows[i].threshold)
        .ok_or_else(|| Error::invalid("empty aggregate"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorPoint {
    pub mean_pr: f64,
    pub std_pr: f64,
    pub mean_re: f64,
    pub std_re: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub n_images: usize,
}

/// Scores a second human annotation as a hard prediction against the
/// reference ground truth, micro-averaged over images.
pub fn annotator_point(gt2: &[BinaryMask], gt: &[BinaryMask]) -> Result<AnnotatorPoint> {
    annotator_point_in(gt2, gt, &vec![EvalRegion::All; gt.len()])
}

pub fn annotator_point_in(
    gt2: &[BinaryMask],
    gt: &[BinaryMask],
    regions: &[EvalRegion<'_>],
) -> Result<AnnotatorPoint> {
    if gt2.len() != gt.len() || regions.len() != gt.len() {
        return Err(Error::invalid(format!(
            "{} second annotations for {} ground truths",
            gt2.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::invalid("no images for annotator point"));
    }
    let per_image = gt2
        .iter()
        .zip(gt)
        .zip(regions)
        .map(|((a, b), r)| confusion(a, b, *r).map(|c| scores(&c)))
        .collect::<Result<Vec<_>>>()?;
    let column = |f: fn(&Scores) -> f64| per_image.iter().map(f).collect::<Vec<_>>();
    let (mean_pr, std_pr) = mean_std(&column(|s| s.pr));
    let (mean_re, std_re) = mean_std(&column(|s| s.re));
    let (mean_f1, std_f1) = mean_std(&column(|s| s.f1));
    Ok(AnnotatorPoint {
        mean_pr,
        std_pr,
        mean_re,
        std_re,
        mean_f1,
        std_f1,
        n_images: gt.len(),
    })
}

#[derive(Debug, Serialize)]
struct PerImageRow<'a> {
    image_id: &'a str,
    threshold: f64,
    tp: u64,
    fp: u64,
    tn: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    pr: f64,
    re: f64,
    sp: f64,
    acc: f64,
    f1: f64,
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Per-image CSV: `image_id,threshold,tp,fp,tn,fn,pr,re,sp,acc,f1`.
pub fn per_image_csv(sweeps: &[ThresholdSweep]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in sweeps {
        for (c, (t, sc)) in s.counts.iter().zip(s.scores()) {
            w.serialize(PerImageRow {
                image_id: &s.image_id,
                threshold: t,
                tp: c.tp,
                fp: c.fp,
                tn: c.tn,
                fn_: c.fn_,
                pr: sc.pr,
                re: sc.re,
                sp: sc.sp,
                acc: sc.acc,
                f1: sc.f1,
            })
            .map_err(csv_error)?;
        }
    }
    finish_csv(w)
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Aggregate CSV: `threshold,mean_pr,std_pr,mean_re,std_re,f1_macro,
/// f1_micro_mean,f1_micro_std,degenerate_flags`.
pub fn aggregate_csv(agg: &Aggregate) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &agg.rows {
        w.serialize(row).map_err(csv_error)?;
    }
    finish_csv(w)
}

/// Parses an aggregate CSV. The image count is not stored in the file and is
/// reported as 0.
pub fn parse_aggregate_csv(text: &str) -> Result<Aggregate> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<AggregateRow>, _>>()
        .map_err(csv_error)?;
    Ok(Aggregate { rows, n_images: 0 })
}

pub fn read_aggregate_csv(path: &Path) -> Result<Aggregate> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_aggregate_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagegrid::{binarize, Quantization};

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(bits.len(), 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn confusion_examples() {
        let gt = mask(&[1, 1, 0, 0]);
        let c = confusion(&mask(&[1, 0, 1, 0]), &gt, EvalRegion::All).unwrap();
        assert_eq!(c, Counts { tp: 1, fp: 1, tn: 1, fn_: 1 });
        let c = confusion(&gt, &gt, EvalRegion::All).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion(&gt.complement(), &gt, EvalRegion::All).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert!(confusion(&mask(&[1]), &gt, EvalRegion::All).is_err());
    }

    #[test]
    fn region_restricts_counts() {
        let gt = mask(&[1, 1, 0, 0]);
        let fov = mask(&[1, 0, 1, 0]);
        let c = confusion(&mask(&[1, 1, 1, 1]), &gt, EvalRegion::Mask(&fov)).unwrap();
        assert_eq!(c, Counts { tp: 1, fp: 1, tn: 0, fn_: 0 });
        assert!(confusion(&gt, &gt, EvalRegion::Mask(&mask(&[1]))).is_err());
    }

    #[test]
    fn score_examples() {
        let s = scores(&Counts { tp: 1, fp: 1, tn: 1, fn_: 1 });
        assert_eq!((s.pr, s.re, s.f1, s.acc), (0.5, 0.5, 0.5, 0.5));

        let s = scores(&Counts { tp: 3, fp: 1, tn: 4, fn_: 2 });
        assert_eq!(s.pr, 0.75);
        assert_eq!(s.re, 0.6);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.acc, 0.7);
        assert_eq!(s.sp, 0.8);
        assert!(s.flags.is_empty());

        let s = scores(&Counts { tp: 0, fp: 0, tn: 5, fn_: 3 });
        assert_eq!((s.pr, s.re, s.f1), (1.0, 0.0, 0.0));
        assert!(s.flags.no_positive_predictions);
        assert_eq!(s.flags.to_string(), "no_positive_predictions");

        let s = scores(&Counts { tp: 0, fp: 2, tn: 0, fn_: 0 });
        assert!(s.flags.no_positive_truth && !s.flags.no_negative_truth);
        assert_eq!((s.re, s.sp), (1.0, 0.0));
    }

    #[test]
    fn flags_round_trip_through_text() {
        let f = DegenerateFlags { no_positive_truth: true, single_sample: true, ..Default::default() };
        assert_eq!(f.to_string(), "no_positive_truth|single_sample");
        assert_eq!(DegenerateFlags::parse(&f.to_string()).unwrap(), f);
        assert_eq!(DegenerateFlags::parse("none").unwrap(), DegenerateFlags::default());
        assert!(DegenerateFlags::parse("bogus").is_err());
    }

    #[test]
    fn sweep_endpoints_and_errors() {
        let p = ProbabilityMap::new(4, 1, vec![0.0, 0.2, 0.7, 1.0]).unwrap();
        let gt = mask(&[0, 1, 1, 0]);
        let s = sweep(&p, &gt, &default_thresholds(), EvalRegion::All).unwrap();
        assert_eq!(s.counts[0], Counts { tp: 2, fp: 2, tn: 0, fn_: 0 });
        assert_eq!(s.counts[100], Counts { tp: 0, fp: 1, tn: 1, fn_: 2 });
        assert!(sweep(&p, &gt, &[0.5, 0.2], EvalRegion::All).is_err());
        assert!(sweep(&p, &gt, &[], EvalRegion::All).is_err());
        assert!(sweep(&p, &mask(&[1]), &[0.5], EvalRegion::All).is_err());
    }

    #[test]
    fn sweep_matches_binarize_on_lattice_ties() {
        // values exactly on the 0.01 grid stress the inclusive rule
        let levels: Vec<u16> = (0..=255).collect();
        let p = ProbabilityMap::from_levels(256, 1, &levels, Quantization::Q255).unwrap();
        let gt = BinaryMask::new(256, 1, (0..256).map(|i| i % 3 == 0).collect()).unwrap();
        let grid = default_thresholds();
        let s = sweep(&p, &gt, &grid, EvalRegion::All).unwrap();
        let unq = ProbabilityMap::new(256, 1, p.values().to_vec()).unwrap();
        let s2 = sweep(&unq, &gt, &grid, EvalRegion::All).unwrap();
        for (j, &t) in grid.iter().enumerate() {
            let naive = confusion(&binarize(&p, t).unwrap(), &gt, EvalRegion::All).unwrap();
            assert_eq!(s.counts[j], naive, "t = {t}");
            assert_eq!(s2.counts[j], naive, "t = {t}");
        }
        let hundredths = ProbabilityMap::new(101, 1, grid.clone()).unwrap();
        let gt = BinaryMask::filled(101, 1, true);
        let s = sweep(&hundredths, &gt, &grid, EvalRegion::All).unwrap();
        for (j, c) in s.counts.iter().enumerate() {
            assert_eq!(c.tp, 101 - j as u64);
        }
    }

    #[test]
    fn aggregate_examples() {
        let mk = |id: &str, c: Counts| ThresholdSweep {
            image_id: id.into(),
            thresholds: vec![0.5],
            counts: vec![c],
        };
        let c = Counts { tp: 3, fp: 1, tn: 4, fn_: 2 };
        let agg = aggregate(&[mk("a", c), mk("b", c)]).unwrap();
        let r = agg.rows[0];
        assert_eq!((r.std_pr, r.std_re, r.f1_micro_std), (0.0, 0.0, 0.0));
        assert_eq!(r.f1_micro_mean, r.f1_macro);

        let (m, s) = mean_std(&[0.7, 0.9]);
        assert!((m - 0.8).abs() < 1e-15);
        assert!((s - 0.141_421_356_237_309_5).abs() < 1e-12);

        assert!((f1_from(0.6, 1.0) - 0.75).abs() < 1e-15);
        assert_eq!(f1_from(0.5, 1.0), 2.0 / 3.0);

        let single = aggregate(&[mk("a", c)]).unwrap();
        assert!(single.rows[0].degenerate_flags.single_sample);
        assert_eq!(single.rows[0].std_pr, 0.0);

        assert!(aggregate(&[]).is_err());
        let other = ThresholdSweep { image_id: "z".into(), thresholds: vec![0.4], counts: vec![c] };
        assert!(aggregate(&[mk("a", c), other]).is_err());
    }

    fn agg_with_f1(values: &[f64]) -> Aggregate {
        Aggregate {
            rows: values
                .iter()
                .enumerate()
                .map(|(k, &f)| AggregateRow {
                    threshold: k as f64 / 100.0,
                    mean_pr: f,
                    std_pr: 0.0,
                    mean_re: f,
                    std_re: 0.0,
                    f1_macro: f,
                    f1_micro_mean: f,
                    f1_micro_std: 0.0,
                    degenerate_flags: DegenerateFlags::default(),
                })
                .collect(),
            n_images: 1,
        }
    }

    #[test]
    fn threshold_selection() {
        let mut f = vec![0.1; 101];
        f[52] = 0.9;
        let agg = agg_with_f1(&f);
        assert_eq!(select_threshold(&agg, SelectionMode::Aposteriori, None).unwrap(), 0.52);
        let flat = agg_with_f1(&[0.4; 101]);
        assert_eq!(select_threshold(&flat, SelectionMode::Aposteriori, None).unwrap(), 0.0);
        assert_eq!(select_threshold(&flat, SelectionMode::Apriori, Some(&agg)).unwrap(), 0.52);
        assert!(select_threshold(&agg, SelectionMode::Apriori, None).is_err());
    }

    #[test]
    fn apriori_on_perfect_prediction_picks_lowest_perfect_threshold() {
        let gt = mask(&[1, 0, 1, 1, 0, 0]);
        let p = gt.to_probability();
        let s = sweep(&p, &gt, &default_thresholds(), EvalRegion::All).unwrap();
        let train = aggregate(&[s]).unwrap();
        let t = select_threshold(&train, SelectionMode::Apriori, Some(&train)).unwrap();
        assert_eq!(t, 0.01);
        assert_eq!(train.row_at(t).unwrap().f1_micro_mean, 1.0);
    }

    #[test]
    fn annotator_examples() {
        let gts = vec![mask(&[1, 0, 1, 0]), mask(&[0, 0, 1, 1])];
        let same = annotator_point(&gts, &gts).unwrap();
        assert_eq!((same.mean_f1, same.std_f1), (1.0, 0.0));
        let inv: Vec<_> = gts.iter().map(BinaryMask::complement).collect();
        assert_eq!(annotator_point(&inv, &gts).unwrap().mean_f1, 0.0);
        assert!(annotator_point(&inv[..1], &gts).is_err());
    }

    #[test]
    fn aggregate_csv_round_trip() {
        let p = ProbabilityMap::new(4, 1, vec![0.1, 0.4, 0.6, 0.9]).unwrap();
        let s = sweep(&p, &mask(&[0, 1, 1, 0]), &default_thresholds(), EvalRegion::All)
            .unwrap()
            .with_id("img");
        let agg = aggregate(std::slice::from_ref(&s)).unwrap();
        let text = aggregate_csv(&agg).unwrap();
        assert!(text.starts_with(
            "threshold,mean_pr,std_pr,mean_re,std_re,f1_macro,f1_micro_mean,f1_micro_std,degenerate_flags\n"
        ));
        assert_eq!(text.lines().count(), 102);
        assert_eq!(parse_aggregate_csv(&text).unwrap().rows, agg.rows);
        let per = per_image_csv(&[s]).unwrap();
        assert!(per.starts_with("image_id,threshold,tp,fp,tn,fn,pr,re,sp,acc,f1\n"));
    }
}
