//! Segmentation losses with analytic gradients with respect to the
//! probability map: binary cross-entropy, soft Jaccard, their weighted
//! combination, and the semi-supervised loss built on guessed labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagegrid::{ensure_dims, Axis, BinaryMask, EvalRegion, GrayImage, Grid, ProbabilityMap};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside logarithms.
pub const CLAMP_EPS: f64 = 1e-7;

/// Default weight of the BCE term in the combined loss.
pub const DEFAULT_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// d(value)/dp, same geometry as the probability map.
    pub gradient: Grid<f64>,
    /// Set when the loss fell back to a vacuous value (empty Jaccard union).
    pub degenerate: bool,
}

/// Cross-entropy against per-pixel targets in `[0, 1]`, averaged over the
/// evaluated pixels.
fn cross_entropy(p: &ProbabilityMap, targets: &[f64], region: EvalRegion<'_>) -> Result<LossEval> {
    region.check(p.dims())?;
    let n = (0..targets.len()).filter(|&i| region.includes(i)).count();
    let mut value = 0.0;
    let mut grad = vec![0.0; targets.len()];
    if n > 0 {
        let inv_n = 1.0 / n as f64;
        for (i, (&pi, &y)) in p.values().iter().zip(targets).enumerate() {
            if !region.includes(i) {
                continue;
            }
            let pc = pi.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
            value -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            if pc == pi {
                grad[i] = (pc - y) / (pc * (1.0 - pc)) * inv_n;
            }
        }
        value *= inv_n;
    }
    Ok(LossEval {
        value,
        gradient: Grid::new(p.width(), p.height(), grad)?,
        degenerate: n == 0,
    })
}

fn mask_targets(y: &BinaryMask) -> Vec<f64> {
    y.values().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

pub fn bce(p: &ProbabilityMap, y: &BinaryMask, region: EvalRegion<'_>) -> Result<LossEval> {
    ensure_dims(y.dims(), p.dims())?;
    cross_entropy(p, &mask_targets(y), region)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JaccardMode {
    /// `sum(y p) / sum(y + p - y p)` over the whole image.
    #[default]
    Global,
    /// Mean over pixels of `y p / (y + p - y p)`, the per-pixel reading of
    /// the formula with the prediction standing in for the second label.
    PaperLiteral,
}

/// Soft Jaccard index `J` and `dJ/dp`.
pub fn soft_jaccard(p: &ProbabilityMap, y: &BinaryMask, mode: JaccardMode) -> Result<LossEval> {
    ensure_dims(y.dims(), p.dims())?;
    let ys = mask_targets(y);
    let ps = p.values();
    let (w, h) = (p.width(), p.height());
    match mode {
        JaccardMode::Global => {
            let inter: f64 = ys.iter().zip(ps).map(|(y, p)| y * p).sum();
            let union: f64 = ys.iter().zip(ps).map(|(y, p)| y + p - y * p).sum();
            if union < CLAMP_EPS {
                return Ok(LossEval {
                    value: 1.0,
                    gradient: Grid::filled(w, h, 0.0),
                    degenerate: true,
                });
            }
            let u2 = union * union;
            let grad = ys
                .iter()
                .map(|&y| (y * union - inter * (1.0 - y)) / u2)
                .collect();
            Ok(LossEval {
                value: inter / union,
                gradient: Grid::new(w, h, grad)?,
                degenerate: false,
            })
        }
        JaccardMode::PaperLiteral => {
            let inv_n = 1.0 / ps.len() as f64;
            let mut value = 0.0;
            let mut grad = Vec::with_capacity(ps.len());
            for (&y, &p) in ys.iter().zip(ps) {
                let d = y + p - y * p;
                if d < CLAMP_EPS {
                    grad.push(0.0);
                    continue;
                }
                value += y * p / d;
                grad.push((y * d - y * p * (1.0 - y)) / (d * d) * inv_n);
            }
            Ok(LossEval {
                value: value * inv_n,
                gradient: Grid::new(w, h, grad)?,
                degenerate: false,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// `alpha * BCE + (1 - alpha) * (1 - J)`: both terms are penalties.
    #[default]
    Corrected,
    /// `alpha * BCE - (1 - alpha) * (1 - J)`, sign as originally printed.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JbceConfig {
    pub alpha: f64,
    #[serde(default)]
    pub sign_mode: SignMode,
    #[serde(default)]
    pub jaccard_mode: JaccardMode,
}

impl Default for JbceConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            sign_mode: SignMode::Corrected,
            jaccard_mode: JaccardMode::Global,
        }
    }
}

impl JbceConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.alpha) {
            Ok(())
        } else {
            Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)))
        }
    }
}

/// BCE combined with the Jaccard penalty `1 - J`, weighted by `alpha`.
pub fn jbce(p: &ProbabilityMap, y: &BinaryMask, cfg: &JbceConfig) -> Result<LossEval> {
    cfg.validate()?;
    let b = bce(p, y, EvalRegion::All)?;
    let j = soft_jaccard(p, y, cfg.jaccard_mode)?;
    let a = cfg.alpha;
    // d(1 - J)/dp = -dJ/dp
    let s = match cfg.sign_mode {
        SignMode::Corrected => 1.0,
        SignMode::PaperLiteral => -1.0,
    };
    let value = a * b.value + s * (1.0 - a) * (1.0 - j.value);
    let grad = b
        .gradient
        .as_slice()
        .iter()
        .zip(j.gradient.as_slice())
        .map(|(gb, gj)| a * gb - s * (1.0 - a) * gj)
        .collect();
    Ok(LossEval {
        value,
        gradient: Grid::new(p.width(), p.height(), grad)?,
        degenerate: j.degenerate,
    })
}

/// Soft pseudo-label for an unlabeled image.
#[derive(Debug, Clone, PartialEq)]
pub struct GuessedLabel {
    pub id: String,
    pub values: Grid<f64>,
}

/// Averages the predictions for `u` and its horizontal and vertical flips,
/// each flipped back into `u`'s frame first.
pub fn guess_labels<F>(predict: F, id: &str, u: &GrayImage) -> Result<GuessedLabel>
where
    F: Fn(&GrayImage) -> Result<ProbabilityMap>,
{
    let direct = predict(u)?;
    ensure_dims(u.dims(), direct.dims())?;
    let h = predict(&u.flip(Axis::Horizontal))?;
    let v = predict(&u.flip(Axis::Vertical))?;
    average_views(id, direct, h, v)
}

/// Averages predictions already made for an image and its horizontal and
/// vertical flips; `h` and `v` are given in their own flipped frames.
pub fn average_views(id: &str, direct: ProbabilityMap, h: ProbabilityMap, v: ProbabilityMap) -> Result<GuessedLabel> {
    let dims = direct.dims();
    let views = [
        direct.into_grid(),
        h.grid().flip(Axis::Horizontal),
        v.grid().flip(Axis::Vertical),
    ];
    for view in &views {
        ensure_dims(dims, view.dims())?;
    }
    let (a, b, c) = (&views[0], &views[1], &views[2]);
    // written relative to `a` so three identical views average to `a` exactly
    let values = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .zip(c.as_slice())
        .map(|((&a, &b), &c)| (a + ((b - a) + (c - a)) / 3.0).clamp(0.0, 1.0))
        .collect();
    Ok(GuessedLabel {
        id: id.to_string(),
        values: Grid::new(a.width(), a.height(), values)?,
    })
}

/// Cross-entropy of `p` against a guessed label used as a soft target.
pub fn soft_bce(p: &ProbabilityMap, g: &GuessedLabel) -> Result<LossEval> {
    ensure_dims(g.values.dims(), p.dims())?;
    cross_entropy(p, g.values.as_slice(), EvalRegion::All)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslLossEval {
    pub value: f64,
    /// Gradient with respect to each labeled prediction, in input order.
    pub labeled_gradients: Vec<Grid<f64>>,
    /// Gradient with respect to each unlabeled prediction, in input order.
    pub unlabeled_gradients: Vec<Grid<f64>>,
}

/// Mean combined loss over the labeled batch plus `lam` times the mean
/// soft-target BCE over the unlabeled batch.
pub fn ssl_loss(
    labeled: &[(&ProbabilityMap, &BinaryMask)],
    unlabeled: &[(&ProbabilityMap, &GuessedLabel)],
    lam: f64,
    cfg: &JbceConfig,
) -> Result<SslLossEval> {
    if lam.is_nan() || lam < 0.0 {
        return Err(Error::invalid(format!("lambda {lam} must be non-negative")));
    }
    if labeled.is_empty() {
        return Err(Error::invalid("semi-supervised loss needs labeled samples"));
    }
    let inv_x = 1.0 / labeled.len() as f64;
    let mut supervised = 0.0;
    let mut labeled_gradients = Vec::with_capacity(labeled.len());
    for (p, y) in labeled {
        let e = jbce(p, y, cfg)?;
        supervised += e.value;
        labeled_gradients.push(e.gradient.map(|g| g * inv_x));
    }
    let mut value = supervised * inv_x;

    let mut unlabeled_gradients = Vec::with_capacity(unlabeled.len());
    if !unlabeled.is_empty() {
        let inv_u = 1.0 / unlabeled.len() as f64;
        let mut unsupervised = 0.0;
        for (p, g) in unlabeled {
            let e = soft_bce(p, g)?;
            unsupervised += e.value;
            unlabeled_gradients.push(e.gradient.map(|v| lam * v * inv_u));
        }
        value += lam * (unsupervised * inv_u);
    }
    Ok(SslLossEval {
        value,
        labeled_gradients,
        unlabeled_gradients,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslSchedule {
    pub lambda_max: f64,
    pub total_epochs: usize,
}

impl SslSchedule {
    pub fn new(lambda_max: f64, total_epochs: usize) -> Result<Self> {
        if lambda_max.is_nan() || lambda_max < 0.0 {
            return Err(Error::invalid("lambda_max must be non-negative"));
        }
        if total_epochs == 0 {
            return Err(Error::invalid("total_epochs must be positive"));
        }
        Ok(Self {
            lambda_max,
            total_epochs,
        })
    }
}

/// Quadratic ramp-up: `lambda_max * (epoch / total_epochs)^2`.
pub fn ramp(epoch: usize, schedule: &SslSchedule) -> Result<f64> {
    if epoch > schedule.total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} beyond schedule length {}",
            schedule.total_epochs
        )));
    }
    let r = epoch as f64 / schedule.total_epochs as f64;
    Ok(schedule.lambda_max * (r * r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(bits.len(), 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn bce_examples() {
        let y = mask(&[1, 0, 1, 0]);
        let perfect = bce(&y.to_probability(), &y, EvalRegion::All).unwrap();
        assert!((perfect.value - -(1.0 - CLAMP_EPS).ln()).abs() < 1e-15);
        assert!(perfect.gradient.as_slice().iter().all(|&g| g == 0.0));

        let half = ProbabilityMap::uniform(4, 1, 0.5).unwrap();
        for y in [mask(&[1, 0, 1, 0]), mask(&[0, 0, 0, 0])] {
            assert!((bce(&half, &y, EvalRegion::All).unwrap().value - 2f64.ln()).abs() < 1e-15);
        }
        assert!(bce(&half, &mask(&[1]), EvalRegion::All).is_err());
    }

    #[test]
    fn jaccard_examples() {
        // tp = 1, fp = 1, fn = 1
        let p = mask(&[1, 1, 0, 0]).to_probability();
        let y = mask(&[1, 0, 1, 0]);
        assert!((soft_jaccard(&p, &y, JaccardMode::Global).unwrap().value - 1.0 / 3.0).abs() < 1e-15);

        let p = ProbabilityMap::new(1, 1, vec![0.5]).unwrap();
        let lit = soft_jaccard(&p, &mask(&[1]), JaccardMode::PaperLiteral).unwrap();
        assert_eq!(lit.value, 0.5);

        let y = mask(&[0, 1, 1]);
        assert_eq!(soft_jaccard(&y.to_probability(), &y, JaccardMode::Global).unwrap().value, 1.0);

        let empty = soft_jaccard(&ProbabilityMap::uniform(3, 1, 0.0).unwrap(), &mask(&[0, 0, 0]), JaccardMode::Global)
            .unwrap();
        assert!(empty.degenerate);
        assert_eq!(empty.value, 1.0);
    }

    #[test]
    fn jbce_degenerate_weights() {
        let p = ProbabilityMap::new(3, 1, vec![0.2, 0.7, 0.4]).unwrap();
        let y = mask(&[0, 1, 1]);
        let b = bce(&p, &y, EvalRegion::All).unwrap();
        let only_bce = jbce(&p, &y, &JbceConfig { alpha: 1.0, ..Default::default() }).unwrap();
        assert_eq!(only_bce.value, b.value);
        assert_eq!(only_bce.gradient, b.gradient);

        let j = soft_jaccard(&p, &y, JaccardMode::Global).unwrap();
        let only_j = jbce(&p, &y, &JbceConfig { alpha: 0.0, ..Default::default() }).unwrap();
        assert_eq!(only_j.value, 1.0 - j.value);

        assert!(jbce(&p, &y, &JbceConfig { alpha: 1.5, ..Default::default() }).is_err());
    }

    #[test]
    fn guessed_labels() {
        let u = Grid::from_fn(3, 2, |r, c| (r * 3 + c) as f64 / 10.0);
        let constant = |img: &GrayImage| ProbabilityMap::uniform(img.width(), img.height(), 0.3);
        let g = guess_labels(constant, "u", &u).unwrap();
        assert!(g.values.as_slice().iter().all(|&v| v == 0.3));

        // pixel-wise map is equivariant under flips
        let equivariant = |img: &GrayImage| ProbabilityMap::from_grid(img.map(|v| v * 0.5 + 0.1));
        let g = guess_labels(equivariant, "u", &u).unwrap();
        assert_eq!(g.values, equivariant(&u).unwrap().into_grid());

        let bad = |_: &GrayImage| ProbabilityMap::uniform(1, 1, 0.5);
        assert!(guess_labels(bad, "u", &u).is_err());
    }

    #[test]
    fn ssl_degenerate_cases() {
        let p = ProbabilityMap::new(3, 1, vec![0.2, 0.7, 0.4]).unwrap();
        let y = mask(&[0, 1, 1]);
        let g = GuessedLabel { id: "u".into(), values: Grid::new(3, 1, vec![0.1, 0.9, 0.5]).unwrap() };
        let cfg = JbceConfig::default();
        let sup = jbce(&p, &y, &cfg).unwrap().value;
        assert_eq!(ssl_loss(&[(&p, &y)], &[], 1.0, &cfg).unwrap().value, sup);
        let zero = ssl_loss(&[(&p, &y)], &[(&p, &g)], 0.0, &cfg).unwrap();
        assert_eq!(zero.value.to_bits(), sup.to_bits());
        assert!(ssl_loss(&[(&p, &y)], &[], -0.1, &cfg).is_err());
    }

    #[test]
    fn ramp_examples() {
        let s = SslSchedule::new(2.0, 100).unwrap();
        assert_eq!(ramp(0, &s).unwrap(), 0.0);
        assert_eq!(ramp(50, &s).unwrap(), 0.5);
        assert_eq!(ramp(100, &s).unwrap(), 2.0);
        assert!(ramp(101, &s).is_err());
        assert!(SslSchedule::new(1.0, 0).is_err());
    }
}
