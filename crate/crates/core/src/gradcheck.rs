//! Central finite-difference checks of analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagegrid::{BinaryMask, EvalRegion, Grid, ProbabilityMap};
use crate::losses::{bce, jbce, soft_jaccard, ssl_loss, GuessedLabel, JaccardMode, JbceConfig, SignMode};

/// Norm floor, so an all-zero gradient compares by absolute difference.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    /// `|a - n| / max(|a|, |n|)` with Euclidean norms over the whole
    /// gradient.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the element with the largest absolute error.
    pub worst_index: usize,
}

/// Relative error between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(NORM_FLOOR)
}

/// Compares `analytic` against `(f(x + h e_i) - f(x - h e_i)) / 2h` at
/// every element of `x`.
pub fn check_gradient(
    x: &Grid<f64>,
    analytic: &Grid<f64>,
    h: f64,
    f: impl Fn(&Grid<f64>) -> Result<f64>,
) -> Result<GradCheck> {
    if x.dims() != analytic.dims() {
        return Err(Error::DimensionMismatch {
            expected: x.dims(),
            actual: analytic.dims(),
        });
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("step must be positive"));
    }
    let mut probe = x.clone();
    let w = x.width();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let (r, c) = (i / w, i % w);
        let v = x.get(r, c);
        probe.set(r, c, v + h);
        let up = f(&probe)?;
        probe.set(r, c, v - h);
        let down = f(&probe)?;
        probe.set(r, c, v);
        numeric.push((up - down) / (2.0 * h));
    }
    let mut out = GradCheck {
        max_rel_error: relative_error(analytic.as_slice(), &numeric),
        max_abs_error: 0.0,
        worst_index: 0,
    };
    for (i, (a, n)) in analytic.as_slice().iter().zip(&numeric).enumerate() {
        let e = (a - n).abs();
        if e > out.max_abs_error {
            out.max_abs_error = e;
            out.worst_index = i;
        }
    }
    Ok(out)
}

/// Worst result of one loss over a randomized suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub loss: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub instances: usize,
    pub size: usize,
    pub step: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 20,
            size: 8,
            step: 1e-4,
        }
    }
}

fn random_map(rng: &mut ChaCha8Rng, n: usize) -> Grid<f64> {
    Grid::from_fn(n, n, |_, _| rng.gen_range(0.05..0.95))
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> BinaryMask {
    BinaryMask::from_grid(Grid::from_fn(n, n, |_, _| rng.gen_bool(0.3)))
}

fn prob(g: &Grid<f64>) -> Result<ProbabilityMap> {
    ProbabilityMap::from_grid(g.clone())
}

/// Checks every loss and mode against finite differences on random
/// `size x size` instances.
pub fn loss_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteResult>> {
    if cfg.instances == 0 || cfg.size == 0 {
        return Err(Error::invalid("suite needs at least one non-empty instance"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jb = |sign_mode, jaccard_mode| JbceConfig {
        sign_mode,
        jaccard_mode,
        ..JbceConfig::default()
    };
    let names = [
        "bce",
        "soft_jaccard_global",
        "soft_jaccard_paper_literal",
        "jbce_corrected",
        "jbce_paper_literal",
        "ssl_loss_labeled",
        "ssl_loss_unlabeled",
    ];
    let mut worst: Vec<GradCheck> = vec![
        GradCheck {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        names.len()
    ];
    let n = cfg.size;
    let h = cfg.step;
    for _ in 0..cfg.instances {
        let x = random_map(&mut rng, n);
        let x2 = random_map(&mut rng, n);
        let y = random_mask(&mut rng, n);
        let guess = GuessedLabel {
            id: "u".into(),
            values: Grid::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0)),
        };
        let lam = rng.gen_range(0.1..2.0);
        let p = prob(&x)?;
        let p2 = prob(&x2)?;
        let cfg_c = jb(SignMode::Corrected, JaccardMode::Global);

        let checks = [
            check_gradient(&x, &bce(&p, &y, EvalRegion::All)?.gradient, h, |g| {
                Ok(bce(&prob(g)?, &y, EvalRegion::All)?.value)
            })?,
            check_gradient(&x, &soft_jaccard(&p, &y, JaccardMode::Global)?.gradient, h, |g| {
                Ok(soft_jaccard(&prob(g)?, &y, JaccardMode::Global)?.value)
            })?,
            check_gradient(&x, &soft_jaccard(&p, &y, JaccardMode::PaperLiteral)?.gradient, h, |g| {
                Ok(soft_jaccard(&prob(g)?, &y, JaccardMode::PaperLiteral)?.value)
            })?,
            check_gradient(&x, &jbce(&p, &y, &cfg_c)?.gradient, h, |g| Ok(jbce(&prob(g)?, &y, &cfg_c)?.value))?,
            {
                let c = jb(SignMode::PaperLiteral, JaccardMode::PaperLiteral);
                check_gradient(&x, &jbce(&p, &y, &c)?.gradient, h, |g| Ok(jbce(&prob(g)?, &y, &c)?.value))?
            },
            {
                let e = ssl_loss(&[(&p, &y)], &[(&p2, &guess)], lam, &cfg_c)?;
                check_gradient(&x, &e.labeled_gradients[0], h, |g| {
                    Ok(ssl_loss(&[(&prob(g)?, &y)], &[(&p2, &guess)], lam, &cfg_c)?.value)
                })?
            },
            {
                let e = ssl_loss(&[(&p, &y)], &[(&p2, &guess)], lam, &cfg_c)?;
                check_gradient(&x2, &e.unlabeled_gradients[0], h, |g| {
                    Ok(ssl_loss(&[(&p, &y)], &[(&prob(g)?, &guess)], lam, &cfg_c)?.value)
                })?
            },
        ];
        for (w, c) in worst.iter_mut().zip(checks) {
            if c.max_rel_error > w.max_rel_error {
                *w = GradCheck {
                    max_abs_error: w.max_abs_error.max(c.max_abs_error),
                    ..c
                };
            } else {
                w.max_abs_error = w.max_abs_error.max(c.max_abs_error);
            }
        }
    }
    Ok(names
        .iter()
        .zip(worst)
        .map(|(name, w)| SuiteResult {
            loss: name.to_string(),
            instances: cfg.instances,
            max_rel_error: w.max_rel_error,
            max_abs_error: w.max_abs_error,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Grid::new(3, 1, vec![0.5, -1.0, 2.0]).unwrap();
        let g = x.map(|v| 2.0 * v);
        let r = check_gradient(&x, &g, 1e-4, |p| Ok(p.as_slice().iter().map(|v| v * v).sum())).unwrap();
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let x = Grid::new(2, 1, vec![1.0, 1.0]).unwrap();
        let g = Grid::new(2, 1, vec![2.0, 0.0]).unwrap();
        let r = check_gradient(&x, &g, 1e-4, |p| Ok(p.as_slice().iter().map(|v| v * v).sum())).unwrap();
        assert_eq!(r.worst_index, 1);
        assert!((r.max_rel_error - 2.0 / 8f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn small_suite_passes() {
        let cfg = SuiteConfig { instances: 2, size: 4, ..Default::default() };
        let r = loss_suite(&cfg).unwrap();
        assert_eq!(r.len(), 7);
        for s in r {
            assert!(s.max_rel_error < 1e-4, "{s:?}");
        }
    }
}
