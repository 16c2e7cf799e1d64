//! A per-pixel logistic classifier over fixed multiscale features.
//!
//! It stands in for a segmentation network so the losses, the
//! semi-supervised scheme and threshold selection can be exercised end to
//! end on a CPU in seconds.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{CombinedManifest, Manifest, Split};
use crate::error::{Error, Result};
use crate::imagegrid::{load_gray_image, load_mask_file, Axis, BinaryMask, GrayImage, Grid, ProbabilityMap};
use crate::losses::{average_views, ramp, ssl_loss, GuessedLabel, JbceConfig, SslSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Gaussian sigmas in pixels, ascending.
    pub scales: Vec<f64>,
    pub include_gradient_magnitude: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            scales: vec![1.0, 2.0, 4.0],
            include_gradient_magnitude: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("feature scales must be positive"));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("feature scales must be strictly ascending"));
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        let n = self.scales.len();
        1 + n + if self.include_gradient_magnitude { n } else { 0 }
    }
}

/// Per-pixel feature vectors, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    width: usize,
    height: usize,
    n_features: usize,
    data: Vec<f64>,
}

impl FeatureStack {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Plane `k` as a raster.
    pub fn plane(&self, k: usize) -> Grid<f64> {
        let v = (0..self.n_pixels()).map(|i| self.pixel(i)[k]).collect();
        Grid::new(self.width, self.height, v).expect("stack dims are valid")
    }

    pub fn flip(&self, axis: Axis) -> Self {
        let (w, h, nf) = (self.width, self.height, self.n_features);
        let mut data = Vec::with_capacity(self.data.len());
        for row in 0..h {
            for col in 0..w {
                let (r, c) = match axis {
                    Axis::Horizontal => (row, w - 1 - col),
                    Axis::Vertical => (h - 1 - row, col),
                };
                data.extend_from_slice(self.pixel(r * w + c));
            }
        }
        debug_assert_eq!(data.len(), w * h * nf);
        Self { data, ..*self }
    }

    fn standardized(&self, stats: &FeatureStats) -> Self {
        let data = self
            .data
            .chunks_exact(self.n_features)
            .flat_map(|px| {
                px.iter()
                    .zip(&stats.mean)
                    .zip(&stats.std)
                    .map(|((v, m), s)| (v - m) / s)
            })
            .collect();
        Self { data, ..*self }
    }
}

/// Symmetric reflection, valid for any offset.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// One-sided kernel (centre first) applied along rows then columns. Mirror
/// taps are summed before weighting so the result commutes exactly with
/// flips.
fn smooth(img: &Grid<f64>, half_kernel: &[f64]) -> Grid<f64> {
    let (w, h) = (img.width(), img.height());
    let pass = |get: &dyn Fn(usize, isize) -> f64, len: usize, lines: usize| {
        let mut out = vec![0.0; len * lines];
        for line in 0..lines {
            for x in 0..len {
                let mut acc = half_kernel[0] * get(line, x as isize);
                for (k, &wk) in half_kernel.iter().enumerate().skip(1) {
                    let k = k as isize;
                    acc += wk * (get(line, x as isize - k) + get(line, x as isize + k));
                }
                out[line * len + x] = acc;
            }
        }
        out
    };
    let rows = pass(&|r, c| img.get(r, reflect(c, w)), w, h);
    let row_grid = Grid::new(w, h, rows).expect("same dims");
    let cols = pass(&|c, r| row_grid.get(reflect(r, h), c), h, w);
    // `cols` is column-major
    Grid::from_fn(w, h, |r, c| cols[c * h + r])
}

fn gradient_magnitude(s: &Grid<f64>) -> Grid<f64> {
    let (w, h) = (s.width(), s.height());
    Grid::from_fn(w, h, |r, c| {
        let gx = (s.get(r, reflect(c as isize + 1, w)) - s.get(r, reflect(c as isize - 1, w))) / 2.0;
        let gy = (s.get(reflect(r as isize + 1, h), c) - s.get(reflect(r as isize - 1, h), c)) / 2.0;
        (gx * gx + gy * gy).sqrt()
    })
}

/// `[intensity, smoothed at each scale, gradient magnitude at each scale]`.
pub fn extract_features(image: &GrayImage, cfg: &FeatureConfig) -> Result<FeatureStack> {
    cfg.validate()?;
    if image.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    let smoothed: Vec<Grid<f64>> = cfg
        .scales
        .iter()
        .map(|&s| smooth(image, &gaussian_kernel(s)))
        .collect();
    let mut planes: Vec<&Grid<f64>> = vec![image];
    planes.extend(smoothed.iter());
    let grads: Vec<Grid<f64>> = if cfg.include_gradient_magnitude {
        smoothed.iter().map(gradient_magnitude).collect()
    } else {
        Vec::new()
    };
    planes.extend(grads.iter());

    let n_features = planes.len();
    let mut data = Vec::with_capacity(image.len() * n_features);
    for i in 0..image.len() {
        data.extend(planes.iter().map(|p| p.as_slice()[i]));
    }
    Ok(FeatureStack {
        width: image.width(),
        height: image.height(),
        n_features,
        data,
    })
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_config: FeatureConfig,
}

impl PixelModel {
    pub fn zeros(feature_config: FeatureConfig) -> Self {
        Self {
            weights: vec![0.0; feature_config.feature_count()],
            bias: 0.0,
            feature_config,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.check()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    fn check(&self) -> Result<()> {
        self.feature_config.validate()?;
        if self.weights.len() != self.feature_config.feature_count() {
            return Err(Error::invalid(format!(
                "model has {} weights for {} features",
                self.weights.len(),
                self.feature_config.feature_count()
            )));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(())
    }

    pub fn predict_features(&self, f: &FeatureStack) -> Result<ProbabilityMap> {
        if f.n_features() != self.weights.len() {
            return Err(Error::invalid(format!(
                "{} features for a model with {} weights",
                f.n_features(),
                self.weights.len()
            )));
        }
        let values = (0..f.n_pixels())
            .map(|i| logistic(dot(&self.weights, f.pixel(i)) + self.bias))
            .collect();
        ProbabilityMap::new(f.width, f.height, values)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per pixel `logistic(w . f + bias)`.
pub fn predict(m: &PixelModel, image: &GrayImage) -> Result<ProbabilityMap> {
    m.check()?;
    m.predict_features(&extract_features(image, &m.feature_config)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub lambda_max: f64,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub loss: JbceConfig,
    #[serde(default)]
    pub ssl: Option<SslConfig>,
    /// Random horizontal/vertical flips of labeled pairs.
    #[serde(default = "default_true")]
    pub augment: bool,
    #[serde(default)]
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            learning_rate: 2.0,
            seed: 0,
            loss: JbceConfig::default(),
            ssl: None,
            augment: true,
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if let Some(ssl) = &self.ssl {
            if ssl.lambda_max.is_nan() || ssl.lambda_max < 0.0 {
                return Err(Error::invalid("lambda_max must be non-negative"));
            }
        }
        self.loss.validate()?;
        self.features.validate()
    }
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub image: GrayImage,
    pub gt: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct UnlabeledImage {
    pub id: String,
    pub image: GrayImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: PixelModel,
    pub log: Vec<EpochLog>,
}

pub fn training_log_csv(log: &[EpochLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in log {
        w.serialize(row)
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    crate::metrics::finish_csv(w)
}

/// Per-feature standardization learned from the labeled pixels.
#[derive(Debug, Clone)]
struct FeatureStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl FeatureStats {
    fn from_stacks(stacks: &[FeatureStack], nf: usize) -> Self {
        let n: usize = stacks.iter().map(FeatureStack::n_pixels).sum();
        let mut mean = vec![0.0; nf];
        for s in stacks {
            for px in s.data.chunks_exact(nf) {
                for (m, v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; nf];
        for s in stacks {
            for px in s.data.chunks_exact(nf) {
                for ((acc, v), m) in var.iter_mut().zip(px).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    /// Folds the standardization into raw-feature weights.
    fn to_raw(&self, theta: &[f64], bias: f64, cfg: &FeatureConfig) -> PixelModel {
        let weights: Vec<f64> = theta.iter().zip(&self.std).map(|(t, s)| t / s).collect();
        let shift: f64 = weights.iter().zip(&self.mean).map(|(w, m)| w * m).sum();
        PixelModel {
            weights,
            bias: bias - shift,
            feature_config: cfg.clone(),
        }
    }
}

/// Parameters in standardized feature space.
struct Params {
    theta: Vec<f64>,
    bias: f64,
}

impl Params {
    fn predict(&self, z: &FeatureStack) -> ProbabilityMap {
        let values = (0..z.n_pixels())
            .map(|i| logistic(dot(&self.theta, z.pixel(i)) + self.bias))
            .collect();
        ProbabilityMap::new(z.width, z.height, values).expect("logistic output is a probability")
    }

    /// Accumulates `dL/dtheta` and `dL/dbias` given `dL/dp`.
    fn backprop(&self, z: &FeatureStack, p: &ProbabilityMap, dl_dp: &Grid<f64>, grad: &mut [f64], grad_bias: &mut f64) {
        for (i, (&pi, &g)) in p.values().iter().zip(dl_dp.as_slice()).enumerate() {
            let dz = g * pi * (1.0 - pi);
            for (acc, f) in grad.iter_mut().zip(z.pixel(i)) {
                *acc += dz * f;
            }
            *grad_bias += dz;
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_BATCHING: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_UNLABELED: u64 = 3;

/// Minibatch gradient descent on the combined loss (or the semi-supervised
/// loss when `cfg.ssl` is set). Deterministic for a given `cfg.seed`.
pub fn train_on(labeled: &[LabeledImage], unlabeled: &[UnlabeledImage], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::invalid("no labeled training images"));
    }
    if cfg.ssl.is_some() && unlabeled.is_empty() {
        return Err(Error::invalid("semi-supervised training needs unlabeled images"));
    }
    for s in labeled {
        if s.image.dims() != s.gt.dims() {
            return Err(Error::DimensionMismatch {
                expected: s.image.dims(),
                actual: s.gt.dims(),
            });
        }
    }

    let fcfg = &cfg.features;
    let nf = fcfg.feature_count();
    let raw: Vec<FeatureStack> = labeled
        .par_iter()
        .map(|s| extract_features(&s.image, fcfg))
        .collect::<Result<_>>()?;
    let stats = FeatureStats::from_stacks(&raw, nf);
    let feats: Vec<FeatureStack> = raw.iter().map(|f| f.standardized(&stats)).collect();
    let unlabeled_feats: Vec<FeatureStack> = unlabeled
        .par_iter()
        .map(|u| extract_features(&u.image, fcfg).map(|f| f.standardized(&stats)))
        .collect::<Result<_>>()?;
    // features commute with flips, so flipped views reuse the same stack
    let unlabeled_views: Vec<[FeatureStack; 3]> = unlabeled_feats
        .iter()
        .map(|z| [z.clone(), z.flip(Axis::Horizontal), z.flip(Axis::Vertical)])
        .collect();

    let mut params = Params {
        theta: vec![0.0; nf],
        bias: 0.0,
    };
    let schedule = match cfg.ssl {
        Some(s) => Some(SslSchedule::new(s.lambda_max, cfg.epochs.max(1))?),
        None => None,
    };

    let mut batch_rng = rng_for(cfg.seed, STREAM_BATCHING);
    let mut aug_rng = rng_for(cfg.seed, STREAM_AUGMENT);
    let mut unl_rng = rng_for(cfg.seed, STREAM_UNLABELED);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lambda = match &schedule {
            Some(s) => ramp(epoch, s)?,
            None => 0.0,
        };
        // guessed labels are refreshed once per epoch with the current model
        let guesses: Vec<GuessedLabel> = if schedule.is_some() {
            unlabeled
                .par_iter()
                .zip(&unlabeled_views)
                .map(|(u, [d, h, v])| average_views(&u.id, params.predict(d), params.predict(h), params.predict(v)))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };

        let mut order: Vec<usize> = (0..labeled.len()).collect();
        order.shuffle(&mut batch_rng);
        let mut unl_order: Vec<usize> = (0..unlabeled.len()).collect();
        if schedule.is_some() {
            unl_order.shuffle(&mut unl_rng);
        }
        let mut unl_cursor = 0usize;

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut xs: Vec<(FeatureStack, BinaryMask)> = Vec::with_capacity(batch.len());
            for &i in batch {
                let (mut z, mut y) = (feats[i].clone(), labeled[i].gt.clone());
                if cfg.augment {
                    let (hflip, vflip): (bool, bool) = (aug_rng.gen(), aug_rng.gen());
                    if hflip {
                        z = z.flip(Axis::Horizontal);
                        y = y.flip(Axis::Horizontal);
                    }
                    if vflip {
                        z = z.flip(Axis::Vertical);
                        y = y.flip(Axis::Vertical);
                    }
                }
                xs.push((z, y));
            }
            let preds: Vec<ProbabilityMap> = xs.iter().map(|(z, _)| params.predict(z)).collect();

            let us: Vec<usize> = if schedule.is_some() {
                (0..batch.len())
                    .map(|_| {
                        let k = unl_order[unl_cursor % unl_order.len()];
                        unl_cursor += 1;
                        k
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let upreds: Vec<ProbabilityMap> = us.iter().map(|&k| params.predict(&unlabeled_feats[k])).collect();

            let lab: Vec<(&ProbabilityMap, &BinaryMask)> = preds.iter().zip(xs.iter().map(|(_, y)| y)).collect();
            let unl: Vec<(&ProbabilityMap, &GuessedLabel)> = upreds.iter().zip(us.iter().map(|&k| &guesses[k])).collect();
            let eval = ssl_loss(&lab, &unl, lambda, &cfg.loss)?;
            if !eval.value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: eval.value,
                });
            }

            let mut grad = vec![0.0; nf];
            let mut grad_bias = 0.0;
            for ((z, _), (p, g)) in xs.iter().zip(preds.iter().zip(&eval.labeled_gradients)) {
                params.backprop(z, p, g, &mut grad, &mut grad_bias);
            }
            for ((&k, p), g) in us.iter().zip(&upreds).zip(&eval.unlabeled_gradients) {
                params.backprop(&unlabeled_feats[k], p, g, &mut grad, &mut grad_bias);
            }
            if grad.iter().any(|g| !g.is_finite()) || !grad_bias.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: eval.value,
                });
            }
            for (t, g) in params.theta.iter_mut().zip(&grad) {
                *t -= cfg.learning_rate * g;
            }
            params.bias -= cfg.learning_rate * grad_bias;

            epoch_loss += eval.value;
            n_batches += 1;
        }
        log.push(EpochLog {
            epoch,
            loss: epoch_loss / n_batches as f64,
            lambda,
        });
    }

    Ok(TrainOutcome {
        model: stats.to_raw(&params.theta, params.bias, fcfg),
        log,
    })
}

/// Either a single-dataset manifest (its train split is used) or a combined
/// manifest with optional unlabeled images.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainingSet {
    Combined(CombinedManifest),
    Single(Manifest),
}

impl TrainingSet {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn load_images(&self) -> Result<(Vec<LabeledImage>, Vec<UnlabeledImage>)> {
        let load_pair = |id: &str, image: &Path, gt: &Path| -> Result<LabeledImage> {
            Ok(LabeledImage {
                id: id.to_string(),
                image: load_gray_image(image)?,
                gt: load_mask_file(gt)?,
            })
        };
        match self {
            TrainingSet::Single(m) => {
                let labeled = m
                    .split(Split::Train)
                    .map(|s| load_pair(&s.id, &s.image, &s.gt))
                    .collect::<Result<_>>()?;
                Ok((labeled, Vec::new()))
            }
            TrainingSet::Combined(c) => {
                let labeled = c
                    .labeled
                    .iter()
                    .map(|l| load_pair(&format!("{}/{}", l.source, l.sample.id), &l.sample.image, &l.sample.gt))
                    .collect::<Result<_>>()?;
                let unlabeled = c
                    .unlabeled
                    .iter()
                    .map(|u| {
                        Ok(UnlabeledImage {
                            id: format!("{}/{}", u.source, u.id),
                            image: load_gray_image(&u.image)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok((labeled, unlabeled))
            }
        }
    }
}

/// Loads the images a training set refers to and trains on them.
pub fn train(set: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (labeled, unlabeled) = set.load_images()?;
    train_on(&labeled, &unlabeled, cfg)
}
