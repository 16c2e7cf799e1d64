//! Geometry harmonization between datasets: invertible crop, resize and pad
//! pipelines that reshape a source dataset into a target's resolution.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{self, DatasetSpec};
use crate::error::{Error, Result};
use crate::imagegrid::{BinaryMask, Grid, GrayImage, ProbabilityMap};

/// Half-resolution HRF geometry used for training in the reference setup.
pub const HRF_HALF_TRAINING_DIMS: (usize, usize) = (1168, 1648);
/// Full-resolution HRF inference geometry of the reference setup.
pub const HRF_FULL_INFERENCE_DIMS: (usize, usize) = (2336, 3296);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Step {
    Crop {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Resize {
        height: usize,
        width: usize,
        method: Interpolation,
    },
    Pad {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
        #[serde(default)]
        fill: f64,
    },
}

impl Step {
    fn output_dims(&self, (h, w): (usize, usize)) -> Result<(usize, usize)> {
        match *self {
            Step::Crop {
                top,
                left,
                height,
                width,
            } => {
                if height == 0 || width == 0 || top + height > h || left + width > w {
                    Err(Error::invalid(format!(
                        "crop ({top}, {left}, {height}x{width}) outside {h}x{w}"
                    )))
                } else {
                    Ok((height, width))
                }
            }
            Step::Resize { height, width, .. } => {
                if height == 0 || width == 0 {
                    Err(Error::invalid("resize to a zero dimension"))
                } else {
                    Ok((height, width))
                }
            }
            Step::Pad {
                top,
                bottom,
                left,
                right,
                ..
            } => Ok((h + top + bottom, w + left + right)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecipe {
    source_dims: (usize, usize),
    target_dims: (usize, usize),
    steps: Vec<Step>,
}

impl TransformRecipe {
    /// Validates every step against the running dimensions.
    pub fn new(source_dims: (usize, usize), steps: Vec<Step>) -> Result<Self> {
        if source_dims.0 == 0 || source_dims.1 == 0 {
            return Err(Error::invalid("source dimensions must be positive"));
        }
        let target_dims = steps
            .iter()
            .try_fold(source_dims, |dims, step| step.output_dims(dims))?;
        Ok(Self {
            source_dims,
            target_dims,
            steps,
        })
    }

    pub fn identity(dims: (usize, usize)) -> Self {
        Self {
            source_dims: dims,
            target_dims: dims,
            steps: Vec::new(),
        }
    }

    pub fn source_dims(&self) -> (usize, usize) {
        self.source_dims
    }

    pub fn target_dims(&self) -> (usize, usize) {
        self.target_dims
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    AspectCropThenResize,
}

/// Largest centred window of `source` with the aspect ratio of `target`
/// (floor arithmetic), as `(top, left, height, width)`.
pub fn centered_aspect_crop(
    source: (usize, usize),
    target: (usize, usize),
) -> (usize, usize, usize, usize) {
    let (sh, sw) = source;
    let (th, tw) = target;
    // compare sw/sh with tw/th without division
    let (h, w) = if sw * th > sh * tw {
        (sh, (sh * tw / th).max(1))
    } else {
        ((sw * th / tw).max(1), sw)
    };
    ((sh - h) / 2, (sw - w) / 2, h, w)
}

pub fn plan_dims(source: (usize, usize), target: (usize, usize), policy: Policy) -> Result<TransformRecipe> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::invalid(format!("degenerate target dimensions {target:?}")));
    }
    let Policy::AspectCropThenResize = policy;
    if source == target {
        return Ok(TransformRecipe::identity(source));
    }
    let mut steps = Vec::new();
    let (top, left, height, width) = centered_aspect_crop(source, target);
    if (height, width) != source {
        steps.push(Step::Crop {
            top,
            left,
            height,
            width,
        });
    }
    if (height, width) != target {
        steps.push(Step::Resize {
            height: target.0,
            width: target.1,
            method: Interpolation::Bilinear,
        });
    }
    TransformRecipe::new(source, steps)
}

/// Plans the recipe that gives `source` the geometry of `target`.
pub fn plan(source: &DatasetSpec, target: &DatasetSpec, policy: Policy) -> Result<TransformRecipe> {
    plan_dims(source.dims(), target.dims(), policy)
}

/// On-disk recipe override: `{"source": name, "target": name, "steps": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeOverride {
    pub source: String,
    pub target: String,
    pub steps: Vec<Step>,
}

impl RecipeOverride {
    pub fn to_recipe(&self) -> Result<TransformRecipe> {
        let source = datasets::lookup(&self.source)?;
        let target = datasets::lookup(&self.target)?;
        let recipe = TransformRecipe::new(source.dims(), self.steps.clone())?;
        if recipe.target_dims() != target.dims() {
            return Err(Error::invalid(format!(
                "override {} -> {} ends at {:?}, expected {:?}",
                self.source,
                self.target,
                recipe.target_dims(),
                target.dims()
            )));
        }
        Ok(recipe)
    }
}

/// Per-pair recipes that replace [`plan`] output.
#[derive(Debug, Clone, Default)]
pub struct RecipeBook {
    overrides: BTreeMap<(String, String), TransformRecipe>,
}

impl RecipeBook {
    pub fn from_overrides(overrides: &[RecipeOverride]) -> Result<Self> {
        let mut book = Self::default();
        for o in overrides {
            book.overrides
                .insert((o.source.clone(), o.target.clone()), o.to_recipe()?);
        }
        Ok(book)
    }

    /// Reads either a single override object or an array of them.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let overrides: Vec<RecipeOverride> = if value.is_array() {
            serde_json::from_value(value)?
        } else {
            vec![serde_json::from_value(value)?]
        };
        Self::from_overrides(&overrides)
    }

    pub fn plan(&self, source: &DatasetSpec, target: &DatasetSpec) -> Result<TransformRecipe> {
        match self
            .overrides
            .get(&(source.name.to_string(), target.name.to_string()))
        {
            Some(r) => Ok(r.clone()),
            None => plan(source, target, Policy::AspectCropThenResize),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum LedgerEntry {
    Crop {
        top: usize,
        left: usize,
        before: (usize, usize),
    },
    Resize {
        before: (usize, usize),
        after: (usize, usize),
    },
    Pad {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
}

/// Offsets of an applied transform, enough to map outputs back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryLedger {
    pub source_dims: (usize, usize),
    pub output_dims: (usize, usize),
    pub entries: Vec<LedgerEntry>,
}

impl GeometryLedger {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Raster types that the harmonization steps can be applied to.
pub trait Resample: Sized {
    fn dims(&self) -> (usize, usize);
    fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self>;
    fn pad(&self, top: usize, bottom: usize, left: usize, right: usize, fill: f64) -> Self;
    fn resize(&self, height: usize, width: usize, method: Interpolation) -> Self;
}

fn resize_values(g: &Grid<f64>, height: usize, width: usize, method: Interpolation) -> Grid<f64> {
    match method {
        Interpolation::Bilinear => g.resize_bilinear(height, width),
        Interpolation::Nearest => g.resize_nearest(height, width),
    }
}

impl Resample for GrayImage {
    fn dims(&self) -> (usize, usize) {
        Grid::dims(self)
    }

    fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        Grid::crop(self, top, left, height, width)
    }

    fn pad(&self, top: usize, bottom: usize, left: usize, right: usize, fill: f64) -> Self {
        Grid::pad(self, top, bottom, left, right, fill)
    }

    fn resize(&self, height: usize, width: usize, method: Interpolation) -> Self {
        resize_values(self, height, width, method)
    }
}

impl Resample for ProbabilityMap {
    fn dims(&self) -> (usize, usize) {
        ProbabilityMap::dims(self)
    }

    fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        Ok(self.with_grid_same_lattice(self.grid().crop(top, left, height, width)?))
    }

    fn pad(&self, top: usize, bottom: usize, left: usize, right: usize, fill: f64) -> Self {
        let grid = self.grid().pad(top, bottom, left, right, fill.clamp(0.0, 1.0));
        if fill == 0.0 || fill == 1.0 {
            self.with_grid_same_lattice(grid)
        } else {
            Self::from_interpolated(grid)
        }
    }

    fn resize(&self, height: usize, width: usize, method: Interpolation) -> Self {
        match method {
            Interpolation::Nearest => {
                self.with_grid_same_lattice(self.grid().resize_nearest(height, width))
            }
            Interpolation::Bilinear => {
                Self::from_interpolated(self.grid().resize_bilinear(height, width))
            }
        }
    }
}

impl Resample for BinaryMask {
    fn dims(&self) -> (usize, usize) {
        BinaryMask::dims(self)
    }

    fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        Ok(BinaryMask::from_grid(self.grid().crop(top, left, height, width)?))
    }

    fn pad(&self, top: usize, bottom: usize, left: usize, right: usize, fill: f64) -> Self {
        BinaryMask::from_grid(self.grid().pad(top, bottom, left, right, fill >= 0.5))
    }

    /// Always nearest-neighbour, so labels stay binary.
    fn resize(&self, height: usize, width: usize, _method: Interpolation) -> Self {
        BinaryMask::from_grid(self.grid().resize_nearest(height, width))
    }
}

/// Applies `recipe` to `r`. `interp_override` replaces the recipe's resize
/// method (masks ignore it and always use nearest-neighbour).
pub fn apply<R: Resample + Clone>(
    recipe: &TransformRecipe,
    r: &R,
    interp_override: Option<Interpolation>,
) -> Result<(R, GeometryLedger)> {
    if r.dims() != recipe.source_dims {
        return Err(Error::DimensionMismatch {
            expected: recipe.source_dims,
            actual: r.dims(),
        });
    }
    let mut current = r.clone();
    let mut entries = Vec::with_capacity(recipe.steps.len());
    for step in &recipe.steps {
        let before = current.dims();
        current = match *step {
            Step::Crop {
                top,
                left,
                height,
                width,
            } => {
                entries.push(LedgerEntry::Crop { top, left, before });
                current.crop(top, left, height, width)?
            }
            Step::Resize {
                height,
                width,
                method,
            } => {
                entries.push(LedgerEntry::Resize {
                    before,
                    after: (height, width),
                });
                current.resize(height, width, interp_override.unwrap_or(method))
            }
            Step::Pad {
                top,
                bottom,
                left,
                right,
                fill,
            } => {
                entries.push(LedgerEntry::Pad {
                    top,
                    bottom,
                    left,
                    right,
                });
                current.pad(top, bottom, left, right, fill)
            }
        };
    }
    let ledger = GeometryLedger {
        source_dims: recipe.source_dims,
        output_dims: current.dims(),
        entries,
    };
    Ok((current, ledger))
}

/// Zero-pads both dimensions up to the next multiple of `m`, splitting the
/// padding evenly with the odd pixel on the bottom/right.
pub fn pad_to_multiple<R: Resample + Clone>(r: &R, m: usize) -> Result<(R, GeometryLedger)> {
    if m == 0 {
        return Err(Error::invalid("pad multiple must be at least 1"));
    }
    let (h, w) = r.dims();
    let (extra_h, extra_w) = (h.div_ceil(m) * m - h, w.div_ceil(m) * m - w);
    let steps = if extra_h == 0 && extra_w == 0 {
        Vec::new()
    } else {
        vec![Step::Pad {
            top: extra_h / 2,
            bottom: extra_h - extra_h / 2,
            left: extra_w / 2,
            right: extra_w - extra_w / 2,
            fill: 0.0,
        }]
    };
    apply(&TransformRecipe::new((h, w), steps)?, r, None)
}

/// Maps a transformed raster back to the ledger's source geometry. Cropped
/// regions cannot be recovered and come back zero-filled.
pub fn invert<R: Resample>(ledger: &GeometryLedger, r: R) -> Result<R> {
    if r.dims() != ledger.output_dims {
        return Err(Error::DimensionMismatch {
            expected: ledger.output_dims,
            actual: r.dims(),
        });
    }
    let mut current = r;
    for entry in ledger.entries.iter().rev() {
        let (h, w) = current.dims();
        current = match *entry {
            LedgerEntry::Pad {
                top,
                bottom,
                left,
                right,
            } => current.crop(top, left, h - top - bottom, w - left - right)?,
            LedgerEntry::Resize { before, .. } => {
                current.resize(before.0, before.1, Interpolation::Bilinear)
            }
            LedgerEntry::Crop { top, left, before } => {
                current.pad(top, before.0 - top - h, left, before.1 - left - w, 0.0)
            }
        };
    }
    Ok(current)
}

/// Downscale by two in each dimension (integer division), the first step of
/// the half-resolution training convention.
pub fn half_resolution(dims: (usize, usize)) -> Result<TransformRecipe> {
    TransformRecipe::new(
        dims,
        vec![Step::Resize {
            height: (dims.0 / 2).max(1),
            width: (dims.1 / 2).max(1),
            method: Interpolation::Bilinear,
        }],
    )
}
