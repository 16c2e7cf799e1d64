use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vesselbench::datasets::{self, Manifest, SamplePair};
use vesselbench::harmonize::{self, GeometryLedger, Interpolation, RecipeBook, TransformRecipe};
use vesselbench::imagegrid::{encode_mask_png, load_mask_file, GrayImage, Grid};
use vesselbench::Error;

use super::{file_stem, required};
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpArg {
    Bilinear,
    Nearest,
}

impl From<InterpArg> for Interpolation {
    fn from(i: InterpArg) -> Self {
        match i {
            InterpArg::Bilinear => Interpolation::Bilinear,
            InterpArg::Nearest => Interpolation::Nearest,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct HarmonizeArgs {
    /// Manifest of the source dataset
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Registered name of the dataset whose resolution to match
    #[arg(long)]
    pub target: Option<String>,

    /// JSON recipe overrides for specific source/target pairs
    #[arg(long)]
    pub recipes: Option<PathBuf>,

    /// Resampling for images (masks always use nearest-neighbour)
    #[arg(long, value_enum)]
    pub interp: Option<InterpArg>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn copy_into(src: &Path, dir: &Path, stem: &str) -> Result<PathBuf> {
    let ext = src.extension().and_then(|e| e.to_str()).unwrap_or("bin");
    let dst = dir.join(format!("{stem}.{ext}"));
    std::fs::copy(src, &dst).map_err(|e| io_err(src, e))?;
    Ok(dst)
}

/// Applies the recipe to each color plane and writes an 8-bit RGB PNG.
fn transform_color(
    recipe: &TransformRecipe,
    src: &Path,
    dst: &Path,
    interp: Option<Interpolation>,
) -> Result<GeometryLedger> {
    let img = image::open(src).map_err(Error::from)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut planes = Vec::with_capacity(3);
    let mut ledger = None;
    for c in 0..3 {
        let plane: GrayImage = Grid::from_fn(w, h, |r, col| img.get_pixel(col as u32, r as u32)[c] as f64 / 255.0);
        let (out, l) = harmonize::apply(recipe, &plane, interp)?;
        planes.push(out);
        ledger = Some(l);
    }
    let (ow, oh) = (planes[0].width(), planes[0].height());
    let out = image::RgbImage::from_fn(ow as u32, oh as u32, |x, y| {
        let px = |c: usize| (planes[c].get(y as usize, x as usize) * 255.0).round().clamp(0.0, 255.0) as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    out.save(dst).map_err(Error::from)?;
    Ok(ledger.expect("three planes"))
}

/// Transforms a mask, writes it and reads it back to confirm it is binary.
fn transform_mask(recipe: &TransformRecipe, src: &Path, dst: &Path) -> Result<()> {
    let mask = load_mask_file(src)?;
    let (out, _) = harmonize::apply(recipe, &mask, None)?;
    crate::write_file(dst, &encode_mask_png(&out)?)?;
    let back = image::open(dst).map_err(Error::from)?.to_luma8();
    if back.pixels().any(|p| p[0] != 0 && p[0] != 255) {
        return Err(Error::Format(format!("{} is not binary after writing", dst.display())).into());
    }
    Ok(())
}

fn harmonize_sample(
    s: &SamplePair,
    recipe: &TransformRecipe,
    interp: Option<Interpolation>,
    out: &Path,
) -> Result<SamplePair> {
    let stem = file_stem(&s.id);
    let dirs = ["images", "gt", "gt2", "mask", "ledgers"].map(|d| out.join(d));
    let mut result = s.clone();
    if recipe.is_identity() {
        result.image = copy_into(&s.image, &dirs[0], &stem)?;
        result.gt = copy_into(&s.gt, &dirs[1], &stem)?;
        result.gt2 = s.gt2.as_deref().map(|p| copy_into(p, &dirs[2], &stem)).transpose()?;
        result.mask = s.mask.as_deref().map(|p| copy_into(p, &dirs[3], &stem)).transpose()?;
        return Ok(result);
    }
    result.image = dirs[0].join(format!("{stem}.png"));
    let ledger = transform_color(recipe, &s.image, &result.image, interp)
        .with_context(|| format!("sample {}", s.id))?;
    result.gt = dirs[1].join(format!("{stem}.png"));
    transform_mask(recipe, &s.gt, &result.gt)?;
    if let Some(p) = &s.gt2 {
        let dst = dirs[2].join(format!("{stem}.png"));
        transform_mask(recipe, p, &dst)?;
        result.gt2 = Some(dst);
    }
    if let Some(p) = &s.mask {
        let dst = dirs[3].join(format!("{stem}.png"));
        transform_mask(recipe, p, &dst)?;
        result.mask = Some(dst);
    }
    let ledger_json = serde_json::to_string_pretty(&ledger)? + "\n";
    crate::write_file(&dirs[4].join(format!("{stem}.json")), ledger_json.as_bytes())?;
    Ok(result)
}

pub fn run(a: &HarmonizeArgs, g: &Global) -> Result<()> {
    let manifest = Manifest::load_subset(required(&a.manifest, "manifest")?)?;
    let source = datasets::lookup(&manifest.dataset)?;
    let target = datasets::lookup(required(&a.target, "target")?)?;
    let book = match &a.recipes {
        Some(p) => RecipeBook::load(p)?,
        None => RecipeBook::default(),
    };
    let recipe = book.plan(source, target)?;
    for d in ["images", "gt", "gt2", "mask", "ledgers"] {
        let dir = g.out.join(d);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    let interp = a.interp.map(Interpolation::from);
    let samples = manifest
        .samples
        .par_iter()
        .map(|s| harmonize_sample(s, &recipe, interp, &g.out))
        .collect::<Result<Vec<_>>>()?;
    let out = Manifest {
        dataset: manifest.dataset.clone(),
        samples,
        split_rule: manifest.split_rule,
    };
    crate::write_file(&g.out.join("manifest.json"), (out.to_json() + "\n").as_bytes())?;
    let recipe_json = serde_json::to_string_pretty(&recipe)? + "\n";
    crate::write_file(&g.out.join("recipe.json"), recipe_json.as_bytes())?;
    eprintln!(
        "{} -> {}: {} samples at {}x{}",
        source.name,
        target.name,
        out.samples.len(),
        recipe.target_dims().0,
        recipe.target_dims().1
    );
    Ok(())
}
