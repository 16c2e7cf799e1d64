use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vesselbench::imagegrid::{load_gray_image, save_probability_map, RasterFormat};
use vesselbench::losses::{JaccardMode, JbceConfig, SignMode};
use vesselbench::pixelmodel::{predict, train, training_log_csv, SslConfig, TrainConfig, TrainingSet};
use vesselbench::Error;

use super::{file_stem, required};
use crate::Global;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset manifest (train split is used) or combined manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    #[arg(long, default_value_t = 200)]
    pub epochs: usize,

    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 2.0)]
    pub learning_rate: f64,

    /// Weight of the BCE term in the combined loss
    #[arg(long, default_value_t = vesselbench::losses::DEFAULT_ALPHA)]
    pub alpha: f64,

    /// Use the Jaccard term with the sign as originally printed
    #[arg(long)]
    pub paper_sign: bool,

    /// Use the per-pixel Jaccard reading instead of the global one
    #[arg(long)]
    pub paper_jaccard: bool,

    /// Enables semi-supervised training with this final unlabeled weight
    #[arg(long)]
    pub lambda_max: Option<f64>,

    /// Disable random flips of labeled pairs
    #[arg(long)]
    pub no_augment: bool,

    /// Write `<id>.pmap` predictions for every sample of this manifest
    #[arg(long)]
    pub predict: Option<PathBuf>,
}

impl TrainArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            loss: JbceConfig {
                alpha: self.alpha,
                sign_mode: if self.paper_sign { SignMode::PaperLiteral } else { SignMode::Corrected },
                jaccard_mode: if self.paper_jaccard { JaccardMode::PaperLiteral } else { JaccardMode::Global },
            },
            ssl: self.lambda_max.map(|lambda_max| SslConfig { lambda_max }),
            augment: !self.no_augment,
            ..TrainConfig::default()
        }
    }
}

pub fn run(a: &TrainArgs, g: &Global) -> Result<()> {
    let seed = g
        .seed
        .ok_or_else(|| Error::InvalidArgument("--seed is required for training".into()))?;
    let set = TrainingSet::load(required(&a.manifest, "manifest")?)?;
    let cfg = a.config(seed);
    let outcome = train(&set, &cfg)?;
    if let Some(last) = outcome.log.last() {
        eprintln!("epoch {}: loss {:.6}, lambda {:.4}", last.epoch, last.loss, last.lambda);
    }
    crate::write_file(&g.out.join("model.json"), (outcome.model.to_json() + "\n").as_bytes())?;
    crate::write_file(&g.out.join("training_log.csv"), training_log_csv(&outcome.log)?.as_bytes())?;

    if let Some(path) = &a.predict {
        let m = vesselbench::datasets::Manifest::load(path)?;
        let dir = g.out.join("predictions");
        m.samples.par_iter().try_for_each(|s| -> Result<()> {
            let p = predict(&outcome.model, &load_gray_image(&s.image)?)?;
            let bytes = save_probability_map(&p, RasterFormat::Rawf32)?;
            crate::write_file(&dir.join(format!("{}.pmap", file_stem(&s.id))), &bytes)
        })?;
        eprintln!("wrote {} predictions", m.samples.len());
    }
    Ok(())
}
