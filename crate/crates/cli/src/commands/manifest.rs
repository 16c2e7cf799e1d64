use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use vesselbench::datasets::{self, CovdMode, Manifest};
use vesselbench::Error;

use super::required;
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    CovdMinus,
    CovdMinusSsl,
}

impl From<ModeArg> for CovdMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::CovdMinus => CovdMode::CovdMinus,
            ModeArg::CovdMinusSsl => CovdMode::CovdMinusSsl,
        }
    }
}

/// Either `--dataset NAME --root DIR`, or `--covd-target NAME --from
/// MANIFEST...` for a combined training set.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ManifestArgs {
    /// Registered dataset name (DRIVE, STARE, CHASE_DB1, IOSTAR, HRF)
    #[arg(long)]
    pub dataset: Option<String>,

    /// Directory holding the dataset as distributed
    #[arg(long)]
    pub root: Option<PathBuf>,

    /// Target dataset of a combined training manifest
    #[arg(long)]
    pub covd_target: Option<String>,

    #[arg(long, value_enum, default_value = "covd-minus")]
    pub mode: ModeArg,

    /// Per-dataset manifests to combine
    #[arg(long = "from")]
    pub from: Vec<PathBuf>,
}

pub fn run(a: &ManifestArgs, g: &Global) -> Result<()> {
    let (json, name) = match (&a.dataset, &a.covd_target) {
        (Some(name), None) => {
            let spec = datasets::lookup(name)?;
            let m = datasets::resolve_split(spec, required(&a.root, "root")?)?;
            eprintln!(
                "{}: {} train, {} test",
                spec.name,
                m.count(datasets::Split::Train),
                m.count(datasets::Split::Test)
            );
            (m.to_json(), format!("{}.manifest.json", spec.name))
        }
        (None, Some(target)) => {
            let manifests = a.from.iter().map(|p| Manifest::load(p)).collect::<Result<Vec<_>, _>>()?;
            let c = datasets::compose_covd(target, a.mode.into(), &manifests)?;
            eprintln!(
                "{} combined: {} labeled, {} unlabeled",
                c.target,
                c.labeled.len(),
                c.unlabeled.len()
            );
            (c.to_json(), format!("covd-{}.manifest.json", c.target))
        }
        _ => {
            return Err(Error::InvalidArgument("give exactly one of --dataset or --covd-target".into()).into());
        }
    };
    crate::write_file(&g.out.join(name), (json + "\n").as_bytes())
}
