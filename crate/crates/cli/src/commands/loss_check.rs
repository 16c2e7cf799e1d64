use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use vesselbench::gradcheck::{loss_suite, SuiteConfig};

use crate::{Global, Incomplete};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LossCheckArgs {
    /// Random instances per loss
    #[arg(long, default_value_t = 20)]
    pub instances: usize,

    /// Side length of each instance
    #[arg(long, default_value_t = 8)]
    pub size: usize,

    /// Finite-difference step
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,

    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

pub fn run(a: &LossCheckArgs, g: &Global) -> Result<()> {
    let cfg = SuiteConfig {
        seed: g.seed.unwrap_or(0),
        instances: a.instances,
        size: a.size,
        step: a.step,
    };
    let results = loss_suite(&cfg)?;
    let mut failures = 0;
    for r in &results {
        let ok = r.max_rel_error < a.tolerance;
        failures += usize::from(!ok);
        println!(
            "{:<28} max rel err {:.3e}  {}",
            r.loss,
            r.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        );
    }
    let json = serde_json::to_string_pretty(&results)? + "\n";
    crate::write_file(&g.out.join("loss_check.json"), json.as_bytes())?;
    if failures > 0 {
        return Err(Incomplete(format!("{failures} losses exceed tolerance {}", a.tolerance)).into());
    }
    Ok(())
}
