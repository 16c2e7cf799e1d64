use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// What a run actually used, written next to its outputs. Passing it back
/// through `--config` repeats the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub args: Value,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vesselbench::Error::Io { path: path.to_path_buf(), source: e })?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

fn given(m: &ArgMatches, id: &str) -> bool {
    m.try_contains_id(id).unwrap_or(false) && m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Fills every argument not given on the command line from `config`.
pub fn merge<T: Serialize + DeserializeOwned>(cli: &T, m: &ArgMatches, config: Option<&Value>) -> Result<T> {
    let mut value = serde_json::to_value(cli)?;
    if let (Value::Object(map), Some(Value::Object(cfg))) = (&mut value, config) {
        for (k, v) in cfg {
            if !map.contains_key(k) {
                bail!("unknown config key {k:?}");
            }
            if !given(m, k) {
                map.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(serde_json::from_value(value)?)
}

pub fn pick<T: Clone>(m: &ArgMatches, id: &str, cli: Option<T>, config: Option<T>) -> Option<T> {
    if given(m, id) {
        cli
    } else {
        config.or(cli)
    }
}

pub fn write_run_config(out: &Path, rc: &RunConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(rc)? + "\n";
    crate::write_file(&out.join(RUN_CONFIG_FILE), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use clap::{Args, Command, FromArgMatches};
    use serde_json::json;

    use super::*;

    #[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
    struct Demo {
        #[arg(long, default_value_t = 3)]
        count: usize,
        #[arg(long, default_value = "a")]
        name: String,
    }

    fn parse(argv: &[&str]) -> (Demo, ArgMatches) {
        let m = Demo::augment_args(Command::new("demo")).get_matches_from(argv);
        (Demo::from_arg_matches(&m).unwrap(), m)
    }

    #[test]
    fn command_line_beats_config_beats_default() {
        let cfg = json!({"count": 9, "name": "cfg"});
        let (d, m) = parse(&["demo", "--name", "cli"]);
        let merged = merge(&d, &m, Some(&cfg)).unwrap();
        assert_eq!(merged, Demo { count: 9, name: "cli".into() });
        let (d, m) = parse(&["demo"]);
        assert_eq!(merge(&d, &m, None).unwrap(), Demo { count: 3, name: "a".into() });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let (d, m) = parse(&["demo"]);
        assert!(merge(&d, &m, Some(&json!({"cuont": 1}))).is_err());
    }

    #[test]
    fn pick_prefers_explicit_flags() {
        let m = clap::Command::new("x")
            .arg(clap::Arg::new("seed").long("seed").value_parser(clap::value_parser!(u64)))
            .get_matches_from(["x", "--seed", "4"]);
        assert_eq!(pick(&m, "seed", Some(4), Some(8)), Some(4));
        let m = clap::Command::new("x")
            .arg(clap::Arg::new("seed").long("seed").value_parser(clap::value_parser!(u64)))
            .get_matches_from(["x"]);
        assert_eq!(pick(&m, "seed", None, Some(8)), Some(8));
    }
}
