//! Layered run configuration: defaults, then a TOML file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use gbk_core::models::ModelKind;
use gbk_core::train::GridSpec;
use gbk_core::TrainConfig;
use serde::Deserialize;

use crate::error::tagged;

/// Environment variable consulted when neither a flag nor the file sets a seed.
pub const SEED_ENV: &str = "GBK_SEED";

/// Directory searched for bare dataset names such as `cora`.
pub const DATA_ROOT_ENV: &str = "GBK_DATA_ROOT";

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory, or a name looked up under $GBK_DATA_ROOT and ./data.
    #[arg(long)]
    pub data: Option<String>,
    /// mlp, gcn, sage or gbk.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Hidden width of the gate MLP.
    #[arg(long)]
    pub gate_hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    /// Gate loss weight in (0, 64]; 0 disables the gate loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train, validation and test fractions, e.g. 0.6,0.2,0.2.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<[f64; 3]>,
    /// Fix gates to label agreement (gbk only, analysis runs).
    #[arg(long)]
    pub oracle_gate: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<String>,
    pub model: Option<ModelKind>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub gate_hidden: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub split: Option<[f64; 3]>,
    pub oracle_gate: Option<bool>,
    pub grid: Option<GridSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }
}

pub fn config_error(message: impl Into<String>) -> anyhow::Error {
    tagged("config", message)
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub train: TrainConfig,
    pub data: Option<String>,
    pub grid: Option<GridSpec>,
}

/// Overlays `file` and then `flags` on `base`. The seed falls back to
/// `env_seed` only when neither layer sets it.
pub fn resolve(
    base: TrainConfig,
    base_seed_explicit: bool,
    file: FileConfig,
    flags: &ModelFlags,
    env_seed: Option<u64>,
) -> Result<Resolved> {
    let mut c = base;
    let mut seed_set = base_seed_explicit;
    macro_rules! overlay {
        ($src:expr, $($from:ident => $to:ident),*) => {
            $(if let Some(v) = $src.$from { c.$to = v; })*
        };
    }
    overlay!(file, model => model, hidden => hidden, layers => layers,
        gate_hidden => gate_hidden, learning_rate => learning_rate,
        weight_decay => weight_decay, lambda => lambda, epochs => epochs,
        split => split, oracle_gate => oracle_gate);
    if let Some(s) = file.seed {
        c.seed = s;
        seed_set = true;
    }
    overlay!(flags, model => model, hidden => hidden, layers => layers,
        gate_hidden => gate_hidden, lr => learning_rate, wd => weight_decay,
        lambda => lambda, epochs => epochs, split => split);
    if flags.oracle_gate {
        c.oracle_gate = true;
    }
    if let Some(s) = flags.seed {
        c.seed = s;
        seed_set = true;
    }
    if !seed_set {
        if let Some(s) = env_seed {
            c.seed = s;
        }
    }
    c.validate()
        .map_err(|e| config_error(e.to_string()))?;
    Ok(Resolved {
        train: c,
        data: flags.data.clone().or(file.data),
        grid: file.grid,
    })
}

pub fn resolve_flags(flags: &ModelFlags) -> Result<Resolved> {
    let file = match &flags.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    resolve(TrainConfig::default(), false, file, flags, env_seed()?)
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config_error(format!("{SEED_ENV} must be a non-negative integer, got {v:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(config_error(format!("{SEED_ENV}: {e}"))),
    }
}

pub fn parse_split(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(format!("expected three comma-separated fractions, got {s:?}"));
    };
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    let split = [parse(a)?, parse(b)?, parse(c)?];
    if split.iter().any(|&f| !(f > 0.0)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(format!("fractions must be positive and sum to 1, got {s:?}"));
    }
    Ok(split)
}

/// Comma-separated reals given as one flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl std::str::FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(FloatList)
    }
}

/// Existing directory as given, otherwise `$GBK_DATA_ROOT/<name>` or
/// `./data/<name>`.
pub fn resolve_data(name: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(name);
    if direct.is_dir() {
        return Ok(direct);
    }
    let mut tried = vec![direct.display().to_string()];
    let roots = std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .into_iter()
        .chain([PathBuf::from("data")]);
    for root in roots {
        let candidate = root.join(name);
        if candidate.is_dir() {
            return Ok(candidate);
        }
        tried.push(candidate.display().to_string());
    }
    Err(tagged(
        "data",
        format!("dataset {name:?} not found (tried {})", tried.join(", ")),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> ModelFlags {
        ModelFlags::default()
    }

    #[test]
    fn empty_config_gives_defaults() {
        let r = resolve(TrainConfig::default(), false, FileConfig::default(), &flags(), None).unwrap();
        assert_eq!(r.train.hidden, 16);
        assert_eq!(r.train.epochs, 500);
        assert_eq!(r.train.layers, 2);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: FileConfig = toml::from_str("hidden = 32\nepochs = 10\nlearning_rate = 0.5").unwrap();
        let f = ModelFlags {
            epochs: Some(7),
            ..flags()
        };
        let r = resolve(TrainConfig::default(), false, file, &f, None).unwrap();
        assert_eq!((r.train.hidden, r.train.epochs, r.train.learning_rate), (32, 7, 0.5));
    }

    #[test]
    fn env_seed_only_fills_unset_seed() {
        let r = resolve(TrainConfig::default(), false, FileConfig::default(), &flags(), Some(9)).unwrap();
        assert_eq!(r.train.seed, 9);
        let file: FileConfig = toml::from_str("seed = 3").unwrap();
        let r = resolve(TrainConfig::default(), false, file, &flags(), Some(9)).unwrap();
        assert_eq!(r.train.seed, 3);
    }

    #[test]
    fn unknown_keys_and_bad_types_fail() {
        assert!(toml::from_str::<FileConfig>("hiden = 3").is_err());
        assert!(toml::from_str::<FileConfig>("hidden = \"wide\"").is_err());
        assert!(toml::from_str::<FileConfig>("[grid]\nlearning_rates = [0.1]\nweight_decays = [0.0]\nlambdas = [1.0]\nextra = 1").is_err());
    }

    #[test]
    fn lambda_range_is_cited() {
        let f = ModelFlags {
            lambda: Some(65.0),
            ..flags()
        };
        let err = resolve(TrainConfig::default(), false, FileConfig::default(), &f, None).unwrap_err();
        assert!(err.to_string().contains("(0, 64]"), "{err}");
        let f = ModelFlags {
            lambda: Some(0.0),
            ..flags()
        };
        let r = resolve(TrainConfig::default(), false, FileConfig::default(), &f, None).unwrap();
        assert_eq!(r.train.lambda, 0.0);
    }

    #[test]
    fn split_parsing() {
        assert_eq!(parse_split("0.6,0.2,0.2").unwrap(), [0.6, 0.2, 0.2]);
        assert!(parse_split("0.6,0.2").is_err());
        assert!(parse_split("0.6,0.3,0.3").is_err());
    }
}
