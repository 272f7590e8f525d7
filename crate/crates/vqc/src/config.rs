//! Flat key-value experiment configuration with dotted section keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Result, VqcError};
use crate::vqvae::TrainConfig;

/// Which experiment a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    TokensCollapseAblation,
    CodebookSizeSweep,
    CapacitySweep,
    SingleRun,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tokens-collapse-ablation" => Ok(ExperimentKind::TokensCollapseAblation),
            "codebook-size-sweep" => Ok(ExperimentKind::CodebookSizeSweep),
            "capacity-sweep" => Ok(ExperimentKind::CapacitySweep),
            "single-run" => Ok(ExperimentKind::SingleRun),
            other => Err(VqcError::Config(format!("unknown experiment kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::TokensCollapseAblation => "tokens-collapse-ablation",
            ExperimentKind::CodebookSizeSweep => "codebook-size-sweep",
            ExperimentKind::CapacitySweep => "capacity-sweep",
            ExperimentKind::SingleRun => "single-run",
        }
    }
}

/// Parsed experiment configuration. Sweep values mean codebook sizes for the
/// codebook sweep, encoder hidden sizes for the capacity sweep, and data
/// dimensions for the tokens-collapse ablation.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub sweep: Vec<usize>,
    pub out_dir: PathBuf,
    pub data_dim: usize,
    pub n_clusters: usize,
    pub points_per_cluster: usize,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(VqcError::Config("seeds must be non-empty".into()));
        }
        if self.kind != ExperimentKind::SingleRun && self.sweep.is_empty() {
            return Err(VqcError::Config("sweep values must be non-empty".into()));
        }
        self.train.validate()
    }
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            VqcError::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| VqcError::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect()
}

/// Default sweep values per experiment kind.
fn default_sweep(kind: ExperimentKind) -> Vec<usize> {
    match kind {
        ExperimentKind::TokensCollapseAblation => vec![2, 3, 8],
        ExperimentKind::CodebookSizeSweep => vec![32, 128, 512, 2048],
        ExperimentKind::CapacitySweep => vec![4, 8, 16, 32],
        ExperimentKind::SingleRun => vec![],
    }
}

fn default_data_dim(kind: ExperimentKind) -> usize {
    match kind {
        ExperimentKind::CapacitySweep => 3,
        _ => 2,
    }
}

/// Build an [`ExperimentConfig`] from flat config text.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let map = parse_flat(text)?;
    let kind = ExperimentKind::parse(
        map.get("experiment.kind").map(String::as_str).unwrap_or("single-run"),
    )?;
    let mut cfg = ExperimentConfig {
        kind,
        seeds: vec![0],
        sweep: default_sweep(kind),
        out_dir: PathBuf::from("out"),
        data_dim: default_data_dim(kind),
        n_clusters: 10,
        points_per_cluster: 1000,
        train: TrainConfig::default(),
    };
    for (key, value) in &map {
        match key.as_str() {
            "experiment.kind" => {}
            "experiment.seeds" => cfg.seeds = parse_list(key, value)?,
            "experiment.sweep" => cfg.sweep = parse_list(key, value)?,
            "experiment.out" => cfg.out_dir = PathBuf::from(value),
            "data.dim" => cfg.data_dim = parse_num(key, value)?,
            "data.clusters" => cfg.n_clusters = parse_num(key, value)?,
            "data.points_per_cluster" => cfg.points_per_cluster = parse_num(key, value)?,
            "train.epochs" => cfg.train.epochs = parse_num(key, value)?,
            "train.pretrain_epochs" => cfg.train.pretrain_epochs = parse_num(key, value)?,
            "train.batch_size" => cfg.train.batch_size = parse_num(key, value)?,
            "train.lr" => cfg.train.lr = parse_num(key, value)?,
            "train.gamma" => cfg.train.gamma = parse_num(key, value)?,
            "train.beta" => cfg.train.beta = parse_num(key, value)?,
            "train.codebook_size" => cfg.train.codebook_size = parse_num(key, value)?,
            "train.hidden_dim" => cfg.train.hidden_dim = parse_num(key, value)?,
            "train.encoder_hidden_dim" => cfg.train.encoder_hidden_dim = parse_num(key, value)?,
            "train.token_dim" => cfg.train.token_dim = parse_num(key, value)?,
            "train.tokens_per_sample" => cfg.train.tokens_per_sample = parse_num(key, value)?,
            "train.seed" => cfg.train.seed = parse_num(key, value)?,
            other => return Err(VqcError::Config(format!("unknown config key '{other}'"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_experiment_config(&text)
}
