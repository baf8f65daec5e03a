//! `key=value` run configuration shared by the CLI and the examples.

use crate::dataset::GeneratorConfig;
use crate::encoder::Aggregation;
use crate::error::{HsaError, HsaResult};
use crate::hap::ProjectorSet;
use crate::model::{ModelConfig, Variant};
use crate::saf::SafMode;
use crate::tasks::TaskKind;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub task: TaskKind,
    /// Target column names; empty means every column.
    pub targets: Vec<String>,
    pub bin_width: usize,
    /// Seeds for repeated experiments such as ablations.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            generator: GeneratorConfig::default(),
            task: TaskKind::Regression,
            targets: vec!["wiener_index".into()],
            bin_width: 20,
            seeds: vec![1],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> HsaResult<T> {
    value
        .parse()
        .map_err(|_| HsaError::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> HsaResult<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(HsaError::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    /// Applies `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> HsaResult<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> HsaResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HsaError::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> HsaResult<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let g = &mut self.generator;
        match key {
            "layers" => m.layers = parse(key, value)?,
            "dim" => m.dim = parse(key, value)?,
            "tokens" => m.tokens = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "state" => m.state = parse(key, value)?,
            "alpha" => m.alpha = parse(key, value)?,
            "experts" => m.experts = parse(key, value)?,
            "ff_hidden" => m.ff_hidden = parse(key, value)?,
            "epsilon_learnable" => m.epsilon_learnable = parse_bool(key, value)?,
            "route_motifs" => m.route_motifs = parse_bool(key, value)?,
            "saf" => m.saf = parse_bool(key, value)?,
            "saf_mode" => {
                m.saf_mode = match value {
                    "verbatim" => SafMode::Verbatim,
                    "weighted" => SafMode::Weighted,
                    _ => return Err(HsaError::Config(format!("bad saf_mode `{value}`"))),
                }
            }
            "aggregation" => {
                m.aggregation = match value {
                    "sum" => Aggregation::Sum,
                    "mean" => Aggregation::Mean,
                    _ => return Err(HsaError::Config(format!("bad aggregation `{value}`"))),
                }
            }
            "projectors" => {
                m.projectors = match value {
                    "both" => ProjectorSet::Both,
                    "attention" => ProjectorSet::AttentionOnly,
                    "mamba" => ProjectorSet::MambaOnly,
                    _ => return Err(HsaError::Config(format!("bad projectors `{value}`"))),
                }
            }
            "attention" | "mamba" => {
                let on = parse_bool(key, value)?;
                let (mut a, mut b) = match m.projectors {
                    ProjectorSet::Both => (true, true),
                    ProjectorSet::AttentionOnly => (true, false),
                    ProjectorSet::MambaOnly => (false, true),
                };
                if key == "attention" {
                    a = on;
                } else {
                    b = on;
                }
                m.projectors = Variant::from_toggles(a, b, m.saf)?.projectors;
            }
            "lr" => t.lr = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => {
                t.seed = parse(key, value)?;
                g.seed = t.seed;
            }
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "clip_norm" => t.clip_norm = parse(key, value)?,
            "train_fraction" => t.train_fraction = parse(key, value)?,
            "min_motif_freq" => t.min_motif_freq = parse(key, value)?,
            "cosine_decay" => t.cosine_decay = parse_bool(key, value)?,
            "n" => g.n = parse(key, value)?,
            "min_atoms" => g.min_atoms = parse(key, value)?,
            "max_atoms" => g.max_atoms = parse(key, value)?,
            "task" => self.task = value.parse().map_err(HsaError::Config)?,
            "target" | "targets" => {
                self.targets = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "bin_width" => self.bin_width = parse(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<HsaResult<Vec<u64>>>()?
            }
            _ => return Err(HsaError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.generator.seed = seed;
    }
}
