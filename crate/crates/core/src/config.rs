//! Flat `key=value` run configuration shared by every command.

use std::path::{Path, PathBuf};

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

pub const SEED_ENV: &str = "STEIPCN_SEED";

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("alpha", "4", "maximum hop distance of spatial neighbours"),
    ("beta", "2", "maximum temporal look-back offset"),
    ("d", "6", "encoding dimension"),
    ("channels", "64", "hidden channels C"),
    ("t_h", "12", "input window length"),
    ("t_p", "12", "forecast horizon length"),
    ("tdcn_layers", "3", "dilated causal convolution layers (1-4)"),
    ("precision", "standard", "standard (32-bit) or high (64-bit)"),
    ("seed", "0", "seed for init and shuffling; falls back to STEIPCN_SEED"),
    ("ablation", "none", "comma-separated ablation flags"),
    ("no_sce", "false", "drop spatial coordinate encodings"),
    ("no_tce", "false", "drop temporal coordinate encodings"),
    ("no_sde", "false", "drop the hop-distance encoding term"),
    ("no_tde", "false", "drop the offset encoding term"),
    ("no_stei", "false", "free per-edge weights instead of inferred ones"),
    ("no_stpgau", "false", "concatenate guidance instead of the gated unit"),
    ("no_gcn", "false", "remove the joint graph convolution"),
    ("no_tdcn", "false", "remove the dilated causal convolutions"),
    ("no_mvc", "false", "predict from the last trunk without view fusion"),
    ("lr", "0.002", "Adam learning rate"),
    ("batch_size", "32", "windows per optimizer step"),
    ("max_epochs", "200", "epoch limit"),
    ("patience", "15", "epochs without validation improvement before stopping"),
    ("mape_epsilon", "1.0", "targets below this magnitude are excluded from MAPE"),
    ("adam_beta1", "0.9", "Adam first-moment decay"),
    ("adam_beta2", "0.999", "Adam second-moment decay"),
    ("adam_eps", "1e-8", "Adam denominator epsilon"),
    ("split", "6:2:2", "chronological train:val:test ratios"),
    ("directed", "false", "treat the edge list as directed"),
    ("nodes", "", "node count override for isolated trailing nodes"),
    ("graph", "", "edge-list CSV path"),
    ("data", "", "series path (STTD or CSV)"),
    ("out", "", "output path"),
    ("checkpoint", "", "checkpoint path"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Geometry fields `n_nodes` and `steps_per_day` are filled from the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub directed: bool,
    pub nodes: Option<usize>,
    pub graph: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    seed_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::defaults(1, 1),
            train: TrainConfig::default(),
            split: SplitSpec { train: 6, val: 2, test: 2 },
            directed: false,
            nodes: None,
            graph: None,
            data: None,
            out: None,
            checkpoint: None,
            seed_set: false,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "n_nodes" | "steps_per_day" => {
                return Err(Error::Config(format!("{key} is taken from the data and cannot be set")))
            }
            "seed" => {
                self.model.seed = parse(key, v)?;
                self.train.seed = self.model.seed;
                self.seed_set = true;
            }
            "lr" => self.train.lr = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "max_epochs" => self.train.max_epochs = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "mape_epsilon" => self.train.mape_epsilon = parse(key, v)?,
            "adam_beta1" => self.train.beta1 = parse(key, v)?,
            "adam_beta2" => self.train.beta2 = parse(key, v)?,
            "adam_eps" => self.train.eps = parse(key, v)?,
            "split" => self.split = SplitSpec::parse(v)?,
            "directed" => {
                self.directed = crate::model::config_bool(v).ok_or_else(|| Error::Config(format!("directed: {v:?}")))?
            }
            "nodes" => self.nodes = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "graph" => self.graph = opt_path(v),
            "data" => self.data = opt_path(v),
            "out" => self.out = opt_path(v),
            "checkpoint" => self.checkpoint = opt_path(v),
            _ => {
                if !self.model.set(key, v)? {
                    return Err(Error::Config(format!("unknown config key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// `#` starts a comment; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            c.set(k.trim(), v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Uses `env_seed` when no seed key was given.
    pub fn apply_seed_fallback(&mut self, env_seed: Option<&str>) -> Result<()> {
        if self.seed_set {
            return Ok(());
        }
        if let Some(s) = env_seed.filter(|s| !s.trim().is_empty()) {
            self.set("seed", s).map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an integer")))?;
        }
        Ok(())
    }

    /// Key listing with defaults, for help output.
    pub fn describe_keys() -> String {
        KEYS.iter().map(|(k, d, h)| format!("  {k:<13} default {d:<9} {h}\n")).collect()
    }
}
