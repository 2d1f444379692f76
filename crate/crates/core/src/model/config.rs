use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Precision;

/// Component toggles, one per ablation variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_sce: bool,
    pub no_tce: bool,
    pub no_sde: bool,
    pub no_tde: bool,
    pub no_stei: bool,
    pub no_stpgau: bool,
    pub no_gcn: bool,
    pub no_tdcn: bool,
    pub no_mvc: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 9] = [
        "no_sce",
        "no_tce",
        "no_sde",
        "no_tde",
        "no_stei",
        "no_stpgau",
        "no_gcn",
        "no_tdcn",
        "no_mvc",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "no_sce" => &mut self.no_sce,
            "no_tce" => &mut self.no_tce,
            "no_sde" => &mut self.no_sde,
            "no_tde" => &mut self.no_tde,
            "no_stei" => &mut self.no_stei,
            "no_stpgau" => &mut self.no_stpgau,
            "no_gcn" => &mut self.no_gcn,
            "no_tdcn" => &mut self.no_tdcn,
            "no_mvc" => &mut self.no_mvc,
            _ => return None,
        })
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        let mut copy = *self;
        copy.slot(name).map(|b| *b)
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        let slot = self.slot(name).ok_or_else(|| Error::Config(format!("unknown ablation flag {name:?}")))?;
        *slot = on;
        Ok(())
    }

    /// A single flag switched on.
    pub fn only(name: &str) -> Result<Self> {
        let mut a = Self::default();
        a.set(name, true)?;
        Ok(a)
    }

    /// Comma-separated flag names; empty or `none` means the full model.
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut a = Self::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty() && *n != "none") {
            a.set(name, true)?;
        }
        Ok(a)
    }

    pub fn active(&self) -> Vec<&'static str> {
        Self::NAMES.into_iter().filter(|n| self.get(n) == Some(true)).collect()
    }

    pub fn uses_spatial_coords(&self) -> bool {
        !self.no_gcn && !self.no_sce
    }

    pub fn uses_temporal_coords(&self) -> bool {
        !self.no_gcn && !self.no_tce
    }

    pub fn uses_inference(&self) -> bool {
        !self.no_gcn && !self.no_stei
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_nodes: usize,
    pub steps_per_day: usize,
    pub alpha: usize,
    pub beta: usize,
    pub d: usize,
    pub channels: usize,
    pub t_h: usize,
    pub t_p: usize,
    pub tdcn_layers: usize,
    pub precision: Precision,
    pub seed: u64,
    pub ablation: Ablation,
}

pub const MAX_TDCN_LAYERS: usize = 4;

impl ModelConfig {
    /// Default hyperparameters for a graph of `n_nodes` with `steps_per_day` slots.
    pub fn defaults(n_nodes: usize, steps_per_day: usize) -> Self {
        Self {
            n_nodes,
            steps_per_day,
            alpha: 4,
            beta: 2,
            d: 6,
            channels: 64,
            t_h: 12,
            t_p: 12,
            tdcn_layers: 3,
            precision: Precision::Standard,
            seed: 0,
            ablation: Ablation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_nodes", self.n_nodes),
            ("steps_per_day", self.steps_per_day),
            ("d", self.d),
            ("channels", self.channels),
            ("t_h", self.t_h),
            ("t_p", self.t_p),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.tdcn_layers == 0 || self.tdcn_layers > MAX_TDCN_LAYERS {
            return Err(Error::Config(format!("tdcn_layers must be in 1..={MAX_TDCN_LAYERS}, got {}", self.tdcn_layers)));
        }
        if self.alpha >= 255 {
            return Err(Error::Config(format!("alpha {} too large", self.alpha)));
        }
        let a = self.ablation;
        if a.uses_inference() && a.no_sce && a.no_tce && a.no_sde && a.no_tde {
            return Err(Error::Config(
                "no_sce, no_tce, no_sde and no_tde together leave no weight terms; use no_stei instead".into(),
            ));
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("n_nodes", self.n_nodes.to_string()),
            ("steps_per_day", self.steps_per_day.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("d", self.d.to_string()),
            ("channels", self.channels.to_string()),
            ("t_h", self.t_h.to_string()),
            ("t_p", self.t_p.to_string()),
            ("tdcn_layers", self.tdcn_layers.to_string()),
            ("precision", self.precision.as_str().to_string()),
            ("seed", self.seed.to_string()),
        ] {
            writeln!(s, "{k}={v}").unwrap();
        }
        for name in Ablation::NAMES {
            writeln!(s, "{name}={}", self.ablation.get(name).unwrap()).unwrap();
        }
        s
    }

    /// Applies one `key=value` setting. Returns `false` for keys that are
    /// not model keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = |v: &str| -> Result<usize> {
            v.trim().parse().map_err(|_| Error::Config(format!("{key}: {v:?} is not a non-negative integer")))
        };
        match key {
            "n_nodes" => self.n_nodes = num(value)?,
            "steps_per_day" => self.steps_per_day = num(value)?,
            "alpha" => self.alpha = num(value)?,
            "beta" => self.beta = num(value)?,
            "d" => self.d = num(value)?,
            "channels" => self.channels = num(value)?,
            "t_h" => self.t_h = num(value)?,
            "t_p" => self.t_p = num(value)?,
            "tdcn_layers" => self.tdcn_layers = num(value)?,
            "precision" => {
                self.precision = Precision::parse(value.trim())
                    .ok_or_else(|| Error::Config(format!("precision: {value:?} is not standard or high")))?
            }
            "seed" => {
                self.seed = value.trim().parse().map_err(|_| Error::Config(format!("seed: {value:?} is not an integer")))?
            }
            "ablation" => self.ablation = Ablation::parse_list(value)?,
            k if Ablation::NAMES.contains(&k) => {
                let on = parse_bool(value).ok_or_else(|| Error::Config(format!("{k}: {value:?} is not a boolean")))?;
                self.ablation.set(k, on)?;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::defaults(1, 1);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {line:?} is not key=value")))?;
            if !c.set(k.trim(), v)? {
                return Err(Error::Config(format!("unknown model key {:?}", k.trim())));
            }
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn parse_bool(v: &str) -> Option<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::defaults(307, 288);
        c.ablation.no_tdcn = true;
        c.precision = Precision::High;
        c.seed = 42;
        assert_eq!(ModelConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_flags() {
        assert!(ModelConfig::from_kv("colour=red\n").is_err());
        assert!(Ablation::parse_list("no_sce,no_bogus").is_err());
        assert_eq!(Ablation::parse_list("no_sce, no_mvc").unwrap().active(), vec!["no_sce", "no_mvc"]);
        assert_eq!(Ablation::parse_list("none").unwrap(), Ablation::default());
    }

    #[test]
    fn empty_term_set_rejected() {
        let mut c = ModelConfig::defaults(3, 12);
        c.ablation = Ablation::parse_list("no_sce,no_tce,no_sde,no_tde").unwrap();
        assert!(c.validate().is_err());
        c.ablation.no_stei = true;
        assert!(c.validate().is_ok());
    }
}
