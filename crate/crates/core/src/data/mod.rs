//! Traffic series, chronological splits, normalization and window extraction.

mod format;
mod synthetic;

pub use format::{load_series, parse_csv_series, read_sttd, save_series, to_csv_series, write_sttd};
pub use synthetic::{generate_synthetic, SynthConfig, SYNTH_STEPS_PER_DAY};

use std::ops::Range;

use crate::encodings::DAYS_PER_WEEK;
use crate::error::{Error, Result};

/// Position of one timestamp in the daily and weekly cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CalendarIndex {
    pub slot: usize,
    /// 0 = Monday.
    pub dow: usize,
}

/// `T × N` readings, time-major. Missing readings are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSeries {
    n_nodes: usize,
    t_steps: usize,
    steps_per_day: usize,
    first_dow: usize,
    first_slot: usize,
    values: Vec<f32>,
    missing: Vec<bool>,
}

impl TrafficSeries {
    pub fn new(n_nodes: usize, steps_per_day: usize, first_dow: usize, first_slot: usize, values: Vec<f32>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::Dimension("series needs at least one node".into()));
        }
        if !values.len().is_multiple_of(n_nodes) {
            return Err(Error::Dimension(format!("{} values do not fill rows of {n_nodes} nodes", values.len())));
        }
        if steps_per_day == 0 || first_slot >= steps_per_day || first_dow >= DAYS_PER_WEEK {
            return Err(Error::Format(format!(
                "bad calendar metadata: t_d={steps_per_day} first_dow={first_dow} first_slot={first_slot}"
            )));
        }
        let missing = values.iter().map(|v| v.is_nan()).collect();
        Ok(Self {
            n_nodes,
            t_steps: values.len() / n_nodes,
            steps_per_day,
            first_dow,
            first_slot,
            values,
            missing,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    pub fn steps_per_day(&self) -> usize {
        self.steps_per_day
    }

    pub fn first_dow(&self) -> usize {
        self.first_dow
    }

    pub fn first_slot(&self) -> usize {
        self.first_slot
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.n_nodes..(t + 1) * self.n_nodes]
    }

    pub fn get(&self, t: usize, node: usize) -> f32 {
        self.values[t * self.n_nodes + node]
    }

    /// Calendar of step `t`; negative steps extend the calendar backward.
    pub fn calendar_at(&self, t: isize) -> CalendarIndex {
        let abs = self.first_slot as isize + t;
        let td = self.steps_per_day as isize;
        let day = abs.div_euclid(td);
        CalendarIndex {
            slot: abs.rem_euclid(td) as usize,
            dow: (self.first_dow as isize + day).rem_euclid(DAYS_PER_WEEK as isize) as usize,
        }
    }
}

/// Chronological split ratios such as `6:2:2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl SplitSpec {
    pub fn new(train: u32, val: u32, test: u32) -> Result<Self> {
        if train == 0 || train + val + test == 0 {
            return Err(Error::Config(format!("split {train}:{val}:{test} leaves no training data")));
        }
        Ok(Self { train, val, test })
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("split must look like 6:2:2, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let p: Vec<u32> = parts.iter().map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        Self::new(p[0], p[1], p[2])
    }
}

impl std::fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Validation and test sizes are floored; training takes the remainder.
pub fn split(t_steps: usize, spec: SplitSpec) -> Splits {
    let total = (spec.train + spec.val + spec.test) as usize;
    let val = t_steps * spec.val as usize / total;
    let test = t_steps * spec.test as usize / total;
    let train = t_steps - val - test;
    Splits {
        train: 0..train,
        val: train..train + val,
        test: train + val..t_steps,
    }
}

/// Global z-score fitted on non-missing entries of a range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std.is_finite() && std > 0.0 && mean.is_finite()) {
            return Err(Error::Normalization(format!("unusable statistics mean={mean} std={std}")));
        }
        Ok(Self { mean, std })
    }

    /// Population mean and standard deviation over `range`.
    pub fn fit(series: &TrafficSeries, range: Range<usize>) -> Result<Self> {
        let n = series.n_nodes();
        let vals = || series.values()[range.start * n..range.end * n].iter().filter(|v| !v.is_nan()).map(|&v| v as f64);
        let count = vals().count();
        if count == 0 {
            return Err(Error::Normalization(format!("no observed values in steps {range:?}")));
        }
        let mean = vals().sum::<f64>() / count as f64;
        let var = vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
        if var == 0.0 {
            return Err(Error::Normalization(format!("zero standard deviation (constant value {mean})")));
        }
        Self::new(mean, var.sqrt())
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One training unit.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Series step of the first input position.
    pub start: usize,
    /// `[T_h, N]`, normalized, missing as 0.
    pub input: Vec<f64>,
    /// `[T_p, N]`, original scale, missing as NaN.
    pub target: Vec<f64>,
    /// Steps `start − β .. start + T_h`.
    pub calendar: Vec<CalendarIndex>,
}

/// Lazily materialized sliding windows over one range.
#[derive(Debug, Clone)]
pub struct Windows<'a> {
    series: &'a TrafficSeries,
    norm: Normalizer,
    starts: Range<usize>,
    t_h: usize,
    t_p: usize,
    beta: usize,
}

pub fn windows<'a>(
    series: &'a TrafficSeries,
    range: Range<usize>,
    norm: Normalizer,
    t_h: usize,
    t_p: usize,
    beta: usize,
) -> Result<Windows<'a>> {
    if t_h == 0 || t_p == 0 {
        return Err(Error::Config(format!("t_h={t_h} and t_p={t_p} must be positive")));
    }
    if range.end > series.t_steps() || range.start > range.end {
        return Err(Error::Dimension(format!("range {range:?} outside {} steps", series.t_steps())));
    }
    let count = (range.end - range.start + 1).saturating_sub(t_h + t_p);
    Ok(Windows {
        series,
        norm,
        starts: range.start..range.start + count,
        t_h,
        t_p,
        beta,
    })
}

impl<'a> Windows<'a> {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn t_h(&self) -> usize {
        self.t_h
    }

    pub fn t_p(&self) -> usize {
        self.t_p
    }

    pub fn normalizer(&self) -> Normalizer {
        self.norm
    }

    pub fn series(&self) -> &'a TrafficSeries {
        self.series
    }

    pub fn get(&self, k: usize) -> WindowSample {
        assert!(k < self.len(), "window {k} of {}", self.len());
        let s = self.starts.start + k;
        let n = self.series.n_nodes();
        let vals = self.series.values();
        let input = vals[s * n..(s + self.t_h) * n]
            .iter()
            .map(|&v| if v.is_nan() { 0.0 } else { self.norm.apply(v as f64) })
            .collect();
        let target = vals[(s + self.t_h) * n..(s + self.t_h + self.t_p) * n].iter().map(|&v| v as f64).collect();
        let calendar = (0..self.beta + self.t_h)
            .map(|p| self.series.calendar_at(s as isize + p as isize - self.beta as isize))
            .collect();
        WindowSample {
            start: s,
            input,
            target,
            calendar,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowSample> + '_ {
        (0..self.len()).map(move |k| self.get(k))
    }
}
