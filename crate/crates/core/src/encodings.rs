//! Trainable coordinate and distance encodings.
//!
//! Five tables: node identity, time-of-day slot, day-of-week, hop distance
//! and temporal offset. A timestamp's absolute encoding is the sum of its
//! slot and weekday rows.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::CalendarIndex;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub const Z_SPATIAL: &str = "embed.spatial";
pub const Z_TIME_OF_DAY: &str = "embed.time_of_day";
pub const Z_DAY_OF_WEEK: &str = "embed.day_of_week";
pub const Z_SPATIAL_DIST: &str = "embed.spatial_distance";
pub const Z_TEMPORAL_DIST: &str = "embed.temporal_distance";

pub const DAYS_PER_WEEK: usize = 7;

/// Standard deviation of every encoding entry at initialization.
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingDims {
    pub n_nodes: usize,
    pub steps_per_day: usize,
    pub alpha: usize,
    pub beta: usize,
    pub d: usize,
}

impl EncodingDims {
    pub fn element_count(&self) -> usize {
        self.d * (self.n_nodes + self.steps_per_day + DAYS_PER_WEEK + self.alpha + 1 + self.beta + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables<T> {
    pub z_s: Tensor<T>,
    pub z_d: Tensor<T>,
    pub z_w: Tensor<T>,
    pub z_sd: Tensor<T>,
    pub z_td: Tensor<T>,
}

impl<T: Scalar> EmbeddingTables<T> {
    pub fn element_count(&self) -> usize {
        [&self.z_s, &self.z_d, &self.z_w, &self.z_sd, &self.z_td]
            .iter()
            .map(|t| t.numel())
            .sum()
    }

    /// `(registry name, table)` pairs in registration order.
    pub fn into_named(self) -> [(&'static str, Tensor<T>); 5] {
        [
            (Z_SPATIAL, self.z_s),
            (Z_TIME_OF_DAY, self.z_d),
            (Z_DAY_OF_WEEK, self.z_w),
            (Z_SPATIAL_DIST, self.z_sd),
            (Z_TEMPORAL_DIST, self.z_td),
        ]
    }
}

pub(crate) fn normal_tensor<T: Scalar, R: Rng + ?Sized>(dims: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = dims.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(dims.to_vec(), data).expect("length matches dims")
}

pub fn init_tables_with<T: Scalar, R: Rng + ?Sized>(dims: EncodingDims, rng: &mut R) -> Result<EmbeddingTables<T>> {
    if dims.n_nodes == 0 || dims.steps_per_day == 0 || dims.d == 0 {
        return Err(Error::Config(format!("encoding dims must be positive: {dims:?}")));
    }
    let d = dims.d;
    Ok(EmbeddingTables {
        z_s: normal_tensor(&[dims.n_nodes, d], INIT_STD, rng),
        z_d: normal_tensor(&[dims.steps_per_day, d], INIT_STD, rng),
        z_w: normal_tensor(&[DAYS_PER_WEEK, d], INIT_STD, rng),
        z_sd: normal_tensor(&[dims.alpha + 1, d], INIT_STD, rng),
        z_td: normal_tensor(&[dims.beta + 1, d], INIT_STD, rng),
    })
}

pub fn init_tables<T: Scalar>(dims: EncodingDims, seed: u64) -> Result<EmbeddingTables<T>> {
    init_tables_with(dims, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Absolute temporal encodings `z_d[slot] + z_w[dow]` for each calendar
/// entry, as `[len, d]`.
pub fn temporal_encodings<T: Scalar>(
    tape: &mut Tape<T>,
    z_d: Var,
    z_w: Var,
    calendar: &[CalendarIndex],
) -> Result<Var> {
    let slots = tape.dims(z_d)[0];
    for c in calendar {
        if c.slot >= slots || c.dow >= DAYS_PER_WEEK {
            return Err(Error::contract(
                "temporal_encoding",
                format!("calendar entry {c:?} outside {slots} slots × {DAYS_PER_WEEK} days"),
            ));
        }
    }
    let slot_idx = Arc::new(calendar.iter().map(|c| c.slot).collect::<Vec<_>>());
    let dow_idx = Arc::new(calendar.iter().map(|c| c.dow).collect::<Vec<_>>());
    let zd = tape.gather_rows(z_d, slot_idx)?;
    let zw = tape.gather_rows(z_w, dow_idx)?;
    tape.add(zd, zw)
}

/// Single-timestamp encoding as a `[d]` vector.
pub fn temporal_encoding<T: Scalar>(tape: &mut Tape<T>, z_d: Var, z_w: Var, at: CalendarIndex) -> Result<Var> {
    let rows = temporal_encodings(tape, z_d, z_w, &[at])?;
    let d = tape.dims(rows)[1];
    tape.reshape(rows, vec![d])
}
