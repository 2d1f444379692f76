//! Seeded stand-in for loop-detector flow data.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::TrafficSeries;
use crate::error::{Error, Result};
use crate::graph::RoadGraph;

pub const SYNTH_STEPS_PER_DAY: usize = 288;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub days: usize,
    pub seed: u64,
    /// Noise standard deviation as a fraction of each node's amplitude.
    pub noise: f64,
    pub steps_per_day: usize,
}

impl SynthConfig {
    pub fn new(days: usize, seed: u64) -> Self {
        Self {
            days,
            seed,
            noise: 0.05,
            steps_per_day: SYNTH_STEPS_PER_DAY,
        }
    }
}

/// Daily plus half-daily sinusoids per node, one diffusion step over the
/// graph (`0.7 · own + 0.3 · neighbour mean`) and Gaussian noise.
pub fn generate_synthetic(graph: &RoadGraph, cfg: SynthConfig) -> Result<TrafficSeries> {
    let n = graph.n_nodes();
    let td = cfg.steps_per_day;
    if cfg.days == 0 || td == 0 {
        return Err(Error::Config(format!("synthetic series needs days and t_d positive, got {} and {td}", cfg.days)));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Config(format!("noise fraction {} must be non-negative", cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params: Vec<[f64; 4]> = (0..n)
        .map(|_| {
            [
                rng.random_range(100.0..500.0),
                rng.random_range(40.0..80.0),
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
            ]
        })
        .collect();
    let neighbors = graph.neighbors();
    let day: Vec<Vec<f64>> = (0..td)
        .map(|s| {
            let phase = TAU * s as f64 / td as f64;
            let raw: Vec<f64> = params
                .iter()
                .map(|&[base, amp, phi, psi]| base + amp * ((phase + phi).sin() + 0.5 * (2.0 * phase + psi).sin()))
                .collect();
            (0..n)
                .map(|i| {
                    let nb = &neighbors[i];
                    if nb.is_empty() {
                        raw[i]
                    } else {
                        let mean = nb.iter().map(|&j| raw[j]).sum::<f64>() / nb.len() as f64;
                        0.7 * raw[i] + 0.3 * mean
                    }
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = Vec::with_capacity(cfg.days * td * n);
    for _ in 0..cfg.days {
        for row in &day {
            for (i, &v) in row.iter().enumerate() {
                let eps = if cfg.noise > 0.0 { cfg.noise * params[i][1] * noise.sample(&mut rng) } else { 0.0 };
                values.push((v + eps) as f32);
            }
        }
    }
    TrafficSeries::new(n, td, 0, 0, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_periodic() {
        let g = RoadGraph::path(4);
        let a = generate_synthetic(&g, SynthConfig::new(2, 7)).unwrap();
        let b = generate_synthetic(&g, SynthConfig::new(2, 7)).unwrap();
        assert_eq!(a, b);
        let clean = generate_synthetic(&g, SynthConfig { noise: 0.0, ..SynthConfig::new(3, 7) }).unwrap();
        let n = 4;
        let v = clean.values();
        assert!((0..2 * 288 * n).all(|k| v[k].to_bits() == v[k + 288 * n].to_bits()));
        assert!(v.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn lag_day_autocorrelation_high() {
        let g = RoadGraph::path(8);
        let s = generate_synthetic(&g, SynthConfig::new(7, 11)).unwrap();
        let n = s.n_nodes();
        let v: Vec<f64> = s.values().iter().map(|&x| x as f64).collect();
        for node in 0..n {
            let x: Vec<f64> = (0..s.t_steps()).map(|t| v[t * n + node]).collect();
            let (a, b) = (&x[..x.len() - 288], &x[288..]);
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let cov: f64 = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum();
            let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
            let r = cov / (va * vb).sqrt();
            assert!(r > 0.9, "node {node}: r={r}");
        }
    }
}
