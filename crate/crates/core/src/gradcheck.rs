//! Central-difference verification of model gradients.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{CalendarIndex, Normalizer};
use crate::error::Result;
use crate::graph::RoadGraph;
use crate::model::{Ablation, Model, ModelConfig};
use crate::scalar::Precision;
use crate::tensor::{Tape, Tensor};

/// Initial step of the fourth-order central stencil.
pub const STEP: f64 = 1e-3;
/// Step reductions tried when the stencil straddles a ReLU kink.
pub const MAX_REFINEMENTS: usize = 4;
pub const THRESHOLD: f64 = 1e-4;
/// Lower bound on the relative-error denominator, so gradients that are
/// zero analytically and numerically compare as equal.
pub const DENOM_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(DENOM_FLOOR)
}

/// Worst agreement over one registered parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Elements left unchecked because every step straddled a kink.
    pub kinked: usize,
}

impl ParamCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(ParamCheck::passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    /// Per-group `(group, max_rel_err, parameters)` where the group is the
    /// name up to its first dot.
    pub fn groups(&self) -> Vec<(String, f64, usize)> {
        let mut out: Vec<(String, f64, usize)> = Vec::new();
        for p in &self.params {
            let g = p.name.split('.').next().unwrap_or(&p.name).to_string();
            match out.iter_mut().find(|(n, _, _)| *n == g) {
                Some(e) => {
                    e.1 = e.1.max(p.max_rel_err);
                    e.2 += 1;
                }
                None => out.push((g, p.max_rel_err, 1)),
            }
        }
        out
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            let verdict = if p.passed() { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "{verdict} {} max_rel_err={:.3e} elements={} kinked={}",
                p.name, p.max_rel_err, p.elements, p.kinked
            )?;
        }
        for (g, e, n) in self.groups() {
            let verdict = if e < THRESHOLD { "PASS" } else { "FAIL" };
            writeln!(f, "{verdict} group={g} max_rel_err={e:.3e} < {THRESHOLD:e} params={n}")?;
        }
        Ok(())
    }
}

/// Random input window, calendar and loss weights for a configuration.
#[derive(Debug, Clone)]
pub struct Probe {
    pub input: Tensor<f64>,
    pub calendar: Vec<CalendarIndex>,
    /// The checked loss is `Σ prediction ⊙ weights`.
    pub weights: Tensor<f64>,
}

impl Probe {
    pub fn random(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let input = Tensor::new([cfg.t_h, cfg.n_nodes, 1], uniform(cfg.t_h * cfg.n_nodes)).unwrap();
        let weights = Tensor::new([cfg.t_p, cfg.n_nodes, 1], uniform(cfg.t_p * cfg.n_nodes)).unwrap();
        let start = rng.random_range(0..cfg.steps_per_day * 7);
        let calendar = (0..cfg.t_h + cfg.beta)
            .map(|k| {
                let abs = start + k;
                CalendarIndex { slot: abs % cfg.steps_per_day, dow: (abs / cfg.steps_per_day) % 7 }
            })
            .collect();
        Self { input, calendar, weights }
    }
}

fn probe_loss(model: &Model<f64>, probe: &Probe, tape: &mut Tape<f64>) -> Result<crate::tensor::Var> {
    let x = tape.constant(probe.input.clone());
    let y = model.forward(tape, x, &probe.calendar)?.prediction;
    let w = tape.constant(probe.weights.clone());
    let prod = tape.elementwise_mul(y, w)?;
    Ok(tape.sum(prod))
}

fn eval(model: &Model<f64>, probe: &Probe) -> Result<(f64, Vec<bool>)> {
    let mut t = Tape::inference();
    let l = probe_loss(model, probe, &mut t)?;
    Ok((t.value(l)[0], t.relu_pattern()))
}

/// Fourth-order central difference `(8(f₊₁ − f₋₁) − (f₊₂ − f₋₂)) / 12h` that
/// shrinks `h` until no ReLU changes side inside the stencil. `None` when
/// every step tried still straddles a kink.
fn numeric_derivative(work: &mut Model<f64>, probe: &Probe, pi: usize, k: usize, base: &[bool]) -> Result<Option<f64>> {
    let orig = work.params().by_index(pi).unwrap().1.data()[k];
    let mut h = STEP;
    for _ in 0..=MAX_REFINEMENTS {
        let mut f = [0.0; 4];
        let mut smooth = true;
        for (slot, off) in f.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
            work.params_mut().by_index_mut(pi).unwrap().1.data_mut()[k] = orig + off * h;
            let (v, pattern) = eval(work, probe)?;
            *slot = v;
            smooth &= pattern == base;
        }
        work.params_mut().by_index_mut(pi).unwrap().1.data_mut()[k] = orig;
        if smooth {
            return Ok(Some((8.0 * (f[1] - f[2]) - (f[0] - f[3])) / (12.0 * h)));
        }
        h /= 10.0;
    }
    Ok(None)
}

/// Compares the tape gradient of every element of every parameter with a
/// finite-difference estimate.
pub fn gradcheck(model: &Model<f64>, probe: &Probe) -> Result<GradcheckReport> {
    let mut tape = Tape::new();
    let loss = probe_loss(model, probe, &mut tape)?;
    tape.backward(loss)?;
    let base = tape.relu_pattern();
    let mut analytic: Vec<Vec<f64>> = model.params().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
    for (i, g) in tape.param_grads() {
        for (a, &v) in analytic[i].iter_mut().zip(g) {
            *a += v;
        }
    }

    let mut work = model.clone();
    let names: Vec<String> = model.params().names().map(String::from).collect();
    let mut params = Vec::with_capacity(names.len());
    for (pi, name) in names.iter().enumerate() {
        let n = analytic[pi].len();
        let mut check = ParamCheck {
            name: name.clone(),
            elements: n,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: analytic[pi][0],
            numeric: f64::NAN,
            kinked: 0,
        };
        for (k, &a) in analytic[pi].iter().enumerate() {
            let Some(numeric) = numeric_derivative(&mut work, probe, pi, k, &base)? else {
                check.kinked += 1;
                continue;
            };
            let e = relative_error(a, numeric);
            if e >= check.max_rel_err {
                check.max_rel_err = e;
                check.worst_index = k;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradcheckReport { params })
}

/// Small high-precision configuration on a random connected graph of six nodes.
pub fn tiny_config(ablation: Ablation, seed: u64) -> (ModelConfig, RoadGraph) {
    let cfg = ModelConfig {
        n_nodes: 6,
        steps_per_day: 24,
        alpha: 2,
        beta: 2,
        d: 3,
        channels: 4,
        t_h: 12,
        t_p: 3,
        tdcn_layers: 3,
        precision: Precision::High,
        seed,
        ablation,
    };
    (cfg, RoadGraph::random_connected(6, 2, seed))
}

/// Builds the tiny model for `ablation` and checks it on a random probe.
pub fn tiny_gradcheck(ablation: Ablation, seed: u64) -> Result<GradcheckReport> {
    let (cfg, graph) = tiny_config(ablation, seed);
    let model = Model::<f64>::build(cfg, &graph, Normalizer::new(0.0, 1.0)?)?;
    gradcheck(&model, &Probe::random(&cfg, seed ^ 0x5eed))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0 + 1e-6) - 1e-6 / (2.0 + 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn full_model_passes() {
        let report = tiny_gradcheck(Ablation::default(), 1).unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.params.iter().any(|p| p.name == "stei.mu6"));
    }
}
