//! Dynamic edge-weight inference from encodings.
//!
//! The weight of the edge from source `j` at time `tau` into target `i` at
//! time `t` is
//!
//! ```text
//! s = Σ_k exp(-‖z_k − μ_k‖)
//! ```
//!
//! over the six encodings `(z_i^S, z_j^S, z_t^T, z_tau^T, z_hop^SD, z_offset^TD)`,
//! each with its own learned center `μ_k`. Every term lies in `(0, 1]`, so a
//! weight with all six terms lies in `(0, 6]`. Weights are not normalized.
//!
//! Each term depends on a single index, so [`factored_aggregate_terms`]
//! evaluates it once per distinct index and [`assemble_weights`] sums cached
//! values per edge. [`infer_weights`] is the per-edge reference path; both
//! produce bitwise-identical weights.

use std::sync::Arc;

use rand::Rng;

use crate::encodings::{normal_tensor, INIT_STD};
use crate::error::{Error, Result};
use crate::graph::StEdgeSet;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub const CENTER_NAMES: [&str; 6] = ["stei.mu1", "stei.mu2", "stei.mu3", "stei.mu4", "stei.mu5", "stei.mu6"];

/// Free per-edge weights used when inference is ablated.
pub const ADAPTIVE_WEIGHTS: &str = "stei.adaptive";

pub fn init_centers<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> [Tensor<T>; 6] {
    std::array::from_fn(|_| normal_tensor(&[d], INIT_STD, rng))
}

/// `-‖z − μ‖₂`.
pub fn poly<T: Scalar>(tape: &mut Tape<T>, z: Var, mu: Var) -> Result<Var> {
    let d = tape.euclid_dist(z, mu)?;
    Ok(tape.neg(d))
}

/// Which of the six terms participate. Terms come in the pairs
/// (1,2) spatial coordinate, (3,4) temporal coordinate, 5 hop, 6 offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermMask {
    pub spatial: bool,
    pub temporal: bool,
    pub hop: bool,
    pub offset: bool,
}

impl Default for TermMask {
    fn default() -> Self {
        Self {
            spatial: true,
            temporal: true,
            hop: true,
            offset: true,
        }
    }
}

impl TermMask {
    pub fn enabled(&self) -> [bool; 6] {
        [self.spatial, self.spatial, self.temporal, self.temporal, self.hop, self.offset]
    }

    pub fn any(&self) -> bool {
        self.enabled().iter().any(|&b| b)
    }
}

/// Enumeration of weight instances `(t, e, b)` for a window of length
/// `t_h`: target time `t`, spatial pair `e`, offset `b` (source time
/// `t - b`). Flat index `(t * m + e) * (beta + 1) + b`.
#[derive(Debug, Clone)]
pub struct WeightLayout {
    pub t_h: usize,
    pub m_spatial: usize,
    pub beta: usize,
    pub n_nodes: usize,
    pub alpha: usize,
    pub(crate) target: Arc<Vec<usize>>,
    pub(crate) source: Arc<Vec<usize>>,
    /// Window position of the target time.
    pub(crate) time: Arc<Vec<usize>>,
    /// Calendar position of the target time (`t + beta`).
    pub(crate) cal_target: Arc<Vec<usize>>,
    /// Calendar position of the source time (`t + beta - b`).
    pub(crate) cal_source: Arc<Vec<usize>>,
    pub(crate) hop: Arc<Vec<usize>>,
    pub(crate) offset: Arc<Vec<usize>>,
}

impl WeightLayout {
    pub fn new(edges: &StEdgeSet, t_h: usize) -> Self {
        let (m, beta) = (edges.m_spatial(), edges.beta());
        let k = t_h * m * (beta + 1);
        let mut v: [Vec<usize>; 7] = std::array::from_fn(|_| Vec::with_capacity(k));
        for t in 0..t_h {
            for p in edges.pairs() {
                for b in 0..=beta {
                    v[0].push(p.target);
                    v[1].push(p.source);
                    v[2].push(t);
                    v[3].push(t + beta);
                    v[4].push(t + beta - b);
                    v[5].push(p.hop);
                    v[6].push(b);
                }
            }
        }
        let [target, source, time, cal_target, cal_source, hop, offset] = v.map(Arc::new);
        Self {
            t_h,
            m_spatial: m,
            beta,
            n_nodes: edges.n_nodes(),
            alpha: edges.alpha(),
            target,
            source,
            time,
            cal_target,
            cal_source,
            hop,
            offset,
        }
    }

    pub fn len(&self) -> usize {
        self.t_h * self.m_spatial * (self.beta + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, t: usize, e: usize, b: usize) -> usize {
        (t * self.m_spatial + e) * (self.beta + 1) + b
    }

    /// Calendar entries needed: the window plus `beta` steps of reach-back.
    pub fn calendar_len(&self) -> usize {
        self.t_h + self.beta
    }

    /// Distance evaluations of the factored path for this layout.
    pub fn factored_eval_count(&self, mask: TermMask) -> usize {
        let sizes = [
            self.n_nodes,
            self.n_nodes,
            self.t_h,
            self.t_h + self.beta,
            self.alpha + 1,
            self.beta + 1,
        ];
        sizes.iter().zip(mask.enabled()).filter(|(_, on)| *on).map(|(s, _)| s).sum()
    }
}

/// Bound encodings and centers for one window.
#[derive(Debug, Clone, Copy)]
pub struct SteiInputs {
    pub z_s: Option<Var>,
    /// Temporal encodings for the calendar, `[t_h + beta, d]`.
    pub z_t: Option<Var>,
    pub z_sd: Option<Var>,
    pub z_td: Option<Var>,
    pub centers: [Option<Var>; 6],
    pub mask: TermMask,
}

impl SteiInputs {
    fn term(&self, k: usize) -> Result<Option<(Var, Var)>> {
        if !self.mask.enabled()[k] {
            return Ok(None);
        }
        let table = match k {
            0 | 1 => self.z_s,
            2 | 3 => self.z_t,
            4 => self.z_sd,
            _ => self.z_td,
        };
        match (table, self.centers[k]) {
            (Some(z), Some(mu)) => Ok(Some((z, mu))),
            _ => Err(Error::contract("stei", format!("term {} enabled without its encoding or center", k + 1))),
        }
    }
}

/// Inferred weights laid out as `[t_h, m_spatial, beta + 1]`.
#[derive(Debug, Clone)]
pub struct StWeights {
    pub values: Var,
    pub layout: Arc<WeightLayout>,
}

fn check_calendar<T: Scalar>(tape: &Tape<T>, inputs: &SteiInputs, layout: &WeightLayout) -> Result<()> {
    if let Some(z_t) = inputs.z_t {
        let have = tape.dims(z_t)[0];
        if have < layout.calendar_len() {
            return Err(Error::contract(
                "infer_weights",
                format!("calendar covers {have} steps, window needs {}", layout.calendar_len()),
            ));
        }
    }
    Ok(())
}

fn exp_neg_dist<T: Scalar>(tape: &mut Tape<T>, rows: Var, mu: Var) -> Result<Var> {
    let d = tape.row_dist(rows, mu)?;
    let n = tape.neg(d);
    Ok(tape.exp(n))
}

fn sum_terms<T: Scalar>(tape: &mut Tape<T>, terms: Vec<Var>, layout: &Arc<WeightLayout>) -> Result<StWeights> {
    let mut iter = terms.into_iter();
    let mut acc = iter.next().ok_or_else(|| Error::contract("stei", "every term is masked"))?;
    for t in iter {
        acc = tape.add(acc, t)?;
    }
    let values = tape.reshape(acc, vec![layout.t_h, layout.m_spatial, layout.beta + 1])?;
    Ok(StWeights {
        values,
        layout: layout.clone(),
    })
}

/// Reference path: six distance evaluations for every weight instance.
pub fn infer_weights<T: Scalar>(tape: &mut Tape<T>, inputs: &SteiInputs, layout: &Arc<WeightLayout>) -> Result<StWeights> {
    check_calendar(tape, inputs, layout)?;
    let idx = [
        &layout.target,
        &layout.source,
        &layout.cal_target,
        &layout.cal_source,
        &layout.hop,
        &layout.offset,
    ];
    let mut terms = Vec::new();
    for (k, rows) in idx.into_iter().enumerate() {
        if let Some((table, mu)) = inputs.term(k)? {
            let z = tape.gather_rows(table, rows.clone())?;
            terms.push(exp_neg_dist(tape, z, mu)?);
        }
    }
    sum_terms(tape, terms, layout)
}

/// Per-index term caches: `e[k][index] = exp(-‖z − μ_k‖)`.
#[derive(Debug, Clone, Copy)]
pub struct TermCache {
    pub terms: [Option<Var>; 6],
}

pub fn factored_aggregate_terms<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: &SteiInputs,
    layout: &WeightLayout,
) -> Result<TermCache> {
    check_calendar(tape, inputs, layout)?;
    let mut terms = [None; 6];
    for (k, slot) in terms.iter_mut().enumerate() {
        let Some((table, mu)) = inputs.term(k)? else { continue };
        let rows = if k == 2 {
            // Target times are the window positions only.
            let window: Vec<usize> = (layout.beta..layout.beta + layout.t_h).collect();
            tape.gather_rows(table, Arc::new(window))?
        } else {
            table
        };
        *slot = Some(exp_neg_dist(tape, rows, mu)?);
    }
    Ok(TermCache { terms })
}

pub fn assemble_weights<T: Scalar>(tape: &mut Tape<T>, cache: &TermCache, layout: &Arc<WeightLayout>) -> Result<StWeights> {
    let idx = [
        &layout.target,
        &layout.source,
        &layout.time,
        &layout.cal_source,
        &layout.hop,
        &layout.offset,
    ];
    let mut terms = Vec::new();
    for (k, rows) in idx.into_iter().enumerate() {
        if let Some(e) = cache.terms[k] {
            terms.push(tape.gather_rows(e, rows.clone())?);
        }
    }
    sum_terms(tape, terms, layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{st_edges_for, RoadGraph};
    use crate::tensor::ParamRegistry;

    #[test]
    fn poly_values() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::from_f64([3], &[0.3, -1.2, 2.0]).unwrap());
        let p = poly(&mut tape, z, z).unwrap();
        assert_eq!(tape.value(p), &[0.0]);

        let z = tape.constant(Tensor::from_f64([1], &[0.5]).unwrap());
        let mu = tape.constant(Tensor::from_f64([1], &[0.0]).unwrap());
        let p = poly(&mut tape, z, mu).unwrap();
        assert_eq!(tape.value(p), &[-0.5]);
    }

    #[test]
    fn poly_matches_direct_formula() {
        let zs = [0.7, -0.25, 1.9];
        let ms = [-0.4, 0.35, 0.8];
        let expected = -zs.iter().zip(&ms).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::from_f64([3], &zs).unwrap());
        let mu = tape.constant(Tensor::from_f64([3], &ms).unwrap());
        let p = poly(&mut tape, z, mu).unwrap();
        assert!((tape.value(p)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn poly_subgradient_at_center_is_zero() {
        let mut reg = ParamRegistry::<f64>::new();
        reg.insert("z", Tensor::from_f64([2], &[1.0, 2.0]).unwrap()).unwrap();
        reg.insert("mu", Tensor::from_f64([2], &[1.0, 2.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let z = tape.param(&reg, "z").unwrap();
        let mu = tape.param(&reg, "mu").unwrap();
        let p = poly(&mut tape, z, mu).unwrap();
        tape.backward_into(p, &mut reg).unwrap();
        assert_eq!(reg.get("z").unwrap().grad().unwrap(), &[0.0, 0.0]);
        assert_eq!(reg.get("mu").unwrap().grad().unwrap(), &[0.0, 0.0]);
    }

    struct Fixture {
        tape: Tape<f64>,
        inputs: SteiInputs,
        layout: Arc<WeightLayout>,
    }

    fn fixture(g: &RoadGraph, alpha: usize, beta: usize, t_h: usize, d: usize, fill: impl Fn(usize) -> f64) -> Fixture {
        let edges = st_edges_for(g, alpha, beta).unwrap();
        let layout = Arc::new(WeightLayout::new(&edges, t_h));
        let mut tape = Tape::new();
        let mut k = 0;
        let mut table = |tape: &mut Tape<f64>, rows: usize| {
            let data: Vec<f64> = (0..rows * d).map(|_| {
                k += 1;
                fill(k)
            }).collect();
            tape.constant(Tensor::new([rows, d], data).unwrap())
        };
        let z_s = table(&mut tape, g.n_nodes());
        let z_t = table(&mut tape, t_h + beta);
        let z_sd = table(&mut tape, alpha + 1);
        let z_td = table(&mut tape, beta + 1);
        let centers = std::array::from_fn(|_| None);
        let mut inputs = SteiInputs {
            z_s: Some(z_s),
            z_t: Some(z_t),
            z_sd: Some(z_sd),
            z_td: Some(z_td),
            centers,
            mask: TermMask::default(),
        };
        for c in inputs.centers.iter_mut() {
            let data: Vec<f64> = (0..d).map(|_| {
                k += 1;
                fill(k)
            }).collect();
            *c = Some(tape.constant(Tensor::new([d], data).unwrap()));
        }
        Fixture { tape, inputs, layout }
    }

    #[test]
    fn all_zero_gives_six() {
        let mut f = fixture(&RoadGraph::path(3), 1, 1, 4, 2, |_| 0.0);
        let w = infer_weights(&mut f.tape, &f.inputs, &f.layout).unwrap();
        assert!(f.tape.value(w.values).iter().all(|&v| v == 6.0));
        assert_eq!(f.tape.dims(w.values), &[4, 7, 2]);
    }

    #[test]
    fn single_offset_term() {
        // d = 1, z_i^S = 1 with mu_1 = 0, everything else coincident.
        let mut f = fixture(&RoadGraph::new(1, [], false).unwrap(), 0, 0, 1, 1, |_| 0.0);
        let z_s = f.tape.constant(Tensor::from_f64([1, 1], &[1.0]).unwrap());
        let mu2 = f.tape.constant(Tensor::from_f64([1], &[1.0]).unwrap());
        f.inputs.z_s = Some(z_s);
        f.inputs.centers[1] = Some(mu2);
        let w = infer_weights(&mut f.tape, &f.inputs, &f.layout).unwrap();
        let expected = (-1.0f64).exp() + 5.0;
        assert!((f.tape.value(w.values)[0] - expected).abs() < 1e-15);
        assert!((expected - 5.3679).abs() < 1e-4);
    }

    #[test]
    fn hop_distance_monotone() {
        let mut prev = f64::INFINITY;
        for shift in [0.0, 0.5, 1.0, 2.0] {
            let mut f = fixture(&RoadGraph::new(1, [], false).unwrap(), 0, 0, 1, 2, |_| 0.0);
            let z_sd = f.tape.constant(Tensor::from_f64([1, 2], &[shift, 0.0]).unwrap());
            f.inputs.z_sd = Some(z_sd);
            let w = infer_weights(&mut f.tape, &f.inputs, &f.layout).unwrap();
            let v = f.tape.value(w.values)[0];
            assert!(v < prev);
            prev = v;
        }
    }

    fn pseudo(k: usize) -> f64 {
        ((k as f64 * 0.618_033_988_7).fract() - 0.5) * 0.6
    }

    #[test]
    fn factored_matches_direct_bitwise() {
        let g = RoadGraph::new(5, [(0, 1), (1, 2), (2, 3), (1, 4)], false).unwrap();
        for mask in [
            TermMask::default(),
            TermMask { spatial: false, ..Default::default() },
            TermMask { temporal: false, hop: false, ..Default::default() },
        ] {
            let mut f = fixture(&g, 2, 2, 6, 3, pseudo);
            f.inputs.mask = mask;
            let direct = infer_weights(&mut f.tape, &f.inputs, &f.layout).unwrap();
            let cache = factored_aggregate_terms(&mut f.tape, &f.inputs, &f.layout).unwrap();
            let fact = assemble_weights(&mut f.tape, &cache, &f.layout).unwrap();
            let (a, b) = (f.tape.value(direct.values), f.tape.value(fact.values));
            assert_eq!(a.len(), f.layout.len());
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(a.iter().all(|&v| v > 0.0 && v <= 6.0));
        }
    }

    #[test]
    fn evaluation_counts() {
        let g = RoadGraph::path(4);
        let mut f = fixture(&g, 1, 2, 5, 2, pseudo);
        let before = f.tape.counters().norm_evals;
        factored_aggregate_terms(&mut f.tape, &f.inputs, &f.layout).unwrap();
        let factored = f.tape.counters().norm_evals - before;
        assert_eq!(factored as usize, f.layout.factored_eval_count(TermMask::default()));
        assert_eq!(factored, (4 + 4 + 5 + 7 + 2 + 3) as u64);
        let before = f.tape.counters().norm_evals;
        infer_weights(&mut f.tape, &f.inputs, &f.layout).unwrap();
        let direct = f.tape.counters().norm_evals - before;
        assert_eq!(direct as usize, 6 * f.layout.len());
    }

    #[test]
    fn single_node_cache_sizes() {
        let mut f = fixture(&RoadGraph::new(1, [], false).unwrap(), 0, 0, 7, 2, pseudo);
        let cache = factored_aggregate_terms(&mut f.tape, &f.inputs, &f.layout).unwrap();
        let sizes: Vec<usize> = cache.terms.iter().map(|v| f.tape.value(v.unwrap()).len()).collect();
        assert_eq!(sizes, vec![1, 1, 7, 7, 1, 1]);
    }

    #[test]
    fn short_calendar_is_rejected() {
        let mut f = fixture(&RoadGraph::path(2), 1, 2, 4, 2, pseudo);
        let short = f.tape.constant(Tensor::zeros([5, 2]));
        f.inputs.z_t = Some(short);
        assert!(matches!(
            infer_weights(&mut f.tape, &f.inputs, &f.layout),
            Err(Error::Contract { .. })
        ));
    }

    #[test]
    fn no_weight_reaches_future() {
        let edges = st_edges_for(&RoadGraph::path(3), 1, 2).unwrap();
        let layout = WeightLayout::new(&edges, 5);
        for k in 0..layout.len() {
            assert!(layout.cal_source[k] <= layout.cal_target[k]);
            assert!(layout.cal_target[k] - layout.cal_source[k] <= 2);
        }
    }
}
