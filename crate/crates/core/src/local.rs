//! Single-layer joint spatial-temporal graph convolution.
//!
//! Channel chain: raw `1 → C` (input encoding), sparse weighted aggregation
//! over the joint graph at `C`, affine update `C → 2C`, then the
//! position-guided gate `2C → C`.

use std::sync::Arc;

use crate::error::Result;
use crate::graph::StEdgeSet;
use crate::scalar::Scalar;
use crate::stei::{StWeights, WeightLayout};
use crate::tensor::{ScatterPlan, Tape, Var};

pub const W0: &str = "local.w0";
pub const B0: &str = "local.b0";
pub const W1: &str = "local.w1";
pub const B1: &str = "local.b1";
pub const W2: &str = "local.w2";
pub const B2: &str = "local.b2";
pub const W3: &str = "local.w3";
pub const B3: &str = "local.b3";
pub const W4: &str = "local.w4";
pub const B4: &str = "local.b4";
pub const W5: &str = "local.w5";
pub const B5: &str = "local.b5";

/// Affine `(weight, bias)` pair bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub w: Var,
    pub b: Var,
}

impl Affine {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }
}

/// `x[T_h, N, 1] → [T_h, N, C]`.
pub fn input_encode<T: Scalar>(tape: &mut Tape<T>, x_raw: Var, enc: Affine) -> Result<Var> {
    enc.apply(tape, x_raw)
}

/// Routing of every in-window weight instance for one window length.
/// Instances whose source time precedes the window read zero features and
/// are omitted.
#[derive(Debug, Clone)]
pub struct AggregationPlan {
    pub t_h: usize,
    pub n_nodes: usize,
    pub(crate) plan: Arc<ScatterPlan>,
}

impl AggregationPlan {
    /// Plan for per-window weights shaped like `layout`.
    pub fn dynamic(edges: &StEdgeSet, layout: &WeightLayout) -> Result<Self> {
        Self::build(edges, layout.t_h, |t, e, b| layout.index(t, e, b), layout.len())
    }

    /// Plan for one weight per `(pair, offset)` shared across window positions.
    pub fn shared(edges: &StEdgeSet, t_h: usize) -> Result<Self> {
        let bp = edges.beta() + 1;
        Self::build(edges, t_h, |_, e, b| e * bp + b, edges.m_spatial() * bp)
    }

    fn build(edges: &StEdgeSet, t_h: usize, weight: impl Fn(usize, usize, usize) -> usize, n_weights: usize) -> Result<Self> {
        let n = edges.n_nodes();
        let mut entries = Vec::new();
        for t in 0..t_h {
            for (e, p) in edges.pairs().iter().enumerate() {
                for b in 0..=edges.beta().min(t) {
                    entries.push(((t - b) * n + p.source, t * n + p.target, weight(t, e, b)));
                }
            }
        }
        Ok(Self {
            t_h,
            n_nodes: n,
            plan: Arc::new(ScatterPlan::new(entries, t_h * n, t_h * n, n_weights)?),
        })
    }

    pub fn instances(&self) -> usize {
        self.plan.len()
    }
}

/// `x̃[t, i] = Σ_{(i, j)} Σ_b s[t, (i, j), b] · x[t − b, j]`.
pub fn aggregate<T: Scalar>(tape: &mut Tape<T>, x_enc: Var, weights: &StWeights, plan: &AggregationPlan) -> Result<Var> {
    aggregate_with(tape, x_enc, weights.values, plan)
}

/// Aggregation with a raw weight node (dynamic or shared layout, matching `plan`).
pub fn aggregate_with<T: Scalar>(tape: &mut Tape<T>, x_enc: Var, weights: Var, plan: &AggregationPlan) -> Result<Var> {
    let dims = tape.dims(x_enc).to_vec();
    tape.scatter_add_weighted(x_enc, weights, plan.plan.clone(), dims)
}

/// `C → 2C`.
pub fn update<T: Scalar>(tape: &mut Tape<T>, x_agg: Var, upd: Affine) -> Result<Var> {
    upd.apply(tape, x_agg)
}

/// Broadcast index lists mapping flat `(t, i)` rows to node and time.
#[derive(Debug, Clone)]
pub struct PositionIndex {
    pub(crate) node: Arc<Vec<usize>>,
    pub(crate) time: Arc<Vec<usize>>,
}

impl PositionIndex {
    pub fn new(t_h: usize, n: usize) -> Self {
        Self {
            node: Arc::new((0..t_h * n).map(|r| r % n).collect()),
            time: Arc::new((0..t_h * n).map(|r| r / n).collect()),
        }
    }
}

/// Guidance branches of the gate. Either may be absent under ablation.
#[derive(Debug, Clone, Copy)]
pub struct Guidance {
    /// `(z^S [N, d], projection)`.
    pub spatial: Option<(Var, Affine)>,
    /// `(window temporal encodings [T_h, d], projection)`.
    pub temporal: Option<(Var, Affine)>,
}

/// Adds projected coordinate encodings to `x[T_h, N, W]` per node and time.
pub fn add_guidance<T: Scalar>(tape: &mut Tape<T>, x: Var, guide: Guidance, pos: &PositionIndex) -> Result<Var> {
    let dims = tape.dims(x).to_vec();
    let width = *dims.last().unwrap();
    let rows = dims.iter().product::<usize>() / width.max(1);
    let mut h = tape.reshape(x, vec![rows, width])?;
    if let Some((z, proj)) = guide.spatial {
        let p = proj.apply(tape, z)?;
        let g = tape.gather_rows(p, pos.node.clone())?;
        h = tape.add(h, g)?;
    }
    if let Some((z, proj)) = guide.temporal {
        let p = proj.apply(tape, z)?;
        let g = tape.gather_rows(p, pos.time.clone())?;
        h = tape.add(h, g)?;
    }
    tape.reshape(h, dims)
}

/// `(a · x + b) ⊗ σ(c · x + d)`; used by every gated unit in the model.
pub fn glu<T: Scalar>(tape: &mut Tape<T>, x: Var, lin: Affine, gate: Affine) -> Result<Var> {
    let l = lin.apply(tape, x)?;
    let g = gate.apply(tape, x)?;
    let s = tape.sigmoid(g);
    tape.elementwise_mul(l, s)
}

/// Position-guided gated activation: `[T_h, N, 2C] → [T_h, N, C]`.
pub fn stpgau<T: Scalar>(
    tape: &mut Tape<T>,
    x_upd: Var,
    guide: Guidance,
    pos: &PositionIndex,
    lin: Affine,
    gate: Affine,
) -> Result<Var> {
    let h = add_guidance(tape, x_upd, guide, pos)?;
    glu(tape, h, lin, gate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{st_edges_for, RoadGraph};
    use crate::tensor::Tensor;

    fn affine(tape: &mut Tape<f64>, cout: usize, cin: usize, w: &[f64], b: &[f64]) -> Affine {
        Affine {
            w: tape.constant(Tensor::from_f64([cout, cin], w).unwrap()),
            b: tape.constant(Tensor::from_f64([cout], b).unwrap()),
        }
    }

    #[test]
    fn input_encoding_broadcasts_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2, 2, 1], &[0.3, -1.0, 2.0, 5.0]).unwrap());
        let enc = affine(&mut tape, 2, 1, &[0.0, 0.0], &[1.5, -2.0]);
        let y = input_encode(&mut tape, x, enc).unwrap();
        assert_eq!(tape.dims(y), &[2, 2, 2]);
        assert!(tape.value(y).chunks(2).all(|c| c == [1.5, -2.0]));
    }

    #[test]
    fn single_node_sum() {
        let edges = st_edges_for(&RoadGraph::new(1, [], false).unwrap(), 0, 0).unwrap();
        let plan = AggregationPlan::shared(&edges, 1).unwrap();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 1, 1], &[3.0]).unwrap());
        let w = tape.constant(Tensor::from_f64([1, 1], &[2.0]).unwrap());
        let y = aggregate_with(&mut tape, x, w, &plan).unwrap();
        assert_eq!(tape.value(y), &[6.0]);
    }

    #[test]
    fn disconnected_nodes_stay_separate() {
        let edges = st_edges_for(&RoadGraph::new(2, [], false).unwrap(), 2, 1).unwrap();
        let plan = AggregationPlan::shared(&edges, 3).unwrap();
        let mut tape = Tape::<f64>::new();
        // node 0 carries 1s, node 1 carries 100s
        let x = tape.constant(Tensor::from_f64([3, 2, 1], &[1.0, 100.0, 1.0, 100.0, 1.0, 100.0]).unwrap());
        let w = tape.constant(Tensor::full([2, 2], 1.0));
        let y = aggregate_with(&mut tape, x, w, &plan).unwrap();
        // t=0 only b=0; later positions b in {0, 1}
        assert_eq!(tape.value(y), &[1.0, 100.0, 2.0, 200.0, 2.0, 200.0]);
    }

    #[test]
    fn update_identity_block() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 1, 2], &[4.0, -3.0]).unwrap());
        let upd = affine(&mut tape, 4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 4]);
        let y = update(&mut tape, x, upd).unwrap();
        assert_eq!(tape.value(y), &[4.0, -3.0, 0.0, 0.0]);
        let zero = affine(&mut tape, 4, 2, &[0.0; 8], &[1.0, 2.0, 3.0, 4.0]);
        let y = update(&mut tape, x, zero).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn gate_halves_when_sigmoid_open_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 2, 2], &[1.0, 2.0, -1.0, 0.5]).unwrap());
        let lin = affine(&mut tape, 1, 2, &[1.0, 1.0], &[0.5]);
        let gate = affine(&mut tape, 1, 2, &[0.0, 0.0], &[0.0]);
        let pos = PositionIndex::new(1, 2);
        let none = Guidance { spatial: None, temporal: None };
        let y = stpgau(&mut tape, x, none, &pos, lin, gate).unwrap();
        assert_eq!(tape.value(y), &[0.5 * 3.5, 0.5 * 0.0]);
        let zl = affine(&mut tape, 1, 2, &[0.0, 0.0], &[0.0]);
        let y = stpgau(&mut tape, x, none, &pos, zl, gate).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0]);
    }

    #[test]
    fn guidance_adds_per_node_and_time() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([2, 2, 1]));
        let zs = tape.constant(Tensor::from_f64([2, 1], &[1.0, 2.0]).unwrap());
        let zt = tape.constant(Tensor::from_f64([2, 1], &[10.0, 20.0]).unwrap());
        let ps = affine(&mut tape, 1, 1, &[1.0], &[0.0]);
        let pt = affine(&mut tape, 1, 1, &[1.0], &[0.0]);
        let guide = Guidance {
            spatial: Some((zs, ps)),
            temporal: Some((zt, pt)),
        };
        let h = add_guidance(&mut tape, x, guide, &PositionIndex::new(2, 2)).unwrap();
        assert_eq!(tape.value(h), &[11.0, 12.0, 21.0, 22.0]);
    }
}
