//! Reverse-mode gradient recording over a fixed op set.
//!
//! Every op appends one node holding its output value; `backward` walks the
//! nodes in reverse execution order and accumulates input gradients
//! additively. There is no broadcasting: each op states its exact shapes.

use std::sync::Arc;

use super::{ParamRegistry, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Instrumentation counted while ops execute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCounters {
    /// Multiply-adds spent in weighted scatter aggregation (forward only).
    pub scatter_macs: u64,
    /// Euclidean-distance evaluations, one per row of `row_dist`.
    pub norm_evals: u64,
}

/// Precomputed routing for [`Tape::scatter_add_weighted`]:
/// `out[dst[k]] += weights[weight[k]] * src[src[k]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScatterPlan {
    src: Vec<u32>,
    dst: Vec<u32>,
    weight: Vec<u32>,
    src_rows: usize,
    dst_rows: usize,
    n_weights: usize,
}

impl ScatterPlan {
    pub fn new(
        entries: impl IntoIterator<Item = (usize, usize, usize)>,
        src_rows: usize,
        dst_rows: usize,
        n_weights: usize,
    ) -> Result<Self> {
        let mut plan = Self {
            src: Vec::new(),
            dst: Vec::new(),
            weight: Vec::new(),
            src_rows,
            dst_rows,
            n_weights,
        };
        for (s, d, w) in entries {
            if s >= src_rows || d >= dst_rows || w >= n_weights {
                return Err(Error::contract(
                    "scatter_plan",
                    format!("entry (src {s}, dst {d}, weight {w}) out of range ({src_rows}, {dst_rows}, {n_weights})"),
                ));
            }
            plan.src.push(s as u32);
            plan.dst.push(d as u32);
            plan.weight.push(w as u32);
        }
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.src
            .iter()
            .zip(&self.dst)
            .zip(&self.weight)
            .map(|((&s, &d), &w)| (s as usize, d as usize, w as usize))
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<usize> },
    Linear { x: Var, w: Var, b: Var },
    CausalConv { x: Var, w: Var, b: Var, dilation: usize },
    TimeCollapse { x: Var, w: Var, b: Var },
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Scale(Var, f64),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    GatherRows { table: Var, idx: Arc<Vec<usize>> },
    Scatter { src: Var, weights: Var, plan: Arc<ScatterPlan> },
    RowDist { z: Var, mu: Var },
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    MeanAbsErr { pred: Var, target: Var },
}

#[derive(Debug, Clone)]
struct Node<T> {
    dims: Vec<usize>,
    value: Vec<T>,
    op: Op,
    requires_grad: bool,
}

/// Execution record for one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    record: bool,
    counters: WorkCounters,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(dims: &[usize]) -> usize {
    dims.iter().product()
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape that records gradients for parameters and variables.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            record: true,
            counters: WorkCounters::default(),
        }
    }

    /// A tape for pure evaluation: parameters enter as constants.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn counters(&self) -> WorkCounters {
        self.counters
    }

    /// Which side of the kink every recorded ReLU entry sits on.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu(_)))
            .flat_map(|n| n.value.iter().map(|&v| v > T::zero()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].dims
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.dims.clone(), n.value.clone()).expect("node value matches its dims")
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, dims: Vec<usize>, value: Vec<T>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&dims), value.len());
        self.nodes.push(Node {
            dims,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let dims = t.dims().to_vec();
        self.push(dims, t.into_data(), Op::Leaf { param: None }, false)
    }

    /// A leaf whose gradient is tracked without being a registered parameter.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let dims = t.dims().to_vec();
        let rg = self.record;
        self.push(dims, t.into_data(), Op::Leaf { param: None }, rg)
    }

    /// Binds a registry parameter as a leaf.
    pub fn param(&mut self, reg: &ParamRegistry<T>, name: &str) -> Result<Var> {
        let idx = reg
            .index_of(name)
            .ok_or_else(|| Error::contract("param", format!("unknown parameter {name:?}")))?;
        let (_, t) = reg.by_index(idx).expect("index from lookup");
        let rg = self.record;
        Ok(self.push(t.dims().to_vec(), t.data().to_vec(), Op::Leaf { param: Some(idx) }, rg))
    }

    /// Affine map along the last axis: `x[.., Cin] · Wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xd, wd, bd) = (self.dims(x), self.dims(w), self.dims(b));
        if wd.len() != 2 || xd.is_empty() || *xd.last().unwrap() != wd[1] || bd != [wd[0]] {
            return Err(Error::contract(
                "linear",
                format!("x {xd:?}, W {wd:?}, b {bd:?}"),
            ));
        }
        let (cout, cin) = (wd[0], wd[1]);
        let mut dims = xd.to_vec();
        *dims.last_mut().unwrap() = cout;
        let rows = numel(xd) / cin.max(1);
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut wt = vec![T::zero(); cin * cout];
        for o in 0..cout {
            for c in 0..cin {
                wt[c * cout + o] = wv[o * cin + c];
            }
        }
        let mut out = Vec::with_capacity(rows * cout);
        for r in 0..rows {
            out.extend_from_slice(bv);
            let row = &mut out[r * cout..];
            for c in 0..cin {
                axpy(row, xv[r * cin + c], &wt[c * cout..(c + 1) * cout]);
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(dims, out, Op::Linear { x, w, b }, rg))
    }

    /// Causal dilated convolution along axis 0 of `x[T, (B,) Cin]` with
    /// `W[Cout, Cin, k]`. Tap `r` reads `x[t - r * dilation]`; earlier
    /// positions read zero.
    pub fn causal_dilated_conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let (xd, wd, bd) = (self.dims(x).to_vec(), self.dims(w), self.dims(b));
        let ok = wd.len() == 3
            && (xd.len() == 2 || xd.len() == 3)
            && *xd.last().unwrap() == wd[1]
            && bd == [wd[0]]
            && wd[2] >= 1
            && dilation >= 1;
        if !ok {
            return Err(Error::contract(
                "causal_dilated_conv1d",
                format!("x {xd:?}, W {wd:?}, b {bd:?}, dilation {dilation}"),
            ));
        }
        let (cout, cin, k) = (wd[0], wd[1], wd[2]);
        let t_len = xd[0];
        let batch = if xd.len() == 3 { xd[1] } else { 1 };
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        // wt[r][c][o]
        let mut wt = vec![T::zero(); k * cin * cout];
        for o in 0..cout {
            for c in 0..cin {
                for r in 0..k {
                    wt[(r * cin + c) * cout + o] = wv[(o * cin + c) * k + r];
                }
            }
        }
        let mut out = vec![T::zero(); t_len * batch * cout];
        for t in 0..t_len {
            for bi in 0..batch {
                let row = &mut out[(t * batch + bi) * cout..(t * batch + bi + 1) * cout];
                row.copy_from_slice(bv);
                for r in 0..k {
                    let Some(s) = t.checked_sub(r * dilation) else { break };
                    let xrow = &xv[(s * batch + bi) * cin..(s * batch + bi + 1) * cin];
                    for (c, &xc) in xrow.iter().enumerate() {
                        axpy(row, xc, &wt[(r * cin + c) * cout..(r * cin + c + 1) * cout]);
                    }
                }
            }
        }
        let mut dims = xd;
        *dims.last_mut().unwrap() = cout;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(dims, out, Op::CausalConv { x, w, b, dilation }, rg))
    }

    /// Convolution whose kernel spans the whole time axis:
    /// `x[T, N, Cin]`, `W[Cout, Cin, T]` → `[N, Cout]`.
    pub fn time_collapse(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xd, wd, bd) = (self.dims(x), self.dims(w), self.dims(b));
        if xd.len() != 3 || wd.len() != 3 || wd[1] != xd[2] || wd[2] != xd[0] || bd != [wd[0]] {
            return Err(Error::contract("time_collapse", format!("x {xd:?}, W {wd:?}, b {bd:?}")));
        }
        let (t_len, n, cin, cout) = (xd[0], xd[1], xd[2], wd[0]);
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        // wt[tau][c][o]
        let mut wt = vec![T::zero(); t_len * cin * cout];
        for o in 0..cout {
            for c in 0..cin {
                for tau in 0..t_len {
                    wt[(tau * cin + c) * cout + o] = wv[(o * cin + c) * t_len + tau];
                }
            }
        }
        let mut out = Vec::with_capacity(n * cout);
        for _ in 0..n {
            out.extend_from_slice(bv);
        }
        for tau in 0..t_len {
            for ni in 0..n {
                let row = &mut out[ni * cout..(ni + 1) * cout];
                let xrow = &xv[(tau * n + ni) * cin..(tau * n + ni + 1) * cin];
                for (c, &xc) in xrow.iter().enumerate() {
                    axpy(row, xc, &wt[(tau * cin + c) * cout..(tau * cin + c + 1) * cout]);
                }
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(vec![n, cout], out, Op::TimeCollapse { x, w, b }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let dims = self.dims(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(dims, out, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, T::exp, Op::Exp(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::of(factor);
        self.unary(x, move |v| v * f, Op::Scale(x, factor))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::contract(name, format!("{:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.dims(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("elementwise_mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.dims(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    /// Concatenation along the last axis; leading dims must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::contract("concat", "no inputs"));
        };
        let lead = &self.dims(first)[..self.dims(first).len().saturating_sub(1)];
        if self.dims(first).is_empty() {
            return Err(Error::contract("concat", "scalar input"));
        }
        let lead = lead.to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let d = self.dims(p);
            if d.len() != lead.len() + 1 || d[..lead.len()] != lead[..] {
                return Err(Error::contract("concat", format!("{:?} vs leading {lead:?}", d)));
            }
            widths.push(*d.last().unwrap());
        }
        let rows = numel(&lead);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut dims = lead;
        dims.push(total);
        let rg = self.rg(parts);
        Ok(self.push(dims, out, Op::Concat(parts.to_vec()), rg))
    }

    /// Selects rows (first-axis slices) of `table` in `idx` order.
    pub fn gather_rows(&mut self, table: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let td = self.dims(table);
        if td.is_empty() {
            return Err(Error::contract("gather_rows", "scalar table"));
        }
        let rows = td[0];
        let width = numel(&td[1..]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::contract("gather_rows", format!("row {bad} out of range 0..{rows}")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx.iter() {
            out.extend_from_slice(&tv[i * width..(i + 1) * width]);
        }
        let mut dims = td.to_vec();
        dims[0] = idx.len();
        let rg = self.rg(&[table]);
        Ok(self.push(dims, out, Op::GatherRows { table, idx }, rg))
    }

    /// Sparse weighted aggregation `out[dst] += w * src[src]` over rows of
    /// width `C`. `src` is viewed as `[src_rows, C]`, weights as a flat
    /// vector; the result has `out_dims` whose leading product is `dst_rows`.
    pub fn scatter_add_weighted(
        &mut self,
        src: Var,
        weights: Var,
        plan: Arc<ScatterPlan>,
        out_dims: Vec<usize>,
    ) -> Result<Var> {
        let sd = self.dims(src);
        let width = sd.last().copied().unwrap_or(1);
        let shape_ok = numel(sd) == plan.src_rows * width
            && numel(self.dims(weights)) == plan.n_weights
            && numel(&out_dims) == plan.dst_rows * width
            && out_dims.last() == Some(&width);
        if !shape_ok {
            return Err(Error::contract(
                "scatter_add_weighted",
                format!(
                    "src {sd:?}, weights {:?}, out {out_dims:?} vs plan ({}, {}, {})",
                    self.dims(weights),
                    plan.src_rows,
                    plan.dst_rows,
                    plan.n_weights
                ),
            ));
        }
        let (sv, wv) = (self.value(src), self.value(weights));
        let mut out = vec![T::zero(); plan.dst_rows * width];
        for (s, d, w) in plan.entries() {
            axpy(&mut out[d * width..(d + 1) * width], wv[w], &sv[s * width..(s + 1) * width]);
        }
        self.counters.scatter_macs += (plan.len() * width) as u64;
        let rg = self.rg(&[src, weights]);
        Ok(self.push(out_dims, out, Op::Scatter { src, weights, plan }, rg))
    }

    /// Euclidean distance of every row of `z[R, d]` (or a single `z[d]`) to
    /// `mu[d]`. The gradient at a coincident point is zero.
    pub fn row_dist(&mut self, z: Var, mu: Var) -> Result<Var> {
        let (zd, md) = (self.dims(z), self.dims(mu));
        let d = match (zd.len(), md) {
            (1, [m]) if zd[0] == *m => *m,
            (2, [m]) if zd[1] == *m => *m,
            _ => return Err(Error::contract("row_dist", format!("z {zd:?}, mu {md:?}"))),
        };
        let out_dims = if zd.len() == 1 { Vec::new() } else { vec![zd[0]] };
        let (zv, mv) = (self.value(z), self.value(mu));
        let rows = zv.len().checked_div(d).unwrap_or(0);
        let mut out = Vec::with_capacity(rows.max(1));
        for r in 0..rows {
            let mut acc = T::zero();
            for (&a, &m) in zv[r * d..(r + 1) * d].iter().zip(mv) {
                let diff = a - m;
                acc = acc + diff * diff;
            }
            out.push(acc.sqrt());
        }
        if d == 0 {
            out = vec![T::zero(); numel(&out_dims)];
        }
        self.counters.norm_evals += rows as u64;
        let rg = self.rg(&[z, mu]);
        Ok(self.push(out_dims, out, Op::RowDist { z, mu }, rg))
    }

    /// `‖z − mu‖₂` for two vectors, as a scalar node.
    pub fn euclid_dist(&mut self, z: Var, mu: Var) -> Result<Var> {
        if self.dims(z).len() != 1 {
            return Err(Error::contract("euclid_dist", format!("z must be a vector, got {:?}", self.dims(z))));
        }
        self.row_dist(z, mu)
    }

    pub fn reshape(&mut self, x: Var, dims: Vec<usize>) -> Result<Var> {
        if numel(&dims) != numel(self.dims(x)) {
            return Err(Error::contract("reshape", format!("{:?} -> {dims:?}", self.dims(x))));
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(dims, value, Op::Reshape(x), rg))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let d = self.dims(x);
        if d.len() != 2 {
            return Err(Error::contract("transpose", format!("expected a matrix, got {d:?}")));
        }
        let (r, c) = (d[0], d[1]);
        let xv = self.value(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![c, r], out, Op::Transpose(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Vec::new(), vec![s], Op::Sum(x), rg)
    }

    /// Mean absolute difference over entries whose target is finite.
    pub fn mean_abs_err(&mut self, pred: Var, target: Var) -> Result<Var> {
        if numel(self.dims(pred)) != numel(self.dims(target)) {
            return Err(Error::contract(
                "mean_abs_err",
                format!("{:?} vs {:?}", self.dims(pred), self.dims(target)),
            ));
        }
        let (pv, tv) = (self.value(pred), self.value(target));
        let mut acc = T::zero();
        let mut count = 0usize;
        for (&p, &t) in pv.iter().zip(tv) {
            if t.is_finite() {
                acc = acc + (p - t).abs();
                count += 1;
            }
        }
        let v = if count == 0 { T::zero() } else { acc / T::of(count as f64) };
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Vec::new(), vec![v], Op::MeanAbsErr { pred, target }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if numel(self.dims(loss)) != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be a scalar, got dims {:?}", self.dims(loss)),
            ));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            self.backprop_node(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    /// `backward` followed by accumulation into the registry gradients.
    pub fn backward_into(&mut self, loss: Var, reg: &mut ParamRegistry<T>) -> Result<()> {
        self.backward(loss)?;
        reg.accumulate_grads(self.param_grads(), T::one());
        Ok(())
    }

    /// `(registry index, gradient)` for every bound parameter reached by the
    /// last backward pass.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[T])> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Leaf { param: Some(p) } => self.grads.get(i).and_then(|g| g.as_deref()).map(|g| (p, g)),
            _ => None,
        })
    }

    fn backprop_node(&mut self, id: usize, g: &[T]) {
        backprop(&self.nodes, &mut self.grads, id, g);
    }
}

fn backprop<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], id: usize, g: &[T]) {
    {
        match nodes[id].op.clone() {
            Op::Leaf { .. } => {}
            Op::Linear { x, w, b } => back_linear(nodes, grads, g, x, w, b),
            Op::CausalConv { x, w, b, dilation } => back_conv(nodes, grads, g, x, w, b, dilation),
            Op::TimeCollapse { x, w, b } => back_time_collapse(nodes, grads, g, x, w, b),
            Op::Sigmoid(x) => {
                let y = &nodes[id].value;
                if let Some(gx) = acc(nodes, grads, x) {
                    for ((a, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        *a = *a + gi * yi * (T::one() - yi);
                    }
                }
            }
            Op::Relu(x) => {
                let y = &nodes[id].value;
                if let Some(gx) = acc(nodes, grads, x) {
                    for ((a, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        if yi > T::zero() {
                            *a = *a + gi;
                        }
                    }
                }
            }
            Op::Exp(x) => {
                let y = &nodes[id].value;
                if let Some(gx) = acc(nodes, grads, x) {
                    for ((a, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        *a = *a + gi * yi;
                    }
                }
            }
            Op::Scale(x, f) => {
                let f = T::of(f);
                if let Some(gx) = acc(nodes, grads, x) {
                    axpy(gx, f, g);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = acc(nodes, grads, v) {
                        axpy(gv, T::one(), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let bv = nodes[b.0].value.as_slice();
                if let Some(ga) = acc(nodes, grads, a) {
                    for ((s, &gi), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *s = *s + gi * o;
                    }
                }
                let av = nodes[a.0].value.as_slice();
                if let Some(gb) = acc(nodes, grads, b) {
                    for ((s, &gi), &o) in gb.iter_mut().zip(g).zip(av) {
                        *s = *s + gi * o;
                    }
                }
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| *dims_of(nodes, *p).last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len().checked_div(total).unwrap_or(0);
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    if let Some(gp) = acc(nodes, grads, p) {
                        for r in 0..rows {
                            axpy(&mut gp[r * w..(r + 1) * w], T::one(), &g[r * total + offset..r * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::GatherRows { table, idx } => {
                let width = numel(&dims_of(nodes, table)[1..]);
                if let Some(gt) = acc(nodes, grads, table) {
                    for (k, &i) in idx.iter().enumerate() {
                        axpy(&mut gt[i * width..(i + 1) * width], T::one(), &g[k * width..(k + 1) * width]);
                    }
                }
            }
            Op::Scatter { src, weights, plan } => {
                let width = *dims_of(nodes, src).last().unwrap_or(&1);
                if nodes[weights.0].requires_grad {
                    let sv = &nodes[src.0].value;
                    let mut gw = vec![T::zero(); plan.n_weights];
                    for (s, d, w) in plan.entries() {
                        gw[w] = gw[w] + dot(&g[d * width..(d + 1) * width], &sv[s * width..(s + 1) * width]);
                    }
                    let acc = acc(nodes, grads, weights).expect("requires grad");
                    axpy(acc, T::one(), &gw);
                }
                if nodes[src.0].requires_grad {
                    let wv = nodes[weights.0].value.as_slice();
                    let gs = acc(nodes, grads, src).expect("requires grad");
                    for (s, d, w) in plan.entries() {
                        axpy(&mut gs[s * width..(s + 1) * width], wv[w], &g[d * width..(d + 1) * width]);
                    }
                }
            }
            Op::RowDist { z, mu } => {
                let d = nodes[mu.0].value.len();
                let zv = nodes[z.0].value.as_slice();
                let mv = nodes[mu.0].value.as_slice();
                let dist = nodes[id].value.as_slice();
                let rows = dist.len();
                let mut coef = vec![T::zero(); rows];
                for r in 0..rows {
                    if dist[r] > T::zero() {
                        coef[r] = g[r] / dist[r];
                    }
                }
                if let Some(gz) = acc(nodes, grads, z) {
                    for r in 0..rows {
                        for k in 0..d {
                            gz[r * d + k] = gz[r * d + k] + coef[r] * (zv[r * d + k] - mv[k]);
                        }
                    }
                }
                if let Some(gm) = acc(nodes, grads, mu) {
                    for r in 0..rows {
                        for k in 0..d {
                            gm[k] = gm[k] - coef[r] * (zv[r * d + k] - mv[k]);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = acc(nodes, grads, x) {
                    axpy(gx, T::one(), g);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (dims_of(nodes, x)[0], dims_of(nodes, x)[1]);
                if let Some(gx) = acc(nodes, grads, x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = gx[i * c + j] + g[j * r + i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = acc(nodes, grads, x) {
                    for a in gx.iter_mut() {
                        *a = *a + g[0];
                    }
                }
            }
            Op::MeanAbsErr { pred, target } => {
                let pv = nodes[pred.0].value.as_slice();
                let tv = nodes[target.0].value.as_slice();
                let count = tv.iter().filter(|t| t.is_finite()).count();
                if count == 0 {
                    return;
                }
                let scale = g[0] / T::of(count as f64);
                let sign: Vec<T> = pv
                    .iter()
                    .zip(tv)
                    .map(|(&p, &t)| {
                        if !t.is_finite() || p == t {
                            T::zero()
                        } else if p > t {
                            scale
                        } else {
                            -scale
                        }
                    })
                    .collect();
                if let Some(gp) = acc(nodes, grads, pred) {
                    axpy(gp, T::one(), &sign);
                }
                if let Some(gt) = acc(nodes, grads, target) {
                    axpy(gt, -T::one(), &sign);
                }
            }
        }
    }
}

fn back_linear<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], g: &[T], x: Var, w: Var, b: Var) {
        let (cout, cin) = (dims_of(nodes, w)[0], dims_of(nodes, w)[1]);
        let rows = g.len().checked_div(cout).unwrap_or(0);
        if nodes[x.0].requires_grad {
            let wv = nodes[w.0].value.as_slice();
            let gx = acc(nodes, grads, x).expect("requires grad");
            for r in 0..rows {
                let gxr = &mut gx[r * cin..(r + 1) * cin];
                for o in 0..cout {
                    axpy(gxr, g[r * cout + o], &wv[o * cin..(o + 1) * cin]);
                }
            }
        }
        if nodes[w.0].requires_grad {
            let xv = &nodes[x.0].value;
            let gw = acc(nodes, grads, w).expect("requires grad");
            for r in 0..rows {
                let xr = &xv[r * cin..(r + 1) * cin];
                for o in 0..cout {
                    axpy(&mut gw[o * cin..(o + 1) * cin], g[r * cout + o], xr);
                }
            }
        }
        if let Some(gb) = acc(nodes, grads, b) {
            for r in 0..rows {
                axpy(gb, T::one(), &g[r * cout..(r + 1) * cout]);
            }
        }
    }

fn back_conv<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], g: &[T], x: Var, w: Var, b: Var, dilation: usize) {
        let xd = dims_of(nodes, x).to_vec();
        let (cout, cin, k) = (dims_of(nodes, w)[0], dims_of(nodes, w)[1], dims_of(nodes, w)[2]);
        let t_len = xd[0];
        let batch = if xd.len() == 3 { xd[1] } else { 1 };
        if nodes[x.0].requires_grad {
            let wv = &nodes[w.0].value;
            // wr[r][o][c]
            let mut wr = vec![T::zero(); k * cout * cin];
            for o in 0..cout {
                for c in 0..cin {
                    for r in 0..k {
                        wr[(r * cout + o) * cin + c] = wv[(o * cin + c) * k + r];
                    }
                }
            }
            let gx = acc(nodes, grads, x).expect("requires grad");
            for t in 0..t_len {
                for bi in 0..batch {
                    let grow = &g[(t * batch + bi) * cout..(t * batch + bi + 1) * cout];
                    for r in 0..k {
                        let Some(s) = t.checked_sub(r * dilation) else { break };
                        let gxr = &mut gx[(s * batch + bi) * cin..(s * batch + bi + 1) * cin];
                        for (o, &go) in grow.iter().enumerate() {
                            axpy(gxr, go, &wr[(r * cout + o) * cin..(r * cout + o + 1) * cin]);
                        }
                    }
                }
            }
        }
        if nodes[w.0].requires_grad {
            let xv = &nodes[x.0].value;
            let mut gwr = vec![T::zero(); k * cout * cin];
            for t in 0..t_len {
                for bi in 0..batch {
                    let grow = &g[(t * batch + bi) * cout..(t * batch + bi + 1) * cout];
                    for r in 0..k {
                        let Some(s) = t.checked_sub(r * dilation) else { break };
                        let xr = &xv[(s * batch + bi) * cin..(s * batch + bi + 1) * cin];
                        for (o, &go) in grow.iter().enumerate() {
                            axpy(&mut gwr[(r * cout + o) * cin..(r * cout + o + 1) * cin], go, xr);
                        }
                    }
                }
            }
            let gw = acc(nodes, grads, w).expect("requires grad");
            for o in 0..cout {
                for c in 0..cin {
                    for r in 0..k {
                        let i = (o * cin + c) * k + r;
                        gw[i] = gw[i] + gwr[(r * cout + o) * cin + c];
                    }
                }
            }
        }
        if let Some(gb) = acc(nodes, grads, b) {
            for row in g.chunks_exact(cout) {
                axpy(gb, T::one(), row);
            }
        }
    }

fn back_time_collapse<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], g: &[T], x: Var, w: Var, b: Var) {
        let xd = dims_of(nodes, x).to_vec();
        let (t_len, n, cin) = (xd[0], xd[1], xd[2]);
        let cout = dims_of(nodes, w)[0];
        if nodes[x.0].requires_grad {
            let wv = &nodes[w.0].value;
            let mut wr = vec![T::zero(); t_len * cout * cin];
            for o in 0..cout {
                for c in 0..cin {
                    for tau in 0..t_len {
                        wr[(tau * cout + o) * cin + c] = wv[(o * cin + c) * t_len + tau];
                    }
                }
            }
            let gx = acc(nodes, grads, x).expect("requires grad");
            for tau in 0..t_len {
                for ni in 0..n {
                    let gxr = &mut gx[(tau * n + ni) * cin..(tau * n + ni + 1) * cin];
                    for o in 0..cout {
                        axpy(gxr, g[ni * cout + o], &wr[(tau * cout + o) * cin..(tau * cout + o + 1) * cin]);
                    }
                }
            }
        }
        if nodes[w.0].requires_grad {
            let xv = &nodes[x.0].value;
            let mut gwr = vec![T::zero(); t_len * cout * cin];
            for tau in 0..t_len {
                for ni in 0..n {
                    let xr = &xv[(tau * n + ni) * cin..(tau * n + ni + 1) * cin];
                    for o in 0..cout {
                        axpy(&mut gwr[(tau * cout + o) * cin..(tau * cout + o + 1) * cin], g[ni * cout + o], xr);
                    }
                }
            }
            let gw = acc(nodes, grads, w).expect("requires grad");
            for o in 0..cout {
                for c in 0..cin {
                    for tau in 0..t_len {
                        let i = (o * cin + c) * t_len + tau;
                        gw[i] = gw[i] + gwr[(tau * cout + o) * cin + c];
                    }
                }
            }
        }
        if let Some(gb) = acc(nodes, grads, b) {
            for row in g.chunks_exact(cout) {
                axpy(gb, T::one(), row);
            }
        }
    }

fn dims_of<T>(nodes: &[Node<T>], v: Var) -> &[usize] {
    &nodes[v.0].dims
}

fn acc<'a, T: Scalar>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}
