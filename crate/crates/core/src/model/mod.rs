//! Full forecasting model: parameter layout, forward pass and checkpoints.

mod checkpoint;
mod config;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{parse_bool as config_bool, Ablation, ModelConfig, MAX_TDCN_LAYERS};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{CalendarIndex, Normalizer, WindowSample};
use crate::encodings::{
    normal_tensor, temporal_encodings, DAYS_PER_WEEK, INIT_STD, Z_DAY_OF_WEEK, Z_SPATIAL, Z_SPATIAL_DIST, Z_TEMPORAL_DIST,
    Z_TIME_OF_DAY,
};
use crate::error::{Error, Result};
use crate::graph::{st_edges_for, RoadGraph, StEdgeSet};
use crate::local::{self, aggregate_with, Affine, AggregationPlan, Guidance, PositionIndex};
use crate::mvc::{self, FuseParams, ViewParams};
use crate::scalar::Scalar;
use crate::stei::{self, SteiInputs, TermMask, WeightLayout, ADAPTIVE_WEIGHTS, CENTER_NAMES};
use crate::tdcn::{tdcn_forward_traced, TdcnLayer, TdcnSpec, TdcnStack};
use crate::tensor::{ParamRegistry, Tape, Tensor, Var};

/// Input projection of the concatenated guidance when the gate is ablated.
pub const W_CAT: &str = "local.w_cat";
pub const B_CAT: &str = "local.b_cat";
/// Direct head used when multi-view fusion is ablated.
pub const HEAD_W: &str = "head.w";
pub const HEAD_B: &str = "head.b";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±1/√fan_in`.
    Uniform(usize),
    Zero,
    Normal,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

fn weight(out: &mut Vec<ParamSpec>, name: &str, dims: Vec<usize>, fan_in: usize) {
    out.push(ParamSpec { name: name.into(), dims, init: Init::Uniform(fan_in) });
}

fn bias(out: &mut Vec<ParamSpec>, name: &str, n: usize) {
    out.push(ParamSpec { name: name.into(), dims: vec![n], init: Init::Zero });
}

fn linear(out: &mut Vec<ParamSpec>, (w, b): (&str, &str), cout: usize, cin: usize) {
    weight(out, w, vec![cout, cin], cin);
    bias(out, b, cout);
}

fn normal(out: &mut Vec<ParamSpec>, name: &str, dims: Vec<usize>) {
    out.push(ParamSpec { name: name.into(), dims, init: Init::Normal });
}

impl ModelConfig {
    pub fn tdcn_spec(&self) -> TdcnSpec {
        TdcnSpec { channels: self.channels, layers: self.tdcn_layers }
    }

    pub fn term_mask(&self) -> TermMask {
        let a = self.ablation;
        TermMask { spatial: !a.no_sce, temporal: !a.no_tce, hop: !a.no_sde, offset: !a.no_tde }
    }

    /// Present views by role: 1 input encoding, 2 local layer, 3 TDCN.
    pub fn views(&self) -> Vec<usize> {
        let a = self.ablation;
        [(1, true), (2, !a.no_gcn), (3, !a.no_tdcn)].into_iter().filter(|v| v.1).map(|v| v.0).collect()
    }

    /// Number of feature views fused by the head.
    pub fn view_count(&self) -> usize {
        self.views().len()
    }

    /// Every parameter in registration order. `m_spatial` sizes the free
    /// weight table of the no-inference variant.
    pub fn param_specs(&self, m_spatial: usize) -> Vec<ParamSpec> {
        let (n, d, c, a) = (self.n_nodes, self.d, self.channels, self.ablation);
        let mask = self.term_mask();
        let mut out = Vec::new();
        if a.uses_spatial_coords() {
            normal(&mut out, Z_SPATIAL, vec![n, d]);
        }
        if a.uses_temporal_coords() {
            normal(&mut out, Z_TIME_OF_DAY, vec![self.steps_per_day, d]);
            normal(&mut out, Z_DAY_OF_WEEK, vec![DAYS_PER_WEEK, d]);
        }
        if a.uses_inference() {
            if mask.hop {
                normal(&mut out, Z_SPATIAL_DIST, vec![self.alpha + 1, d]);
            }
            if mask.offset {
                normal(&mut out, Z_TEMPORAL_DIST, vec![self.beta + 1, d]);
            }
            for (k, on) in mask.enabled().into_iter().enumerate() {
                if on {
                    normal(&mut out, CENTER_NAMES[k], vec![d]);
                }
            }
        } else if !a.no_gcn {
            out.push(ParamSpec { name: ADAPTIVE_WEIGHTS.into(), dims: vec![m_spatial, self.beta + 1], init: Init::Ones });
        }

        linear(&mut out, (local::W0, local::B0), c, 1);
        if !a.no_gcn {
            if a.no_stpgau {
                if a.uses_spatial_coords() {
                    linear(&mut out, (local::W2, local::B2), c, d);
                }
                if a.uses_temporal_coords() {
                    linear(&mut out, (local::W3, local::B3), c, d);
                }
                let parts = 1 + usize::from(a.uses_spatial_coords()) + usize::from(a.uses_temporal_coords());
                linear(&mut out, (W_CAT, B_CAT), c, parts * c);
                linear(&mut out, (local::W1, local::B1), c, c);
            } else {
                linear(&mut out, (local::W1, local::B1), 2 * c, c);
                if a.uses_spatial_coords() {
                    linear(&mut out, (local::W2, local::B2), 2 * c, d);
                }
                if a.uses_temporal_coords() {
                    linear(&mut out, (local::W3, local::B3), 2 * c, d);
                }
                linear(&mut out, (local::W4, local::B4), c, 2 * c);
                linear(&mut out, (local::W5, local::B5), c, 2 * c);
            }
        }

        if !a.no_tdcn {
            for (name, dims, fan_in) in self.tdcn_spec().param_shapes() {
                if fan_in == 0 {
                    bias(&mut out, &name, dims[0]);
                } else {
                    weight(&mut out, &name, dims, fan_in);
                }
            }
        }

        if a.no_mvc {
            weight(&mut out, HEAD_W, vec![self.t_p, c, self.t_h], c * self.t_h);
            bias(&mut out, HEAD_B, self.t_p);
        } else {
            let k = self.view_count();
            for v in self.views() {
                let (w, b) = mvc::compress_names(v);
                weight(&mut out, &w, vec![c, c, self.t_h], c * self.t_h);
                bias(&mut out, &b, c);
                for (w, b) in mvc::view_glu_names(v) {
                    linear(&mut out, (&w, &b), c, c);
                }
            }
            linear(&mut out, mvc::FUSE_LIN, k * c, k * c);
            linear(&mut out, mvc::FUSE_GATE, k * c, k * c);
            linear(&mut out, mvc::HEAD, self.t_p, k * c);
        }
        out
    }
}

/// Parameter count from the configuration alone, summed module by module.
pub fn expected_param_count(cfg: &ModelConfig, m_spatial: usize) -> usize {
    let (n, d, c, a) = (cfg.n_nodes, cfg.d, cfg.channels, cfg.ablation);
    let on = |b: bool| usize::from(b);
    let (sce, tce) = (on(a.uses_spatial_coords()), on(a.uses_temporal_coords()));
    let inf = on(a.uses_inference());
    let mut total = sce * n * d + tce * (cfg.steps_per_day + DAYS_PER_WEEK) * d;
    total += inf * d * (on(!a.no_sde) * (cfg.alpha + 1) + on(!a.no_tde) * (cfg.beta + 1));
    total += inf * d * (2 * on(!a.no_sce) + 2 * on(!a.no_tce) + on(!a.no_sde) + on(!a.no_tde));
    total += on(!a.no_gcn && a.no_stei) * m_spatial * (cfg.beta + 1);
    total += 2 * c;
    if !a.no_gcn {
        total += if a.no_stpgau {
            (sce + tce) * (c * d + c) + (1 + sce + tce) * c * c + c + c * c + c
        } else {
            2 * c * c + 2 * c + (sce + tce) * (2 * c * d + 2 * c) + 2 * (2 * c * c + c)
        };
    }
    if !a.no_tdcn {
        let spec = cfg.tdcn_spec();
        for l in 0..cfg.tdcn_layers {
            let (ci, co) = spec.layer_channels(l);
            total += co * ci * 3 + co + on(ci != co) * (co * ci + co);
        }
        total += c * spec.last_width() + c;
    }
    total += if a.no_mvc {
        cfg.t_p * c * cfg.t_h + cfg.t_p
    } else {
        let k = cfg.view_count();
        k * (c * c * cfg.t_h + c + 2 * (c * c + c)) + 2 * (k * c * k * c + k * c) + cfg.t_p * k * c + cfg.t_p
    };
    total
}

/// Activations of one forward pass, kept for inspection.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `[T_p, N, 1]`, normalized scale.
    pub prediction: Var,
    pub input_encoding: Var,
    /// First view; equals the input encoding unless the gate is ablated.
    pub view1: Var,
    pub local: Option<Var>,
    pub tdcn_layers: Vec<Var>,
    pub tdcn_out: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamRegistry<T>,
    normalizer: Normalizer,
    edges: Arc<StEdgeSet>,
    layout: Arc<WeightLayout>,
    plan: AggregationPlan,
    pos: PositionIndex,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialized model seeded from `config.seed`.
    pub fn build(config: ModelConfig, graph: &RoadGraph, normalizer: Normalizer) -> Result<Self> {
        let mut m = Self::skeleton(config, graph, normalizer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for spec in config.param_specs(m.edges.m_spatial()) {
            let t = init_tensor(&spec, &mut rng);
            m.params.insert(spec.name, t)?;
        }
        Ok(m)
    }

    /// Model with geometry but an empty registry.
    pub(crate) fn skeleton(config: ModelConfig, graph: &RoadGraph, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        if graph.n_nodes() != config.n_nodes {
            return Err(Error::Dimension(format!(
                "model expects {} nodes, graph has {}",
                config.n_nodes,
                graph.n_nodes()
            )));
        }
        let edges = Arc::new(st_edges_for(graph, config.alpha, config.beta)?);
        let layout = Arc::new(WeightLayout::new(&edges, config.t_h));
        let plan = if config.ablation.no_stei {
            AggregationPlan::shared(&edges, config.t_h)?
        } else {
            AggregationPlan::dynamic(&edges, &layout)?
        };
        Ok(Self {
            config,
            params: ParamRegistry::new(),
            normalizer,
            edges,
            layout,
            plan,
            pos: PositionIndex::new(config.t_h, config.n_nodes),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamRegistry<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamRegistry<T> {
        &mut self.params
    }

    pub fn normalizer(&self) -> Normalizer {
        self.normalizer
    }

    pub fn set_normalizer(&mut self, n: Normalizer) {
        self.normalizer = n;
    }

    pub fn edges(&self) -> &StEdgeSet {
        &self.edges
    }

    pub fn layout(&self) -> &WeightLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.total_elements()
    }

    /// Scalars held by parameters whose names start with `prefix`.
    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.numel()).sum()
    }

    /// Same geometry and values in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
            normalizer: self.normalizer,
            edges: self.edges.clone(),
            layout: self.layout.clone(),
            plan: self.plan.clone(),
            pos: self.pos.clone(),
        }
    }

    fn bind(&self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        tape.param(&self.params, name)
    }

    fn affine(&self, tape: &mut Tape<T>, w: &str, b: &str) -> Result<Affine> {
        Ok(Affine { w: self.bind(tape, w)?, b: self.bind(tape, b)? })
    }

    fn opt(&self, tape: &mut Tape<T>, name: &str) -> Result<Option<Var>> {
        if self.params.contains(name) {
            self.bind(tape, name).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Normalized input tensor `[T_h, N, 1]` for a window.
    pub fn window_input(&self, w: &WindowSample) -> Result<Tensor<T>> {
        let want = self.config.t_h * self.config.n_nodes;
        if w.input.len() != want {
            return Err(Error::Dimension(format!("window holds {} inputs, model expects {want}", w.input.len())));
        }
        Tensor::from_f64([self.config.t_h, self.config.n_nodes, 1], &w.input)
    }

    pub fn forward_window(&self, tape: &mut Tape<T>, w: &WindowSample) -> Result<Var> {
        let x = tape.constant(self.window_input(w)?);
        Ok(self.forward(tape, x, &w.calendar)?.prediction)
    }

    /// `input` is `[T_h, N, 1]` normalized; `calendar` covers the window plus
    /// `beta` steps of reach-back.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, calendar: &[CalendarIndex]) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let a = cfg.ablation;
        let (t_h, n, c) = (cfg.t_h, cfg.n_nodes, cfg.channels);
        if tape.dims(input) != [t_h, n, 1] {
            return Err(Error::contract("forward", format!("input {:?}, expected [{t_h}, {n}, 1]", tape.dims(input))));
        }
        if calendar.len() != t_h + cfg.beta {
            return Err(Error::contract(
                "forward",
                format!("calendar has {} entries, expected t_h + beta = {}", calendar.len(), t_h + cfg.beta),
            ));
        }

        let enc = self.affine(tape, local::W0, local::B0)?;
        let x_enc = local::input_encode(tape, input, enc)?;
        let mut view1 = x_enc;
        let mut local_out = None;

        if !a.no_gcn {
            let z_s = self.opt(tape, Z_SPATIAL)?;
            let z_t = match (self.opt(tape, Z_TIME_OF_DAY)?, self.opt(tape, Z_DAY_OF_WEEK)?) {
                (Some(zd), Some(zw)) => Some(temporal_encodings(tape, zd, zw, calendar)?),
                _ => None,
            };
            let z_t_window = match z_t {
                Some(z) => Some(tape.gather_rows(z, Arc::new((cfg.beta..cfg.beta + t_h).collect()))?),
                None => None,
            };

            let weights = if a.no_stei {
                self.bind(tape, ADAPTIVE_WEIGHTS)?
            } else {
                let mut centers = [None; 6];
                for (k, slot) in centers.iter_mut().enumerate() {
                    *slot = self.opt(tape, CENTER_NAMES[k])?;
                }
                let inputs = SteiInputs {
                    z_s,
                    z_t,
                    z_sd: self.opt(tape, Z_SPATIAL_DIST)?,
                    z_td: self.opt(tape, Z_TEMPORAL_DIST)?,
                    centers,
                    mask: cfg.term_mask(),
                };
                let cache = stei::factored_aggregate_terms(tape, &inputs, &self.layout)?;
                stei::assemble_weights(tape, &cache, &self.layout)?.values
            };

            let spatial = match z_s {
                Some(z) => Some((z, self.affine(tape, local::W2, local::B2)?)),
                None => None,
            };
            let temporal = match z_t_window {
                Some(z) => Some((z, self.affine(tape, local::W3, local::B3)?)),
                None => None,
            };
            let guide = Guidance { spatial, temporal };

            local_out = Some(if a.no_stpgau {
                let mut parts = vec![x_enc];
                if let Some((z, proj)) = guide.spatial {
                    parts.push(broadcast_projection(tape, z, proj, &self.pos.node, [t_h, n, c])?);
                }
                if let Some((z, proj)) = guide.temporal {
                    parts.push(broadcast_projection(tape, z, proj, &self.pos.time, [t_h, n, c])?);
                }
                let cat = tape.concat(&parts)?;
                let fuse = self.affine(tape, W_CAT, B_CAT)?;
                let fused = fuse.apply(tape, cat)?;
                view1 = fused;
                let agg = aggregate_with(tape, fused, weights, &self.plan)?;
                let upd = self.affine(tape, local::W1, local::B1)?;
                local::update(tape, agg, upd)?
            } else {
                let agg = aggregate_with(tape, x_enc, weights, &self.plan)?;
                let upd = self.affine(tape, local::W1, local::B1)?;
                let h = local::update(tape, agg, upd)?;
                let lin = self.affine(tape, local::W4, local::B4)?;
                let gate = self.affine(tape, local::W5, local::B5)?;
                local::stpgau(tape, h, guide, &self.pos, lin, gate)?
            });
        }

        let trunk = local_out.unwrap_or(view1);
        let (tdcn_out, tdcn_layers) = if a.no_tdcn {
            (None, Vec::new())
        } else {
            let stack = self.tdcn_stack(tape)?;
            let (y, trace) = tdcn_forward_traced(tape, trunk, &stack)?;
            (Some(y), trace)
        };

        let prediction = if a.no_mvc {
            let last = tdcn_out.or(local_out).unwrap_or(view1);
            let head = self.affine(tape, HEAD_W, HEAD_B)?;
            let by_node = tape.time_collapse(last, head.w, head.b)?;
            mvc::horizons_first(tape, by_node)?
        } else {
            let views = [(1, Some(view1)), (2, local_out), (3, tdcn_out)];
            let mut gated = Vec::with_capacity(3);
            for (role, v) in views.into_iter().filter_map(|(r, v)| v.map(|v| (r, v))) {
                let p = self.view_params(tape, role)?;
                gated.push(mvc::view_branch(tape, v, &p)?);
            }
            let fuse = FuseParams {
                lin: self.affine(tape, mvc::FUSE_LIN.0, mvc::FUSE_LIN.1)?,
                gate: self.affine(tape, mvc::FUSE_GATE.0, mvc::FUSE_GATE.1)?,
                head: self.affine(tape, mvc::HEAD.0, mvc::HEAD.1)?,
            };
            mvc::fuse_predict(tape, &gated, &fuse)?
        };

        Ok(ForwardTrace { prediction, input_encoding: x_enc, view1, local: local_out, tdcn_layers, tdcn_out })
    }

    fn tdcn_stack(&self, tape: &mut Tape<T>) -> Result<TdcnStack> {
        let spec = self.config.tdcn_spec();
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let (w, b) = TdcnSpec::conv_names(l);
            let (rw, rb) = TdcnSpec::residual_names(l);
            let residual = if self.params.contains(&rw) { Some(self.affine(tape, &rw, &rb)?) } else { None };
            layers.push(TdcnLayer { conv: self.affine(tape, &w, &b)?, residual, dilation: spec.dilation(l) });
        }
        Ok(TdcnStack { layers, out_proj: self.affine(tape, TdcnSpec::OUT_W, TdcnSpec::OUT_B)? })
    }

    fn view_params(&self, tape: &mut Tape<T>, v: usize) -> Result<ViewParams> {
        let (cw, cb) = mvc::compress_names(v);
        let [(lw, lb), (gw, gb)] = mvc::view_glu_names(v);
        Ok(ViewParams {
            compress: self.affine(tape, &cw, &cb)?,
            lin: self.affine(tape, &lw, &lb)?,
            gate: self.affine(tape, &gw, &gb)?,
        })
    }

    /// Denormalized forecast `[T_p, N]` for one window.
    pub fn predict(&self, w: &WindowSample) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let y = self.forward_window(&mut tape, w)?;
        Ok(tape.value(y).iter().map(|v| self.normalizer.invert(v.as_f64())).collect())
    }
}

fn broadcast_projection<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    proj: Affine,
    idx: &Arc<Vec<usize>>,
    dims: [usize; 3],
) -> Result<Var> {
    let p = proj.apply(tape, z)?;
    let g = tape.gather_rows(p, idx.clone())?;
    tape.reshape(g, dims.to_vec())
}

fn init_tensor<T: Scalar>(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = spec.dims.iter().product();
    match spec.init {
        Init::Uniform(fan_in) => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
            Tensor::new(spec.dims.clone(), data).expect("length matches dims")
        }
        Init::Zero => Tensor::zeros(spec.dims.clone()),
        Init::Ones => Tensor::full(spec.dims.clone(), T::one()),
        Init::Normal => normal_tensor(&spec.dims, INIT_STD, rng),
    }
}

#[cfg(test)]
mod tests;
