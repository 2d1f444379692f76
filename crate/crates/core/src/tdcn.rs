//! Stacked dilated causal temporal convolutions with residuals.
//!
//! Layer `l` uses kernel 3 and dilation `2^l`, with channels
//! `C → C`, `C → 2C`, `2C → 4C`, ... and left-only zero padding of
//! `(k - 1) · dilation`. A pointwise projection maps the last width back
//! to `C`. Weights are shared across nodes.

use crate::error::{Error, Result};
use crate::local::Affine;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TdcnSpec {
    pub channels: usize,
    pub layers: usize,
}

impl TdcnSpec {
    pub fn dilation(&self, layer: usize) -> usize {
        1 << layer
    }

    /// `(in, out)` channels of `layer`.
    pub fn layer_channels(&self, layer: usize) -> (usize, usize) {
        let c = self.channels;
        if layer == 0 {
            (c, c)
        } else {
            (c << (layer - 1), c << layer)
        }
    }

    pub fn last_width(&self) -> usize {
        self.layer_channels(self.layers.saturating_sub(1)).1
    }

    /// `1 + (k − 1) · Σ dilations`.
    pub fn receptive_field(&self) -> usize {
        1 + (KERNEL - 1) * (0..self.layers).map(|l| self.dilation(l)).sum::<usize>()
    }

    pub fn conv_names(layer: usize) -> (String, String) {
        (format!("tdcn.l{layer}.conv.w"), format!("tdcn.l{layer}.conv.b"))
    }

    pub fn residual_names(layer: usize) -> (String, String) {
        (format!("tdcn.l{layer}.res.w"), format!("tdcn.l{layer}.res.b"))
    }

    pub const OUT_W: &'static str = "tdcn.out.w";
    pub const OUT_B: &'static str = "tdcn.out.b";

    /// `(name, dims, fan_in)` of every stack parameter, weights before biases.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        for l in 0..self.layers {
            let (cin, cout) = self.layer_channels(l);
            let (w, b) = Self::conv_names(l);
            out.push((w, vec![cout, cin, KERNEL], cin * KERNEL));
            out.push((b, vec![cout], 0));
            if cin != cout {
                let (w, b) = Self::residual_names(l);
                out.push((w, vec![cout, cin], cin));
                out.push((b, vec![cout], 0));
            }
        }
        let last = self.last_width();
        out.push((Self::OUT_W.to_string(), vec![self.channels, last], last));
        out.push((Self::OUT_B.to_string(), vec![self.channels], 0));
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TdcnLayer {
    pub conv: Affine,
    pub residual: Option<Affine>,
    pub dilation: usize,
}

#[derive(Debug, Clone)]
pub struct TdcnStack {
    pub layers: Vec<TdcnLayer>,
    pub out_proj: Affine,
}

/// `ReLU(causal_conv(x)) + residual(x)`, residual identity when widths agree.
pub fn tdcn_layer<T: Scalar>(tape: &mut Tape<T>, x: Var, layer: &TdcnLayer) -> Result<Var> {
    let conv = tape.causal_dilated_conv1d(x, layer.conv.w, layer.conv.b, layer.dilation)?;
    let act = tape.relu(conv);
    let skip = match layer.residual {
        Some(p) => p.apply(tape, x)?,
        None => {
            if tape.dims(x) != tape.dims(act) {
                return Err(Error::contract(
                    "tdcn_layer",
                    format!("identity residual needs equal widths: {:?} vs {:?}", tape.dims(x), tape.dims(act)),
                ));
            }
            x
        }
    };
    tape.add(act, skip)
}

/// Runs every layer then the width-restoring projection. Returns the
/// output and the per-layer activations.
pub fn tdcn_forward_traced<T: Scalar>(tape: &mut Tape<T>, x: Var, stack: &TdcnStack) -> Result<(Var, Vec<Var>)> {
    let mut h = x;
    let mut trace = Vec::with_capacity(stack.layers.len());
    for layer in &stack.layers {
        h = tdcn_layer(tape, h, layer)?;
        trace.push(h);
    }
    let out = stack.out_proj.apply(tape, h)?;
    Ok((out, trace))
}

pub fn tdcn_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, stack: &TdcnStack) -> Result<Var> {
    tdcn_forward_traced(tape, x, stack).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn spec_geometry() {
        let s = TdcnSpec { channels: 8, layers: 3 };
        assert_eq!((0..3).map(|l| s.dilation(l)).collect::<Vec<_>>(), vec![1, 2, 4]);
        assert_eq!((0..3).map(|l| s.layer_channels(l)).collect::<Vec<_>>(), vec![(8, 8), (8, 16), (16, 32)]);
        assert_eq!(s.receptive_field(), 15);
        let names: Vec<String> = s.param_shapes().into_iter().map(|p| p.0).collect();
        assert!(!names.contains(&"tdcn.l0.res.w".to_string()));
        assert!(names.contains(&"tdcn.l2.res.w".to_string()));
    }

    fn konst(tape: &mut Tape<f64>, dims: &[usize], v: &[f64]) -> Var {
        tape.constant(Tensor::from_f64(dims.to_vec(), v).unwrap())
    }

    #[test]
    fn zero_conv_is_identity() {
        let mut tape = Tape::<f64>::new();
        let x = konst(&mut tape, &[4, 1, 2], &[1.0, -2.0, 3.0, 0.5, -1.0, 2.0, 0.0, 7.0]);
        let layer = TdcnLayer {
            conv: Affine {
                w: tape.constant(Tensor::zeros([2, 2, 3])),
                b: tape.constant(Tensor::zeros([2])),
            },
            residual: None,
            dilation: 2,
        };
        let y = tdcn_layer(&mut tape, x, &layer).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn impulse_hits_dilated_taps() {
        let mut tape = Tape::<f64>::new();
        let x = konst(&mut tape, &[8, 1], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let w = konst(&mut tape, &[1, 1, 3], &[0.5, 0.7, 0.9]);
        let b = konst(&mut tape, &[1], &[0.0]);
        let y = tape.causal_dilated_conv1d(x, w, b, 2).unwrap();
        let nonzero: Vec<usize> = tape.value(y).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(t, _)| t).collect();
        assert_eq!(nonzero, vec![0, 2, 4]);
    }
}
