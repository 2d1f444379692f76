//! Multi-view prediction head.
//!
//! Each view `[T_h, N, C]` is collapsed over time by a full-width kernel and
//! gated; the gated views are concatenated, gated again and projected to
//! `T_p` horizons in one shot.

use crate::error::{Error, Result};
use crate::local::{glu, Affine};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

pub fn compress_names(view: usize) -> (String, String) {
    (format!("mvc.view{view}.compress.w"), format!("mvc.view{view}.compress.b"))
}

/// `(linear, gate)` names of the per-view GLU.
pub fn view_glu_names(view: usize) -> [(String, String); 2] {
    [
        (format!("mvc.view{view}.glu_lin.w"), format!("mvc.view{view}.glu_lin.b")),
        (format!("mvc.view{view}.glu_gate.w"), format!("mvc.view{view}.glu_gate.b")),
    ]
}

pub const FUSE_LIN: (&str, &str) = ("mvc.fuse.glu_lin.w", "mvc.fuse.glu_lin.b");
pub const FUSE_GATE: (&str, &str) = ("mvc.fuse.glu_gate.w", "mvc.fuse.glu_gate.b");
pub const HEAD: (&str, &str) = ("mvc.head.w", "mvc.head.b");

#[derive(Debug, Clone, Copy)]
pub struct ViewParams {
    /// Kernel `[C, C, T_h]`.
    pub compress: Affine,
    pub lin: Affine,
    pub gate: Affine,
}

#[derive(Debug, Clone, Copy)]
pub struct FuseParams {
    pub lin: Affine,
    pub gate: Affine,
    /// Pointwise `kC → T_p`.
    pub head: Affine,
}

/// `[T_h, N, C] → [N, C]`.
pub fn view_compress<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &ViewParams) -> Result<Var> {
    tape.time_collapse(x, p.compress.w, p.compress.b)
}

pub fn view_glu<T: Scalar>(tape: &mut Tape<T>, v: Var, p: &ViewParams) -> Result<Var> {
    glu(tape, v, p.lin, p.gate)
}

/// Compression followed by the per-view gate.
pub fn view_branch<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &ViewParams) -> Result<Var> {
    let v = view_compress(tape, x, p)?;
    view_glu(tape, v, p)
}

/// `[N, T_p] → [T_p, N, 1]`.
pub fn horizons_first<T: Scalar>(tape: &mut Tape<T>, by_node: Var) -> Result<Var> {
    let t = tape.transpose(by_node)?;
    let d = tape.dims(t).to_vec();
    tape.reshape(t, vec![d[0], d[1], 1])
}

/// Gated views `[N, C]` each → prediction `[T_p, N, 1]`.
pub fn fuse_predict<T: Scalar>(tape: &mut Tape<T>, views: &[Var], p: &FuseParams) -> Result<Var> {
    if views.is_empty() {
        return Err(Error::contract("fuse_predict", "no views"));
    }
    let cat = tape.concat(views)?;
    let fused = glu(tape, cat, p.lin, p.gate)?;
    let by_node = p.head.apply(tape, fused)?;
    horizons_first(tape, by_node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn affine(tape: &mut Tape<f64>, w_dims: &[usize], w: Vec<f64>, b: Vec<f64>) -> Affine {
        let cout = w_dims[0];
        Affine {
            w: tape.constant(Tensor::new(w_dims.to_vec(), w).unwrap()),
            b: tape.constant(Tensor::new([cout], b).unwrap()),
        }
    }

    #[test]
    fn averaging_taps_give_temporal_mean() {
        let (t_h, n, c) = (4, 2, 2);
        let mut tape = Tape::<f64>::new();
        let xs: Vec<f64> = (0..t_h * n * c).map(|k| k as f64).collect();
        let x = tape.constant(Tensor::new([t_h, n, c], xs.clone()).unwrap());
        let mut w = vec![0.0; c * c * t_h];
        for o in 0..c {
            for tau in 0..t_h {
                w[(o * c + o) * t_h + tau] = 1.0 / t_h as f64;
            }
        }
        let compress = affine(&mut tape, &[c, c, t_h], w, vec![0.0; c]);
        let dummy = affine(&mut tape, &[c, c], vec![0.0; c * c], vec![0.0; c]);
        let p = ViewParams { compress, lin: dummy, gate: dummy };
        let y = view_compress(&mut tape, x, &p).unwrap();
        for ni in 0..n {
            for ch in 0..c {
                let mean = (0..t_h).map(|t| xs[(t * n + ni) * c + ch]).sum::<f64>() / t_h as f64;
                assert!((tape.value(y)[ni * c + ch] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn glu_zero_gate_halves() {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::from_f64([1, 2], &[1.0, 3.0]).unwrap());
        let lin = affine(&mut tape, &[2, 2], vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0]);
        let gate = affine(&mut tape, &[2, 2], vec![0.0; 4], vec![0.0; 2]);
        let dummy = affine(&mut tape, &[2, 2, 1], vec![0.0; 4], vec![0.0; 2]);
        let p = ViewParams { compress: dummy, lin, gate };
        let y = view_glu(&mut tape, v, &p).unwrap();
        assert_eq!(tape.value(y), &[0.5, 2.0]);
    }

    #[test]
    fn zero_views_predict_zero_with_shape() {
        let (n, c, t_p) = (5, 2, 12);
        let mut tape = Tape::<f64>::new();
        let views: Vec<Var> = (0..3).map(|_| tape.constant(Tensor::zeros([n, c]))).collect();
        let lin = affine(&mut tape, &[3 * c, 3 * c], vec![0.3; 9 * c * c], vec![0.0; 3 * c]);
        let gate = affine(&mut tape, &[3 * c, 3 * c], vec![-0.2; 9 * c * c], vec![0.0; 3 * c]);
        let head = affine(&mut tape, &[t_p, 3 * c], vec![0.1; 3 * c * t_p], vec![0.0; t_p]);
        let y = fuse_predict(&mut tape, &views, &FuseParams { lin, gate, head }).unwrap();
        assert_eq!(tape.dims(y), &[t_p, n, 1]);
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }
}
