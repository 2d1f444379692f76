//! Epoch loop with early stopping, evaluation and forecast export.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{AdamConfig, AdamState};
use super::metrics::{Evaluation, MetricAccumulator};
use crate::data::{Normalizer, WindowSample, Windows};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub mape_epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            batch_size: 32,
            max_epochs: 200,
            patience: 15,
            mape_epsilon: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size, patience and max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config(format!(
                "adam constants out of range: beta1={} beta2={} eps={}",
                self.beta1, self.beta2, self.eps
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss during the epoch, scaled back to original units.
    pub train_mae: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_mape: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mae,val_mae,val_rmse,val_mape\n");
        for r in &self.records {
            writeln!(s, "{},{},{},{},{}", r.epoch, r.train_mae, r.val_mae, r.val_rmse, r.val_mape).unwrap();
        }
        s
    }
}

/// Returned by an epoch observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

fn normalized_target<T: Scalar>(w: &WindowSample, norm: Normalizer, dims: [usize; 3]) -> Result<Tensor<T>> {
    let z: Vec<f64> = w.target.iter().map(|&v| if v.is_finite() { norm.apply(v) } else { f64::NAN }).collect();
    Tensor::from_f64(dims, &z)
}

/// Loss and `(parameter index, gradient)` pairs.
type SampleGrad<T> = (f64, Vec<(usize, Vec<T>)>);

/// Normalized-space loss and parameter gradients of one window.
fn sample_gradient<T: Scalar>(model: &Model<T>, w: &WindowSample) -> Result<SampleGrad<T>> {
    let cfg = model.config();
    let mut tape = Tape::new();
    let pred = model.forward_window(&mut tape, w)?;
    let target = tape.constant(normalized_target(w, model.normalizer(), [cfg.t_p, cfg.n_nodes, 1])?);
    let loss = tape.mean_abs_err(pred, target)?;
    tape.backward(loss)?;
    let grads = tape.param_grads().map(|(i, g)| (i, g.to_vec())).collect();
    Ok((tape.value(loss)[0].as_f64(), grads))
}

/// Trains in place and leaves the best-validation parameters in `model`.
pub fn train<T: Scalar>(model: &mut Model<T>, train_set: &Windows, val_set: &Windows, cfg: &TrainConfig) -> Result<History> {
    train_observed(model, train_set, val_set, cfg, |_| Control::Continue)
}

/// [`train`] with a callback after every epoch.
pub fn train_observed<T: Scalar>(
    model: &mut Model<T>,
    train_set: &Windows,
    val_set: &Windows,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord) -> Control,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "need training and validation windows, got {} and {}",
            train_set.len(),
            val_set.len()
        )));
    }
    let adam_cfg = cfg.adam();
    let mut adam = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let std = model.normalizer().std;
    let mut history = History { best_val_mae: f64::INFINITY, ..Default::default() };
    let mut best = model.params().clone();
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let snapshot: &Model<T> = model;
            let results: Vec<Result<SampleGrad<T>>> =
                idx.par_iter().map(|&k| sample_gradient(snapshot, &train_set.get(k))).collect();
            let scale = T::of(1.0 / idx.len() as f64);
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                model.params_mut().accumulate_grads(grads.iter().map(|(i, g)| (*i, g.as_slice())), scale);
            }
            batch_loss /= idx.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, batch, loss: batch_loss });
            }
            loss_sum += batch_loss * idx.len() as f64;
            adam.step(model.params_mut(), &adam_cfg);
        }

        let val = evaluate(model, val_set, cfg.mape_epsilon)?.overall;
        if !val.mae.is_finite() {
            return Err(Error::Divergence { epoch, batch: 0, loss: val.mae });
        }
        let record = EpochRecord {
            epoch,
            train_mae: loss_sum / train_set.len() as f64 * std,
            val_mae: val.mae,
            val_rmse: val.rmse,
            val_mape: val.mape,
        };
        history.records.push(record);
        if val.mae < history.best_val_mae {
            history.best_val_mae = val.mae;
            history.best_epoch = epoch;
            best = model.params().clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience || observer(&record) == Control::Stop {
            break;
        }
    }
    *model.params_mut() = best;
    model.params_mut().zero_grads();
    Ok(history)
}

/// Denormalized forecasts `[T_p, N]` for every window, in order.
pub fn forecasts<T: Scalar>(model: &Model<T>, set: &Windows) -> Result<Vec<Vec<f64>>> {
    (0..set.len()).into_par_iter().map(|k| model.predict(&set.get(k))).collect()
}

pub fn evaluate<T: Scalar>(model: &Model<T>, set: &Windows, mape_epsilon: f64) -> Result<Evaluation> {
    let (t_p, n) = (model.config().t_p, model.config().n_nodes);
    let preds = forecasts(model, set)?;
    let mut acc = vec![MetricAccumulator::default(); t_p];
    for (k, p) in preds.iter().enumerate() {
        let w = set.get(k);
        for h in 0..t_p {
            acc[h].extend(&p[h * n..(h + 1) * n], &w.target[h * n..(h + 1) * n], mape_epsilon);
        }
    }
    Ok(Evaluation::from_accumulators(&acc, set.len()))
}

/// `window_start,horizon,node,value` rows, horizons counted from 1.
pub fn predictions_csv<T: Scalar>(model: &Model<T>, set: &Windows) -> Result<String> {
    let n = model.config().n_nodes;
    let preds = forecasts(model, set)?;
    let mut s = String::from("window_start,horizon,node,value\n");
    for (k, p) in preds.iter().enumerate() {
        let start = set.get(k).start;
        for (i, v) in p.iter().enumerate() {
            writeln!(s, "{start},{},{},{v}", i / n + 1, i % n).unwrap();
        }
    }
    Ok(s)
}
