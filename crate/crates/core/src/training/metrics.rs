//! MAE, RMSE and MAPE over original-scale values.

/// MAPE is in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
}

/// Running sums. Entries with a non-finite target are skipped; MAPE also
/// skips targets with magnitude below `mape_epsilon`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricAccumulator {
    abs: f64,
    sq: f64,
    count: usize,
    ape: f64,
    ape_count: usize,
}

impl MetricAccumulator {
    pub fn push(&mut self, pred: f64, target: f64, mape_epsilon: f64) {
        if !target.is_finite() {
            return;
        }
        let e = pred - target;
        self.abs += e.abs();
        self.sq += e * e;
        self.count += 1;
        if target.abs() >= mape_epsilon {
            self.ape += (e / target).abs();
            self.ape_count += 1;
        }
    }

    pub fn extend(&mut self, pred: &[f64], target: &[f64], mape_epsilon: f64) {
        assert_eq!(pred.len(), target.len(), "prediction and target lengths differ");
        for (&p, &t) in pred.iter().zip(target) {
            self.push(p, t, mape_epsilon);
        }
    }

    pub fn merge(&mut self, o: &Self) {
        self.abs += o.abs;
        self.sq += o.sq;
        self.count += o.count;
        self.ape += o.ape;
        self.ape_count += o.ape_count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// NaN for metrics with no eligible entries.
    pub fn finish(&self) -> Metrics {
        let div = |a: f64, n: usize| if n == 0 { f64::NAN } else { a / n as f64 };
        Metrics {
            mae: div(self.abs, self.count),
            rmse: div(self.sq, self.count).sqrt(),
            mape: 100.0 * div(self.ape, self.ape_count),
        }
    }
}

pub fn metrics(pred: &[f64], target: &[f64], mape_epsilon: f64) -> Metrics {
    let mut acc = MetricAccumulator::default();
    acc.extend(pred, target, mape_epsilon);
    acc.finish()
}

/// Per-horizon metrics plus the pool over every horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_horizon: Vec<Metrics>,
    pub overall: Metrics,
    pub windows: usize,
}

impl Evaluation {
    pub fn from_accumulators(per_horizon: &[MetricAccumulator], windows: usize) -> Self {
        let mut all = MetricAccumulator::default();
        for a in per_horizon {
            all.merge(a);
        }
        Self {
            per_horizon: per_horizon.iter().map(MetricAccumulator::finish).collect(),
            overall: all.finish(),
            windows,
        }
    }

    /// `horizon,mae,rmse,mape` with horizons from 1 and a final `all` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("horizon,mae,rmse,mape\n");
        let row = |s: &mut String, h: &str, m: &Metrics| s.push_str(&format!("{h},{},{},{}\n", m.mae, m.rmse, m.mape));
        for (h, m) in self.per_horizon.iter().enumerate() {
            row(&mut s, &(h + 1).to_string(), m);
        }
        row(&mut s, "all", &self.overall);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_element_case() {
        let m = metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0], 1.0);
        assert!((m.mae - 1.0).abs() < 1e-12);
        assert!((m.rmse - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((m.mape - 100.0 * (0.5 + 0.0 + 0.4) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction() {
        let t = [4.0, 9.0, 2.5];
        assert_eq!(metrics(&t, &t, 1.0), Metrics { mae: 0.0, rmse: 0.0, mape: 0.0 });
    }

    #[test]
    fn zero_target_only_leaves_mape() {
        let m = metrics(&[1.0, 3.0], &[0.0, 2.0], 1.0);
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.mape, 50.0);
    }

    #[test]
    fn missing_targets_skipped() {
        let m = metrics(&[1.0, 100.0], &[2.0, f64::NAN], 1.0);
        assert_eq!((m.mae, m.rmse, m.mape), (1.0, 1.0, 50.0));
        assert!(metrics(&[1.0], &[f64::NAN], 1.0).mae.is_nan());
    }

    #[test]
    fn csv_layout() {
        let mut a = vec![MetricAccumulator::default(); 2];
        a[0].extend(&[1.0], &[2.0], 1.0);
        a[1].extend(&[3.0], &[2.0], 1.0);
        let csv = Evaluation::from_accumulators(&a, 1).to_csv();
        assert_eq!(csv, "horizon,mae,rmse,mape\n1,1,1,50\n2,1,1,50\nall,1,1,50\n");
    }
}
