use crate::scalar::Scalar;
use crate::tensor::ParamRegistry;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.002, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter, aligned with registry order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(reg: &ParamRegistry<T>) -> Self {
        let zeros = || reg.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        Self { m: zeros(), v: zeros(), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update from the accumulated gradients, which are
    /// then zeroed.
    pub fn step(&mut self, reg: &mut ParamRegistry<T>, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let (one, lr, eps) = (T::one(), T::of(cfg.lr), T::of(cfg.eps));
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        for (k, (_, p)) in reg.iter_mut().enumerate() {
            let (data, grad) = p.data_and_grad_mut();
            let Some(grad) = grad else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
                grad[i] = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn reg(v: f64) -> ParamRegistry<f64> {
        let mut r = ParamRegistry::new();
        r.insert("x", Tensor::scalar(v)).unwrap();
        r
    }

    fn set_grad(r: &mut ParamRegistry<f64>, g: f64) {
        r.get_mut("x").unwrap().grad_mut().unwrap()[0] = g;
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.01] {
            let mut r = reg(1.0);
            let mut s = AdamState::new(&r);
            set_grad(&mut r, g);
            let cfg = AdamConfig::default();
            s.step(&mut r, &cfg);
            let x = r.get("x").unwrap();
            let want = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((x.data()[0] - want).abs() < 1e-15);
            assert_eq!(x.grad().unwrap()[0], 0.0);
        }
    }

    #[test]
    fn zero_grad_leaves_parameter() {
        let mut r = reg(0.25);
        let mut s = AdamState::new(&r);
        s.step(&mut r, &AdamConfig::default());
        assert_eq!(r.get("x").unwrap().data()[0], 0.25);
    }

    #[test]
    fn quadratic_two_steps_closed_form() {
        // f(x) = (x - 3)^2, grad 2(x - 3).
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut r = reg(0.0);
        let mut s = AdamState::new(&r);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 2.0 * (x - 3.0);
            set_grad(&mut r, g);
            s.step(&mut r, &cfg);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((r.get("x").unwrap().data()[0] - x).abs() < 1e-12);
        }
        assert_eq!(s.step_count(), 2);
    }
}
