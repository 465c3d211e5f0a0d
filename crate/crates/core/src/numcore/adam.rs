use serde::{Deserialize, Serialize};

use super::{NumError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam with bias correction and decoupled weight decay.
///
/// Decay is applied as `θ ← θ − η·λ·θ` before the moment update.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        let zeros = |t: &&Tensor| Tensor::zeros(t.rows(), t.cols());
        Self {
            config,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies one update to every parameter in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<(), NumError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NumError::Dimension {
                op: "adam_step",
                left: (self.m.len(), 1),
                right: (params.len(), grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(NumError::Dimension { op: "adam_step", left: p.shape(), right: g.shape() });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                *w -= lr * weight_decay * *w;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
            if let Some(index) = p.data().iter().position(|x| !x.is_finite()) {
                return Err(NumError::NonFinite { op: "adam_step", index });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut w = Tensor::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.0]]).unwrap();
        let before = w.clone();
        let g = Tensor::zeros(2, 2);
        let mut st = AdamState::new(AdamConfig::default(), &[&w]);
        for _ in 0..5 {
            st.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so Δ = −η·g/(|g| + ε).
        let mut w = Tensor::scalar(0.5);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.001), &[&w]);
        st.step(&mut [&mut w], &[&g]).unwrap();
        let delta = w.data()[0] - 0.5;
        assert!((delta + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((delta + 0.001).abs() < 1e-10);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut w = Tensor::scalar(1.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.05), &[&w]);
        for _ in 0..200 {
            let g = w.scale(2.0);
            st.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert!(w.data()[0].abs() < 0.1, "{w:?}");
    }

    #[test]
    fn decoupled_decay_applies_before_moments() {
        let mut w = Tensor::scalar(2.0);
        let g = Tensor::scalar(0.0);
        let cfg = AdamConfig { weight_decay: 0.5, lr: 0.1, ..AdamConfig::default() };
        let mut st = AdamState::new(cfg, &[&w]);
        st.step(&mut [&mut w], &[&g]).unwrap();
        assert!((w.data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut w = Tensor::zeros(2, 2);
        let g = Tensor::zeros(2, 1);
        let mut st = AdamState::new(AdamConfig::default(), &[&w]);
        assert!(st.step(&mut [&mut w], &[&g]).is_err());
    }
}
