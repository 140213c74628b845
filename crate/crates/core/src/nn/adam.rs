use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Mlp, ParamGradient};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub base_lr: f64,
    /// Per-step multiplicative learning-rate decay.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            decay: 0.9995,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used by update number `step` (0-based).
    pub fn learning_rate(&self, step: u64) -> f64 {
        self.base_lr * self.decay.powf(step as f64)
    }
}

/// Bias-corrected Adam with exponentially decaying step size.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    first: ParamGradient,
    second: ParamGradient,
    step: u64,
}

impl AdamState {
    pub fn new(model: &Mlp, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: ParamGradient::zeros_like(model),
            second: ParamGradient::zeros_like(model),
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        self.config.learning_rate(self.step)
    }

    pub fn second_moments(&self) -> &ParamGradient {
        &self.second
    }

    /// Applies one update. A non-finite or mis-shaped gradient leaves both
    /// the model and the optimizer state untouched.
    pub fn step(&mut self, model: &mut Mlp, grad: &ParamGradient) -> Result<()> {
        if !grad.is_congruent(model) || !self.first.is_congruent(model) {
            return Err(Error::Shape("gradient does not match model parameters".into()));
        }
        if let Some((i, v)) = grad.values().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {v}; Adam update rejected at step {}",
                self.step
            )));
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let lr = self.current_lr();
        let t = (self.step + 1) as f64;
        let c1 = 1.0 - beta1.powf(t);
        let c2 = 1.0 - beta2.powf(t);

        let update = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (l, (w, b)) in model.weights_and_biases_mut().enumerate() {
            Zip::from(w)
                .and(&mut self.first.weights[l])
                .and(&mut self.second.weights[l])
                .and(&grad.weights[l])
                .for_each(update);
            Zip::from(b)
                .and(&mut self.first.biases[l])
                .and(&mut self.second.biases[l])
                .and(&grad.biases[l])
                .for_each(update);
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::array;

    fn model() -> Mlp {
        Mlp::from_parts(
            vec![array![[0.5, -0.5], [1.0, 2.0]], array![[1.0, -1.0]]],
            vec![array![0.0, 0.1], array![0.2]],
            Activation::Tanh,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut m = model();
        let before = m.flat_params();
        let mut adam = AdamState::new(&m, AdamConfig::default()).unwrap();
        let zero = ParamGradient::zeros_like(&m);
        adam.step(&mut m, &zero).unwrap();
        assert_eq!(m.flat_params(), before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut m = model();
        let before = m.flat_params();
        let mut g = ParamGradient::zeros_like(&m);
        g.weights[0] = array![[0.3, -2.0], [5.0, -1e-3]];
        g.weights[1] = array![[1.0, -1.0]];
        g.biases[0] = array![0.7, -0.7];
        g.biases[1] = array![4.0];
        let cfg = AdamConfig::default();
        let mut adam = AdamState::new(&m, cfg).unwrap();
        adam.step(&mut m, &g).unwrap();
        for ((p0, p1), gv) in before.iter().zip(m.flat_params()).zip(g.flatten()) {
            let moved = p1 - p0;
            let expected = -cfg.base_lr * gv.signum();
            assert!(((moved - expected) / expected).abs() < 1e-5, "{moved} vs {expected}");
        }
    }

    #[test]
    fn decayed_learning_rate() {
        let cfg = AdamConfig::default();
        let lr = cfg.learning_rate(1000);
        assert!((lr - 1e-3 * 0.9995f64.powi(1000)).abs() < 1e-18);
        assert!((lr - 6.0645e-4).abs() < 1e-7);
    }

    #[test]
    fn rejects_nonfinite_gradient_without_mutation() {
        let mut m = model();
        let before = m.flat_params();
        let mut adam = AdamState::new(&m, AdamConfig::default()).unwrap();
        let mut g = ParamGradient::zeros_like(&m);
        g.biases[1][0] = f64::NAN;
        assert!(matches!(adam.step(&mut m, &g), Err(Error::NonFinite(_))));
        assert_eq!(m.flat_params(), before);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn second_moments_stay_nonnegative() {
        let mut m = model();
        let mut adam = AdamState::new(&m, AdamConfig::default()).unwrap();
        for k in 0..20 {
            let mut g = ParamGradient::zeros_like(&m);
            g.weights[0][[0, 0]] = if k % 2 == 0 { -3.0 } else { 1.5 };
            adam.step(&mut m, &g).unwrap();
            assert!(adam.second_moments().values().all(|&v| v >= 0.0));
        }
        assert_eq!(adam.steps(), 20);
    }
}
