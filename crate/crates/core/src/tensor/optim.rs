use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::{Error, Result};

/// SGD with momentum, coupled weight decay and a poly learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub poly_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.005,
            poly_power: 0.9,
            momentum: 0.9,
            weight_decay: 1e-4,
            total_steps: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// `base_lr * (1 - step / total_steps)^power`, clamped at zero past the end.
    pub fn lr(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        let frac = 1.0 - step as f64 / self.total_steps as f64;
        self.base_lr * frac.powf(self.poly_power)
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: OptimizerConfig,
}

impl Sgd {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// One update of every non-frozen parameter: `v <- m v + g + wd θ; θ <- θ - lr v`.
    /// Returns the learning rate that was applied.
    pub fn step(&self, params: &mut ParamStore, step: usize) -> f64 {
        let lr = self.config.lr(step);
        let (m, wd) = (self.config.momentum, self.config.weight_decay);
        for p in params.iter_mut() {
            if p.frozen {
                continue;
            }
            let grad = p.tensor.grad.take().expect("parameter gradient buffer");
            let theta = p.tensor.data_mut();
            for ((t, v), g) in theta.iter_mut().zip(p.momentum_buffer.iter_mut()).zip(&grad) {
                *v = m * *v + g + wd * *t;
                *t -= lr * *v;
            }
            p.tensor.grad = Some(grad);
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Init;
    use rand::SeedableRng;

    #[test]
    fn poly_schedule_endpoints() {
        let cfg = OptimizerConfig {
            total_steps: 100,
            ..Default::default()
        };
        assert_eq!(cfg.lr(0), 0.005);
        assert_eq!(cfg.lr(100), 0.0);
        assert_eq!(cfg.lr(250), 0.0);
        let mid = cfg.lr(50);
        assert!((mid - 0.005 * 0.5f64.powf(0.9)).abs() < 1e-15);
    }

    #[test]
    fn plain_step_subtracts_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.add("w", &[3], Init::Ones, &mut rng).unwrap();
        store.accumulate_grad(id, &[0.5, -1.0, 2.0]);
        let sgd = Sgd::new(OptimizerConfig {
            base_lr: 1.0,
            poly_power: 0.9,
            momentum: 0.0,
            weight_decay: 0.0,
            total_steps: 10,
        })
        .unwrap();
        sgd.step(&mut store, 0);
        assert_eq!(store.get(id).tensor.data(), &[0.5, 2.0, -1.0]);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let a = store.add("a", &[2], Init::Ones, &mut rng).unwrap();
        let b = store.add("b", &[2], Init::Ones, &mut rng).unwrap();
        store.accumulate_grad(a, &[1.0, 1.0]);
        store.accumulate_grad(b, &[1.0, 1.0]);
        store.freeze_except(|n| n == "b");
        let sgd = Sgd::new(OptimizerConfig { total_steps: 5, ..Default::default() }).unwrap();
        sgd.step(&mut store, 0);
        assert_eq!(store.get(a).tensor.data(), &[1.0, 1.0]);
        assert!(store.get(b).tensor.data()[0] < 1.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            OptimizerConfig { base_lr: 0.0, ..Default::default() },
            OptimizerConfig { momentum: 1.0, ..Default::default() },
            OptimizerConfig { weight_decay: -1.0, ..Default::default() },
            OptimizerConfig { total_steps: 0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
