//! Adam with L2 weight decay, and cosine-annealed learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply weight decay directly to the parameter (AdamW) instead of
    /// adding `weight_decay·param` to the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            decoupled: false,
        }
    }
}

/// Optimizer state: first and second moments per parameter, in the order
/// the parameters are passed to [`Adam::step`].
#[derive(Debug, Clone)]
pub struct Adam<T: Element = f32> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    fn check(&mut self, params: &[&mut Param<T>], grads: &[&Tensor<T>], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            for p in params {
                self.m.push(p.value.zeros_like());
                self.v.push(p.value.zeros_like());
            }
        } else if self.m.len() != params.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, step got {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if g.shape() != p.value.shape() || m.shape() != p.value.shape() {
                return Err(Error::shape(format!(
                    "gradient for {} has shape {:?}, parameter is {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
            g.validate_finite(&format!("gradient of {}", p.name))?;
        }
        Ok(())
    }

    /// One update. All inputs are validated before any parameter changes.
    pub fn step(&mut self, params: &mut [&mut Param<T>], grads: &[&Tensor<T>], lr: f64) -> Result<()> {
        self.check(params, grads, lr)?;
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            decoupled,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let wd = if p.decay { weight_decay } else { 0.0 };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let mut theta = w.as_f64();
                let mut grad = g[j].as_f64();
                if decoupled {
                    theta -= lr * wd * theta;
                } else {
                    grad += wd * theta;
                }
                let mj = beta1 * m[j].as_f64() + (1.0 - beta1) * grad;
                let vj = beta2 * v[j].as_f64() + (1.0 - beta2) * grad * grad;
                m[j] = T::from_f64(mj);
                v[j] = T::from_f64(vj);
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                theta -= lr * m_hat / (v_hat.sqrt() + eps);
                *w = T::from_f64(theta);
            }
        }
        Ok(())
    }
}

/// `lr(step) = eta_min + ½(base_lr − eta_min)(1 + cos(π·step/total_steps))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub eta_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, total_steps: u64) -> Self {
        CosineSchedule {
            base_lr,
            eta_min: 0.0,
            total_steps,
        }
    }

    /// Steps outside `[0, total_steps]` are clamped with a warning.
    pub fn lr(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.base_lr;
        }
        let step = if step > self.total_steps {
            log::warn!(
                "schedule step {step} beyond horizon {}, clamping",
                self.total_steps
            );
            self.total_steps
        } else {
            step
        };
        let progress = step as f64 / self.total_steps as f64;
        self.eta_min
            + 0.5 * (self.base_lr - self.eta_min) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

pub fn cosine_lr(schedule: &CosineSchedule, step: u64) -> f64 {
    schedule.lr(step)
}

/// Learning rate as a function of the global batch step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// Annealed every batch over `epochs × batches_per_epoch` steps.
    Cosine { schedule: CosineSchedule },
    /// Annealed once per epoch; `schedule.total_steps` counts epochs.
    CosineByEpoch {
        schedule: CosineSchedule,
        steps_per_epoch: u64,
    },
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { schedule } => schedule.lr(step),
            LrSchedule::CosineByEpoch {
                schedule,
                steps_per_epoch,
            } => schedule.lr(step / steps_per_epoch.max(1)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, decay: bool) -> Param<f64> {
        Param {
            name: "theta".into(),
            value: Tensor::from_vec(&[1], vec![v]).unwrap(),
            decay,
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_param(0.0, true);
        let mut adam = Adam::new(AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        adam.step(&mut [&mut p], &[&g], 0.001).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = scalar_param(0.7, true);
        let mut adam = Adam::new(AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let g = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[&g], 0.01).unwrap();
        }
        assert_eq!(p.value.data()[0], 0.7);
        assert_eq!(adam.moments().0[0].data()[0], 0.0);
        assert_eq!(adam.moments().1[0].data()[0], 0.0);
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut p = scalar_param(1.0, true);
        let mut adam = Adam::new(AdamConfig::default());
        let g = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        adam.step(&mut [&mut p], &[&g], 0.001).unwrap();
        assert!(p.value.data()[0] < 1.0);

        let mut exempt = scalar_param(1.0, false);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut exempt], &[&g], 0.001).unwrap();
        assert_eq!(exempt.value.data()[0], 1.0);
    }

    #[test]
    fn rejects_bad_gradients_without_mutating() {
        let mut p = scalar_param(1.0, true);
        let mut adam = Adam::new(AdamConfig::default());
        let nan = Tensor::from_vec(&[1], vec![f64::NAN]).unwrap();
        let err = adam.step(&mut [&mut p], &[&nan], 0.001).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("theta")));
        assert_eq!(p.value.data()[0], 1.0);
        assert_eq!(adam.steps(), 0);
        let wrong = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            adam.step(&mut [&mut p], &[&wrong], 0.001),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn quadratic_converges() {
        let mut p = scalar_param(1.0, false);
        let mut adam = Adam::new(AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..200 {
            let g = Tensor::from_vec(&[1], vec![2.0 * p.value.data()[0]]).unwrap();
            adam.step(&mut [&mut p], &[&g], 0.1).unwrap();
        }
        assert!(p.value.data()[0].abs() < 1e-3, "{}", p.value.data()[0]);
    }

    #[test]
    fn update_magnitude_is_scale_invariant() {
        for scale in [1e-3, 1.0, 1e3] {
            let mut p = scalar_param(0.0, false);
            let mut adam = Adam::new(AdamConfig {
                weight_decay: 0.0,
                ..Default::default()
            });
            let g = Tensor::from_vec(&[1], vec![scale]).unwrap();
            let mut last = 0.0;
            for _ in 0..2000 {
                let before = p.value.data()[0];
                adam.step(&mut [&mut p], &[&g], 0.01).unwrap();
                last = before - p.value.data()[0];
            }
            assert!((last - 0.01).abs() < 1e-6, "scale {scale}: step {last}");
        }
    }

    #[test]
    fn cosine_endpoints() {
        let s = CosineSchedule::new(0.001, 1000);
        assert_eq!(s.lr(0), 0.001);
        assert_eq!(s.lr(1000), 0.0);
        assert_eq!(s.lr(500), 0.0005);
        assert_eq!(s.lr(5000), 0.0);
        let mut prev = f64::INFINITY;
        for step in 0..=1000 {
            let lr = cosine_lr(&s, step);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn per_epoch_schedule_is_piecewise_constant() {
        let sched = LrSchedule::CosineByEpoch {
            schedule: CosineSchedule::new(0.001, 4),
            steps_per_epoch: 10,
        };
        assert_eq!(sched.lr(0), sched.lr(9));
        assert!(sched.lr(10) < sched.lr(9));
        assert_eq!(sched.lr(40), 0.0);
    }
}
