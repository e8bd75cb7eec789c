use super::network::Network;
use super::tensor::DenseTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Learning-rate schedule: linear warm-up over `warmup_steps`, then a
/// step decay by `decay_factor` at each epoch listed in `decay_epochs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub warmup_steps: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            warmup_steps: 0,
            decay_epochs: Vec::new(),
            decay_factor: 0.1,
        }
    }
}

impl Schedule {
    /// Multiplier on the base rate at optimizer step `step` (0-based) in `epoch`.
    pub fn factor(&self, step: u64, epoch: usize) -> f64 {
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            (step as f64 / self.warmup_steps as f64).min(1.0)
        };
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        warm * self.decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: Schedule,
    step: u64,
    m: Vec<DenseTensor>,
    v: Vec<DenseTensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, schedule: Schedule) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be >= 0, got {lr}")));
        }
        Ok(OptimizerState {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, Schedule::default())
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr, Schedule::default())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn effective_lr(&self, epoch: usize) -> f64 {
        self.lr * self.schedule.factor(self.step, epoch)
    }

    /// Apply one update. `names` label parameters in diagnostics.
    pub fn step(
        &mut self,
        params: &mut [&mut DenseTensor],
        names: &[String],
        grads: &[DenseTensor],
        epoch: usize,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim(format!(
                    "gradient shape {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::numeric(format!(
                    "non-finite gradient for parameter {name}"
                )));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| DenseTensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        }
        let lr = self.effective_lr(epoch);
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        *pv -= lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Convenience wrapper updating every parameter of `net`.
    pub fn step_network(
        &mut self,
        net: &mut Network,
        prefix: &str,
        grads: &[DenseTensor],
        epoch: usize,
    ) -> Result<()> {
        let names = net.param_names(prefix);
        let mut params = net.params_mut();
        self.step(&mut params, &names, grads, epoch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        let mut p = DenseTensor::vector(vec![1.0]);
        opt.step(&mut [&mut p], &[], &[DenseTensor::vector(vec![1.0])], 0)
            .unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = OptimizerState::adam(0.01).unwrap();
        let mut p = DenseTensor::vector(vec![1.0, -2.0]);
        let g = DenseTensor::vector(vec![0.3, -5.0]);
        opt.step(&mut [&mut p], &[], &[g], 0).unwrap();
        // step 1: mhat = g, vhat = g^2, update = lr * g / (|g| + eps)
        let expect0 = 1.0 - 0.01 * 0.3 / (0.3 + 1e-8);
        let expect1 = -2.0 + 0.01 * 5.0 / (5.0 + 1e-8);
        assert!((p.data()[0] - expect0).abs() < 1e-15);
        assert!((p.data()[1] - expect1).abs() < 1e-15);
    }

    #[test]
    fn warmup_start_leaves_params() {
        let sched = Schedule {
            warmup_steps: 10,
            ..Schedule::default()
        };
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.5, sched).unwrap();
        assert_eq!(opt.effective_lr(0), 0.0);
        let mut p = DenseTensor::vector(vec![1.0]);
        opt.step(&mut [&mut p], &[], &[DenseTensor::vector(vec![2.0])], 0)
            .unwrap();
        assert_eq!(p.data(), &[1.0]);
        assert!((opt.effective_lr(0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn decay_applies_at_epochs() {
        let sched = Schedule {
            warmup_steps: 0,
            decay_epochs: vec![2, 5],
            decay_factor: 0.1,
        };
        assert_eq!(sched.factor(100, 1), 1.0);
        assert!((sched.factor(100, 2) - 0.1).abs() < 1e-15);
        assert!((sched.factor(100, 7) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        let mut p = DenseTensor::vector(vec![1.0]);
        let err = opt
            .step(
                &mut [&mut p],
                &["enc.0.weight".to_string()],
                &[DenseTensor::vector(vec![f64::NAN])],
                0,
            )
            .unwrap_err();
        assert!(err.to_string().contains("enc.0.weight"));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn negative_lr_rejected() {
        assert!(OptimizerState::sgd(-1e-3).is_err());
        assert!(OptimizerState::sgd(f64::NAN).is_err());
    }
}
