use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

/// Plain RMSprop without momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f32,
    pub rho: f32,
    pub eps: f32,
    /// Running mean of squared gradients, one per parameter in store order.
    pub acc: Vec<Tensor<f32>>,
}

pub const DEFAULT_LR: f32 = 2e-4;
pub const DEFAULT_RHO: f32 = 0.99;
pub const DEFAULT_EPS: f32 = 1e-8;

impl RmsProp {
    pub fn new(store: &ParamStore<f32>, lr: f32, rho: f32, eps: f32) -> Self {
        Self {
            lr,
            rho,
            eps,
            acc: store.iter().map(|p| p.value.map(|_| 0.0)).collect(),
        }
    }

    /// `s <- rho s + (1 - rho) g^2; p <- p - lr g / (sqrt(s) + eps)`.
    /// Refuses to touch anything when a gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<f32>) -> Result<()> {
        if self.acc.len() != store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "optimizer tracks {} tensors, model has {}",
                self.acc.len(),
                store.len()
            )));
        }
        for p in store.iter() {
            if let Some(i) = p.grad.first_non_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of `{}` at flat index {i}", p.name),
                });
            }
        }
        for (p, s) in store.iter_mut().zip(&mut self.acc) {
            if s.shape() != p.value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "accumulator for `{}` has shape {:?}",
                    p.name,
                    s.shape()
                )));
            }
            let grads = p.grad.data();
            for ((v, s), &g) in p.value.data_mut().iter_mut().zip(s.data_mut()).zip(grads) {
                *s = self.rho * *s + (1.0 - self.rho) * g * g;
                *v -= self.lr * g / (s.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Learning-rate reduction when the monitored loss stalls.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    pub factor: f32,
    pub patience: usize,
    pub min_delta: f32,
    pub min_lr: f32,
    pub best: f32,
    pub bad_epochs: usize,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 5,
            min_delta: 1e-4,
            min_lr: 1e-6,
            best: f32::INFINITY,
            bad_epochs: 0,
        }
    }
}

impl PlateauSchedule {
    /// Records one epoch's loss and returns the learning rate to use next.
    pub fn step(&mut self, lr: f32, loss: f32) -> f32 {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr).min(lr);
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(&[1], vec![v]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = one_param(1.5);
        let mut opt = RmsProp::new(&store, DEFAULT_LR, DEFAULT_RHO, DEFAULT_EPS);
        opt.acc[0].data_mut()[0] = 4.0;
        opt.step(&mut store).unwrap();
        assert_eq!(store.iter().next().unwrap().value.data(), &[1.5]);
        assert!((opt.acc[0].data()[0] - 3.96).abs() < 1e-6);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut store = one_param(0.0);
        let mut opt = RmsProp::new(&store, 1e-3, DEFAULT_RHO, DEFAULT_EPS);
        let mut prev = 0.0;
        let mut step = 0.0;
        for _ in 0..2000 {
            store.iter_mut().next().unwrap().grad.data_mut()[0] = 0.3;
            opt.step(&mut store).unwrap();
            let v = store.iter().next().unwrap().value.data()[0];
            step = prev - v;
            prev = v;
        }
        assert!((opt.acc[0].data()[0] - 0.09).abs() < 1e-4);
        assert!((step - 1e-3).abs() < 1e-5, "{step}");
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut store = one_param(2.0);
        let mut opt = RmsProp::new(&store, DEFAULT_LR, DEFAULT_RHO, DEFAULT_EPS);
        store.iter_mut().next().unwrap().grad.data_mut()[0] = f32::NAN;
        let err = opt.step(&mut store).unwrap_err().to_string();
        assert!(err.contains("`w`"), "{err}");
        assert_eq!(store.iter().next().unwrap().value.data(), &[2.0]);
        assert_eq!(opt.acc[0].data(), &[0.0]);
    }

    #[test]
    fn plateau_fires_at_epoch_seven() {
        let mut s = PlateauSchedule::default();
        let mut lr = 1e-3;
        let mut fired = Vec::new();
        for (epoch, loss) in [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9].into_iter().enumerate() {
            let next = s.step(lr, loss);
            if next < lr {
                fired.push(epoch + 1);
            }
            lr = next;
        }
        assert_eq!(fired, vec![7]);
        assert_eq!(lr, 5e-4);
    }

    #[test]
    fn improving_losses_keep_lr_and_constant_loss_reduces_once() {
        let mut s = PlateauSchedule::default();
        let mut lr = 1e-3;
        for i in 0..50 {
            lr = s.step(lr, 10.0 - i as f32 * 0.1);
        }
        assert_eq!(lr, 1e-3);
        let mut s = PlateauSchedule::default();
        let mut lr = 1e-3;
        for _ in 0..6 {
            lr = s.step(lr, 1.0);
        }
        assert_eq!(lr, 5e-4);
    }

    #[test]
    fn lr_floor() {
        let mut s = PlateauSchedule { patience: 1, ..Default::default() };
        let mut lr = 4e-6;
        for _ in 0..10 {
            let next = s.step(lr, 1.0);
            assert!(next <= lr && next >= s.min_lr);
            lr = next;
        }
        assert_eq!(lr, 1e-6);
    }
}
