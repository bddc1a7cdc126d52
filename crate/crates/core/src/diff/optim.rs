use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A tensor value with an accumulated gradient of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(value: Tensor, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter {
            value,
            grad,
            trainable,
        }
    }

    pub fn accumulate(&mut self, g: &Tensor) {
        self.grad.add_assign(g);
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Momentum SGD with L2 weight decay:
/// `v = momentum * v + (grad + weight_decay * theta)`, `theta -= lr * v`.
///
/// Velocity buffers are matched to parameters by position, so every call to
/// [`Sgd::step`] must pass the same parameter list in the same order.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(lr) || !ok(momentum) || !ok(weight_decay) {
            return Err(Error::Config(format!(
                "sgd: lr={lr}, momentum={momentum}, weight_decay={weight_decay} must be finite and >= 0"
            )));
        }
        Ok(Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    /// Applies one update and clears every gradient. If any trainable gradient
    /// is non-finite nothing is modified and the error is returned.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        if let Some(i) = params
            .iter()
            .position(|p| p.trainable && !p.grad.is_finite())
        {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        for (p, vel) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if p.trainable {
                let v = vel.get_or_insert_with(|| Tensor::zeros(p.value.shape().to_vec()));
                let theta = p.value.data_mut();
                for ((t, g), vv) in theta.iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                    *vv = self.momentum * *vv + (g + self.weight_decay * *t);
                    *t -= self.lr * *vv;
                }
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, g: f64, trainable: bool) -> Parameter {
        let mut p = Parameter::new(Tensor::scalar(v), trainable);
        p.grad = Tensor::scalar(g);
        p
    }

    #[test]
    fn plain_step() {
        let mut p = scalar_param(1.0, 2.0, true);
        Sgd::new(0.1, 0.0, 0.0).unwrap().step(&mut [&mut p]).unwrap();
        assert!((p.value.item() - 0.8).abs() < 1e-15);
        assert_eq!(p.grad.item(), 0.0);
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = scalar_param(1.5, 0.0, true);
        Sgd::new(0.1, 0.9, 0.0).unwrap().step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.item(), 1.5);
    }

    #[test]
    fn frozen_parameter_untouched() {
        let mut p = scalar_param(1.0, 5.0, false);
        Sgd::new(0.1, 0.9, 0.1).unwrap().step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.item(), 1.0);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = scalar_param(0.0, 1.0, true);
        let mut opt = Sgd::new(1.0, 0.5, 0.0).unwrap();
        opt.step(&mut [&mut p]).unwrap();
        p.grad = Tensor::scalar(1.0);
        opt.step(&mut [&mut p]).unwrap();
        // v1 = 1, v2 = 1.5
        assert_eq!(p.value.item(), -2.5);
    }

    #[test]
    fn non_finite_gradient_aborts_whole_group() {
        let mut a = scalar_param(1.0, 1.0, true);
        let mut b = scalar_param(1.0, f64::NAN, true);
        let err = Sgd::new(0.1, 0.0, 0.0)
            .unwrap()
            .step(&mut [&mut a, &mut b])
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(a.value.item(), 1.0);
        assert_eq!(a.grad.item(), 1.0);
    }
}
