//! Learnable parameters and the Adam update.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// A named tensor with its gradient accumulator and Adam moment state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let shape = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(shape),
            adam_m: Tensor::zeros(shape),
            adam_v: Tensor::zeros(shape),
            step_count: 0,
        }
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Drops moment estimates and the step counter, keeping the value.
    pub fn reset_optimizer(&mut self) {
        self.adam_m.fill(0.0);
        self.adam_v.fill(0.0);
        self.step_count = 0;
        self.zero_grad();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamHyper {
    pub fn with_lr(lr: f32) -> Self {
        AdamHyper { lr, ..Self::default() }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam step on `p`, then clears its gradient.
pub fn adam_step(p: &mut Parameter, hyper: &AdamHyper) -> Result<()> {
    if !p.grad.all_finite() {
        return Err(Error::NonFinite(format!("gradient of parameter {}", p.name)));
    }
    p.step_count += 1;
    let t = p.step_count as i32;
    let (b1, b2) = (hyper.beta1 as f64, hyper.beta2 as f64);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let values = p.value.data_mut().iter_mut();
    let moments = p.adam_m.data_mut().iter_mut().zip(p.adam_v.data_mut().iter_mut());
    for ((value, (m, v)), &g) in values.zip(moments).zip(p.grad.data()) {
        let g = g as f64;
        let m_new = b1 * *m as f64 + (1.0 - b1) * g;
        let v_new = b2 * *v as f64 + (1.0 - b2) * g * g;
        *m = m_new as f32;
        *v = v_new as f32;
        let m_hat = m_new / bc1;
        let v_hat = v_new / bc2;
        *value = (*value as f64 - hyper.lr as f64 * m_hat / (v_hat.sqrt() + hyper.epsilon as f64)) as f32;
    }
    p.zero_grad();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Parameter {
        Parameter::new("p", Tensor::full([1, 1, 1, 1], v))
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = Parameter::new("w", Tensor::full([2, 3, 1, 1], 0.25));
        let before = p.value.clone();
        adam_step(&mut p, &AdamHyper::default()).unwrap();
        assert_eq!(p.value, before);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_matches_analytic_value() {
        let mut p = scalar(1.0);
        p.grad.fill(1.0);
        adam_step(&mut p, &AdamHyper::with_lr(0.001)).unwrap();
        let expect = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((p.value.data()[0] as f64 - expect).abs() < 1e-7);
        assert!(p.grad.data().iter().all(|&g| g == 0.0), "grad cleared after step");
    }

    #[test]
    fn constant_gradient_moves_lr_per_step() {
        let mut p = scalar(1.0);
        for _ in 0..2 {
            p.grad.fill(1.0);
            adam_step(&mut p, &AdamHyper::with_lr(0.001)).unwrap();
        }
        assert!((p.value.data()[0] - 0.998).abs() < 1e-6);
        assert_eq!(p.step_count, 2);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut p = scalar(1.0);
        p.grad.fill(f32::NAN);
        assert!(matches!(
            adam_step(&mut p, &AdamHyper::default()),
            Err(Error::NonFinite(_))
        ));
    }
}
