use super::Parameter;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Adam {
    pub fn new(learning_rate: f32) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Applies one update to every parameter and clears the gradients.
    ///
    /// If any gradient is non-finite nothing is modified.
    pub fn step(&self, params: &mut [&mut Parameter]) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if !p.grad.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {i} (dims {:?})",
                    p.dims()
                )));
            }
        }
        for p in params.iter_mut() {
            p.step += 1;
            let t = p.step as i32;
            let correction1 = 1.0 - self.beta1.powi(t);
            let correction2 = 1.0 - self.beta2.powi(t);
            let Parameter {
                value,
                grad,
                first_moment,
                second_moment,
                ..
            } = &mut **p;
            for (((w, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .zip(first_moment.data_mut().iter_mut())
                .zip(second_moment.data_mut().iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * *g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * *g * *g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                *g = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = Parameter::new(Tensor::full(&[3], 0.5));
        Adam::new(0.1).step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.data(), &[0.5, 0.5, 0.5]);
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Parameter::new(Tensor::scalar(2.0));
        p.grad = Tensor::scalar(1.0);
        Adam::new(0.1).step(&mut [&mut p]).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction, so the step is lr / (1 + ε).
        assert!((p.value.data()[0] - 1.9).abs() < 1e-6);
        assert_eq!(p.grad.data(), &[0.0]);
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let mut p = Parameter::new(Tensor::scalar(1.0));
        let adam = Adam::new(0.05);
        for _ in 0..200 {
            let w = p.value.data()[0];
            p.grad = Tensor::scalar(2.0 * w);
            adam.step(&mut [&mut p]).unwrap();
        }
        assert!(p.value.data()[0].abs() < 1e-2, "{}", p.value.data()[0]);
        assert_eq!(p.step(), 200);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut a = Parameter::new(Tensor::scalar(1.0));
        let mut b = Parameter::new(Tensor::scalar(1.0));
        a.grad = Tensor::scalar(0.5);
        b.grad = Tensor::scalar(f32::NAN);
        let err = Adam::new(0.1).step(&mut [&mut a, &mut b]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(a.value.data(), &[1.0]);
        assert_eq!(a.step(), 0);
    }
}
