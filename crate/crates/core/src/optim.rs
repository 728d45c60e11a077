//! Named parameters and the Adam optimizer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// A trainable tensor with a stable name used by checkpoints and errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            tensor: tensor.with_requires_grad(true),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(learning_rate: f64, params: &[Param<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            learning_rate,
        }
    }

    /// One bias-corrected Adam update. Gradients are cleared afterwards.
    ///
    /// Nothing is modified if any parameter is missing its gradient.
    pub fn step(&mut self, params: &mut [Param<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::ParamMismatch(format!(
                "optimizer tracks {} tensors but {} were given",
                self.m.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.tensor.shape() != m.shape() {
                return Err(Error::ParamMismatch(format!(
                    "`{}` has shape {:?} but its moments have {:?}",
                    p.name,
                    p.tensor.shape(),
                    m.shape()
                )));
            }
            if p.tensor.grad().is_none() {
                return Err(Error::MissingGradient(p.name.clone()));
            }
        }

        self.t += 1;
        let t = self.t as i32;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let c1 = T::of(1.0 - num_traits::Float::powi(self.beta1, t));
        let c2 = T::of(1.0 - num_traits::Float::powi(self.beta2, t));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.epsilon);

        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.tensor.grad().expect("checked above").to_vec();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.tensor.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_param(value: f64) -> Vec<Param<f64>> {
        vec![Param::new("w", Tensor::new(&[1], vec![value]).unwrap())]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = scalar_param(0.0);
        let mut adam = AdamState::new(1e-3, &params);
        params[0].tensor.accumulate_grad(&[1.0]);
        adam.step(&mut params).unwrap();
        // m_hat = 1, v_hat = 1 at t = 1.
        let expected = -1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((params[0].tensor.data()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.t, 1);
        assert!(params[0].tensor.grad().is_none());
    }

    #[test]
    fn zero_gradient_leaves_params_but_counts_step() {
        let mut params = scalar_param(0.75);
        let mut adam = AdamState::new(1e-3, &params);
        for _ in 0..3 {
            params[0].tensor.accumulate_grad(&[0.0]);
            adam.step(&mut params).unwrap();
        }
        assert_eq!(params[0].tensor.data()[0], 0.75);
        assert_eq!(adam.t, 3);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut params = scalar_param(1.0);
        params.push(Param::new("bias", Tensor::zeros(&[2])));
        params[0].tensor.accumulate_grad(&[1.0]);
        let mut adam = AdamState::new(1e-3, &params);
        let err = adam.step(&mut params).unwrap_err();
        assert_eq!(err, Error::MissingGradient("bias".into()));
        assert_eq!(adam.t, 0);
        assert_eq!(params[0].tensor.data()[0], 1.0);
    }

    #[test]
    fn moments_mirror_parameter_shapes() {
        let params = vec![
            Param::<f32>::new("a", Tensor::zeros(&[2, 3, 3, 3])),
            Param::new("b", Tensor::zeros(&[2])),
        ];
        let adam = AdamState::new(1e-3, &params);
        for (p, (m, v)) in params.iter().zip(adam.m.iter().zip(&adam.v)) {
            assert_eq!(p.tensor.shape(), m.shape());
            assert_eq!(p.tensor.shape(), v.shape());
        }
    }
}
