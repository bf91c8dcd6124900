use serde::{Deserialize, Serialize};

use super::tensor::Parameters;
use crate::scalar::{lit, Scalar};

/// Adaptive-moment optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over any [`Parameters`] container.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: Parameters<T>>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.named_params().iter().map(|(_, t)| t.len()).collect();
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (lit::<T>(c.beta1), lit::<T>(c.beta2));
        let bc1 = lit::<T>(1.0 - c.beta1.powi(self.step));
        let bc2 = lit::<T>(1.0 - c.beta2.powi(self.step));
        let lr = lit::<T>(c.lr);
        let eps = lit::<T>(c.eps);
        let grads = grads.named_params();
        for (((_, p), (_, g)), (m, v)) in params
            .named_params_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * sign(g).
        let mut p = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]);
        let g = Tensor::<f64>::from_vec(&[3], vec![0.3, -4.0, 1e-3]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.01), &p);
        opt.step(&mut p, &g);
        let expect = [0.99, -1.99, 0.49];
        for (a, b) in p.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Tensor::<f64>::from_vec(&[2], vec![3.0, -1.0]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), &p);
        for _ in 0..2000 {
            let g = Tensor::from_vec(&[2], vec![2.0 * (p.data[0] - 1.0), 2.0 * (p.data[1] + 2.0)]);
            opt.step(&mut p, &g);
        }
        assert!((p.data[0] - 1.0).abs() < 1e-3);
        assert!((p.data[1] + 2.0).abs() < 1e-3);
    }
}
