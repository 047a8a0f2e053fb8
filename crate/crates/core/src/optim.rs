//! Adam with bias-corrected moment estimates.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Defaults `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` using the gradients in `grads`.
    ///
    /// Parameter `i` always maps to moment slot `i`; moment buffers start at
    /// zero and are allocated on first use.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(shape_err(format!(
                "adam: state tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(shape_err(format!(
                    "adam: parameter {i} has {} values, gradient {}, state {}",
                    p.len(),
                    g.len(),
                    self.first[i].len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Updates every tensor that carries a gradient buffer.
    pub fn step_tensors<'a>(
        &mut self,
        tensors: impl IntoIterator<Item = &'a mut Tensor>,
    ) -> Result<()> {
        let mut grads: Vec<Vec<f64>> = Vec::new();
        let mut params: Vec<&mut Tensor> = Vec::new();
        for t in tensors {
            if let Some(g) = t.grad() {
                grads.push(g.to_vec());
                params.push(t);
            }
        }
        let mut slices: Vec<&mut [f64]> = params.into_iter().map(|t| t.data_mut()).collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        self.step(&mut slices, &grad_refs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = AdamState::new(0.1);
        let mut p = vec![1.5, -2.0];
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        }
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02, 1e3] {
            let mut adam = AdamState::new(0.001);
            let mut p = vec![0.0];
            adam.step(&mut [&mut p], &[&[g]]).unwrap();
            let expected = -0.001 * g.signum();
            assert!((p[0] - expected).abs() < 1e-9, "g={g}: {}", p[0]);
        }
    }

    #[test]
    fn quadratic_descends_monotonically() {
        // f(w) = w^2 from w = 1 with lr = 0.1: |w| shrinks every step.
        let mut adam = AdamState::new(0.1);
        let mut w = vec![1.0];
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = 2.0 * w[0];
            adam.step(&mut [&mut w], &[&[g]]).unwrap();
            assert!(w[0].abs() < prev, "{} !< {prev}", w[0].abs());
            prev = w[0].abs();
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut adam = AdamState::new(0.1);
        let mut p = vec![0.0; 2];
        assert!(adam.step(&mut [&mut p], &[&[1.0]]).is_err());
        adam.step(&mut [&mut p], &[&[1.0, 1.0]]).unwrap();
        let mut q = vec![0.0; 3];
        assert!(adam.step(&mut [&mut q], &[&[1.0, 1.0, 1.0]]).is_err());
    }

    #[test]
    fn tensor_step_skips_untracked() {
        let mut a = Tensor::new(&[1], vec![1.0]).unwrap().with_grad();
        a.accumulate_grad(&[1.0]).unwrap();
        let mut frozen = Tensor::new(&[1], vec![1.0]).unwrap();
        let mut adam = AdamState::new(0.5);
        adam.step_tensors([&mut a, &mut frozen]).unwrap();
        assert!((a.item() - 0.5).abs() < 1e-6);
        assert_eq!(frozen.item(), 1.0);
    }
}
