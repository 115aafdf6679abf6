//! Adam with bias correction and the linear learning-rate decay used in training.

use crate::error::{Error, Result};
use crate::field::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Linear decay from `lr_start` at iteration 0 to `lr_end` at `total_iters`,
/// held at `lr_end` afterwards.
pub fn lr_at(iter: usize, total_iters: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total_iters == 0 || iter >= total_iters {
        return if total_iters == 0 && iter == 0 { lr_start } else { lr_end };
    }
    let f = iter as f64 / total_iters as f64;
    lr_start + (lr_end - lr_start) * f
}

/// First and second moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update over parameter groups laid out back to back.
    /// Gradients are checked for finiteness before anything changes.
    pub fn step(&mut self, groups: &mut [(&mut [T], &[T])], lr: f64, cfg: &AdamConfig) -> Result<()> {
        let total: usize = groups.iter().map(|(p, _)| p.len()).sum();
        if total != self.m.len() || groups.iter().any(|(p, g)| p.len() != g.len()) {
            return Err(Error::domain("parameter and gradient shapes do not match the optimizer"));
        }
        for (_, g) in groups.iter() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient at index {i}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let mut k = 0;
        for (params, grads) in groups.iter_mut() {
            for (p, g) in params.iter_mut().zip(grads.iter()) {
                let g = g.f64();
                let m = cfg.beta1 * self.m[k].f64() + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * self.v[k].f64() + (1.0 - cfg.beta2) * g * g;
                self.m[k] = T::of(m);
                self.v[k] = T::of(v);
                let update = lr * (m / bc1) / ((v / bc2).sqrt() + cfg.epsilon);
                *p = T::of(p.f64() - update);
                k += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(lr_at(0, 100_000, 5e-4, 5e-5), 5e-4);
        assert!((lr_at(100_000, 100_000, 5e-4, 5e-5) - 5e-5).abs() < 1e-20);
        assert!((lr_at(50_000, 100_000, 5e-4, 5e-5) - 2.75e-4).abs() < 1e-18);
        assert_eq!(lr_at(200_000, 100_000, 5e-4, 5e-5), 5e-5);
    }

    #[test]
    fn first_step_moves_by_lr_over_one_plus_eps() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::<f64>::new(1);
        let mut p = [1.0];
        state.step(&mut [(&mut p, &[1.0])], 5e-4, &cfg).unwrap();
        // m_hat = 1, v_hat = 1.
        let want = 1.0 - 5e-4 / (1.0 + 1e-7);
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::<f64>::new(2);
        let mut p = [0.5, -0.5];
        state.step(&mut [(&mut p, &[1.0, 2.0])], 1e-3, &cfg).unwrap();
        let (m0, v0, p0) = (state.m.clone(), state.v.clone(), p);
        let mut state2 = state.clone();
        let mut p2 = p0;
        state2.step(&mut [(&mut p2, &[0.0, 0.0])], 0.0, &cfg).unwrap();
        assert_eq!(p2, p0);
        for i in 0..2 {
            assert!((state2.m[i] - 0.9 * m0[i]).abs() < 1e-15);
            assert!((state2.v[i] - 0.999 * v0[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_gradient_is_rejected_without_side_effects() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::<f32>::new(2);
        let mut p = [1.0f32, 2.0];
        let err = state.step(&mut [(&mut p, &[0.1, f32::NAN])], 1e-3, &cfg);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn groups_share_one_moment_buffer() {
        let cfg = AdamConfig::default();
        let mut joint = AdamState::<f64>::new(3);
        let (mut a, mut b) = ([1.0, 2.0], [3.0]);
        joint.step(&mut [(&mut a, &[0.1, 0.2]), (&mut b, &[0.3])], 1e-2, &cfg).unwrap();
        let mut single = AdamState::<f64>::new(3);
        let mut c = [1.0, 2.0, 3.0];
        single.step(&mut [(&mut c, &[0.1, 0.2, 0.3])], 1e-2, &cfg).unwrap();
        assert_eq!([a[0], a[1], b[0]], c);
    }
}
