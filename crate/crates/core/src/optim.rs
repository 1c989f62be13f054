//! Adam with exponential learning-rate annealing.

use crate::tensor::{GradStore, ParamStore, Scalar, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient for `{param}` at step {step}")]
    NonFinite { param: String, step: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub anneal_base: f64,
    pub anneal_steps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 2e-3,
            beta1: 0.9,
            beta2: 0.9,
            epsilon: 1e-12,
            anneal_base: 0.75,
            anneal_steps: 5000.0,
        }
    }
}

impl AdamConfig {
    /// `alpha · base^(t / steps)`, continuous in `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        self.alpha * self.anneal_base.powf(t as f64 / self.anneal_steps)
    }
}

/// Moment estimates for every parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Tensor::zeros(p.shape())).collect();
        OptimState { config, m: zeros(), v: zeros(), t: 0 }
    }

    /// One Adam update at the current learning rate. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &GradStore<T>) -> Result<(), OptimError> {
        for (id, g) in grads.iter() {
            if !g.all_finite() {
                return Err(OptimError::NonFinite { param: params.name(id).to_string(), step: self.t });
            }
        }
        let c = self.config;
        let lr = c.lr_at(self.t);
        self.t += 1;
        let correct1 = 1.0 - c.beta1.powf(self.t as f64);
        let correct2 = 1.0 - c.beta2.powf(self.t as f64);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (nb1, nb2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let (inv1, inv2) = (T::of(1.0 / correct1), T::of(1.0 / correct2));
        let (lr, eps) = (T::of(lr), T::of(c.epsilon));
        for ((id, g), (m, v)) in grads.iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let theta = params.get_mut(id).data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for k in 0..theta.len() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + nb1 * gk;
                v[k] = b2 * v[k] + nb2 * gk * gk;
                let m_hat = m[k] * inv1;
                let v_hat = v[k] * inv2;
                theta[k] = theta[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(config: AdamConfig) -> (ParamStore<f64>, OptimState<f64>) {
        let mut store = ParamStore::new();
        store.add("theta", Tensor::scalar(0.0));
        let state = OptimState::new(config, &store);
        (store, state)
    }

    fn grad(store: &ParamStore<f64>, g: f64) -> GradStore<f64> {
        let mut grads = GradStore::zeros_like(store);
        let id = store.id("theta").unwrap();
        *grads.get_mut(id) = Tensor::scalar(g);
        grads
    }

    fn theta(store: &ParamStore<f64>) -> f64 {
        store.get(store.id("theta").unwrap()).data()[0]
    }

    #[test]
    fn schedule_values() {
        let c = AdamConfig::default();
        assert!((c.lr_at(0) - 2e-3).abs() < 1e-12);
        assert!((c.lr_at(5000) - 1.5e-3).abs() < 1e-12);
        assert!((c.lr_at(10_000) - 1.125e-3).abs() < 1e-12);
        assert!((c.lr_at(50_000) - 2e-3 * 0.75f64.powi(10)).abs() < 1e-12);
        assert!((c.lr_at(50_000) / c.lr_at(0) - 0.0563).abs() < 1e-4);
        for t in [0u64, 1, 17, 4999, 5000, 12345] {
            assert!(c.lr_at(t + 1) < c.lr_at(t));
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut store, mut state) = scalar_problem(AdamConfig::default());
        let g = grad(&store, 0.0);
        state.step(&mut store, &g).unwrap();
        assert_eq!(theta(&store), 0.0);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let c = AdamConfig::default();
        let (mut store, mut state) = scalar_problem(c);
        let g = grad(&store, 1.0);
        state.step(&mut store, &g).unwrap();
        let expected = -c.lr_at(0) / (1.0 + c.epsilon);
        assert!((theta(&store) - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_update_tracks_learning_rate() {
        let c = AdamConfig::default();
        for g0 in [1e-3, 0.5, -7.0, 300.0] {
            let (mut store, mut state) = scalar_problem(c);
            let g = grad(&store, g0);
            for _ in 0..200 {
                let before = theta(&store);
                let lr = c.lr_at(state.t);
                state.step(&mut store, &g).unwrap();
                let delta = (theta(&store) - before).abs();
                assert!((delta - lr).abs() < 1e-9 * lr.max(1.0), "{g0}: {delta} vs {lr}");
            }
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let (mut store, mut state) = scalar_problem(AdamConfig::default());
        let g = grad(&store, f64::NAN);
        let err = state.step(&mut store, &g).unwrap_err();
        assert_eq!(err, OptimError::NonFinite { param: "theta".into(), step: 0 });
        assert_eq!(theta(&store), 0.0);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let (mut store, mut state) = scalar_problem(AdamConfig::default());
            for k in 0..20 {
                let g = grad(&store, (k as f64).sin());
                state.step(&mut store, &g).unwrap();
            }
            theta(&store)
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    /// Steps after a gradient spike until the update size is back, and
    /// stays, within 10% of its pre-spike level.
    fn recovery_steps(beta2: f64) -> usize {
        let config = AdamConfig { beta2, anneal_base: 1.0, ..AdamConfig::default() };
        let (mut store, mut state) = scalar_problem(config);
        let (one, spike) = (grad(&store, 1.0), grad(&store, 100.0));
        let mut level = 0.0;
        for _ in 0..20_000 {
            let before = theta(&store);
            state.step(&mut store, &one).unwrap();
            level = (theta(&store) - before).abs();
        }
        state.step(&mut store, &spike).unwrap();
        let mut last_outside = 0;
        for k in 1..=20_000 {
            let before = theta(&store);
            state.step(&mut store, &one).unwrap();
            if ((theta(&store) - before).abs() - level).abs() > 0.1 * level {
                last_outside = k;
            }
        }
        last_outside + 1
    }

    #[test]
    fn low_beta2_recovers_from_spikes_faster() {
        let fast = recovery_steps(0.9);
        let slow = recovery_steps(0.999);
        assert!(fast < slow, "{fast} vs {slow}");
        assert!(fast < 100);
    }
}
