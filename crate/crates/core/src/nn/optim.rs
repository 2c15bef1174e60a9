//! Adam and Polyak (soft) target updates.

use crate::error::{Error, Result};
use crate::nn::mlp::MlpPolicy;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    m: Vec<S>,
    v: Vec<S>,
    step: u64,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Scalar> AdamState<S> {
    /// Moment buffers for `n` parameters with β₁=0.9, β₂=0.999, ε=1e-8.
    pub fn new(n: usize) -> Self {
        Self::with_hyper(n, S::lit(0.9), S::lit(0.999), S::lit(1e-8))
    }

    pub fn with_hyper(n: usize, beta1: S, beta2: S, eps: S) -> Self {
        AdamState { m: vec![S::zero(); n], v: vec![S::zero(); n], step: 0, beta1, beta2, eps }
    }

    pub fn for_policy(policy: &MlpPolicy<S>) -> Self {
        Self::new(policy.num_params())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [S], grads: &[S], lr: S) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dims("adam parameters", self.m.len(), params.len()));
        }
        if grads.len() != params.len() {
            return Err(Error::dims("adam gradient", params.len(), grads.len()));
        }
        if !(lr > S::zero()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} refused by adam")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = S::one() - self.beta1.powi(t);
        let c2 = S::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = b1 * *m + (S::one() - b1) * g;
            *v = b2 * *v + (S::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Applies one Adam step to a network.
pub fn adam_step<S: Scalar>(policy: &mut MlpPolicy<S>, grads: &[S], state: &mut AdamState<S>, lr: S) -> Result<()> {
    state.update(policy.params_mut(), grads, lr)
}

/// `target <- (1 - tau) * target + tau * source`, elementwise.
pub fn soft_update<S: Scalar>(target: &mut MlpPolicy<S>, source: &MlpPolicy<S>, tau: S) -> Result<()> {
    if !target.congruent(source) {
        return Err(Error::ShapeMismatch("soft update between networks of different shape".into()));
    }
    if !(tau >= S::zero() && tau <= S::one()) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    let keep = S::one() - tau;
    for (t, &s) in target.params_mut().iter_mut().zip(source.params()) {
        *t = keep * *t + tau * s;
    }
    Ok(())
}
