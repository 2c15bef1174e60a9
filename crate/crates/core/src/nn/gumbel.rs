//! Gumbel-Softmax relaxation of categorical sampling.
//!
//! The returned sample is `softmax((logits + g) / temperature)` with `g`
//! i.i.d. standard Gumbel. Gradients flow through the softmax with the noise
//! held fixed, see [`gumbel_softmax_backward`].

use rand::distributions::{Distribution, Open01};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::mlp::softmax_in_place;
use crate::scalar::Scalar;

/// One standard Gumbel draw, `-ln(-ln u)` with `u` uniform on (0, 1).
pub fn sample_gumbel<S: Scalar, R: Rng + ?Sized>(rng: &mut R) -> S {
    let u: f64 = Open01.sample(rng);
    S::lit(-(-u.ln()).ln())
}

/// Relaxed sample for fixed noise.
pub fn gumbel_softmax_with_noise<S: Scalar>(logits: &[S], noise: &[S], temperature: S) -> Result<Vec<S>> {
    if !(temperature > S::zero()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    if noise.len() != logits.len() {
        return Err(Error::dims("gumbel noise", logits.len(), noise.len()));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("gumbel-softmax logits".into()));
    }
    let mut y: Vec<S> = logits.iter().zip(noise).map(|(&l, &g)| (l + g) / temperature).collect();
    softmax_in_place(&mut y);
    Ok(y)
}

pub fn gumbel_softmax_sample<S: Scalar, R: Rng + ?Sized>(logits: &[S], temperature: S, rng: &mut R) -> Result<Vec<S>> {
    let noise: Vec<S> = (0..logits.len()).map(|_| sample_gumbel(rng)).collect();
    gumbel_softmax_with_noise(logits, &noise, temperature)
}

/// Pulls a gradient on the relaxed sample `y` back onto the logits.
pub fn gumbel_softmax_backward<S: Scalar>(y: &[S], dy: &[S], temperature: S) -> Vec<S> {
    let dot: S = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    y.iter().zip(dy).map(|(&p, &g)| p * (g - dot) / temperature).collect()
}
