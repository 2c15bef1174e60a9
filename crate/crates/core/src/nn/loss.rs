//! Supervised losses over partitioned network outputs.

use crate::error::{Error, Result};
use crate::nn::mlp::{Head, HeadKind};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

impl LossKind {
    pub fn tag(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Mse => "mse",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "cross_entropy" | "ce" => Some(LossKind::CrossEntropy),
            "mse" => Some(LossKind::Mse),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Label<'a, S> {
    /// One class index per softmax head, in head order.
    Classes(&'a [usize]),
    /// Dense target of the full output length.
    Target(&'a [S]),
}

fn softmax_heads(heads: &[Head]) -> impl Iterator<Item = &Head> {
    heads.iter().filter(|h| h.kind == HeadKind::Softmax)
}

/// Loss and its gradient with respect to the (post-head) network output.
///
/// Cross-entropy is summed over softmax groups. MSE is the mean squared
/// error over the whole output; with class labels the target is the one-hot
/// encoding of each softmax group (every head must then be a softmax group).
pub fn loss_and_grad<S: Scalar>(kind: LossKind, heads: &[Head], output: &[S], label: Label<'_, S>) -> Result<(S, Vec<S>)> {
    let n = output.len();
    let mut grad = vec![S::zero(); n];
    match (kind, label) {
        (LossKind::CrossEntropy, Label::Classes(classes)) => {
            let groups: Vec<&Head> = softmax_heads(heads).collect();
            if classes.len() != groups.len() {
                return Err(Error::dims("class labels", groups.len(), classes.len()));
            }
            let mut loss = S::zero();
            for (h, &c) in groups.iter().zip(classes) {
                if c >= h.len {
                    return Err(Error::LabelOutOfRange { label: c, len: h.len });
                }
                let p = output[h.offset + c].max(S::min_positive_value());
                loss -= p.ln();
                grad[h.offset + c] = -S::one() / p;
            }
            Ok((loss, grad))
        }
        (LossKind::CrossEntropy, Label::Target(_)) => {
            Err(Error::InvalidArgument("cross-entropy needs class labels".into()))
        }
        (LossKind::Mse, Label::Target(t)) => {
            if t.len() != n {
                return Err(Error::dims("mse target", n, t.len()));
            }
            Ok(mse(output, t, &mut grad))
        }
        (LossKind::Mse, Label::Classes(classes)) => {
            if heads.iter().any(|h| h.kind != HeadKind::Softmax) {
                return Err(Error::InvalidArgument("mse with class labels needs softmax heads only".into()));
            }
            if classes.len() != heads.len() {
                return Err(Error::dims("class labels", heads.len(), classes.len()));
            }
            let mut target = vec![S::zero(); n];
            for (h, &c) in heads.iter().zip(classes) {
                if c >= h.len {
                    return Err(Error::LabelOutOfRange { label: c, len: h.len });
                }
                target[h.offset + c] = S::one();
            }
            Ok(mse(output, &target, &mut grad))
        }
    }
}

fn mse<S: Scalar>(y: &[S], t: &[S], grad: &mut [S]) -> (S, Vec<S>) {
    let n = S::from_usize(y.len()).unwrap();
    let mut loss = S::zero();
    for ((g, &a), &b) in grad.iter_mut().zip(y).zip(t) {
        let d = a - b;
        loss += d * d;
        *g = S::lit(2.0) * d / n;
    }
    (loss / n, grad.to_vec())
}

/// Loss of one softmax group against a class label, with the gradient taken
/// directly with respect to that group's logits. This is the path the
/// training loops use; it agrees with [`loss_and_grad`] composed through the
/// softmax Jacobian.
pub fn head_loss<S: Scalar>(kind: LossKind, probs: &[S], class: usize) -> Result<(S, Vec<S>)> {
    if class >= probs.len() {
        return Err(Error::LabelOutOfRange { label: class, len: probs.len() });
    }
    match kind {
        LossKind::CrossEntropy => {
            let loss = -probs[class].max(S::min_positive_value()).ln();
            let mut g = probs.to_vec();
            g[class] -= S::one();
            Ok((loss, g))
        }
        LossKind::Mse => {
            let n = S::from_usize(probs.len()).unwrap();
            let mut loss = S::zero();
            let mut dp = vec![S::zero(); probs.len()];
            for (k, (&p, d)) in probs.iter().zip(dp.iter_mut()).enumerate() {
                let t = if k == class { S::one() } else { S::zero() };
                loss += (p - t) * (p - t);
                *d = S::lit(2.0) * (p - t) / n;
            }
            let dot: S = dp.iter().zip(probs).map(|(&a, &b)| a * b).sum();
            let g = probs.iter().zip(&dp).map(|(&p, &d)| p * (d - dot)).collect();
            Ok((loss / n, g))
        }
    }
}
