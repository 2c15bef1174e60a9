//! Joint-space Q-learning experts.
//!
//! `Exponential` uses one network with a Q-value per joint action (mixed
//! radix over the movable agents). `Vdn` uses one network per agent, all
//! fed the full joint input, with the system value `Q = sum_i Q_i(o, a_i)`.
//! Since the sum is separable the joint max is the sum of per-agent maxima.

use rand::Rng;

use crate::env::N_MOVES;
use crate::error::{Error, Result};
use crate::expert::joint_index::{joint_action_count, joint_action_index, joint_action_tuple};
use crate::expert::replay::Transition;
use crate::nn::{argmax, clip_global_norm, heads_from_groups, soft_update, Activation, AdamState, HeadKind, MlpPolicy};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqnVariant {
    Exponential,
    Vdn,
}

impl DqnVariant {
    pub fn tag(self) -> &'static str {
        match self {
            DqnVariant::Exponential => "dqn-exp",
            DqnVariant::Vdn => "dqn-vdn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqnParams {
    pub hidden: usize,
    pub lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub clip: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DqnExpert<S> {
    pub variant: DqnVariant,
    pub nets: Vec<MlpPolicy<S>>,
    pub targets: Vec<MlpPolicy<S>>,
    adams: Vec<AdamState<S>>,
    pub params: DqnParams,
    n_heads: usize,
}

fn decode_moves<S: Scalar>(action: &[S]) -> Vec<usize> {
    action.chunks_exact(N_MOVES).map(argmax).collect()
}

impl<S: Scalar> DqnExpert<S> {
    pub fn new<R: Rng + ?Sized>(
        input_len: usize,
        n_heads: usize,
        variant: DqnVariant,
        params: DqnParams,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || params.hidden == 0 {
            return Err(Error::InvalidArgument("need at least one head and one hidden unit".into()));
        }
        if !(params.lr > 0.0) || !(0.0..=1.0).contains(&params.tau) || !(0.0..=1.0).contains(&params.gamma) {
            return Err(Error::config("dqn", "need lr > 0 and tau, gamma in [0, 1]"));
        }
        let h = params.hidden;
        let (count, width) = match variant {
            DqnVariant::Exponential => (1, joint_action_count(&vec![N_MOVES; n_heads])?),
            DqnVariant::Vdn => (n_heads, N_MOVES),
        };
        let nets = (0..count)
            .map(|_| {
                MlpPolicy::init(
                    [input_len, h, h, width],
                    Activation::Relu,
                    heads_from_groups(&[(width, HeadKind::Linear)]),
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_nets(variant, nets, params)
    }

    pub fn from_nets(variant: DqnVariant, nets: Vec<MlpPolicy<S>>, params: DqnParams) -> Result<Self> {
        let first = nets.first().ok_or_else(|| Error::InvalidArgument("no Q networks".into()))?;
        let n_heads = match variant {
            DqnVariant::Exponential => {
                if nets.len() != 1 {
                    return Err(Error::ShapeMismatch("exponential variant uses one network".into()));
                }
                let mut h = 0;
                let mut n = first.output_len();
                while n > 1 && n % N_MOVES == 0 {
                    n /= N_MOVES;
                    h += 1;
                }
                if n != 1 {
                    return Err(Error::ShapeMismatch("output width is not a power of 5".into()));
                }
                h
            }
            DqnVariant::Vdn => {
                if nets.iter().any(|n| n.output_len() != N_MOVES || n.input_len() != first.input_len()) {
                    return Err(Error::ShapeMismatch("summed-Q networks need 5 outputs and a shared input".into()));
                }
                nets.len()
            }
        };
        Ok(DqnExpert {
            variant,
            targets: nets.clone(),
            adams: nets.iter().map(AdamState::for_policy).collect(),
            nets,
            params,
            n_heads,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn input_len(&self) -> usize {
        self.nets[0].input_len()
    }

    fn arities(&self) -> Vec<usize> {
        vec![N_MOVES; self.n_heads]
    }

    /// Greedy joint action (lowest index on ties).
    pub fn greedy(&self, input: &[S]) -> Result<Vec<usize>> {
        Ok(self.greedy_batch(input, 1)?.pop().unwrap())
    }

    pub fn greedy_batch(&self, inputs: &[S], batch: usize) -> Result<Vec<Vec<usize>>> {
        match self.variant {
            DqnVariant::Exponential => {
                let t = self.nets[0].forward_batch(inputs, batch)?;
                (0..batch).map(|b| joint_action_tuple(argmax(t.output_row(b)), &self.arities())).collect()
            }
            DqnVariant::Vdn => {
                let traces = self.nets.iter().map(|n| n.forward_batch(inputs, batch)).collect::<Result<Vec<_>>>()?;
                Ok((0..batch).map(|b| traces.iter().map(|t| argmax(t.output_row(b))).collect()).collect())
            }
        }
    }

    /// Epsilon-greedy: with probability `eps` every agent moves uniformly at
    /// random.
    pub fn act_eps<R: Rng + ?Sized>(&self, input: &[S], eps: f64, rng: &mut R) -> Result<Vec<usize>> {
        if rng.gen::<f64>() < eps {
            if input.len() != self.input_len() {
                return Err(Error::dims("expert input", self.input_len(), input.len()));
            }
            return Ok((0..self.n_heads).map(|_| rng.gen_range(0..N_MOVES)).collect());
        }
        self.greedy(input)
    }

    /// System value of the target networks maximized over joint actions.
    fn target_max(&self, next: &[S], batch: usize) -> Result<Vec<S>> {
        let mut best = vec![S::zero(); batch];
        for net in &self.targets {
            let t = net.forward_batch(next, batch)?;
            for (b, v) in best.iter_mut().enumerate() {
                *v += t.output_row(b).iter().copied().fold(S::neg_infinity(), S::max);
            }
        }
        Ok(best)
    }

    fn check_batch(&self, batch: &[&Transition<S>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty update batch".into()));
        }
        for t in batch {
            if t.obs.len() != self.input_len() || t.next_obs.len() != self.input_len() {
                return Err(Error::dims("transition observation", self.input_len(), t.obs.len()));
            }
            if t.action.len() != self.n_heads * N_MOVES {
                return Err(Error::dims("transition action", self.n_heads * N_MOVES, t.action.len()));
            }
        }
        Ok(())
    }

    /// TD targets `r + gamma (1 - done) max_a Q_target(o', a)`.
    pub fn td_targets(&self, batch: &[&Transition<S>]) -> Result<Vec<S>> {
        self.check_batch(batch)?;
        let next: Vec<S> = batch.iter().flat_map(|t| t.next_obs.iter().copied()).collect();
        let best = self.target_max(&next, batch.len())?;
        let gamma = S::lit(self.params.gamma);
        Ok(batch.iter().zip(best).map(|(t, q)| if t.done { t.reward } else { t.reward + gamma * q }).collect())
    }

    /// One squared-TD-error step on every network, then soft target updates.
    /// Returns the mean squared TD error before the step.
    pub fn update(&mut self, batch: &[&Transition<S>]) -> Result<S> {
        let y = self.td_targets(batch)?;
        let n = batch.len();
        let bs = S::from_usize(n).unwrap();
        let obs: Vec<S> = batch.iter().flat_map(|t| t.obs.iter().copied()).collect();
        let moves: Vec<Vec<usize>> = batch.iter().map(|t| decode_moves(&t.action)).collect();
        let traces = self.nets.iter().map(|net| net.forward_batch(&obs, n)).collect::<Result<Vec<_>>>()?;
        let cols: Vec<Vec<usize>> = match self.variant {
            DqnVariant::Exponential => {
                vec![moves.iter().map(|m| joint_action_index(m, &self.arities())).collect::<Result<_>>()?]
            }
            DqnVariant::Vdn => (0..self.n_heads).map(|i| moves.iter().map(|m| m[i]).collect()).collect(),
        };
        let mut delta = Vec::with_capacity(n);
        for b in 0..n {
            let q: S = traces.iter().zip(&cols).map(|(t, c)| t.output_row(b)[c[b]]).sum();
            delta.push(q - y[b]);
        }
        let loss = delta.iter().map(|&d| d * d).sum::<S>() / bs;
        if !loss.is_finite() {
            return Err(Error::NonFinite("TD loss".into()));
        }
        let lr = S::lit(self.params.lr);
        let tau = S::lit(self.params.tau);
        for (k, (trace, col)) in traces.iter().zip(&cols).enumerate() {
            let width = self.nets[k].output_len();
            let mut up = vec![S::zero(); n * width];
            for b in 0..n {
                up[b * width + col[b]] = S::lit(2.0) * delta[b] / bs;
            }
            let mut g = self.nets[k].backward_logits(trace, &up, true).params;
            if let Some(c) = self.params.clip {
                clip_global_norm(&mut g, S::lit(c));
            }
            self.adams[k].update(self.nets[k].params_mut(), &g, lr)?;
            soft_update(&mut self.targets[k], &self.nets[k], tau)?;
        }
        Ok(loss)
    }
}

pub fn dqn_update<S: Scalar>(expert: &mut DqnExpert<S>, batch: &[&Transition<S>]) -> Result<S> {
    expert.update(batch)
}
