//! Joint-space actor-critic with Gumbel-Softmax relaxed discrete actions.
//!
//! The actor maps the concatenated local observations to one 5-way softmax
//! group per movable agent. The critic scores `obs ++ action` where the
//! action is the concatenation of those groups. Replay stores one-hot
//! executed actions; the actor is trained through relaxed samples.

use rand::Rng;

use crate::env::N_MOVES;
use crate::error::{Error, Result};
use crate::expert::replay::Transition;
use crate::nn::{
    argmax, clip_global_norm, gumbel_softmax_backward, gumbel_softmax_with_noise, heads_from_groups, sample_gumbel,
    soft_update, Activation, AdamState, HeadKind, MlpPolicy,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Chosen moves plus the simplex vectors they came from (relaxed samples in
/// sample mode, one-hot in greedy mode), concatenated per head.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorOutput<S> {
    pub moves: Vec<usize>,
    pub soft: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgParams {
    pub hidden: usize,
    pub lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub clip: Option<f64>,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgStats<S> {
    pub critic_loss: S,
    pub actor_loss: S,
}

#[derive(Debug, Clone)]
pub struct DdpgExpert<S> {
    pub actor: MlpPolicy<S>,
    pub critic: MlpPolicy<S>,
    pub actor_target: MlpPolicy<S>,
    pub critic_target: MlpPolicy<S>,
    actor_adam: AdamState<S>,
    critic_adam: AdamState<S>,
    pub params: DdpgParams,
    n_heads: usize,
}

pub(crate) fn one_hot_blocks<S: Scalar>(moves: &[usize]) -> Vec<S> {
    let mut v = vec![S::zero(); moves.len() * N_MOVES];
    for (h, &a) in moves.iter().enumerate() {
        v[h * N_MOVES + a] = S::one();
    }
    v
}

fn actor_heads(n_heads: usize) -> Vec<crate::nn::Head> {
    heads_from_groups(&vec![(N_MOVES, HeadKind::Softmax); n_heads])
}

fn check_params(p: &DdpgParams) -> Result<()> {
    if p.hidden == 0 {
        return Err(Error::config("hidden", "must be positive"));
    }
    if !(p.lr > 0.0) {
        return Err(Error::config("lr", "must be positive"));
    }
    if !(0.0..=1.0).contains(&p.tau) {
        return Err(Error::config("tau", "must lie in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&p.gamma) {
        return Err(Error::config("gamma", "must lie in [0, 1]"));
    }
    if !(p.temperature > 0.0) {
        return Err(Error::config("temperature", "must be positive"));
    }
    if let Some(c) = p.clip {
        if !(c > 0.0) {
            return Err(Error::config("clip", "must be positive"));
        }
    }
    Ok(())
}

/// Rows `[obs_b ++ act_b]`.
fn concat_rows<S: Scalar>(obs: &[S], obs_w: usize, act: &[S], act_w: usize, batch: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(batch * (obs_w + act_w));
    for b in 0..batch {
        out.extend_from_slice(&obs[b * obs_w..(b + 1) * obs_w]);
        out.extend_from_slice(&act[b * act_w..(b + 1) * act_w]);
    }
    out
}

/// Relaxed joint actions for every row of an actor trace under fixed noise.
fn relax<S: Scalar>(logits: &[S], noise: &[S], temperature: S) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(logits.len());
    for (l, g) in logits.chunks_exact(N_MOVES).zip(noise.chunks_exact(N_MOVES)) {
        out.extend(gumbel_softmax_with_noise(l, g, temperature)?);
    }
    Ok(out)
}

fn draw_noise<S: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<S> {
    (0..n).map(|_| sample_gumbel(rng)).collect()
}

/// Mean critic value of the actor's relaxed actions on `obs` with the given
/// Gumbel noise, and its gradient with respect to the actor parameters.
pub fn actor_objective<S: Scalar>(
    actor: &MlpPolicy<S>,
    critic: &MlpPolicy<S>,
    obs: &[S],
    batch: usize,
    noise: &[S],
    temperature: S,
) -> Result<(S, Vec<S>)> {
    let obs_w = actor.input_len();
    let act_w = actor.output_len();
    if critic.input_len() != obs_w + act_w || critic.output_len() != 1 {
        return Err(Error::ShapeMismatch("critic does not match actor".into()));
    }
    if noise.len() != batch * act_w {
        return Err(Error::dims("gumbel noise", batch * act_w, noise.len()));
    }
    let at = actor.forward_batch(obs, batch)?;
    let relaxed = relax(&at.logits, noise, temperature)?;
    let ct = critic.forward_batch(&concat_rows(obs, obs_w, &relaxed, act_w, batch), batch)?;
    let bs = S::from_usize(batch).unwrap();
    let mean_q = ct.output.iter().copied().sum::<S>() / bs;
    let dq = vec![S::one() / bs; batch];
    let cg = critic.backward_logits(&ct, &dq, false);
    let w = obs_w + act_w;
    let mut dlogits = Vec::with_capacity(batch * act_w);
    for b in 0..batch {
        let da = &cg.input[b * w + obs_w..(b + 1) * w];
        let y = &relaxed[b * act_w..(b + 1) * act_w];
        for (yh, dh) in y.chunks_exact(N_MOVES).zip(da.chunks_exact(N_MOVES)) {
            dlogits.extend(gumbel_softmax_backward(yh, dh, temperature));
        }
    }
    let g = actor.backward_logits(&at, &dlogits, true);
    Ok((mean_q, g.params))
}

impl<S: Scalar> DdpgExpert<S> {
    pub fn new<R: Rng + ?Sized>(input_len: usize, n_heads: usize, params: DdpgParams, rng: &mut R) -> Result<Self> {
        check_params(&params)?;
        if n_heads == 0 {
            return Err(Error::InvalidArgument("expert needs at least one movement head".into()));
        }
        let h = params.hidden;
        let act_w = n_heads * N_MOVES;
        let actor = MlpPolicy::init([input_len, h, h, act_w], Activation::Relu, actor_heads(n_heads), rng)?;
        let critic = MlpPolicy::init(
            [input_len + act_w, h, h, 1],
            Activation::Relu,
            heads_from_groups(&[(1, HeadKind::Linear)]),
            rng,
        )?;
        Ok(DdpgExpert {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_adam: AdamState::for_policy(&actor),
            critic_adam: AdamState::for_policy(&critic),
            actor,
            critic,
            params,
            n_heads,
        })
    }

    /// Acting-only expert rebuilt from a saved actor; the critic is zero.
    pub fn from_actor(actor: MlpPolicy<S>, params: DdpgParams) -> Result<Self> {
        let act_w = actor.output_len();
        if act_w % N_MOVES != 0 || actor.heads().iter().any(|h| h.kind != HeadKind::Softmax || h.len != N_MOVES) {
            return Err(Error::ShapeMismatch("actor must consist of 5-way softmax groups".into()));
        }
        let h = params.hidden.max(1);
        let critic = MlpPolicy::zeros(
            [actor.input_len() + act_w, h, h, 1],
            Activation::Relu,
            heads_from_groups(&[(1, HeadKind::Linear)]),
        )?;
        Ok(DdpgExpert {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_adam: AdamState::for_policy(&actor),
            critic_adam: AdamState::for_policy(&critic),
            actor,
            critic,
            params,
            n_heads: act_w / N_MOVES,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn input_len(&self) -> usize {
        self.actor.input_len()
    }

    pub fn act<R: Rng + ?Sized>(&self, input: &[S], mode: ActMode, rng: &mut R) -> Result<ActorOutput<S>> {
        let trace = self.actor.forward_batch(input, 1)?;
        match mode {
            ActMode::Greedy => {
                let moves: Vec<usize> = trace.output.chunks_exact(N_MOVES).map(argmax).collect();
                let soft = one_hot_blocks(&moves);
                Ok(ActorOutput { moves, soft })
            }
            ActMode::Sample => {
                let noise = draw_noise(trace.logits.len(), rng);
                let soft = relax(&trace.logits, &noise, S::lit(self.params.temperature))?;
                let moves = soft.chunks_exact(N_MOVES).map(argmax).collect();
                Ok(ActorOutput { moves, soft })
            }
        }
    }

    /// Greedy moves for a batch of expert inputs, row by row.
    pub fn greedy_batch(&self, inputs: &[S], batch: usize) -> Result<Vec<Vec<usize>>> {
        let trace = self.actor.forward_batch(inputs, batch)?;
        Ok((0..batch).map(|b| trace.output_row(b).chunks_exact(N_MOVES).map(argmax).collect()).collect())
    }

    fn check_batch(&self, batch: &[&Transition<S>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty update batch".into()));
        }
        let (ow, aw) = (self.input_len(), self.n_heads * N_MOVES);
        for t in batch {
            if t.obs.len() != ow || t.next_obs.len() != ow {
                return Err(Error::dims("transition observation", ow, t.obs.len().max(t.next_obs.len())));
            }
            if t.action.len() != aw {
                return Err(Error::dims("transition action", aw, t.action.len()));
            }
        }
        Ok(())
    }

    /// Bootstrapped critic targets `r + gamma (1 - done) Q'(o', mu'(o'))`,
    /// with the target action a relaxed sample of the target actor.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &[&Transition<S>], rng: &mut R) -> Result<Vec<S>> {
        self.check_batch(batch)?;
        let n = batch.len();
        let (ow, aw) = (self.input_len(), self.n_heads * N_MOVES);
        let next: Vec<S> = batch.iter().flat_map(|t| t.next_obs.iter().copied()).collect();
        let at = self.actor_target.forward_batch(&next, n)?;
        let noise = draw_noise(n * aw, rng);
        let a_next = relax(&at.logits, &noise, S::lit(self.params.temperature))?;
        let q_next = self.critic_target.forward_batch(&concat_rows(&next, ow, &a_next, aw, n), n)?.output;
        let gamma = S::lit(self.params.gamma);
        Ok(batch
            .iter()
            .zip(&q_next)
            .map(|(t, &q)| if t.done { t.reward } else { t.reward + gamma * q })
            .collect())
    }

    /// One critic step, one actor step, then soft target updates.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[&Transition<S>], rng: &mut R) -> Result<DdpgStats<S>> {
        let y = self.critic_targets(batch, rng)?;
        let n = batch.len();
        let (ow, aw) = (self.input_len(), self.n_heads * N_MOVES);
        let bs = S::from_usize(n).unwrap();
        let lr = S::lit(self.params.lr);
        let clip = self.params.clip.map(S::lit);

        let obs: Vec<S> = batch.iter().flat_map(|t| t.obs.iter().copied()).collect();
        let act: Vec<S> = batch.iter().flat_map(|t| t.action.iter().copied()).collect();
        let ct = self.critic.forward_batch(&concat_rows(&obs, ow, &act, aw, n), n)?;
        let mut critic_loss = S::zero();
        let mut dq = Vec::with_capacity(n);
        for (&q, &target) in ct.output.iter().zip(&y) {
            let d = q - target;
            critic_loss += d * d / bs;
            dq.push(S::lit(2.0) * d / bs);
        }
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        let mut cg = self.critic.backward_logits(&ct, &dq, true).params;
        if let Some(c) = clip {
            clip_global_norm(&mut cg, c);
        }
        self.critic_adam.update(self.critic.params_mut(), &cg, lr)?;

        let noise = draw_noise(n * aw, rng);
        let temp = S::lit(self.params.temperature);
        let (mean_q, mut ag) = actor_objective(&self.actor, &self.critic, &obs, n, &noise, temp)?;
        if !mean_q.is_finite() {
            return Err(Error::NonFinite("actor objective".into()));
        }
        for g in ag.iter_mut() {
            *g = -*g;
        }
        if let Some(c) = clip {
            clip_global_norm(&mut ag, c);
        }
        self.actor_adam.update(self.actor.params_mut(), &ag, lr)?;

        let tau = S::lit(self.params.tau);
        soft_update(&mut self.critic_target, &self.critic, tau)?;
        soft_update(&mut self.actor_target, &self.actor, tau)?;
        Ok(DdpgStats { critic_loss, actor_loss: -mean_q })
    }
}

pub fn expert_act<S: Scalar, R: Rng + ?Sized>(
    expert: &DdpgExpert<S>,
    input: &[S],
    mode: ActMode,
    rng: &mut R,
) -> Result<ActorOutput<S>> {
    expert.act(input, mode, rng)
}

pub fn ddpg_update<S: Scalar, R: Rng + ?Sized>(
    expert: &mut DdpgExpert<S>,
    batch: &[&Transition<S>],
    rng: &mut R,
) -> Result<DdpgStats<S>> {
    expert.update(batch, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> DdpgParams {
        DdpgParams { hidden: 16, lr: 1e-3, tau: 0.01, gamma: 0.9, clip: None, temperature: 1.0 }
    }

    fn transition(rng: &mut ChaCha8Rng, ow: usize, heads: usize, reward: f64) -> Transition<f64> {
        let moves: Vec<usize> = (0..heads).map(|_| rng.gen_range(0..N_MOVES)).collect();
        Transition {
            obs: (0..ow).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: one_hot_blocks(&moves),
            reward,
            next_obs: (0..ow).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: false,
        }
    }

    #[test]
    fn greedy_picks_argmax_per_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut e = DdpgExpert::<f64>::new(4, 2, params(), &mut rng).unwrap();
        let (_, b) = e.actor.layer_ranges(2);
        for p in &mut e.actor.params_mut()[..b.end] {
            *p = 0.0;
        }
        e.actor.params_mut()[b.start] = 2.0;
        e.actor.params_mut()[b.start + 5] = 2.0;
        let out = e.act(&[0.1, 0.2, 0.3, 0.4], ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(out.moves, vec![0, 0]);
        let again = e.act(&[0.1, 0.2, 0.3, 0.4], ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn samples_lie_on_head_simplices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = DdpgExpert::<f64>::new(4, 3, params(), &mut rng).unwrap();
        for _ in 0..50 {
            let out = e.act(&[0.5, -0.5, 0.2, 0.0], ActMode::Sample, &mut rng).unwrap();
            for h in out.soft.chunks_exact(N_MOVES) {
                assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(h.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }

    #[test]
    fn zero_discount_targets_equal_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = DdpgExpert::<f64>::new(3, 2, DdpgParams { gamma: 0.0, ..params() }, &mut rng).unwrap();
        let ts: Vec<_> = (0..8).map(|_| transition(&mut rng, 3, 2, 1.0)).collect();
        let refs: Vec<_> = ts.iter().collect();
        assert!(e.critic_targets(&refs, &mut rng).unwrap().iter().all(|&y| y == 1.0));
    }

    #[test]
    fn critic_overfits_single_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut e = DdpgExpert::<f64>::new(3, 2, DdpgParams { gamma: 0.0, ..params() }, &mut rng).unwrap();
        let t = transition(&mut rng, 3, 2, 1.0);
        let first = e.update(&[&t], &mut rng).unwrap().critic_loss;
        let mut last = first;
        for _ in 0..200 {
            last = e.update(&[&t], &mut rng).unwrap().critic_loss;
        }
        assert!(last < first * 0.01, "{first} -> {last}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = DdpgExpert::<f64>::new(3, 2, DdpgParams { hidden: 6, ..params() }, &mut rng).unwrap();
        let mut actor = e.actor.clone();
        // larger output layer so the relaxed actions actually move
        let (w, _) = actor.layer_ranges(2);
        for p in &mut actor.params_mut()[w] {
            *p *= 100.0;
        }
        let mut critic = e.critic.clone();
        let (w, _) = critic.layer_ranges(2);
        for p in &mut critic.params_mut()[w] {
            *p *= 300.0;
        }
        let batch = 4;
        let obs: Vec<f64> = (0..batch * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noise: Vec<f64> = (0..batch * 10).map(|_| sample_gumbel(&mut rng)).collect();
        let (_, g) = actor_objective(&actor, &critic, &obs, batch, &noise, 1.0).unwrap();
        let mut checked = 0;
        for k in 0..actor.num_params() {
            let h = 1e-5;
            let mut p = actor.clone();
            p.params_mut()[k] += h;
            let mut m = actor.clone();
            m.params_mut()[k] -= h;
            let fp = actor_objective(&p, &critic, &obs, batch, &noise, 1.0).unwrap().0;
            let fm = actor_objective(&m, &critic, &obs, batch, &noise, 1.0).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            if g[k].abs() > 1e-8 {
                assert!((fd - g[k]).abs() <= 1e-4 * g[k].abs().max(fd.abs()), "param {k}: {fd} vs {}", g[k]);
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn tiny_actor_step_does_not_lower_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = DdpgExpert::<f64>::new(3, 2, params(), &mut rng).unwrap();
        let batch = 8;
        let obs: Vec<f64> = (0..batch * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noise: Vec<f64> = (0..batch * 10).map(|_| sample_gumbel(&mut rng)).collect();
        let (q0, g) = actor_objective(&e.actor, &e.critic, &obs, batch, &noise, 1.0).unwrap();
        let mut actor = e.actor.clone();
        crate::nn::axpy(actor.params_mut(), 1e-3, &g);
        let (q1, _) = actor_objective(&actor, &e.critic, &obs, batch, &noise, 1.0).unwrap();
        assert!(q1 >= q0 - 1e-9);
    }

    #[test]
    fn target_lag_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ts: Vec<_> = (0..4).map(|_| transition(&mut rng, 3, 1, 0.5)).collect();
        let refs: Vec<_> = ts.iter().collect();

        let mut frozen = DdpgExpert::<f64>::new(3, 1, DdpgParams { tau: 0.0, ..params() }, &mut rng).unwrap();
        let (a0, c0) = (frozen.actor_target.clone(), frozen.critic_target.clone());
        for _ in 0..5 {
            frozen.update(&refs, &mut rng).unwrap();
        }
        assert_eq!(frozen.actor_target, a0);
        assert_eq!(frozen.critic_target, c0);

        let mut tracking = DdpgExpert::<f64>::new(3, 1, DdpgParams { tau: 1.0, ..params() }, &mut rng).unwrap();
        for _ in 0..3 {
            tracking.update(&refs, &mut rng).unwrap();
            assert_eq!(tracking.actor_target, tracking.actor);
            assert_eq!(tracking.critic_target, tracking.critic);
        }
    }
}
