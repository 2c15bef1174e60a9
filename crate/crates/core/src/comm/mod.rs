//! Decentralization with learned messages.
//!
//! Each agent is trained on its own action loss, computed with messages
//! re-queried from the senders' current networks on the previous step's
//! observations, plus a message loss: the other agents' action losses pulled
//! back through their input gradients into the sender's message heads.

use rand::seq::index;
use rand::Rng;

use crate::dagger::{
    evaluate_team, expert_labels, head_batch_loss, local_joint_action, AgentTeam, DaggerConfig, DatasetMode,
    DecRow, DecentralizeRun, LocalPolicies, LossMeter,
};
use crate::env::{reset, step, EnvState, JointObservation, ScenarioSpec};
use crate::error::{Error, Result};
use crate::expert::{check_expert_fits, evaluate_expert, JointExpert};
use crate::nn::{axpy, Trace};
use crate::scalar::Scalar;

/// Observations at `t - 1` (messages included) and `t`, with the expert's
/// labels at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommDemoRecord<S> {
    pub prev_obs: Vec<Vec<S>>,
    pub next_obs: Vec<Vec<S>>,
    pub labels: Vec<Option<usize>>,
}

/// Append-only store of message records with a minimum-size gate.
#[derive(Debug, Clone)]
pub struct CommDataset<S> {
    records: Vec<CommDemoRecord<S>>,
    min_size: usize,
}

impl<S: Clone> CommDataset<S> {
    pub fn new(min_size: usize) -> Self {
        CommDataset { records: Vec::new(), min_size }
    }

    pub fn push(&mut self, r: CommDemoRecord<S>) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ready(&self) -> bool {
        self.records.len() >= self.min_size
    }

    pub fn records(&self) -> &[CommDemoRecord<S>] {
        &self.records
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&CommDemoRecord<S>>> {
        let need = self.min_size.max(batch);
        if self.records.len() < need {
            return Err(Error::DatasetTooSmall { have: self.records.len(), need });
        }
        Ok(index::sample(rng, self.records.len(), batch).into_iter().map(|k| &self.records[k]).collect())
    }
}

fn rows<S: Copy>(records: &[&CommDemoRecord<S>], agent: usize, prev: bool, width: usize) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(records.len() * width);
    for r in records {
        let o = if prev { &r.prev_obs } else { &r.next_obs };
        let o = o.get(agent).ok_or_else(|| Error::dims("record agents", agent + 1, o.len()))?;
        if o.len() != width {
            return Err(Error::dims("stored observation", width, o.len()));
        }
        out.extend_from_slice(o);
    }
    Ok(out)
}

/// Forward passes needed by the losses on one batch: every sender on its
/// stored `t - 1` observation, and every agent on its `t` observation with
/// re-queried message slots.
struct Pass<S> {
    batch: usize,
    senders: Vec<Option<Trace<S>>>,
    receivers: Vec<Trace<S>>,
}

fn forward_pass<S: Scalar>(team: &AgentTeam<S>, spec: &ScenarioSpec, records: &[&CommDemoRecord<S>]) -> Result<Pass<S>> {
    let b = records.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if team.len() != spec.n_agents() {
        return Err(Error::ScenarioMismatch("team size differs from scenario".into()));
    }
    let mut senders = Vec::with_capacity(team.len());
    for (j, a) in team.agents.iter().enumerate() {
        if a.comm_heads.is_empty() {
            senders.push(None);
        } else {
            let x = rows(records, j, true, spec.obs_len(j))?;
            senders.push(Some(a.policy.forward_batch(&x, b)?));
        }
    }
    let mut receivers = Vec::with_capacity(team.len());
    for (i, a) in team.agents.iter().enumerate() {
        let x = receiver_input(team, spec, records, &senders, i)?;
        receivers.push(a.policy.forward_batch(&x, b)?);
    }
    Ok(Pass { batch: b, senders, receivers })
}

fn receiver_input<S: Scalar>(
    team: &AgentTeam<S>,
    spec: &ScenarioSpec,
    records: &[&CommDemoRecord<S>],
    senders: &[Option<Trace<S>>],
    i: usize,
) -> Result<Vec<S>> {
    let local = spec.local_obs_len(i);
    let next = rows(records, i, false, spec.obs_len(i))?;
    let mut x = Vec::with_capacity(next.len());
    for (b, row) in next.chunks_exact(spec.obs_len(i)).enumerate() {
        x.extend_from_slice(&row[..local]);
        for j in spec.senders_to(i) {
            let t = senders[j].as_ref().ok_or_else(|| Error::ScenarioMismatch(format!("agent {j} has no message head")))?;
            let h = team.agents[j].comm_head_to(i).unwrap();
            x.extend_from_slice(&t.output_row(b)[h.range()]);
        }
    }
    Ok(x)
}

/// Offset of sender `j`'s slot block inside receiver `i`'s observation.
fn slot_offset(spec: &ScenarioSpec, i: usize, j: usize) -> usize {
    spec.local_obs_len(i) + spec.senders_to(i).iter().take_while(|&&k| k != j).map(|&k| spec.agents[k].comm_dim).sum::<usize>()
}

fn labels_of<S>(records: &[&CommDemoRecord<S>], i: usize) -> Option<Vec<usize>> {
    records.iter().map(|r| r.labels.get(i).copied().flatten()).collect()
}

/// Up-to-date messages addressed to `receiver` for one record: each sender
/// run on its stored `t - 1` observation, concatenated in sender order.
pub fn requery_comm<S: Scalar>(
    team: &AgentTeam<S>,
    spec: &ScenarioSpec,
    record: &CommDemoRecord<S>,
    receiver: usize,
) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(spec.comm_in_len(receiver));
    for j in spec.senders_to(receiver) {
        let o = &record.prev_obs[j];
        if o.len() != spec.obs_len(j) {
            return Err(Error::dims("stored observation", spec.obs_len(j), o.len()));
        }
        let y = team.agents[j].policy.forward(o)?;
        let h = team.agents[j]
            .comm_head_to(receiver)
            .ok_or_else(|| Error::ScenarioMismatch(format!("agent {j} has no message head")))?;
        out.extend_from_slice(&y[h.range()]);
    }
    Ok(out)
}

/// Per-agent losses and gradients of one batch, all taken against the same
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGrads<S> {
    pub action_loss: Vec<Option<S>>,
    pub comm_loss: Vec<Option<S>>,
    pub action_grad: Vec<Option<Vec<S>>>,
    pub comm_grad: Vec<Option<Vec<S>>>,
}

/// Computes both losses for every agent from one set of forward passes.
pub fn comm_gradients<S: Scalar>(
    team: &AgentTeam<S>,
    spec: &ScenarioSpec,
    records: &[&CommDemoRecord<S>],
) -> Result<CommGrads<S>> {
    let m = spec.n_agents();
    let pass = forward_pass(team, spec, records)?;
    let mut action_loss = vec![None; m];
    let mut action_grad = vec![None; m];
    let mut upstream: Vec<Option<Vec<S>>> = pass
        .senders
        .iter()
        .enumerate()
        .map(|(j, t)| t.as_ref().map(|_| vec![S::zero(); pass.batch * team.agents[j].policy.output_len()]))
        .collect();
    let share = if m > 1 { S::one() / S::from_usize(m - 1).unwrap() } else { S::zero() };
    for (i, a) in team.agents.iter().enumerate() {
        let (Some(head), Some(labels)) = (a.move_head, labels_of(records, i)) else { continue };
        let trace = &pass.receivers[i];
        let (loss, dlogits) = head_batch_loss(trace, head, &labels, team.loss)?;
        let g = a.policy.backward_logits(trace, &dlogits, true);
        action_loss[i] = Some(loss);
        action_grad[i] = Some(g.params);
        let width = spec.obs_len(i);
        for j in spec.senders_to(i) {
            let h = team.agents[j].comm_head_to(i).unwrap();
            let off = slot_offset(spec, i, j);
            let out_len = team.agents[j].policy.output_len();
            let up = upstream[j].as_mut().unwrap();
            for b in 0..pass.batch {
                let src = &g.input[b * width + off..b * width + off + h.len];
                for (d, &s) in up[b * out_len + h.offset..b * out_len + h.offset + h.len].iter_mut().zip(src) {
                    *d += share * s;
                }
            }
        }
    }
    let mut comm_loss = vec![None; m];
    let mut comm_grad = vec![None; m];
    for (j, up) in upstream.iter().enumerate() {
        let (Some(up), Some(trace)) = (up, pass.senders[j].as_ref()) else { continue };
        if m < 2 {
            continue;
        }
        let pol = &team.agents[j].policy;
        let dlogits = pol.output_grad_to_logits(trace, up)?;
        comm_grad[j] = Some(pol.backward_logits(trace, &dlogits, true).params);
        let mut l = S::zero();
        for (k, al) in action_loss.iter().enumerate() {
            if k != j {
                if let Some(al) = al {
                    l += *al * share;
                }
            }
        }
        comm_loss[j] = Some(l);
    }
    Ok(CommGrads { action_loss, comm_loss, action_grad, comm_grad })
}

/// Action loss of agent `i` with re-queried messages; senders are constants.
pub fn action_loss<S: Scalar>(
    team: &AgentTeam<S>,
    spec: &ScenarioSpec,
    records: &[&CommDemoRecord<S>],
    i: usize,
) -> Result<(S, Vec<S>)> {
    if i >= spec.n_agents() {
        return Err(Error::InvalidArgument(format!("no agent {i}")));
    }
    let head = team.agents[i].move_head.ok_or_else(|| Error::InvalidArgument(format!("agent {i} has no movement head")))?;
    let labels = labels_of(records, i).ok_or_else(|| Error::InvalidArgument(format!("records lack labels for agent {i}")))?;
    let pass = forward_pass(team, spec, records)?;
    let trace = &pass.receivers[i];
    let (loss, dlogits) = head_batch_loss(trace, head, &labels, team.loss)?;
    Ok((loss, team.agents[i].policy.backward_logits(trace, &dlogits, true).params))
}

/// Message loss of agent `i`: mean over the other agents of their action
/// losses, differentiated through `i`'s message heads only.
pub fn communication_loss<S: Scalar>(
    team: &AgentTeam<S>,
    spec: &ScenarioSpec,
    records: &[&CommDemoRecord<S>],
    i: usize,
) -> Result<(S, Vec<S>)> {
    if spec.n_agents() < 2 {
        return Err(Error::InvalidArgument("message loss needs at least two agents".into()));
    }
    if i >= spec.n_agents() {
        return Err(Error::InvalidArgument(format!("no agent {i}")));
    }
    let g = comm_gradients(team, spec, records)?;
    match (g.comm_loss[i], g.comm_grad[i].clone()) {
        (Some(l), Some(grad)) => Ok((l, grad)),
        _ => Err(Error::InvalidArgument(format!("agent {i} sends no messages"))),
    }
}

/// Per-agent loss values of one synchronous update.
#[derive(Debug, Clone, PartialEq)]
pub struct CommLosses {
    pub action: Vec<Option<f64>>,
    pub comm: Vec<Option<f64>>,
}

/// All gradients are computed against the current parameters, then every
/// agent steps. `with_comm_loss = false` trains on action losses only.
pub fn comm_update<S: Scalar>(
    team: &mut AgentTeam<S>,
    spec: &ScenarioSpec,
    records: &[&CommDemoRecord<S>],
    with_comm_loss: bool,
) -> Result<CommLosses> {
    let g = comm_gradients(team, spec, records)?;
    let mut totals: Vec<Option<Vec<S>>> = g.action_grad.clone();
    if with_comm_loss {
        for (t, c) in totals.iter_mut().zip(&g.comm_grad) {
            match (t.as_mut(), c) {
                (Some(t), Some(c)) => axpy(t, S::one(), c),
                (None, Some(c)) => *t = Some(c.clone()),
                _ => {}
            }
        }
    }
    for (a, t) in team.agents.iter_mut().zip(&totals) {
        if let Some(t) = t {
            a.apply(t)?;
        }
    }
    let f = |v: &[Option<S>]| v.iter().map(|x| x.map(|x| x.to_f64_lossy())).collect();
    Ok(CommLosses { action: f(&g.action_loss), comm: if with_comm_loss { f(&g.comm_loss) } else { vec![None; spec.n_agents()] } })
}

/// Rollout cursor that stores consecutive observation pairs.
#[derive(Debug, Clone)]
pub struct CommCollector<S> {
    pub state: EnvState<S>,
    pub obs: JointObservation<S>,
    pub prev: Option<JointObservation<S>>,
    pub episode_reward: f64,
}

impl<S: Scalar> CommCollector<S> {
    pub fn new<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Self {
        let (state, obs) = reset(spec, rng);
        CommCollector { state, obs, prev: None, episode_reward: 0.0 }
    }

    /// Labels and stores the current step when a previous one exists, then
    /// advances with the agents' own actions.
    pub fn step<P, E, R>(
        &mut self,
        spec: &ScenarioSpec,
        team: &P,
        expert: &E,
        dataset: &mut CommDataset<S>,
        rng: &mut R,
    ) -> Result<Option<f64>>
    where
        P: LocalPolicies<S> + ?Sized,
        E: JointExpert<S> + ?Sized,
        R: Rng + ?Sized,
    {
        if let Some(prev) = self.prev.take() {
            let labels = expert_labels(expert, spec, &self.obs)?;
            dataset.push(CommDemoRecord { prev_obs: prev, next_obs: self.obs.clone(), labels });
        }
        let action = local_joint_action(team, spec, &self.obs)?;
        let out = step(spec, &mut self.state, &action)?;
        self.prev = Some(std::mem::replace(&mut self.obs, out.obs));
        self.episode_reward += out.reward.to_f64_lossy();
        if out.done {
            let total = self.episode_reward;
            *self = CommCollector::new(spec, rng);
            return Ok(Some(total));
        }
        Ok(None)
    }
}

/// Decentralization with message learning. Same evaluation and stopping
/// rule as [`crate::dagger::decentralize`].
pub fn decentralize_comm<S, E, R, F>(
    expert: &E,
    spec: &ScenarioSpec,
    cfg: &DaggerConfig,
    rng: &mut R,
    mut on_row: F,
) -> Result<DecentralizeRun<S>>
where
    S: Scalar,
    E: JointExpert<S> + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&DecRow),
{
    cfg.validate()?;
    if cfg.mode != DatasetMode::Shared {
        return Err(Error::config("dataset_mode", "message learning couples agents and needs the shared dataset"));
    }
    check_expert_fits(expert, spec)?;
    let expert_eval = evaluate_expert(expert, spec, cfg.eval_episodes, cfg.eval_seed)?;
    let mut team = AgentTeam::new(spec, cfg.hidden, cfg.lr, cfg.loss, rng)?;
    let mut dataset = CommDataset::new(cfg.gate());
    let mut collector = CommCollector::new(spec, rng);
    let mut act_meter = LossMeter::new(spec.n_agents());
    let mut comm_meter = LossMeter::new(spec.n_agents());
    let mut curve = Vec::new();
    let mut agent_eval = None;
    let mut steps = 0usize;
    for episode in 1..=cfg.max_episodes {
        let train_reward = loop {
            let ended = collector.step(spec, &team, expert, &mut dataset, rng)?;
            steps += 1;
            if dataset.ready() && steps % cfg.supervise_every == 0 {
                let batch = dataset.sample(cfg.batch, rng)?;
                let l = comm_update(&mut team, spec, &batch, cfg.comm_loss)?;
                act_meter.add(&l.action);
                comm_meter.add(&l.comm);
            }
            if let Some(r) = ended {
                break r;
            }
        };
        let mut eval_reward = None;
        if episode % cfg.eval_every == 0 {
            let r = evaluate_team(&team, spec, cfg.eval_episodes, cfg.eval_seed)?;
            eval_reward = Some(r.mean);
            agent_eval = Some(r);
        }
        let row = DecRow {
            episode,
            train_reward,
            eval_reward,
            action_loss: act_meter.take(),
            comm_loss: comm_meter.take(),
            dataset_len: dataset.len(),
        };
        on_row(&row);
        curve.push(row);
        if eval_reward.is_some_and(|r| r >= expert_eval.mean - cfg.tolerance) {
            return Ok(DecentralizeRun { team, curve, expert_eval, agent_eval, episodes: episode, stopped: true });
        }
    }
    Ok(DecentralizeRun { team, curve, expert_eval, agent_eval, episodes: cfg.max_episodes, stopped: false })
}
