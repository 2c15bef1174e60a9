//! Decentralized agents: one network per agent over its own observation.

use rand::Rng;

use crate::env::{JointAction, JointObservation, ScenarioSpec, N_MOVES};
use crate::error::{Error, Result};
use crate::nn::{
    argmax, head_loss, heads_from_groups, Activation, AdamState, Bundle, Checkpoint, GradBundle, Head, HeadKind,
    LossKind, MlpPolicy, Trace,
};
use crate::scalar::Scalar;

/// What one agent does on one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAction<S> {
    pub movement: usize,
    /// Outgoing message block, `comm_out_len` entries.
    pub comm: Vec<S>,
}

/// A set of per-agent policies that only ever see their own observation.
pub trait LocalPolicies<S> {
    fn n_agents(&self) -> usize;
    fn act_local(&self, agent: usize, obs: &[S]) -> Result<LocalAction<S>>;
}

/// Joint action assembled from purely local decisions.
pub fn local_joint_action<S: Scalar, P: LocalPolicies<S> + ?Sized>(
    team: &P,
    spec: &ScenarioSpec,
    obs: &JointObservation<S>,
) -> Result<JointAction<S>> {
    if team.n_agents() != spec.n_agents() || obs.len() != spec.n_agents() {
        return Err(Error::ScenarioMismatch(format!(
            "team of {} agents, scenario {} has {}",
            team.n_agents(),
            spec.name,
            spec.n_agents()
        )));
    }
    let mut movement = Vec::with_capacity(obs.len());
    let mut comm = Vec::with_capacity(obs.len());
    for (i, o) in obs.iter().enumerate() {
        let a = team.act_local(i, o)?;
        movement.push(a.movement);
        comm.push(a.comm);
    }
    Ok(JointAction { movement, comm })
}

#[derive(Debug, Clone)]
pub struct Agent<S> {
    pub policy: MlpPolicy<S>,
    pub adam: AdamState<S>,
    /// A zero rate freezes the agent.
    pub lr: f64,
    /// Movement head, absent for immobile agents.
    pub move_head: Option<Head>,
    /// Outgoing message heads keyed by receiver.
    pub comm_heads: Vec<(usize, Head)>,
}

impl<S: Scalar> Agent<S> {
    fn from_policy(policy: MlpPolicy<S>, spec: &ScenarioSpec, agent: usize, lr: f64) -> Result<Self> {
        let want = head_layout(spec, agent);
        let got: Vec<(usize, HeadKind)> = policy.heads().iter().map(|h| (h.len, h.kind)).collect();
        if got != want || policy.input_len() != spec.obs_len(agent) {
            return Err(Error::ScenarioMismatch(format!("agent {agent} network does not fit scenario {}", spec.name)));
        }
        let heads = policy.heads().to_vec();
        let movable = spec.agents[agent].movable;
        let move_head = if movable { Some(heads[0]) } else { None };
        let receivers: Vec<usize> = (0..spec.n_agents()).filter(|&j| j != agent).collect();
        let comm_heads = if spec.agents[agent].comm_dim > 0 {
            receivers.into_iter().zip(heads[usize::from(movable)..].iter().copied()).collect()
        } else {
            Vec::new()
        };
        Ok(Agent { adam: AdamState::for_policy(&policy), policy, lr, move_head, comm_heads })
    }

    /// Message head addressed to `receiver`.
    pub fn comm_head_to(&self, receiver: usize) -> Option<Head> {
        self.comm_heads.iter().find(|(r, _)| *r == receiver).map(|&(_, h)| h)
    }

    /// Applies a gradient with this agent's optimizer. Frozen agents skip.
    pub fn apply(&mut self, grads: &[S]) -> Result<()> {
        if self.lr == 0.0 {
            return Ok(());
        }
        self.adam.update(self.policy.params_mut(), grads, S::lit(self.lr))
    }
}

/// `(len, kind)` of every head of agent `i`: movement first, then one message
/// group per other agent.
pub fn head_layout(spec: &ScenarioSpec, agent: usize) -> Vec<(usize, HeadKind)> {
    let mut groups = Vec::new();
    if spec.agents[agent].movable {
        groups.push((N_MOVES, HeadKind::Softmax));
    }
    let d = spec.agents[agent].comm_dim;
    if d > 0 {
        groups.extend(std::iter::repeat((d, HeadKind::Softmax)).take(spec.n_agents() - 1));
    }
    groups
}

#[derive(Debug, Clone)]
pub struct AgentTeam<S> {
    pub agents: Vec<Agent<S>>,
    pub loss: LossKind,
    obs_lens: Vec<usize>,
}

impl<S: Scalar> AgentTeam<S> {
    pub fn new<R: Rng + ?Sized>(spec: &ScenarioSpec, hidden: usize, lr: f64, loss: LossKind, rng: &mut R) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::config("agent_hidden", "must be positive"));
        }
        if !(lr >= 0.0) {
            return Err(Error::config("agent_lr", "must be non-negative"));
        }
        let agents = (0..spec.n_agents())
            .map(|i| {
                let heads = heads_from_groups(&head_layout(spec, i));
                let out = heads.iter().map(|h| h.len).sum();
                let policy = MlpPolicy::init([spec.obs_len(i), hidden, hidden, out], Activation::Relu, heads, rng)?;
                Agent::from_policy(policy, spec, i, lr)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AgentTeam { agents, loss, obs_lens: (0..spec.n_agents()).map(|i| spec.obs_len(i)).collect() })
    }

    pub fn from_policies(spec: &ScenarioSpec, policies: Vec<MlpPolicy<S>>, lr: f64, loss: LossKind) -> Result<Self> {
        if policies.len() != spec.n_agents() {
            return Err(Error::ScenarioMismatch(format!(
                "{} agent networks for {} agents of {}",
                policies.len(),
                spec.n_agents(),
                spec.name
            )));
        }
        let agents = policies
            .into_iter()
            .enumerate()
            .map(|(i, p)| Agent::from_policy(p, spec, i, lr))
            .collect::<Result<Vec<_>>>()?;
        Ok(AgentTeam { agents, loss, obs_lens: (0..spec.n_agents()).map(|i| spec.obs_len(i)).collect() })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn to_bundle(&self, scenario: &str) -> Bundle<S> {
        let members = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| Checkpoint::new(a.policy.clone(), self.loss).with_tag("agent", i.to_string()))
            .collect();
        Bundle::new(members).with_tag("kind", "agents").with_tag("scenario", scenario)
    }

    pub fn from_bundle(spec: &ScenarioSpec, bundle: &Bundle<S>, lr: f64) -> Result<Self> {
        if bundle.tag("kind") != Some("agents") {
            return Err(Error::Checkpoint("bundle does not hold agents".into()));
        }
        if let Some(s) = bundle.tag("scenario") {
            if s != spec.name {
                return Err(Error::ScenarioMismatch(format!("agents were trained on {s}, not {}", spec.name)));
            }
        }
        let loss = bundle.members.first().map(|m| m.loss).unwrap_or(LossKind::CrossEntropy);
        Self::from_policies(spec, bundle.members.iter().map(|m| m.policy.clone()).collect(), lr, loss)
    }
}

impl<S: Scalar> LocalPolicies<S> for AgentTeam<S> {
    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Greedy local decision. Any observation whose width differs from the
    /// agent's own observation width is refused.
    fn act_local(&self, agent: usize, obs: &[S]) -> Result<LocalAction<S>> {
        let a = self.agents.get(agent).ok_or_else(|| Error::InvalidArgument(format!("no agent {agent}")))?;
        if obs.len() != self.obs_lens[agent] {
            return Err(Error::dims("local observation", self.obs_lens[agent], obs.len()));
        }
        let y = a.policy.forward(obs)?;
        let movement = a.move_head.map_or(0, |h| argmax(&y[h.range()]));
        let mut comm = Vec::new();
        for (_, h) in &a.comm_heads {
            let k = argmax(&y[h.range()]);
            comm.extend((0..h.len).map(|j| if j == k { S::one() } else { S::zero() }));
        }
        Ok(LocalAction { movement, comm })
    }
}

/// Mean supervised loss of one softmax head over a batch, and the gradient
/// of that mean with respect to the network logits (other heads zero).
pub fn head_batch_loss<S: Scalar>(trace: &Trace<S>, head: Head, labels: &[usize], kind: LossKind) -> Result<(S, Vec<S>)> {
    let b = trace.batch;
    if labels.len() != b {
        return Err(Error::dims("label batch", b, labels.len()));
    }
    let width = trace.logits.len() / b.max(1);
    let bs = S::from_usize(b).unwrap();
    let mut loss = S::zero();
    let mut dlogits = vec![S::zero(); trace.logits.len()];
    for (r, &lab) in labels.iter().enumerate() {
        let (l, g) = head_loss(kind, &trace.output_row(r)[head.range()], lab)?;
        loss += l / bs;
        for (d, gk) in dlogits[r * width + head.offset..r * width + head.offset + head.len].iter_mut().zip(g) {
            *d = gk / bs;
        }
    }
    Ok((loss, dlogits))
}

/// Loss and parameter gradient of one agent's movement head on a batch.
pub fn agent_loss_and_grad<S: Scalar>(
    agent: &Agent<S>,
    obs: &[S],
    labels: &[usize],
    kind: LossKind,
) -> Result<(S, GradBundle<S>)> {
    let head = agent.move_head.ok_or_else(|| Error::InvalidArgument("agent has no movement head".into()))?;
    let trace = agent.policy.forward_batch(obs, labels.len())?;
    let (loss, dlogits) = head_batch_loss(&trace, head, labels, kind)?;
    Ok((loss, agent.policy.backward_logits(&trace, &dlogits, true)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn head_layouts_per_scenario() {
        let sl = ScenarioSpec::speaker_listener();
        assert_eq!(head_layout(&sl, 0), vec![(3, HeadKind::Softmax)]);
        assert_eq!(head_layout(&sl, 1), vec![(5, HeadKind::Softmax)]);
        let cc = ScenarioSpec::coop_nav_comm(3, 5);
        assert_eq!(head_layout(&cc, 1).len(), 3);
        let cn = ScenarioSpec::coop_nav(3, false);
        assert_eq!(head_layout(&cn, 2), vec![(5, HeadKind::Softmax)]);
    }

    #[test]
    fn wider_observation_is_refused() {
        let spec = ScenarioSpec::coop_nav(3, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let team = AgentTeam::<f64>::new(&spec, 8, 1e-3, LossKind::CrossEntropy, &mut rng).unwrap();
        assert!(team.act_local(0, &vec![0.0; 12]).is_ok());
        assert!(matches!(team.act_local(0, &vec![0.0; 36]), Err(Error::DimensionMismatch { .. })));
        assert!(team.act_local(0, &vec![0.0; 11]).is_err());
    }

    #[test]
    fn execution_messages_are_one_hot() {
        let spec = ScenarioSpec::coop_nav_comm(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let team = AgentTeam::<f64>::new(&spec, 8, 1e-3, LossKind::CrossEntropy, &mut rng).unwrap();
        let a = team.act_local(1, &vec![0.3; spec.obs_len(1)]).unwrap();
        assert_eq!(a.comm.len(), 20);
        for ch in a.comm.chunks(10) {
            assert_eq!(ch.iter().sum::<f64>(), 1.0);
        }
        assert_eq!(team.agents[1].comm_head_to(0).unwrap().offset, 5);
        assert_eq!(team.agents[1].comm_head_to(2).unwrap().offset, 15);
        assert!(team.agents[1].comm_head_to(1).is_none());
    }

    #[test]
    fn bundle_round_trip_and_scenario_check() {
        let spec = ScenarioSpec::speaker_listener();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let team = AgentTeam::<f64>::new(&spec, 8, 1e-3, LossKind::Mse, &mut rng).unwrap();
        let b = team.to_bundle(&spec.name);
        assert_eq!(b.members.len(), 2);
        let back = AgentTeam::from_bundle(&spec, &b, 1e-3).unwrap();
        assert_eq!(back.loss, LossKind::Mse);
        assert_eq!(back.agents[1].policy, team.agents[1].policy);
        assert!(AgentTeam::<f64>::from_bundle(&ScenarioSpec::coop_nav(2, false), &b, 1e-3).is_err());
    }
}
