//! Decentralizing a joint expert by aggregated imitation: learner rollouts,
//! expert labels on every visited joint observation, per-agent supervised
//! steps.

pub mod agents;
pub mod dataset;

pub use agents::{
    agent_loss_and_grad, head_batch_loss, head_layout, local_joint_action, Agent, AgentTeam, LocalAction,
    LocalPolicies,
};
pub use dataset::{AgentBatch, DatasetMode, DemoDataset, DemoRecord};

use rand::Rng;

use crate::env::{reset, step, EnvState, JointObservation, ScenarioKind, ScenarioSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, EvalReport};
use crate::expert::{check_expert_fits, evaluate_expert, JointExpert};
use crate::nn::LossKind;
use crate::scalar::Scalar;

/// Expert movement labels for every agent on a joint observation.
pub fn expert_labels<S: Scalar, E: JointExpert<S> + ?Sized>(
    expert: &E,
    spec: &ScenarioSpec,
    obs: &JointObservation<S>,
) -> Result<Vec<Option<usize>>> {
    let moves = expert.greedy(&spec.expert_input(obs)?)?;
    let mut labels = vec![None; spec.n_agents()];
    for (&i, m) in spec.movable_agents().iter().zip(moves) {
        labels[i] = Some(m);
    }
    Ok(labels)
}

/// Environment cursor for step-at-a-time learner rollouts.
#[derive(Debug, Clone)]
pub struct Collector<S> {
    pub state: EnvState<S>,
    pub obs: JointObservation<S>,
    pub episode_reward: f64,
}

impl<S: Scalar> Collector<S> {
    pub fn new<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Self {
        let (state, obs) = reset(spec, rng);
        Collector { state, obs, episode_reward: 0.0 }
    }

    /// Agents act on their own observations, the expert labels the joint
    /// observation, the record is stored and the environment advances with
    /// the agents' actions. Returns the episode return when the step ended
    /// an episode, after which the environment has been reset.
    pub fn step<P, E, R>(
        &mut self,
        spec: &ScenarioSpec,
        team: &P,
        expert: &E,
        dataset: &mut DemoDataset<S>,
        rng: &mut R,
    ) -> Result<Option<f64>>
    where
        P: LocalPolicies<S> + ?Sized,
        E: JointExpert<S> + ?Sized,
        R: Rng + ?Sized,
    {
        let labels = expert_labels(expert, spec, &self.obs)?;
        let action = local_joint_action(team, spec, &self.obs)?;
        let out = step(spec, &mut self.state, &action)?;
        let prev = std::mem::replace(&mut self.obs, out.obs);
        dataset.push(DemoRecord { obs: prev, labels })?;
        self.episode_reward += out.reward.to_f64_lossy();
        if out.done {
            let total = self.episode_reward;
            let (state, obs) = reset(spec, rng);
            self.state = state;
            self.obs = obs;
            self.episode_reward = 0.0;
            return Ok(Some(total));
        }
        Ok(None)
    }
}

/// Runs `steps` labeled learner steps into `dataset`. Returns the returns of
/// the episodes completed along the way.
pub fn collect_and_label<S, P, E, R>(
    spec: &ScenarioSpec,
    team: &P,
    expert: &E,
    steps: usize,
    dataset: &mut DemoDataset<S>,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    S: Scalar,
    P: LocalPolicies<S> + ?Sized,
    E: JointExpert<S> + ?Sized,
    R: Rng + ?Sized,
{
    check_expert_fits(expert, spec)?;
    let mut c = Collector::new(spec, rng);
    let mut done = Vec::new();
    for _ in 0..steps {
        if let Some(r) = c.step(spec, team, expert, dataset, rng)? {
            done.push(r);
        }
    }
    Ok(done)
}

/// One optimizer step of a single agent on its batch. Returns the mean loss
/// before the step.
pub fn train_agent_on<S: Scalar>(agent: &mut Agent<S>, batch: &AgentBatch<S>, loss: LossKind) -> Result<f64> {
    let (l, g) = agent_loss_and_grad(agent, &batch.obs, &batch.labels, loss)?;
    agent.apply(&g.params)?;
    Ok(l.to_f64_lossy())
}

/// Samples one batch and takes one step for every agent with labels.
pub fn supervise_step<S: Scalar, R: Rng + ?Sized>(
    team: &mut AgentTeam<S>,
    dataset: &DemoDataset<S>,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<Option<f64>>> {
    let batches = dataset.sample(batch, rng)?;
    let loss = team.loss;
    team.agents
        .iter_mut()
        .zip(&batches)
        .map(|(a, b)| if b.is_empty() || a.move_head.is_none() { Ok(None) } else { train_agent_on(a, b, loss).map(Some) })
        .collect()
}

/// Greedy evaluation of the agents on strictly local observations.
pub fn evaluate_team<S: Scalar, P: LocalPolicies<S> + ?Sized>(
    team: &P,
    spec: &ScenarioSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_policy::<S, _>(spec, episodes, seed, |_, obs| local_joint_action(team, spec, obs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaggerConfig {
    pub hidden: usize,
    pub batch: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub mode: DatasetMode,
    pub max_episodes: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Stop once the agents' evaluation is at least expert minus this.
    pub tolerance: f64,
    pub min_dataset: usize,
    /// Environment steps between supervised steps.
    pub supervise_every: usize,
    /// Adds the message loss in scenarios with communication.
    pub comm_loss: bool,
}

impl DaggerConfig {
    pub fn defaults(spec: &ScenarioSpec) -> Self {
        let (hidden, tolerance) = match spec.kind {
            ScenarioKind::CoopNav => (128, 5.0),
            ScenarioKind::SpeakerListener => (64, 2.0),
            ScenarioKind::CoopNavComm => (64, 5.0),
        };
        DaggerConfig {
            hidden,
            batch: 32,
            lr: 1e-3,
            loss: LossKind::CrossEntropy,
            mode: DatasetMode::Shared,
            max_episodes: 10_000,
            eval_every: 50,
            eval_episodes: 100,
            eval_seed: 0x00e7_a15e,
            tolerance,
            min_dataset: 1024,
            supervise_every: 1,
            comm_loss: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("agent_hidden", "must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::config("agent_batch", "must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("agent_lr", "must be positive"));
        }
        if self.max_episodes == 0 {
            return Err(Error::config("dec_episodes", "must be positive"));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::config("eval_every", "evaluation cadence and size must be positive"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::config("tolerance", "must be non-negative"));
        }
        if self.supervise_every == 0 {
            return Err(Error::config("supervise_every", "must be positive"));
        }
        Ok(())
    }

    /// Size gate actually applied: never below the batch size.
    pub fn gate(&self) -> usize {
        self.min_dataset.max(self.batch)
    }
}

/// One row per decentralization episode.
#[derive(Debug, Clone, PartialEq)]
pub struct DecRow {
    pub episode: usize,
    pub train_reward: f64,
    pub eval_reward: Option<f64>,
    /// Mean per-agent action loss over the episode's updates.
    pub action_loss: Vec<Option<f64>>,
    /// Mean per-agent message loss; empty without communication learning.
    pub comm_loss: Vec<Option<f64>>,
    pub dataset_len: usize,
}

#[derive(Debug, Clone)]
pub struct DecentralizeRun<S> {
    pub team: AgentTeam<S>,
    pub curve: Vec<DecRow>,
    pub expert_eval: EvalReport,
    /// Last evaluation of the agents.
    pub agent_eval: Option<EvalReport>,
    /// Episodes run, including the one that triggered the stop.
    pub episodes: usize,
    pub stopped: bool,
}

/// Accumulates per-agent losses within an episode.
#[derive(Debug, Clone)]
pub(crate) struct LossMeter {
    sum: Vec<f64>,
    n: Vec<usize>,
}

impl LossMeter {
    pub(crate) fn new(m: usize) -> Self {
        LossMeter { sum: vec![0.0; m], n: vec![0; m] }
    }

    pub(crate) fn add(&mut self, losses: &[Option<f64>]) {
        for (i, l) in losses.iter().enumerate() {
            if let Some(l) = l {
                self.sum[i] += l;
                self.n[i] += 1;
            }
        }
    }

    pub(crate) fn take(&mut self) -> Vec<Option<f64>> {
        let out = self.sum.iter().zip(&self.n).map(|(&s, &n)| (n > 0).then(|| s / n as f64)).collect();
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        self.n.iter_mut().for_each(|n| *n = 0);
        out
    }
}

/// Full decentralization without message learning. The expert is evaluated
/// greedily once on the evaluation seed; the agents are evaluated on the same
/// seed every `eval_every` episodes and training stops once they come within
/// the tolerance.
pub fn decentralize<S, E, R, F>(
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
    check_expert_fits(expert, spec)?;
    let expert_eval = evaluate_expert(expert, spec, cfg.eval_episodes, cfg.eval_seed)?;
    let mut team = AgentTeam::new(spec, cfg.hidden, cfg.lr, cfg.loss, rng)?;
    let mut dataset = DemoDataset::new(spec.n_agents(), cfg.mode, cfg.gate());
    let mut collector = Collector::new(spec, rng);
    let mut meter = LossMeter::new(spec.n_agents());
    let mut curve = Vec::new();
    let mut agent_eval = None;
    let mut steps = 0usize;
    for episode in 1..=cfg.max_episodes {
        let train_reward = loop {
            let ended = collector.step(spec, &team, expert, &mut dataset, rng)?;
            steps += 1;
            if dataset.ready() && steps % cfg.supervise_every == 0 {
                meter.add(&supervise_step(&mut team, &dataset, cfg.batch, rng)?);
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
            action_loss: meter.take(),
            comm_loss: Vec::new(),
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::N_MOVES;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct AlwaysRight;

    impl LocalPolicies<f64> for AlwaysRight {
        fn n_agents(&self) -> usize {
            3
        }

        fn act_local(&self, _: usize, _: &[f64]) -> Result<LocalAction<f64>> {
            Ok(LocalAction { movement: 4, comm: Vec::new() })
        }
    }

    /// Labels every movable agent with a fixed move.
    struct ConstExpert(usize, usize);

    impl JointExpert<f64> for ConstExpert {
        fn input_len(&self) -> usize {
            self.1
        }

        fn greedy(&self, _: &[f64]) -> Result<Vec<usize>> {
            Ok(vec![self.0; 3])
        }
    }

    #[test]
    fn rollouts_follow_the_learner() {
        let spec = ScenarioSpec::coop_nav(3, false);
        let expert = ConstExpert(3, spec.expert_input_len());
        let mut d = DemoDataset::new(3, DatasetMode::Shared, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        collect_and_label(&spec, &AlwaysRight, &expert, 20, &mut d, &mut rng).unwrap();
        assert_eq!(d.len(), 20);
        let recs = d.records().unwrap();
        for w in recs.windows(2) {
            // Landmarks drift left in the agent frame only if the agent moves right.
            assert!(w[1].obs[0][2] < w[0].obs[0][2]);
            assert_eq!(w[1].labels, vec![Some(3); 3]);
        }
    }

    #[test]
    fn overfits_a_single_record() {
        let spec = ScenarioSpec::coop_nav(3, false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut team = AgentTeam::<f64>::new(&spec, 32, 1e-3, LossKind::CrossEntropy, &mut rng).unwrap();
        let (_, obs) = reset::<f64, _>(&spec, &mut rng);
        let mut d = DemoDataset::new(3, DatasetMode::Shared, 1);
        d.push(DemoRecord { obs, labels: vec![Some(2), Some(0), Some(4)] }).unwrap();
        let mut last = vec![];
        for _ in 0..500 {
            last = supervise_step(&mut team, &d, 1, &mut rng).unwrap();
        }
        let b = d.sample(1, &mut rng).unwrap();
        for (a, b) in team.agents.iter().zip(&b) {
            let (l, _) = agent_loss_and_grad(a, &b.obs, &b.labels, LossKind::CrossEntropy).unwrap();
            assert!(l < 0.01, "loss {l}");
        }
        assert!(last.iter().all(|l| l.is_some()));
    }

    #[test]
    fn frozen_agent_is_untouched() {
        let spec = ScenarioSpec::coop_nav(3, false);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut team = AgentTeam::<f64>::new(&spec, 16, 1e-3, LossKind::CrossEntropy, &mut rng).unwrap();
        team.agents[2].lr = 0.0;
        let before: Vec<_> = team.agents.iter().map(|a| a.policy.clone()).collect();
        let expert = ConstExpert(1, spec.expert_input_len());
        let mut d = DemoDataset::new(3, DatasetMode::Shared, 32);
        collect_and_label(&spec, &team, &expert, 64, &mut d, &mut rng).unwrap();
        for _ in 0..5 {
            supervise_step(&mut team, &d, 32, &mut rng).unwrap();
        }
        assert_eq!(team.agents[2].policy, before[2]);
        assert_ne!(team.agents[0].policy, before[0]);
        assert_ne!(team.agents[1].policy, before[1]);
    }

    #[test]
    fn shared_step_equals_separate_steps() {
        let spec = ScenarioSpec::coop_nav(3, false);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let team = AgentTeam::<f64>::new(&spec, 16, 1e-3, LossKind::CrossEntropy, &mut rng).unwrap();
        let expert = ConstExpert(2, spec.expert_input_len());
        let mut d = DemoDataset::new(3, DatasetMode::Shared, 8);
        collect_and_label(&spec, &team, &expert, 40, &mut d, &mut rng).unwrap();
        let mut joint = team.clone();
        supervise_step(&mut joint, &d, 8, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let idx = d.sample_indices(8, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let slices = d.batch_from_indices(&idx).unwrap();
        for (i, b) in slices.iter().enumerate() {
            let mut solo = team.agents[i].clone();
            train_agent_on(&mut solo, b, LossKind::CrossEntropy).unwrap();
            assert_eq!(solo.policy.params(), joint.agents[i].policy.params());
        }
    }

    #[test]
    fn stored_labels_match_requery() {
        let spec = ScenarioSpec::coop_nav(2, false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dd = crate::expert::DdpgExpert::<f64>::new(
            spec.expert_input_len(),
            2,
            crate::expert::DdpgParams { hidden: 16, lr: 1e-3, tau: 1e-3, gamma: 0.9, clip: None, temperature: 1.0 },
            &mut rng,
        )
        .unwrap();
        let team = AgentTeam::<f64>::new(&spec, 16, 1e-3, LossKind::CrossEntropy, &mut rng).unwrap();
        let mut d = DemoDataset::new(2, DatasetMode::Shared, 1);
        collect_and_label(&spec, &team, &dd, 100, &mut d, &mut rng).unwrap();
        for r in d.records().unwrap() {
            assert_eq!(r.labels, expert_labels(&dd, &spec, &r.obs).unwrap());
            assert!(r.labels.iter().all(|l| l.is_some_and(|l| l < N_MOVES)));
        }
    }
}
