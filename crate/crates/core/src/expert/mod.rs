//! Centralized experts over the concatenated local observations.

pub mod ddpg;
pub mod dqn;
pub mod joint_index;
pub mod replay;
pub mod train;

pub use ddpg::{actor_objective, ddpg_update, expert_act, ActMode, ActorOutput, DdpgExpert, DdpgParams, DdpgStats};
pub use dqn::{dqn_update, DqnExpert, DqnParams, DqnVariant};
pub use joint_index::{joint_action_count, joint_action_index, joint_action_tuple};
pub use replay::{ReplayBuffer, Transition};
pub use train::{train_expert, train_expert_observed, CurvePoint, ExpertConfig, ExpertRun};

use crate::env::{JointAction, JointObservation, ScenarioSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, EvalReport};
use crate::nn::{Bundle, Checkpoint, LossKind};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertVariant {
    Ddpg,
    DqnExp,
    DqnVdn,
}

impl ExpertVariant {
    pub fn tag(self) -> &'static str {
        match self {
            ExpertVariant::Ddpg => "ddpg",
            ExpertVariant::DqnExp => "dqn-exp",
            ExpertVariant::DqnVdn => "dqn-vdn",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "ddpg" => Some(ExpertVariant::Ddpg),
            "dqn-exp" => Some(ExpertVariant::DqnExp),
            "dqn-vdn" => Some(ExpertVariant::DqnVdn),
            _ => None,
        }
    }
}

/// Anything that can label a joint observation with one greedy move per
/// movable agent.
pub trait JointExpert<S> {
    fn input_len(&self) -> usize;
    fn greedy(&self, input: &[S]) -> Result<Vec<usize>>;
}

#[derive(Debug, Clone)]
pub enum Expert<S> {
    Ddpg(DdpgExpert<S>),
    Dqn(DqnExpert<S>),
}

impl<S: Scalar> JointExpert<S> for DdpgExpert<S> {
    fn input_len(&self) -> usize {
        DdpgExpert::input_len(self)
    }

    fn greedy(&self, input: &[S]) -> Result<Vec<usize>> {
        Ok(self.greedy_batch(input, 1)?.pop().unwrap())
    }
}

impl<S: Scalar> JointExpert<S> for DqnExpert<S> {
    fn input_len(&self) -> usize {
        DqnExpert::input_len(self)
    }

    fn greedy(&self, input: &[S]) -> Result<Vec<usize>> {
        DqnExpert::greedy(self, input)
    }
}

impl<S: Scalar> JointExpert<S> for Expert<S> {
    fn input_len(&self) -> usize {
        match self {
            Expert::Ddpg(e) => e.input_len(),
            Expert::Dqn(e) => e.input_len(),
        }
    }

    fn greedy(&self, input: &[S]) -> Result<Vec<usize>> {
        match self {
            Expert::Ddpg(e) => JointExpert::greedy(e, input),
            Expert::Dqn(e) => e.greedy(input),
        }
    }
}

/// Expands moves of the movable agents into a full movement vector, with
/// immobile agents idle.
pub fn full_moves(spec: &ScenarioSpec, movable_moves: &[usize]) -> Result<Vec<usize>> {
    let movable = spec.movable_agents();
    if movable_moves.len() != movable.len() {
        return Err(Error::dims("expert moves", movable.len(), movable_moves.len()));
    }
    let mut out = vec![0; spec.n_agents()];
    for (&i, &a) in movable.iter().zip(movable_moves) {
        out[i] = a;
    }
    Ok(out)
}

/// Greedy joint action of an expert on a joint observation.
pub fn expert_joint_action<S: Scalar, E: JointExpert<S> + ?Sized>(
    expert: &E,
    spec: &ScenarioSpec,
    obs: &JointObservation<S>,
) -> Result<JointAction<S>> {
    let moves = expert.greedy(&spec.expert_input(obs)?)?;
    Ok(JointAction::silent(spec, full_moves(spec, &moves)?))
}

/// Greedy evaluation of the expert itself.
pub fn evaluate_expert<S: Scalar, E: JointExpert<S> + ?Sized>(
    expert: &E,
    spec: &ScenarioSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_expert_fits(expert, spec)?;
    evaluate_policy::<S, _>(spec, episodes, seed, |_, obs| expert_joint_action(expert, spec, obs))
}

pub fn check_expert_fits<S, E: JointExpert<S> + ?Sized>(expert: &E, spec: &ScenarioSpec) -> Result<()> {
    if expert.input_len() != spec.expert_input_len() {
        return Err(Error::ScenarioMismatch(format!(
            "expert expects {} inputs, scenario {} provides {}",
            expert.input_len(),
            spec.name,
            spec.expert_input_len()
        )));
    }
    Ok(())
}

impl<S: Scalar> Expert<S> {
    pub fn variant(&self) -> ExpertVariant {
        match self {
            Expert::Ddpg(_) => ExpertVariant::Ddpg,
            Expert::Dqn(e) => match e.variant {
                DqnVariant::Exponential => ExpertVariant::DqnExp,
                DqnVariant::Vdn => ExpertVariant::DqnVdn,
            },
        }
    }

    /// Acting networks only (actor, or Q networks), tagged with the variant.
    pub fn to_bundle(&self) -> Bundle<S> {
        let members = match self {
            Expert::Ddpg(e) => vec![Checkpoint::new(e.actor.clone(), LossKind::CrossEntropy).with_tag("role", "actor")],
            Expert::Dqn(e) => e.nets.iter().map(|n| Checkpoint::new(n.clone(), LossKind::Mse).with_tag("role", "q")).collect(),
        };
        Bundle::new(members).with_tag("kind", "expert").with_tag("variant", self.variant().tag())
    }

    pub fn from_bundle(bundle: &Bundle<S>) -> Result<Self> {
        if bundle.tag("kind") != Some("expert") {
            return Err(Error::Checkpoint("bundle is not an expert".into()));
        }
        let variant = bundle
            .tag("variant")
            .and_then(ExpertVariant::from_tag)
            .ok_or_else(|| Error::Checkpoint("expert bundle lacks a known variant".into()))?;
        let nets: Vec<_> = bundle.members.iter().map(|m| m.policy.clone()).collect();
        match variant {
            ExpertVariant::Ddpg => {
                let [actor]: [_; 1] =
                    nets.try_into().map_err(|_| Error::Checkpoint("actor bundle must hold one network".into()))?;
                let hidden = actor.sizes()[1];
                let params = DdpgParams { hidden, lr: 1e-3, tau: 0.0, gamma: 0.9, clip: None, temperature: 1.0 };
                Ok(Expert::Ddpg(DdpgExpert::from_actor(actor, params)?))
            }
            ExpertVariant::DqnExp | ExpertVariant::DqnVdn => {
                let v = if variant == ExpertVariant::DqnExp { DqnVariant::Exponential } else { DqnVariant::Vdn };
                let hidden = nets.first().map(|n| n.sizes()[1]).unwrap_or(1);
                let params = DqnParams { hidden, lr: 1e-3, tau: 0.0, gamma: 0.9, clip: None };
                Ok(Expert::Dqn(DqnExpert::from_nets(v, nets, params)?))
            }
        }
    }
}
