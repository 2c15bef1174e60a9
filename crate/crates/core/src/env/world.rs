//! World state, dynamics, observations and rewards.
//!
//! Integrator, per agent and per step:
//!
//! ```text
//! v <- (v + gain * dir * dt) * (1 - damping * dt)
//! v <- v * min(1, max_speed / |v|)
//! p <- p + v * dt
//! ```

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::env::scenario::{ScenarioKind, ScenarioSpec, MOVE_DIRS, N_MOVES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Vec2<S> = [S; 2];

/// One observation vector per agent.
pub type JointObservation<S> = Vec<Vec<S>>;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState<S> {
    pub pos: Vec<Vec2<S>>,
    pub vel: Vec<Vec2<S>>,
    pub landmarks: Vec<Vec2<S>>,
    /// Goal landmark per agent; empty for plain cooperative navigation. In
    /// speaker-listener both entries hold the listener's goal.
    pub goals: Vec<usize>,
    /// Outgoing message block of each agent emitted on the previous step.
    pub pending: Vec<Vec<S>>,
    pub timestep: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointAction<S> {
    pub movement: Vec<usize>,
    /// Outgoing message block per agent, `comm_out_len` entries each.
    pub comm: Vec<Vec<S>>,
}

impl<S: Scalar> JointAction<S> {
    /// Movements with all message blocks zero.
    pub fn silent(spec: &ScenarioSpec, movement: Vec<usize>) -> Self {
        let comm = (0..spec.n_agents()).map(|i| vec![S::zero(); spec.comm_out_len(i)]).collect();
        JointAction { movement, comm }
    }

    pub fn validate(&self, spec: &ScenarioSpec) -> Result<()> {
        let m = spec.n_agents();
        if self.movement.len() != m {
            return Err(Error::dims("joint action movements", m, self.movement.len()));
        }
        if let Some(&bad) = self.movement.iter().find(|&&a| a >= N_MOVES) {
            return Err(Error::LabelOutOfRange { label: bad, len: N_MOVES });
        }
        if self.comm.len() != m {
            return Err(Error::dims("joint action messages", m, self.comm.len()));
        }
        for (i, c) in self.comm.iter().enumerate() {
            if c.len() != spec.comm_out_len(i) {
                return Err(Error::dims("message block", spec.comm_out_len(i), c.len()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("message of agent {i}")));
            }
        }
        Ok(())
    }
}

fn sub<S: Scalar>(a: Vec2<S>, b: Vec2<S>) -> Vec2<S> {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm<S: Scalar>(a: Vec2<S>) -> S {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

/// Fresh episode: bodies and landmarks uniform on `[-1, 1]^2`, at rest,
/// silent. Draw order is agents, landmarks, goals.
pub fn reset<S: Scalar, R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> (EnvState<S>, JointObservation<S>) {
    let u = Uniform::new_inclusive(-1.0f64, 1.0);
    let point = |rng: &mut R| [S::lit(u.sample(rng)), S::lit(u.sample(rng))];
    let m = spec.n_agents();
    let pos: Vec<Vec2<S>> = (0..m).map(|_| point(rng)).collect();
    let landmarks: Vec<Vec2<S>> = (0..spec.n_landmarks).map(|_| point(rng)).collect();
    let goals = match spec.kind {
        ScenarioKind::CoopNav => Vec::new(),
        ScenarioKind::SpeakerListener => {
            let g = rng.gen_range(0..spec.n_landmarks);
            vec![g, g]
        }
        ScenarioKind::CoopNavComm => (0..m).map(|_| rng.gen_range(0..spec.n_landmarks)).collect(),
    };
    let state = EnvState {
        pos,
        vel: vec![[S::zero(); 2]; m],
        landmarks,
        goals,
        pending: (0..m).map(|i| vec![S::zero(); spec.comm_out_len(i)]).collect(),
        timestep: 0,
    };
    let obs = observe_all(spec, &state);
    (state, obs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub obs: JointObservation<S>,
    pub reward: S,
    pub done: bool,
}

/// Advances the world one tick in place.
pub fn step<S: Scalar>(spec: &ScenarioSpec, state: &mut EnvState<S>, action: &JointAction<S>) -> Result<StepOutcome<S>> {
    if state.timestep >= spec.episode_len {
        return Err(Error::EpisodeOver { timestep: state.timestep, horizon: spec.episode_len });
    }
    action.validate(spec)?;
    let dt = S::lit(spec.physics.dt);
    let keep = S::one() - S::lit(spec.physics.damping * spec.physics.dt);
    for (i, prof) in spec.agents.iter().enumerate() {
        if !prof.movable {
            continue;
        }
        let dir = MOVE_DIRS[action.movement[i]];
        let gain = S::lit(prof.gain);
        let mut v = state.vel[i];
        for k in 0..2 {
            v[k] = (v[k] + gain * S::lit(dir[k]) * dt) * keep;
        }
        let speed = norm(v);
        let cap = S::lit(prof.max_speed);
        if speed > cap {
            let s = cap / speed;
            v = [v[0] * s, v[1] * s];
        }
        state.vel[i] = v;
        for k in 0..2 {
            state.pos[i][k] += v[k] * dt;
        }
    }
    for (p, c) in state.pending.iter_mut().zip(&action.comm) {
        p.copy_from_slice(c);
    }
    state.timestep += 1;
    let reward = reward(spec, state)?;
    let obs = observe_all(spec, state);
    Ok(StepOutcome { obs, reward, done: state.timestep == spec.episode_len })
}

/// Reward of the scenario evaluated on `state`.
pub fn reward<S: Scalar>(spec: &ScenarioSpec, state: &EnvState<S>) -> Result<S> {
    match spec.kind {
        ScenarioKind::CoopNav => reward_coop_nav(spec, state),
        ScenarioKind::SpeakerListener => reward_speaker_listener(spec, state),
        ScenarioKind::CoopNavComm => reward_coop_nav_comm(spec, state),
    }
}

fn require(spec: &ScenarioSpec, kind: ScenarioKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::WrongScenario { expected: kind.tag(), got: spec.name.clone() });
    }
    Ok(())
}

/// Negative sum over landmarks of the closest agent distance, minus one per
/// overlapping pair of bodies.
pub fn reward_coop_nav<S: Scalar>(spec: &ScenarioSpec, state: &EnvState<S>) -> Result<S> {
    require(spec, ScenarioKind::CoopNav)?;
    let mut r = S::zero();
    for &l in &state.landmarks {
        let best = state.pos.iter().map(|&p| norm(sub(p, l))).fold(S::infinity(), S::min);
        r -= best;
    }
    let m = spec.n_agents();
    for i in 0..m {
        for j in i + 1..m {
            let reach = S::lit(spec.agents[i].radius + spec.agents[j].radius);
            if norm(sub(state.pos[i], state.pos[j])) < reach {
                r -= S::one();
            }
        }
    }
    Ok(r)
}

/// Negative squared distance from the listener to its goal.
pub fn reward_speaker_listener<S: Scalar>(spec: &ScenarioSpec, state: &EnvState<S>) -> Result<S> {
    require(spec, ScenarioKind::SpeakerListener)?;
    let d = sub(state.pos[1], state.landmarks[state.goals[1]]);
    Ok(-(d[0] * d[0] + d[1] * d[1]))
}

/// Negative sum of agent-to-own-goal distances.
pub fn reward_coop_nav_comm<S: Scalar>(spec: &ScenarioSpec, state: &EnvState<S>) -> Result<S> {
    require(spec, ScenarioKind::CoopNavComm)?;
    Ok(-state.pos.iter().zip(&state.goals).map(|(&p, &g)| norm(sub(p, state.landmarks[g]))).sum::<S>())
}

fn one_hot<S: Scalar>(out: &mut Vec<S>, k: usize, n: usize) {
    out.extend((0..n).map(|j| if j == k { S::one() } else { S::zero() }));
}

/// Observation of one agent: local prefix followed by received messages.
pub fn observe<S: Scalar>(spec: &ScenarioSpec, state: &EnvState<S>, agent: usize) -> Result<Vec<S>> {
    let m = spec.n_agents();
    if agent >= m {
        return Err(Error::InvalidArgument(format!("agent {agent} out of range for {m} agents")));
    }
    let mut o = Vec::with_capacity(spec.obs_len(agent));
    let p = state.pos[agent];
    let l = spec.n_landmarks;
    match spec.kind {
        ScenarioKind::CoopNav => {
            o.extend_from_slice(&state.vel[agent]);
            for &lm in &state.landmarks {
                o.extend_from_slice(&sub(lm, p));
            }
            for (j, &q) in state.pos.iter().enumerate() {
                if j != agent {
                    o.extend_from_slice(&sub(q, p));
                }
            }
        }
        ScenarioKind::SpeakerListener => {
            if agent == 0 {
                one_hot(&mut o, state.goals[1], l);
            } else {
                o.extend_from_slice(&state.vel[agent]);
                for &lm in &state.landmarks {
                    o.extend_from_slice(&sub(lm, p));
                }
            }
        }
        ScenarioKind::CoopNavComm => {
            o.extend_from_slice(&state.vel[agent]);
            for &lm in &state.landmarks {
                o.extend_from_slice(&sub(lm, p));
            }
            for (j, &g) in state.goals.iter().enumerate() {
                if j != agent {
                    one_hot(&mut o, g, l);
                }
            }
        }
    }
    for j in spec.senders_to(agent) {
        let d = spec.agents[j].comm_dim;
        let c = spec.channel_index(j, agent) * d;
        o.extend_from_slice(&state.pending[j][c..c + d]);
    }
    debug_assert_eq!(o.len(), spec.obs_len(agent));
    Ok(o)
}

pub fn observe_all<S: Scalar>(spec: &ScenarioSpec, state: &EnvState<S>) -> JointObservation<S> {
    (0..spec.n_agents()).map(|i| observe(spec, state, i).expect("agent index in range")).collect()
}

/// A scenario bundled with its running state.
#[derive(Debug, Clone)]
pub struct Env<S> {
    spec: ScenarioSpec,
    state: EnvState<S>,
}

impl<S: Scalar> Env<S> {
    pub fn new<R: Rng + ?Sized>(spec: ScenarioSpec, rng: &mut R) -> Result<(Self, JointObservation<S>)> {
        spec.validate()?;
        let (state, obs) = reset(&spec, rng);
        Ok((Env { spec, state }, obs))
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> JointObservation<S> {
        let (state, obs) = reset(&self.spec, rng);
        self.state = state;
        obs
    }

    pub fn step(&mut self, action: &JointAction<S>) -> Result<StepOutcome<S>> {
        step(&self.spec, &mut self.state, action)
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn state(&self) -> &EnvState<S> {
        &self.state
    }

    pub fn observe(&self) -> JointObservation<S> {
        observe_all(&self.spec, &self.state)
    }
}
