//! Scenario definitions: agent profiles, physics constants and observation
//! layouts for the cooperative particle worlds.

use crate::error::{Error, Result};

/// Movement choices in action-index order.
pub const N_MOVES: usize = 5;
pub const MOVE_NAMES: [&str; N_MOVES] = ["noop", "up", "down", "left", "right"];

/// Unit acceleration direction of each movement index.
pub const MOVE_DIRS: [[f64; 2]; N_MOVES] = [[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]];

pub const SCENARIO_NAMES: [&str; 7] = [
    "coop_nav_3",
    "coop_nav_3_het",
    "coop_nav_6",
    "coop_nav_6_het",
    "speaker_listener",
    "coop_nav_comm_2x3",
    "coop_nav_comm_3x5",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    CoopNav,
    SpeakerListener,
    CoopNavComm,
}

impl ScenarioKind {
    pub fn tag(self) -> &'static str {
        match self {
            ScenarioKind::CoopNav => "coop_nav",
            ScenarioKind::SpeakerListener => "speaker_listener",
            ScenarioKind::CoopNavComm => "coop_nav_comm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentProfile {
    pub radius: f64,
    pub gain: f64,
    pub max_speed: f64,
    /// Immovable agents (the speaker) have no movement head.
    pub movable: bool,
    /// Size of each outgoing message; one channel per other agent.
    pub comm_dim: usize,
}

impl AgentProfile {
    pub const fn standard() -> Self {
        AgentProfile { radius: 0.1, gain: 1.0, max_speed: 1.0, movable: true, comm_dim: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physics {
    pub dt: f64,
    pub damping: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics { dt: 0.1, damping: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: ScenarioKind,
    pub agents: Vec<AgentProfile>,
    pub n_landmarks: usize,
    pub episode_len: usize,
    pub physics: Physics,
}

const HET_RADII: [f64; 3] = [0.15, 0.10, 0.05];
const HET_GAINS: [f64; 3] = [0.6, 1.0, 1.4];

impl ScenarioSpec {
    pub fn by_name(name: &str) -> Result<Self> {
        let spec = match name {
            "coop_nav_3" => Self::coop_nav(3, false),
            "coop_nav_3_het" => Self::coop_nav(3, true),
            "coop_nav_6" => Self::coop_nav(6, false),
            "coop_nav_6_het" => Self::coop_nav(6, true),
            "speaker_listener" => Self::speaker_listener(),
            "coop_nav_comm_2x3" => Self::coop_nav_comm(2, 3),
            "coop_nav_comm_3x5" => Self::coop_nav_comm(3, 5),
            _ => {
                return Err(Error::config(
                    "scenario",
                    format!("unknown scenario `{name}`; expected one of {}", SCENARIO_NAMES.join(", ")),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `m` agents and `m` landmarks. The heterogeneous variant cycles through
    /// the big-and-slow / medium / small-and-fast profiles.
    pub fn coop_nav(m: usize, het: bool) -> Self {
        let agents = (0..m)
            .map(|i| {
                let mut p = AgentProfile::standard();
                if het {
                    p.radius = HET_RADII[i % 3];
                    p.gain = HET_GAINS[i % 3];
                }
                p
            })
            .collect();
        let name = format!("coop_nav_{m}{}", if het { "_het" } else { "" });
        ScenarioSpec { name, kind: ScenarioKind::CoopNav, agents, n_landmarks: m, episode_len: 25, physics: Physics::default() }
    }

    /// Agent 0 is the immobile speaker, agent 1 the mute listener.
    pub fn speaker_listener() -> Self {
        let speaker = AgentProfile { movable: false, comm_dim: 3, ..AgentProfile::standard() };
        let listener = AgentProfile::standard();
        ScenarioSpec {
            name: "speaker_listener".into(),
            kind: ScenarioKind::SpeakerListener,
            agents: vec![speaker, listener],
            n_landmarks: 3,
            episode_len: 25,
            physics: Physics::default(),
        }
    }

    pub fn coop_nav_comm(m: usize, landmarks: usize) -> Self {
        let agents = vec![AgentProfile { comm_dim: 10, ..AgentProfile::standard() }; m];
        ScenarioSpec {
            name: format!("coop_nav_comm_{m}x{landmarks}"),
            kind: ScenarioKind::CoopNavComm,
            agents,
            n_landmarks: landmarks,
            episode_len: 25,
            physics: Physics::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::config("agents", "need at least one agent"));
        }
        if self.episode_len == 0 {
            return Err(Error::config("episode_len", "must be at least 1"));
        }
        if self.n_landmarks == 0 {
            return Err(Error::config("n_landmarks", "must be at least 1"));
        }
        let p = self.physics;
        if !(p.dt > 0.0) || !(0.0..=1.0).contains(&(p.damping * p.dt)) {
            return Err(Error::config("physics", "need dt > 0 and 0 <= damping*dt <= 1"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if !(a.radius > 0.0 && a.gain >= 0.0 && a.max_speed > 0.0) {
                return Err(Error::config("agents", format!("agent {i} has a non-physical profile")));
            }
        }
        let want = match self.kind {
            ScenarioKind::CoopNav => vec![0; self.agents.len()],
            ScenarioKind::SpeakerListener => vec![3, 0],
            ScenarioKind::CoopNavComm => vec![10; self.agents.len()],
        };
        let got: Vec<usize> = self.agents.iter().map(|a| a.comm_dim).collect();
        if got != want {
            return Err(Error::config("comm_dim", format!("{} expects {want:?}, got {got:?}", self.kind.tag())));
        }
        if self.kind == ScenarioKind::SpeakerListener && (self.agents[0].movable || !self.agents[1].movable) {
            return Err(Error::config("agents", "speaker must be immobile and listener mobile"));
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn has_comm(&self) -> bool {
        self.agents.iter().any(|a| a.comm_dim > 0)
    }

    /// Indices of agents with a movement head, in order.
    pub fn movable_agents(&self) -> Vec<usize> {
        (0..self.n_agents()).filter(|&i| self.agents[i].movable).collect()
    }

    /// Agents whose messages reach `receiver`, in increasing index order.
    pub fn senders_to(&self, receiver: usize) -> Vec<usize> {
        (0..self.n_agents()).filter(|&j| j != receiver && self.agents[j].comm_dim > 0).collect()
    }

    /// Position of `receiver`'s channel within `sender`'s outgoing block.
    pub fn channel_index(&self, sender: usize, receiver: usize) -> usize {
        debug_assert_ne!(sender, receiver);
        if receiver < sender {
            receiver
        } else {
            receiver - 1
        }
    }

    /// Length of the concatenated outgoing message block of `agent`.
    pub fn comm_out_len(&self, agent: usize) -> usize {
        self.agents[agent].comm_dim * (self.n_agents() - 1)
    }

    pub fn comm_in_len(&self, agent: usize) -> usize {
        self.senders_to(agent).iter().map(|&j| self.agents[j].comm_dim).sum()
    }

    /// Observation prefix that excludes received messages.
    pub fn local_obs_len(&self, agent: usize) -> usize {
        let m = self.n_agents();
        let l = self.n_landmarks;
        match self.kind {
            ScenarioKind::CoopNav => 2 + 2 * l + 2 * (m - 1),
            ScenarioKind::SpeakerListener => {
                if agent == 0 {
                    l
                } else {
                    2 + 2 * l
                }
            }
            ScenarioKind::CoopNavComm => 2 + 2 * l + l * (m - 1),
        }
    }

    pub fn obs_len(&self, agent: usize) -> usize {
        self.local_obs_len(agent) + self.comm_in_len(agent)
    }

    /// Width of the expert input: every agent's local prefix, concatenated.
    pub fn expert_input_len(&self) -> usize {
        (0..self.n_agents()).map(|i| self.local_obs_len(i)).sum()
    }

    /// Width of the full joint observation including message slots.
    pub fn joint_obs_len(&self) -> usize {
        (0..self.n_agents()).map(|i| self.obs_len(i)).sum()
    }

    /// Concatenates local prefixes of a joint observation, dropping message
    /// slots.
    pub fn expert_input<S: Copy>(&self, obs: &[Vec<S>]) -> Result<Vec<S>> {
        if obs.len() != self.n_agents() {
            return Err(Error::dims("joint observation agents", self.n_agents(), obs.len()));
        }
        let mut out = Vec::with_capacity(self.expert_input_len());
        for (i, o) in obs.iter().enumerate() {
            if o.len() != self.obs_len(i) {
                return Err(Error::dims("agent observation", self.obs_len(i), o.len()));
            }
            out.extend_from_slice(&o[..self.local_obs_len(i)]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_named_scenarios_validate() {
        for name in SCENARIO_NAMES {
            let s = ScenarioSpec::by_name(name).unwrap();
            assert_eq!(s.name, name);
            assert_eq!(s.episode_len, 25);
        }
        assert!(ScenarioSpec::by_name("coop_nav_4").is_err());
    }

    #[test]
    fn observation_widths() {
        let s = ScenarioSpec::by_name("coop_nav_3").unwrap();
        assert_eq!(s.obs_len(0), 12);
        assert_eq!(s.expert_input_len(), 36);
        let s = ScenarioSpec::by_name("speaker_listener").unwrap();
        assert_eq!((s.obs_len(0), s.obs_len(1)), (3, 11));
        assert_eq!(s.expert_input_len(), 11);
        assert_eq!(s.senders_to(1), vec![0]);
        assert!(s.senders_to(0).is_empty());
        let s = ScenarioSpec::by_name("coop_nav_comm_3x5").unwrap();
        assert_eq!(s.local_obs_len(0), 2 + 10 + 10);
        assert_eq!(s.comm_in_len(0), 20);
        assert_eq!(s.comm_out_len(2), 20);
        assert_eq!(s.channel_index(2, 0), 0);
        assert_eq!(s.channel_index(0, 2), 1);
    }

    #[test]
    fn het_profiles_cycle() {
        let s = ScenarioSpec::by_name("coop_nav_6_het").unwrap();
        let radii: Vec<f64> = s.agents.iter().map(|a| a.radius).collect();
        assert_eq!(radii, vec![0.15, 0.10, 0.05, 0.15, 0.10, 0.05]);
        assert_eq!(s.agents[5].gain, 1.4);
    }

    #[test]
    fn wrong_comm_dim_rejected() {
        let mut s = ScenarioSpec::speaker_listener();
        s.agents[0].comm_dim = 4;
        assert!(s.validate().is_err());
    }
}
