//! Two-dimensional cooperative particle worlds.

pub mod scenario;
pub mod world;

pub use scenario::{
    AgentProfile, Physics, ScenarioKind, ScenarioSpec, MOVE_DIRS, MOVE_NAMES, N_MOVES, SCENARIO_NAMES,
};
pub use world::{
    observe, observe_all, reset, reward, reward_coop_nav, reward_coop_nav_comm, reward_speaker_listener, step, Env,
    EnvState, JointAction, JointObservation, StepOutcome, Vec2,
};
