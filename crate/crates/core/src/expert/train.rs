//! Expert training loop.

use std::collections::VecDeque;

use rand::Rng;

use crate::env::{reset, step, JointAction, ScenarioKind, ScenarioSpec};
use crate::error::{Error, Result};
use crate::expert::ddpg::{one_hot_blocks, ActMode, DdpgExpert, DdpgParams};
use crate::expert::dqn::{DqnExpert, DqnParams, DqnVariant};
use crate::expert::replay::{ReplayBuffer, Transition};
use crate::expert::{full_moves, Expert, ExpertVariant};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    pub variant: ExpertVariant,
    pub episodes: usize,
    pub hidden: usize,
    pub batch: usize,
    pub lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub clip: Option<f64>,
    pub temperature: f64,
    pub replay_capacity: usize,
    pub warmup: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the episode budget over which epsilon is annealed.
    pub eps_fraction: f64,
    pub avg_window: usize,
}

impl ExpertConfig {
    /// Per-scenario defaults.
    pub fn defaults(spec: &ScenarioSpec, variant: ExpertVariant) -> Self {
        let m = spec.n_agents();
        let (hidden, batch, lr, tau, clip) = match spec.kind {
            ScenarioKind::CoopNav if m <= 3 => (225, 64, 1e-3, 1e-3, Some(0.1)),
            ScenarioKind::CoopNav => (240, 32, 1e-4, 1e-4, Some(0.1)),
            ScenarioKind::SpeakerListener => (64, 32, 1e-4, 1e-3, None),
            ScenarioKind::CoopNavComm => (95, 32, 1e-4, 1e-4, None),
        };
        let base = ExpertConfig {
            variant,
            episodes: 50_000,
            hidden,
            batch,
            lr,
            tau,
            gamma: 0.9,
            clip,
            temperature: 1.0,
            replay_capacity: 1_000_000,
            warmup: 1024,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.1,
            avg_window: 1000,
        };
        match variant {
            ExpertVariant::Ddpg => base,
            ExpertVariant::DqnExp => ExpertConfig { hidden: 200, batch: 64, lr: 5e-4, tau: 5e-4, clip: None, ..base },
            ExpertVariant::DqnVdn => ExpertConfig { hidden: 200, batch: 64, lr: 1e-3, tau: 1e-3, clip: None, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("episodes", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("tau", "must lie in [0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1]"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature", "must be positive"));
        }
        if self.replay_capacity < self.batch {
            return Err(Error::config("replay_capacity", "must hold at least one batch"));
        }
        if self.avg_window == 0 {
            return Err(Error::config("avg_window", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err(Error::config("eps", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Exploration rate for episode `ep`, linear from start to end over the
    /// first `eps_fraction` of the budget.
    pub fn epsilon(&self, ep: usize) -> f64 {
        let span = (self.eps_fraction * self.episodes as f64).max(1.0);
        let f = (ep as f64 / span).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * f
    }

    pub fn build<S: Scalar, R: Rng + ?Sized>(&self, spec: &ScenarioSpec, rng: &mut R) -> Result<Expert<S>> {
        let input = spec.expert_input_len();
        let heads = spec.movable_agents().len();
        Ok(match self.variant {
            ExpertVariant::Ddpg => {
                let p = DdpgParams {
                    hidden: self.hidden,
                    lr: self.lr,
                    tau: self.tau,
                    gamma: self.gamma,
                    clip: self.clip,
                    temperature: self.temperature,
                };
                Expert::Ddpg(DdpgExpert::new(input, heads, p, rng)?)
            }
            ExpertVariant::DqnExp | ExpertVariant::DqnVdn => {
                let v = if self.variant == ExpertVariant::DqnExp { DqnVariant::Exponential } else { DqnVariant::Vdn };
                let p = DqnParams { hidden: self.hidden, lr: self.lr, tau: self.tau, gamma: self.gamma, clip: self.clip };
                Expert::Dqn(DqnExpert::new(input, heads, v, p, rng)?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    pub reward: f64,
    pub moving_avg: f64,
}

#[derive(Debug, Clone)]
pub struct ExpertRun<S> {
    pub expert: Expert<S>,
    /// Snapshot with the best moving average once the window is full (or
    /// the final expert if the run is shorter than the window).
    pub best: Expert<S>,
    pub best_avg: f64,
    pub curve: Vec<CurvePoint>,
}

impl<S> ExpertRun<S> {
    pub fn final_avg(&self) -> f64 {
        self.curve.last().map(|p| p.moving_avg).unwrap_or(f64::NAN)
    }
}

pub fn train_expert<S: Scalar, R: Rng + ?Sized>(spec: &ScenarioSpec, cfg: &ExpertConfig, rng: &mut R) -> Result<ExpertRun<S>> {
    train_expert_observed(spec, cfg, rng, |_| {})
}

/// Training loop with a per-episode callback.
pub fn train_expert_observed<S, R, F>(spec: &ScenarioSpec, cfg: &ExpertConfig, rng: &mut R, mut on_episode: F) -> Result<ExpertRun<S>>
where
    S: Scalar,
    R: Rng + ?Sized,
    F: FnMut(&CurvePoint),
{
    spec.validate()?;
    cfg.validate()?;
    let mut expert = cfg.build::<S, R>(spec, rng)?;
    let mut replay = ReplayBuffer::new(cfg.replay_capacity)?;
    let gate = cfg.warmup.max(cfg.batch);
    let mut window: VecDeque<f64> = VecDeque::with_capacity(cfg.avg_window);
    let mut window_sum = 0.0;
    let mut curve = Vec::with_capacity(cfg.episodes);
    let full_at = cfg.avg_window.min(cfg.episodes);
    let mut best: Option<(f64, Expert<S>)> = None;

    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon(ep);
        let (mut state, obs) = reset::<S, R>(spec, rng);
        let mut x = spec.expert_input(&obs)?;
        let mut total = 0.0;
        loop {
            let moves = match &expert {
                Expert::Ddpg(e) => e.act(&x, ActMode::Sample, rng)?.moves,
                Expert::Dqn(e) => e.act_eps(&x, eps, rng)?,
            };
            let action = JointAction::silent(spec, full_moves(spec, &moves)?);
            let out = step(spec, &mut state, &action)?;
            let next = spec.expert_input(&out.obs)?;
            total += out.reward.to_f64_lossy();
            replay.push(Transition {
                obs: std::mem::take(&mut x),
                action: one_hot_blocks(&moves),
                reward: out.reward,
                next_obs: next.clone(),
                done: out.done,
            })?;
            if replay.len() >= gate {
                let batch = replay.sample(cfg.batch, rng)?;
                match &mut expert {
                    Expert::Ddpg(e) => {
                        e.update(&batch, rng)?;
                    }
                    Expert::Dqn(e) => {
                        e.update(&batch)?;
                    }
                }
            }
            x = next;
            if out.done {
                break;
            }
        }
        if window.len() == cfg.avg_window {
            window_sum -= window.pop_front().unwrap();
        }
        window.push_back(total);
        window_sum += total;
        let point = CurvePoint { episode: ep, reward: total, moving_avg: window_sum / window.len() as f64 };
        on_episode(&point);
        curve.push(point);
        if ep + 1 >= full_at && best.as_ref().map_or(true, |(b, _)| point.moving_avg > *b) {
            best = Some((point.moving_avg, expert.clone()));
        }
    }
    let (best_avg, best) = best.expect("at least one episode");
    Ok(ExpertRun { expert, best, best_avg, curve })
}
