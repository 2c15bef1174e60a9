//! Run configuration: flat `key = value` text, per-scenario defaults, and a
//! resolved snapshot that replays a run exactly.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::dagger::{DaggerConfig, DatasetMode};
use crate::env::ScenarioSpec;
use crate::error::{Error, Result};
use crate::expert::{ExpertConfig, ExpertVariant};
use crate::nn::LossKind;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "CTDE_OUTPUT_ROOT";

/// Every recognized key, in snapshot order.
pub const KEYS: &[&str] = &[
    "scenario",
    "variant",
    "seed",
    "output_dir",
    "expert_episodes",
    "gamma",
    "hidden",
    "batch",
    "lr",
    "tau",
    "clip",
    "temperature",
    "replay_capacity",
    "warmup",
    "eps_start",
    "eps_end",
    "eps_fraction",
    "avg_window",
    "agent_hidden",
    "agent_batch",
    "agent_lr",
    "loss",
    "dataset_mode",
    "dec_episodes",
    "eval_every",
    "eval_episodes",
    "eval_seed",
    "tolerance",
    "min_dataset",
    "supervise_every",
    "comm_loss",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub expert: ExpertConfig,
    pub dagger: DaggerConfig,
}

/// Splits `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: k + 1, reason: format!("expected key = value, got {line:?}") })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(field, format!("cannot parse {v:?}")))
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

impl RunConfig {
    /// Defaults for a scenario and expert variant.
    pub fn defaults(scenario: &str, variant: ExpertVariant) -> Result<Self> {
        let spec = ScenarioSpec::by_name(scenario)?;
        Ok(RunConfig {
            scenario: spec.name.clone(),
            seed: 0,
            output_dir: default_output_root(),
            expert: ExpertConfig::defaults(&spec, variant),
            dagger: DaggerConfig::defaults(&spec),
        })
    }

    /// File values first, then overrides; later values win. `scenario` is
    /// required.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut merged: BTreeMap<String, String> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        let from_file = match file {
            Some(t) => parse_pairs(t)?,
            None => Vec::new(),
        };
        for (k, v) in from_file.into_iter().chain(overrides.iter().cloned()) {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::config(&k, "unknown key"));
            }
            if merged.insert(k.clone(), v).is_none() {
                order.push(k);
            }
        }
        let scenario = merged.get("scenario").ok_or_else(|| Error::config("scenario", "missing"))?;
        let variant = match merged.get("variant") {
            Some(v) => ExpertVariant::from_tag(v)
                .ok_or_else(|| Error::config("variant", format!("expected ddpg, dqn-exp or dqn-vdn, got {v:?}")))?,
            None => ExpertVariant::Ddpg,
        };
        let mut cfg = Self::defaults(scenario, variant)?;
        for k in order {
            if k != "scenario" && k != "variant" {
                cfg.set(&k, &merged[&k])?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let e = &mut self.expert;
        let d = &mut self.dagger;
        match key {
            "seed" => self.seed = num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "expert_episodes" => e.episodes = num(key, v)?,
            "gamma" => e.gamma = num(key, v)?,
            "hidden" => e.hidden = num(key, v)?,
            "batch" => e.batch = num(key, v)?,
            "lr" => e.lr = num(key, v)?,
            "tau" => e.tau = num(key, v)?,
            "clip" => e.clip = if v == "none" { None } else { Some(num(key, v)?) },
            "temperature" => e.temperature = num(key, v)?,
            "replay_capacity" => e.replay_capacity = num(key, v)?,
            "warmup" => e.warmup = num(key, v)?,
            "eps_start" => e.eps_start = num(key, v)?,
            "eps_end" => e.eps_end = num(key, v)?,
            "eps_fraction" => e.eps_fraction = num(key, v)?,
            "avg_window" => e.avg_window = num(key, v)?,
            "agent_hidden" => d.hidden = num(key, v)?,
            "agent_batch" => d.batch = num(key, v)?,
            "agent_lr" => d.lr = num(key, v)?,
            "loss" => {
                d.loss = LossKind::from_tag(v).ok_or_else(|| Error::config(key, "expected cross_entropy or mse"))?
            }
            "dataset_mode" => {
                d.mode = DatasetMode::from_tag(v).ok_or_else(|| Error::config(key, "expected shared or per-agent"))?
            }
            "dec_episodes" => d.max_episodes = num(key, v)?,
            "eval_every" => d.eval_every = num(key, v)?,
            "eval_episodes" => d.eval_episodes = num(key, v)?,
            "eval_seed" => d.eval_seed = num(key, v)?,
            "tolerance" => d.tolerance = num(key, v)?,
            "min_dataset" => d.min_dataset = num(key, v)?,
            "supervise_every" => d.supervise_every = num(key, v)?,
            "comm_loss" => d.comm_loss = num(key, v)?,
            "scenario" | "variant" => return Err(Error::config(key, "fixed at resolution time")),
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        ScenarioSpec::by_name(&self.scenario)?;
        self.expert.validate()?;
        self.dagger.validate()
    }

    pub fn spec(&self) -> ScenarioSpec {
        ScenarioSpec::by_name(&self.scenario).expect("validated scenario")
    }

    /// Every resolved value, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let e = &self.expert;
        let d = &self.dagger;
        let vals = [
            self.scenario.clone(),
            e.variant.tag().to_string(),
            self.seed.to_string(),
            self.output_dir.display().to_string(),
            e.episodes.to_string(),
            fmt_f(e.gamma),
            e.hidden.to_string(),
            e.batch.to_string(),
            fmt_f(e.lr),
            fmt_f(e.tau),
            e.clip.map_or_else(|| "none".to_string(), fmt_f),
            fmt_f(e.temperature),
            e.replay_capacity.to_string(),
            e.warmup.to_string(),
            fmt_f(e.eps_start),
            fmt_f(e.eps_end),
            fmt_f(e.eps_fraction),
            e.avg_window.to_string(),
            d.hidden.to_string(),
            d.batch.to_string(),
            fmt_f(d.lr),
            d.loss.tag().to_string(),
            d.mode.tag().to_string(),
            d.max_episodes.to_string(),
            d.eval_every.to_string(),
            d.eval_episodes.to_string(),
            d.eval_seed.to_string(),
            fmt_f(d.tolerance),
            d.min_dataset.to_string(),
            d.supervise_every.to_string(),
            d.comm_loss.to_string(),
        ];
        KEYS.iter().copied().zip(vals).collect()
    }

    /// Resolved configuration as a config file.
    pub fn snapshot(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        RunConfig { seed, ..self.clone() }
    }

    /// Directory for this scenario and seed under the output root.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.scenario).join(format!("seed{}", self.seed))
    }
}
