//! Commands: expert training, decentralization, evaluation and the tabular
//! checks, with their files on disk.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::comm::decentralize_comm;
use crate::config::RunConfig;
use crate::dagger::{decentralize, evaluate_team, local_joint_action, AgentTeam, DecRow, DecentralizeRun};
use crate::env::ScenarioSpec;
use crate::error::{Error, Result};
use crate::eval::{episode_rng, rollout, EvalReport, StepRecord};
use crate::expert::{evaluate_expert, expert_joint_action, train_expert_observed, CurvePoint, Expert};
use crate::nn::Bundle;
use crate::theory::{
    check_comm_sufficiency, check_tv_lemma, cost_floor, detect_po_conflict, disjoint_fixture, imitation_loss,
    local_views, constructive_table, parse_mdp, random_joint_policy, random_mdp, random_tv_case, separable_fixture,
    xor_fixture, CommProtocol, TabularDecMdp, TabularPolicy,
};

pub const EXPERT_FILE: &str = "expert.bin";
pub const EXPERT_CURVE_FILE: &str = "expert_curve.csv";
pub const EXPERT_CONFIG_FILE: &str = "expert_config.txt";
pub const AGENTS_FILE: &str = "agents.bin";
pub const DEC_CURVE_FILE: &str = "decentralize_curve.csv";
pub const DEC_CONFIG_FILE: &str = "decentralize_config.txt";

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn parse_f(s: &str, line: usize) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse { line, reason: format!("bad number {s:?}") })
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f(s, line).map(Some)
    }
}

fn parse_u(s: &str, line: usize) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse { line, reason: format!("bad integer {s:?}") })
}

pub fn write_expert_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "reward", "moving_avg"])?;
    for p in curve {
        w.write_record([p.episode.to_string(), fmt_f(p.reward), fmt_f(p.moving_avg)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_expert_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != 3 {
            return Err(Error::Parse { line, reason: "expected 3 fields".into() });
        }
        out.push(CurvePoint { episode: parse_u(&rec[0], line)?, reward: parse_f(&rec[1], line)?, moving_avg: parse_f(&rec[2], line)? });
    }
    Ok(out)
}

/// Header of the decentralization curve for `m` agents.
pub fn dec_curve_header(m: usize, with_comm: bool) -> Vec<String> {
    let mut h: Vec<String> = ["episode", "train_reward", "eval_reward", "dataset_len"].iter().map(|s| s.to_string()).collect();
    h.extend((0..m).map(|i| format!("loss_{i}")));
    if with_comm {
        h.extend((0..m).map(|i| format!("comm_loss_{i}")));
    }
    h
}

pub fn write_dec_curve(path: &Path, m: usize, with_comm: bool, rows: &[DecRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(dec_curve_header(m, with_comm))?;
    for r in rows {
        let mut rec = vec![r.episode.to_string(), fmt_f(r.train_reward), fmt_opt(r.eval_reward), r.dataset_len.to_string()];
        rec.extend((0..m).map(|i| fmt_opt(r.action_loss.get(i).copied().flatten())));
        if with_comm {
            rec.extend((0..m).map(|i| fmt_opt(r.comm_loss.get(i).copied().flatten())));
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dec_curve(path: &Path) -> Result<Vec<DecRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let m = header.iter().filter(|h| h.starts_with("loss_")).count();
    let with_comm = header.iter().any(|h| h.starts_with("comm_loss_"));
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let want = 4 + m * (1 + usize::from(with_comm));
        if rec.len() != want {
            return Err(Error::Parse { line, reason: format!("expected {want} fields") });
        }
        let action_loss = (0..m).map(|i| parse_opt(&rec[4 + i], line)).collect::<Result<Vec<_>>>()?;
        let comm_loss = if with_comm {
            (0..m).map(|i| parse_opt(&rec[4 + m + i], line)).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        out.push(DecRow {
            episode: parse_u(&rec[0], line)?,
            train_reward: parse_f(&rec[1], line)?,
            eval_reward: parse_opt(&rec[2], line)?,
            dataset_len: parse_u(&rec[3], line)?,
            action_loss,
            comm_loss,
        });
    }
    Ok(out)
}

/// One row per agent per step.
pub fn write_trajectory(path: &Path, rows: &[StepRecord<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "agent", "x", "y", "vx", "vy", "move", "reward"])?;
    for r in rows {
        for (i, (p, v)) in r.pos.iter().zip(&r.vel).enumerate() {
            w.write_record([
                r.timestep.to_string(),
                i.to_string(),
                fmt_f(p[0]),
                fmt_f(p[1]),
                fmt_f(v[0]),
                fmt_f(v[1]),
                r.moves[i].to_string(),
                fmt_f(r.reward),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn scenario_of(bundle: &Bundle<f64>) -> Result<ScenarioSpec> {
    let name = bundle.tag("scenario").ok_or_else(|| Error::Checkpoint("bundle lacks a scenario tag".into()))?;
    ScenarioSpec::by_name(name)
}

pub fn load_expert(path: &Path) -> Result<(ScenarioSpec, Expert<f64>)> {
    let b = Bundle::load(path)?;
    let spec = scenario_of(&b)?;
    Ok((spec, Expert::from_bundle(&b)?))
}

pub fn load_agents(path: &Path) -> Result<(ScenarioSpec, AgentTeam<f64>)> {
    let b = Bundle::load(path)?;
    let spec = scenario_of(&b)?;
    let team = AgentTeam::from_bundle(&spec, &b, 0.0)?;
    Ok((spec, team))
}

#[derive(Debug, Clone)]
pub struct TrainExpertOutput {
    pub dir: PathBuf,
    pub expert_path: PathBuf,
    pub curve_path: PathBuf,
    pub config_path: PathBuf,
    pub final_avg: f64,
    pub best_avg: f64,
    pub episodes: usize,
}

/// Trains the expert for the configured scenario and seed. The saved
/// network is the one with the best moving-average return.
pub fn cmd_train_expert(cfg: &RunConfig) -> Result<TrainExpertOutput> {
    cfg.validate()?;
    let spec = cfg.spec();
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir)?;
    let config_path = dir.join(EXPERT_CONFIG_FILE);
    fs::write(&config_path, cfg.snapshot())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let run = train_expert_observed::<f64, _, _>(&spec, &cfg.expert, &mut rng, |_| {})?;
    let expert_path = dir.join(EXPERT_FILE);
    run.best
        .to_bundle()
        .with_tag("scenario", spec.name.clone())
        .with_tag("seed", cfg.seed.to_string())
        .with_tag("episodes", cfg.expert.episodes.to_string())
        .save(&expert_path)?;
    let curve_path = dir.join(EXPERT_CURVE_FILE);
    write_expert_curve(&curve_path, &run.curve)?;
    Ok(TrainExpertOutput {
        dir,
        expert_path,
        curve_path,
        config_path,
        final_avg: run.final_avg(),
        best_avg: run.best_avg,
        episodes: cfg.expert.episodes,
    })
}

#[derive(Debug, Clone)]
pub struct DecentralizeOutput {
    pub dir: PathBuf,
    pub agents_path: PathBuf,
    pub curve_path: PathBuf,
    pub config_path: PathBuf,
    pub run: DecentralizeRun<f64>,
}

/// Decentralizes the expert stored at `expert_path`, or at the run
/// directory's expert file. Scenarios with messages use message learning.
pub fn cmd_decentralize(cfg: &RunConfig, expert_path: Option<&Path>) -> Result<DecentralizeOutput> {
    cfg.validate()?;
    let spec = cfg.spec();
    let dir = cfg.run_dir();
    let expert_path = expert_path.map(Path::to_path_buf).unwrap_or_else(|| dir.join(EXPERT_FILE));
    let (expert_spec, expert) = load_expert(&expert_path)?;
    if expert_spec.name != spec.name {
        return Err(Error::ScenarioMismatch(format!(
            "expert was trained on {}, configuration names {}",
            expert_spec.name, spec.name
        )));
    }
    fs::create_dir_all(&dir)?;
    let config_path = dir.join(DEC_CONFIG_FILE);
    fs::write(&config_path, cfg.snapshot())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let run = if spec.has_comm() {
        decentralize_comm(&expert, &spec, &cfg.dagger, &mut rng, |_| {})?
    } else {
        decentralize(&expert, &spec, &cfg.dagger, &mut rng, |_| {})?
    };
    let agents_path = dir.join(AGENTS_FILE);
    run.team.to_bundle(&spec.name).with_tag("seed", cfg.seed.to_string()).save(&agents_path)?;
    let curve_path = dir.join(DEC_CURVE_FILE);
    write_dec_curve(&curve_path, spec.n_agents(), spec.has_comm(), &run.curve)?;
    Ok(DecentralizeOutput { dir, agents_path, curve_path, config_path, run })
}

#[derive(Debug, Clone, Default)]
pub struct EvalRequest {
    pub agents: Option<PathBuf>,
    pub expert: Option<PathBuf>,
    pub episodes: usize,
    pub seed: u64,
    pub trajectory: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub scenario: String,
    pub expert: Option<EvalReport>,
    pub agents: Option<EvalReport>,
}

impl EvalOutput {
    /// Agents minus expert, when both were evaluated.
    pub fn delta(&self) -> Option<f64> {
        Some(self.agents.as_ref()?.mean - self.expert.as_ref()?.mean)
    }
}

/// Greedy evaluation of agents, expert, or both on shared seeds.
pub fn cmd_evaluate(req: &EvalRequest) -> Result<EvalOutput> {
    if req.agents.is_none() && req.expert.is_none() {
        return Err(Error::InvalidArgument("nothing to evaluate: give agents, an expert, or both".into()));
    }
    let expert = req.expert.as_deref().map(load_expert).transpose()?;
    let agents = req.agents.as_deref().map(load_agents).transpose()?;
    let spec = match (&expert, &agents) {
        (Some((a, _)), Some((b, _))) if a.name != b.name => {
            return Err(Error::ScenarioMismatch(format!("expert is for {}, agents are for {}", a.name, b.name)))
        }
        (Some((s, _)), _) | (_, Some((s, _))) => s.clone(),
        (None, None) => unreachable!(),
    };
    let er = expert.as_ref().map(|(_, e)| evaluate_expert(e, &spec, req.episodes, req.seed)).transpose()?;
    let ar = agents.as_ref().map(|(_, t)| evaluate_team(t, &spec, req.episodes, req.seed)).transpose()?;
    if let Some(path) = &req.trajectory {
        let mut rng = episode_rng(req.seed, 0);
        let rows = match (&agents, &expert) {
            (Some((_, t)), _) => rollout(&spec, &mut rng, &mut |_, o| local_joint_action(t, &spec, o), true)?.1,
            (None, Some((_, e))) => rollout(&spec, &mut rng, &mut |_, o| expert_joint_action(e, &spec, o), true)?.1,
            (None, None) => unreachable!(),
        };
        write_trajectory(path, &rows)?;
    }
    let out = EvalOutput { scenario: spec.name.clone(), expert: er, agents: ar };
    if let Some(path) = &req.report {
        write_eval_report(path, &out, req.seed)?;
    }
    Ok(out)
}

pub fn write_eval_report(path: &Path, out: &EvalOutput, seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["target", "scenario", "episodes", "seed", "mean", "stderr", "std"])?;
    for (name, r) in [("expert", &out.expert), ("agents", &out.agents)] {
        if let Some(r) = r {
            w.write_record([
                name.to_string(),
                out.scenario.clone(),
                r.episodes.to_string(),
                seed.to_string(),
                fmt_f(r.mean),
                fmt_f(r.stderr),
                fmt_f(r.std),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoryCheck {
    TvLemma,
    PoConflict,
    CostFloor,
    CommSufficiency,
}

impl TheoryCheck {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tv-lemma" => Ok(TheoryCheck::TvLemma),
            "po-conflict" => Ok(TheoryCheck::PoConflict),
            "cost-floor" => Ok(TheoryCheck::CostFloor),
            "comm-sufficiency" => Ok(TheoryCheck::CommSufficiency),
            _ => Err(Error::InvalidArgument(format!(
                "unknown check {name:?}; expected tv-lemma, po-conflict, cost-floor or comm-sufficiency"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TheoryRequest {
    /// Instance in the tabular text format, with an expert.
    pub instance: Option<String>,
    /// Named fixture: xor, separable or disjoint.
    pub fixture: Option<String>,
    /// Number of random instances.
    pub random: Option<usize>,
    pub seed: u64,
    /// identity or constant.
    pub protocol: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub lines: Vec<String>,
    pub passed: usize,
    pub failed: usize,
}

impl TheoryReport {
    fn record(&mut self, ok: bool, line: String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        self.lines.push(format!("{} {line}", if ok { "PASS" } else { "FAIL" }));
    }

    pub fn all_passed(&self) -> bool {
        self.failed == 0 && self.passed > 0
    }
}

fn fixture(name: &str) -> Result<(TabularDecMdp, TabularPolicy)> {
    match name {
        "xor" => Ok(xor_fixture()),
        "separable" => Ok(separable_fixture()),
        "disjoint" => {
            let (m, e, _) = disjoint_fixture();
            Ok((m, e))
        }
        _ => Err(Error::InvalidArgument(format!("unknown fixture {name:?}; expected xor, separable or disjoint"))),
    }
}

fn instances(req: &TheoryRequest, default: &str) -> Result<Vec<(String, TabularDecMdp, TabularPolicy)>> {
    if let Some(text) = &req.instance {
        let (m, e) = parse_mdp(text)?;
        let e = e.ok_or_else(|| Error::InvalidArgument("instance file has no expert table".into()))?;
        return Ok(vec![("instance".into(), m, e)]);
    }
    if let Some(n) = req.random {
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        return Ok((0..n)
            .map(|k| {
                let m = random_mdp(&mut rng);
                let e = random_joint_policy(&mut rng, &m);
                (format!("random #{k}"), m, e)
            })
            .collect());
    }
    let name = req.fixture.as_deref().unwrap_or(default);
    let (m, e) = fixture(name)?;
    Ok(vec![(name.to_string(), m, e)])
}

pub fn cmd_theory(check: TheoryCheck, req: &TheoryRequest) -> Result<TheoryReport> {
    let mut rep = TheoryReport { lines: Vec::new(), passed: 0, failed: 0 };
    match check {
        TheoryCheck::TvLemma => {
            let cases: Vec<(String, TabularDecMdp, TabularPolicy, TabularPolicy, f64)> = if let Some(n) = req.random {
                let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
                (0..n)
                    .map(|k| {
                        let (m, e, l, b) = random_tv_case(&mut rng);
                        (format!("random #{k}"), m, e, l, b)
                    })
                    .collect()
            } else if req.instance.is_some() || req.fixture.as_deref().is_some_and(|f| f != "disjoint") {
                let (name, m, e) = instances(req, "xor")?.remove(0);
                let na = m.n_joint_actions();
                let uniform = TabularPolicy::Joint(vec![vec![1.0 / na as f64; na]; m.n_obs()]);
                [0.0, 0.1, 0.5, 1.0].iter().map(|&b| (format!("{name} beta={b}"), m.clone(), e.clone(), uniform.clone(), b)).collect()
            } else {
                let (m, e, l) = disjoint_fixture();
                vec![("disjoint beta=1".into(), m, e, l, 1.0)]
            };
            for (name, m, e, l, b) in cases {
                let r = check_tv_lemma(&m, &e, &l, b)?;
                rep.record(r.holds, format!("{name}: |d_mix - d_learner|_1 = {:.6} <= 2T*beta = {:.6}", r.lhs, r.bound));
            }
        }
        TheoryCheck::PoConflict => {
            for (name, m, e) in instances(req, "separable")? {
                let conflicts = detect_po_conflict(&e, &m)?;
                let views = local_views(&m);
                let table = constructive_table(&m, &e, &views);
                let uniform = vec![1.0 / m.n_obs() as f64; m.n_obs()];
                let zero = imitation_loss(&m, &e, &views, &table, &uniform) == 0.0;
                let msg = if conflicts.is_empty() {
                    "no conflicts".to_string()
                } else {
                    let list: Vec<String> =
                        conflicts.iter().map(|c| format!("(agent {}, o={}, o'={})", c.agent, c.o, c.o2)).collect();
                    format!("{} conflicts: {}", conflicts.len(), list.join(" "))
                };
                rep.record(conflicts.is_empty() == zero, format!("{name}: {msg}; constructive policy exact: {zero}"));
            }
        }
        TheoryCheck::CostFloor => {
            for (name, m, e) in instances(req, "xor")? {
                let r = cost_floor(&m, &e)?;
                let ok = r.min_loss >= r.floor - 1e-12
                    && (r.conflicts.is_empty() == (r.floor == 0.0))
                    && (!r.conflicts.is_empty() || r.constructive_loss == 0.0);
                rep.record(
                    ok,
                    format!(
                        "{name}: {} conflicts, floor c_p = {:.6}, brute-force minimum = {:.6}, constructive = {:.6}",
                        r.conflicts.len(),
                        r.floor,
                        r.min_loss,
                        r.constructive_loss
                    ),
                );
            }
        }
        TheoryCheck::CommSufficiency => {
            let proto = req.protocol.as_deref().unwrap_or("identity");
            for (name, m, e) in instances(req, "xor")? {
                let p = match proto {
                    "identity" => CommProtocol::identity(&m),
                    "constant" => CommProtocol::constant(&m),
                    other => return Err(Error::InvalidArgument(format!("unknown protocol {other:?}"))),
                };
                let r = check_comm_sufficiency(&e, &m, &p)?;
                rep.record(
                    r.holds && r.behavior_matches,
                    format!(
                        "{name} with {proto} messages: condition {}, {} unseparated conflicts, behavior matches: {}",
                        if r.holds { "holds" } else { "fails" },
                        r.unseparated.len(),
                        r.behavior_matches
                    ),
                );
            }
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theory_commands() {
        let r = cmd_theory(TheoryCheck::TvLemma, &TheoryRequest { random: Some(50), ..Default::default() }).unwrap();
        assert!(r.all_passed());
        assert_eq!(r.passed, 50);
        let r = cmd_theory(TheoryCheck::PoConflict, &TheoryRequest::default()).unwrap();
        assert!(r.all_passed());
        assert!(r.lines[0].contains("no conflicts"));
        let r = cmd_theory(TheoryCheck::CommSufficiency, &TheoryRequest::default()).unwrap();
        assert!(r.all_passed());
        let constant = TheoryRequest { protocol: Some("constant".into()), ..Default::default() };
        assert!(!cmd_theory(TheoryCheck::CommSufficiency, &constant).unwrap().all_passed());
        let r = cmd_theory(TheoryCheck::CostFloor, &TheoryRequest::default()).unwrap();
        assert!(r.all_passed(), "{:?}", r.lines);
        assert!(TheoryCheck::from_name("nope").is_err());
    }

    #[test]
    fn curves_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![
            CurvePoint { episode: 0, reward: -1.0 / 3.0, moving_avg: -0.1 },
            CurvePoint { episode: 1, reward: 1e-300, moving_avg: 2.5e10 },
        ];
        let p = dir.path().join("e.csv");
        write_expert_curve(&p, &pts).unwrap();
        assert_eq!(read_expert_curve(&p).unwrap(), pts);
        let rows = vec![
            DecRow {
                episode: 1,
                train_reward: -12.25,
                eval_reward: None,
                action_loss: vec![None, Some(0.1 + 0.2)],
                comm_loss: vec![Some(1.0 / 7.0), None],
                dataset_len: 24,
            },
            DecRow {
                episode: 2,
                train_reward: -3.0,
                eval_reward: Some(-2.0 / 3.0),
                action_loss: vec![Some(0.5), Some(0.25)],
                comm_loss: vec![Some(0.0), None],
                dataset_len: 48,
            },
        ];
        let p = dir.path().join("d.csv");
        write_dec_curve(&p, 2, true, &rows).unwrap();
        assert_eq!(read_dec_curve(&p).unwrap(), rows);
        let plain: Vec<DecRow> = rows.iter().map(|r| DecRow { comm_loss: Vec::new(), ..r.clone() }).collect();
        write_dec_curve(&p, 2, false, &plain).unwrap();
        assert_eq!(read_dec_curve(&p).unwrap(), plain);
    }
}
