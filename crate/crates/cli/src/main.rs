use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ctde_core::config::RunConfig;
use ctde_core::runner::{self, EvalRequest, TheoryCheck, TheoryRequest};

/// Expert training, decentralization, evaluation and tabular checks for
/// cooperative multi-agent particle scenarios.
#[derive(Parser)]
#[command(name = "ctde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the centralized expert.
    TrainExpert(RunArgs),
    /// Imitate the expert with decentralized agents.
    Decentralize {
        #[command(flatten)]
        run: RunArgs,
        /// Expert checkpoint; defaults to the run directory's expert.bin.
        #[arg(long)]
        expert: Option<PathBuf>,
    },
    /// Evaluate agents, an expert, or both on shared seeds.
    Evaluate {
        #[arg(long)]
        agents: Option<PathBuf>,
        #[arg(long)]
        expert: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write one greedy episode, one row per agent per step.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Write the report as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a tabular check: tv-lemma, po-conflict, cost-floor, comm-sufficiency.
    Theory {
        check: String,
        /// Instance in the tabular text format.
        #[arg(long, conflicts_with_all = ["random", "fixture"])]
        instance: Option<PathBuf>,
        /// Number of random instances.
        #[arg(long, conflicts_with = "fixture")]
        random: Option<usize>,
        /// xor, separable or disjoint.
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Message protocol for comm-sufficiency: identity or constant.
        #[arg(long)]
        protocol: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_kv)]
    set: Vec<(String, String)>,
    /// Shorthand for `--set scenario=NAME`.
    #[arg(long)]
    scenario: Option<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run this many consecutive seeds starting at the configured one.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
}

fn parse_kv(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunArgs {
    fn resolve(&self) -> Result<Vec<RunConfig>> {
        let text = match &self.config {
            Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let mut overrides = self.set.clone();
        if let Some(s) = &self.scenario {
            overrides.push(("scenario".into(), s.clone()));
        }
        if let Some(s) = self.seed {
            overrides.push(("seed".into(), s.to_string()));
        }
        let cfg = RunConfig::resolve(text.as_deref(), &overrides)?;
        anyhow::ensure!(self.seeds >= 1, "--seeds must be at least 1");
        Ok((0..self.seeds).map(|k| cfg.with_seed(cfg.seed + k)).collect())
    }
}

fn mean_line(label: &str, xs: &[f64]) {
    if xs.len() > 1 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        println!("{label} over {} seeds: {m:.3}", xs.len());
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::TrainExpert(args) => {
            let mut finals = Vec::new();
            for cfg in args.resolve()? {
                let out = runner::cmd_train_expert(&cfg)?;
                println!(
                    "{} seed {}: {} episodes, final moving average {:.3}, best {:.3} -> {}",
                    cfg.scenario,
                    cfg.seed,
                    out.episodes,
                    out.final_avg,
                    out.best_avg,
                    out.expert_path.display()
                );
                finals.push(out.final_avg);
            }
            mean_line("final moving average", &finals);
            Ok(true)
        }
        Command::Decentralize { run, expert } => {
            let cfgs = run.resolve()?;
            anyhow::ensure!(
                expert.is_none() || cfgs.len() == 1,
                "--expert names one checkpoint; with --seeds each run uses its own run directory"
            );
            let mut evals = Vec::new();
            for cfg in cfgs {
                let out = runner::cmd_decentralize(&cfg, expert.as_deref())?;
                let r = &out.run;
                let agents = r.agent_eval.as_ref().map_or(f64::NAN, |e| e.mean);
                println!(
                    "{} seed {}: expert {:.3}, agents {:.3} after {} episodes ({}) -> {}",
                    cfg.scenario,
                    cfg.seed,
                    r.expert_eval.mean,
                    agents,
                    r.episodes,
                    if r.stopped { "within tolerance" } else { "episode cap" },
                    out.agents_path.display()
                );
                evals.push(agents);
            }
            mean_line("agent evaluation", &evals);
            Ok(true)
        }
        Command::Evaluate { agents, expert, episodes, seed, trajectory, report } => {
            let req = EvalRequest { agents, expert, episodes, seed, trajectory, report };
            let out = runner::cmd_evaluate(&req)?;
            for (name, r) in [("expert", &out.expert), ("agents", &out.agents)] {
                if let Some(r) = r {
                    println!("{name}: mean {:.4} stderr {:.4} over {} episodes (seed {seed})", r.mean, r.stderr, r.episodes);
                }
            }
            if let Some(d) = out.delta() {
                println!("agents - expert: {d:.4}");
            }
            Ok(true)
        }
        Command::Theory { check, instance, random, fixture, seed, protocol } => {
            let check = TheoryCheck::from_name(&check)?;
            let instance = match instance {
                Some(p) => Some(fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?),
                None => None,
            };
            let rep = runner::cmd_theory(check, &TheoryRequest { instance, fixture, random, seed, protocol })?;
            for l in &rep.lines {
                println!("{l}");
            }
            println!("{} passed, {} failed", rep.passed, rep.failed);
            Ok(rep.all_passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
