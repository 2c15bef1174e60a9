//! End to end on a conflict-free toy: one navigating agent sees everything
//! its expert sees, so imitation should close the gap to the expert.

use ctde_core::dagger::{decentralize, evaluate_team, DaggerConfig};
use ctde_core::env::ScenarioSpec;
use ctde_core::expert::{evaluate_expert, ExpertConfig, ExpertVariant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn single_agent_imitation_matches_the_expert_within_tolerance() {
    let spec = ScenarioSpec::coop_nav(1, false);
    spec.validate().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ecfg = ExpertConfig::defaults(&spec, ExpertVariant::Ddpg);
    ecfg.hidden = 32;
    let expert = ecfg.build::<f64, _>(&spec, &mut rng).unwrap();
    let mut cfg = DaggerConfig::defaults(&spec);
    cfg.hidden = 32;
    cfg.min_dataset = 256;
    cfg.max_episodes = 400;
    cfg.eval_every = 20;
    cfg.eval_episodes = 50;
    let run = decentralize(&expert, &spec, &cfg, &mut rng, |_| {}).unwrap();
    assert!(run.stopped, "no stop within {} episodes", cfg.max_episodes);
    let e = evaluate_expert(&expert, &spec, 1000, 17).unwrap();
    let a = evaluate_team(&run.team, &spec, 1000, 17).unwrap();
    assert!((a.mean - e.mean).abs() <= cfg.tolerance, "agents {} expert {}", a.mean, e.mean);
}
