//! Exact checks on enumerable toy instances: the mixture distribution bound,
//! the partial-observability conflict detector with its cost floor, and the
//! message sufficiency condition.

pub mod checks;
pub mod mdp;

pub use checks::{
    brute_force_min_loss, check_comm_sufficiency, check_tv_lemma, conflict_floor, constructive_table, cost_floor,
    detect_conflicts, detect_po_conflict, imitation_loss, l1, mixture, occupancy, state_distribution, CommProtocol,
    CommSufficiency, Conflict, CostFloorReport, Occupancy, TvReport, MAX_POLICIES,
};
pub use mdp::{
    disjoint_fixture, local_views, parse_mdp, random_joint_policy, random_mdp, random_simplex, separable_fixture,
    xor_fixture, TabularDecMdp, TabularPolicy, MAX_ACTIONS, MAX_HORIZON, MAX_JOINT_OBS,
};

use rand::Rng;

/// Random instance, expert, learner and mixing rate for the distribution
/// bound.
pub fn random_tv_case<R: Rng + ?Sized>(rng: &mut R) -> (TabularDecMdp, TabularPolicy, TabularPolicy, f64) {
    let mdp = random_mdp(rng);
    let e = random_joint_policy(rng, &mdp);
    let l = random_joint_policy(rng, &mdp);
    let beta = match rng.gen_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen::<f64>(),
    };
    (mdp, e, l, beta)
}
