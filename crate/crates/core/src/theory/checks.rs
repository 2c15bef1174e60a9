//! Exact checks on tabular instances.

use crate::error::{Error, Result};
use crate::theory::mdp::{local_views, TabularDecMdp, TabularPolicy};

/// Observation distributions of one policy. `per_step[0]` is the initial
/// distribution and `per_step[t]` the distribution after `t` transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub per_step: Vec<Vec<f64>>,
    /// Mean of `per_step[1..=T]`.
    pub average: Vec<f64>,
}

/// Largest number of deterministic policies the brute-force search visits.
pub const MAX_POLICIES: usize = 1 << 20;

fn propagate(mdp: &TabularDecMdp, policy: &TabularPolicy, d: &[f64]) -> Vec<f64> {
    let mut next = vec![0.0; mdp.n_obs()];
    for (o, &p) in d.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (a, &pa) in policy.joint_dist(mdp, o).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (n, &pt) in next.iter_mut().zip(&mdp.trans[o][a]) {
                *n += p * pa * pt;
            }
        }
    }
    next
}

/// Exact forward propagation over the horizon.
pub fn occupancy(mdp: &TabularDecMdp, policy: &TabularPolicy) -> Result<Occupancy> {
    mdp.validate()?;
    policy.validate(mdp)?;
    let mut per_step = vec![mdp.init.clone()];
    for _ in 0..mdp.horizon {
        let next = propagate(mdp, policy, per_step.last().unwrap());
        per_step.push(next);
    }
    let t = mdp.horizon as f64;
    let average = (0..mdp.n_obs()).map(|o| per_step[1..].iter().map(|d| d[o]).sum::<f64>() / t).collect();
    Ok(Occupancy { per_step, average })
}

/// Distribution after `t` transitions, and the horizon average.
pub fn state_distribution(mdp: &TabularDecMdp, policy: &TabularPolicy, t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if t > mdp.horizon {
        return Err(Error::InvalidArgument(format!("step {t} is past the horizon {}", mdp.horizon)));
    }
    let occ = occupancy(mdp, policy)?;
    Ok((occ.per_step[t].clone(), occ.average))
}

/// Policy that follows the expert with probability `beta` at every step and
/// the learner otherwise.
pub fn mixture(mdp: &TabularDecMdp, expert: &TabularPolicy, learner: &TabularPolicy, beta: f64) -> TabularPolicy {
    TabularPolicy::Joint(
        (0..mdp.n_obs())
            .map(|o| {
                let e = expert.joint_dist(mdp, o);
                let l = learner.joint_dist(mdp, o);
                e.iter().zip(&l).map(|(&pe, &pl)| beta * pe + (1.0 - beta) * pl).collect()
            })
            .collect(),
    )
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvReport {
    pub lhs: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Distance between the mixture's and the learner's average distributions
/// against `2 T beta`.
pub fn check_tv_lemma(
    mdp: &TabularDecMdp,
    expert: &TabularPolicy,
    learner: &TabularPolicy,
    beta: f64,
) -> Result<TvReport> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} is outside [0, 1]")));
    }
    expert.validate(mdp)?;
    let mix = mixture(mdp, expert, learner, beta);
    let dm = occupancy(mdp, &mix)?;
    let dl = occupancy(mdp, learner)?;
    let lhs = l1(&dm.average, &dl.average);
    let bound = 2.0 * mdp.horizon as f64 * beta;
    Ok(TvReport { lhs, bound, holds: lhs <= bound + 1e-12 })
}

/// Two joint observations that share agent `agent`'s view but on which the
/// expert prescribes that agent different actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conflict {
    pub agent: usize,
    pub o: usize,
    pub o2: usize,
}

fn check_views(mdp: &TabularDecMdp, views: &[Vec<usize>]) -> Result<()> {
    if views.len() != mdp.n_agents() || views.iter().any(|v| v.len() != mdp.n_obs()) {
        return Err(Error::InvalidArgument("view table does not match the instance".into()));
    }
    Ok(())
}

/// Conflicts of the greedy expert under arbitrary per-agent views.
pub fn detect_conflicts(mdp: &TabularDecMdp, expert: &TabularPolicy, views: &[Vec<usize>]) -> Result<Vec<Conflict>> {
    check_views(mdp, views)?;
    expert.validate(mdp)?;
    let acts: Vec<Vec<usize>> = (0..mdp.n_obs()).map(|o| expert.greedy(mdp, o)).collect();
    let mut out = Vec::new();
    for agent in 0..mdp.n_agents() {
        for o in 0..mdp.n_obs() {
            for o2 in o + 1..mdp.n_obs() {
                if views[agent][o] == views[agent][o2] && acts[o][agent] != acts[o2][agent] {
                    out.push(Conflict { agent, o, o2 });
                }
            }
        }
    }
    Ok(out)
}

/// Conflicts when every agent sees only its local observation.
pub fn detect_po_conflict(expert: &TabularPolicy, mdp: &TabularDecMdp) -> Result<Vec<Conflict>> {
    detect_conflicts(mdp, expert, &local_views(mdp))
}

/// Per-agent table copying the expert's action at the first joint
/// observation showing each view. Unseen views get action 0.
pub fn constructive_table(mdp: &TabularDecMdp, expert: &TabularPolicy, views: &[Vec<usize>]) -> Vec<Vec<usize>> {
    (0..mdp.n_agents())
        .map(|i| {
            let n_views = views[i].iter().max().map_or(0, |&v| v + 1);
            let mut t = vec![None; n_views];
            for o in 0..mdp.n_obs() {
                t[views[i][o]].get_or_insert_with(|| expert.greedy(mdp, o)[i]);
            }
            t.into_iter().map(|a| a.unwrap_or(0)).collect()
        })
        .collect()
}

/// Expected 0-1 disagreement with the greedy expert, averaged over agents,
/// under observation weights `w`.
pub fn imitation_loss(
    mdp: &TabularDecMdp,
    expert: &TabularPolicy,
    views: &[Vec<usize>],
    table: &[Vec<usize>],
    w: &[f64],
) -> f64 {
    let m = mdp.n_agents() as f64;
    (0..mdp.n_obs())
        .map(|o| {
            let e = expert.greedy(mdp, o);
            let miss = (0..mdp.n_agents()).filter(|&i| table[i][views[i][o]] != e[i]).count();
            w[o] * miss as f64 / m
        })
        .sum()
}

/// Lower bound on the imitation loss implied by the conflicts: within each
/// view, at most the heaviest expert action can be matched.
pub fn conflict_floor(mdp: &TabularDecMdp, expert: &TabularPolicy, views: &[Vec<usize>], w: &[f64]) -> Result<f64> {
    check_views(mdp, views)?;
    let m = mdp.n_agents() as f64;
    let mut floor = 0.0;
    for i in 0..mdp.n_agents() {
        let n_views = views[i].iter().max().map_or(0, |&v| v + 1);
        let mut mass = vec![vec![0.0; mdp.n_actions[i]]; n_views];
        for o in 0..mdp.n_obs() {
            mass[views[i][o]][expert.greedy(mdp, o)[i]] += w[o];
        }
        for row in mass {
            let total: f64 = row.iter().sum();
            let best = row.iter().cloned().fold(0.0, f64::max);
            floor += (total - best) / m;
        }
    }
    Ok(floor)
}

/// Minimum imitation loss over every deterministic per-agent table, found by
/// enumeration. Returns the loss and one minimizing table.
pub fn brute_force_min_loss(
    mdp: &TabularDecMdp,
    expert: &TabularPolicy,
    views: &[Vec<usize>],
    w: &[f64],
) -> Result<(f64, Vec<Vec<usize>>)> {
    check_views(mdp, views)?;
    let sizes: Vec<usize> = views.iter().map(|v| v.iter().max().map_or(0, |&x| x + 1)).collect();
    let mut digits = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        digits.extend(std::iter::repeat(mdp.n_actions[i]).take(n));
    }
    let count = digits.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d).filter(|&c| c <= MAX_POLICIES));
    let Some(count) = count else {
        return Err(Error::BudgetExceeded(format!("more than {MAX_POLICIES} decentralized policies")));
    };
    let mut best = (f64::INFINITY, Vec::new());
    let mut code = vec![0usize; digits.len()];
    for _ in 0..count {
        let mut table = Vec::with_capacity(sizes.len());
        let mut k = 0;
        for &n in &sizes {
            table.push(code[k..k + n].to_vec());
            k += n;
        }
        let l = imitation_loss(mdp, expert, views, &table, w);
        if l < best.0 {
            best = (l, table);
        }
        for (c, &d) in code.iter_mut().zip(&digits) {
            *c += 1;
            if *c < d {
                break;
            }
            *c = 0;
        }
    }
    Ok(best)
}

/// Cost floor at toy scale, under the expert's own occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFloorReport {
    pub conflicts: Vec<Conflict>,
    pub floor: f64,
    pub min_loss: f64,
    /// Loss of the constructive per-view table.
    pub constructive_loss: f64,
}

pub fn cost_floor(mdp: &TabularDecMdp, expert: &TabularPolicy) -> Result<CostFloorReport> {
    let views = local_views(mdp);
    let w = occupancy(mdp, expert)?.average;
    let conflicts = detect_conflicts(mdp, expert, &views)?;
    let floor = conflict_floor(mdp, expert, &views, &w)?;
    let (min_loss, _) = brute_force_min_loss(mdp, expert, &views, &w)?;
    let table = constructive_table(mdp, expert, &views);
    Ok(CostFloorReport { conflicts, floor, min_loss, constructive_loss: imitation_loss(mdp, expert, &views, &table, &w) })
}

/// Message received by each agent in each joint observation:
/// `symbols[i][o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommProtocol {
    pub symbols: Vec<Vec<usize>>,
}

fn others_key(mdp: &TabularDecMdp, o: usize, i: usize) -> Vec<usize> {
    mdp.local[o].iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).collect()
}

impl CommProtocol {
    /// Every agent receives the others' local observations verbatim.
    pub fn identity(mdp: &TabularDecMdp) -> Self {
        let symbols = (0..mdp.n_agents())
            .map(|i| {
                (0..mdp.n_obs())
                    .map(|o| {
                        others_key(mdp, o, i)
                            .iter()
                            .zip((0..mdp.n_agents()).filter(|&j| j != i))
                            .fold(0, |acc, (&x, j)| acc * mdp.n_local[j] + x)
                    })
                    .collect()
            })
            .collect();
        CommProtocol { symbols }
    }

    pub fn constant(mdp: &TabularDecMdp) -> Self {
        CommProtocol { symbols: vec![vec![0; mdp.n_obs()]; mdp.n_agents()] }
    }

    /// Messages must be functions of the other agents' observations.
    pub fn validate(&self, mdp: &TabularDecMdp) -> Result<()> {
        if self.symbols.len() != mdp.n_agents() || self.symbols.iter().any(|s| s.len() != mdp.n_obs()) {
            return Err(Error::InvalidArgument("protocol does not match the instance".into()));
        }
        for i in 0..mdp.n_agents() {
            for o in 0..mdp.n_obs() {
                for o2 in o + 1..mdp.n_obs() {
                    if others_key(mdp, o, i) == others_key(mdp, o2, i) && self.symbols[i][o] != self.symbols[i][o2] {
                        return Err(Error::InvalidArgument(format!(
                            "message to agent {i} depends on more than the other agents' observations"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Views pairing each local observation with the received message.
    pub fn views(&self, mdp: &TabularDecMdp) -> Vec<Vec<usize>> {
        (0..mdp.n_agents())
            .map(|i| {
                let n_sym = self.symbols[i].iter().max().map_or(0, |&s| s + 1);
                (0..mdp.n_obs()).map(|o| mdp.local[o][i] * n_sym + self.symbols[i][o]).collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommSufficiency {
    /// Conflicting pairs the messages fail to separate.
    pub unseparated: Vec<Conflict>,
    pub holds: bool,
    /// Zero-loss table over (observation, message), when the condition holds.
    pub table: Option<Vec<Vec<usize>>>,
    /// The constructed policy picks the expert's joint action everywhere and
    /// reproduces its step distributions exactly.
    pub behavior_matches: bool,
}

/// Whenever two joint observations share agent `i`'s local observation but
/// call for different actions of `i`, the messages `i` receives must differ.
pub fn check_comm_sufficiency(
    expert: &TabularPolicy,
    mdp: &TabularDecMdp,
    comm: &CommProtocol,
) -> Result<CommSufficiency> {
    comm.validate(mdp)?;
    let unseparated: Vec<Conflict> = detect_po_conflict(expert, mdp)?
        .into_iter()
        .filter(|c| comm.symbols[c.agent][c.o] == comm.symbols[c.agent][c.o2])
        .collect();
    if !unseparated.is_empty() {
        return Ok(CommSufficiency { unseparated, holds: false, table: None, behavior_matches: false });
    }
    let views = comm.views(mdp);
    let table = constructive_table(mdp, expert, &views);
    let pol = TabularPolicy::deterministic_decentralized(mdp, views, &table);
    let same_actions = (0..mdp.n_obs()).all(|o| pol.greedy(mdp, o) == expert.greedy(mdp, o));
    let greedy_expert = TabularPolicy::deterministic_joint(
        mdp,
        &(0..mdp.n_obs()).map(|o| expert.greedy(mdp, o)).collect::<Vec<_>>(),
    )?;
    let behavior_matches = same_actions && occupancy(mdp, &pol)? == occupancy(mdp, &greedy_expert)?;
    Ok(CommSufficiency { unseparated, holds: true, table: Some(table), behavior_matches })
}
