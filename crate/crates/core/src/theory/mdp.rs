//! Small tabular decentralized decision processes and policies over them.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};

pub const MAX_JOINT_OBS: usize = 8;
pub const MAX_HORIZON: usize = 10;
pub const MAX_ACTIONS: usize = 5;

/// Joint observations are indexed `0..n_obs`; each decomposes into one local
/// observation per agent. Joint actions are mixed-radix indices with agent 0
/// most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDecMdp {
    pub n_local: Vec<usize>,
    pub n_actions: Vec<usize>,
    /// `local[o][i]`: agent `i`'s local observation inside joint observation `o`.
    pub local: Vec<Vec<usize>>,
    /// `trans[o][a][o2]`.
    pub trans: Vec<Vec<Vec<f64>>>,
    pub init: Vec<f64>,
    pub horizon: usize,
    pub reward: Option<Vec<Vec<f64>>>,
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl TabularDecMdp {
    pub fn n_agents(&self) -> usize {
        self.n_local.len()
    }

    pub fn n_obs(&self) -> usize {
        self.local.len()
    }

    pub fn n_joint_actions(&self) -> usize {
        self.n_actions.iter().product()
    }

    pub fn joint_action(&self, per_agent: &[usize]) -> usize {
        per_agent.iter().zip(&self.n_actions).fold(0, |acc, (&a, &n)| acc * n + a)
    }

    pub fn split_action(&self, mut a: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_agents()];
        for i in (0..self.n_agents()).rev() {
            out[i] = a % self.n_actions[i];
            a /= self.n_actions[i];
        }
        out
    }

    /// Checks shapes, caps and that every row is a distribution.
    pub fn validate(&self) -> Result<()> {
        let m = self.n_agents();
        if m == 0 || self.n_actions.len() != m {
            return Err(Error::InvalidArgument("agent counts disagree".into()));
        }
        let n = self.n_obs();
        if n == 0 {
            return Err(Error::InvalidArgument("no joint observations".into()));
        }
        if n > MAX_JOINT_OBS || self.horizon > MAX_HORIZON || self.n_actions.iter().any(|&a| a > MAX_ACTIONS) {
            return Err(Error::BudgetExceeded(format!(
                "exact enumeration is limited to {MAX_JOINT_OBS} joint observations, horizon {MAX_HORIZON} and {MAX_ACTIONS} actions per agent"
            )));
        }
        if self.horizon == 0 || self.n_actions.iter().any(|&a| a == 0) || self.n_local.iter().any(|&l| l == 0) {
            return Err(Error::InvalidArgument("horizon, action and observation counts must be positive".into()));
        }
        for (o, l) in self.local.iter().enumerate() {
            if l.len() != m || l.iter().zip(&self.n_local).any(|(&x, &nl)| x >= nl) {
                return Err(Error::InvalidArgument(format!("joint observation {o} has a bad projection")));
            }
            if self.local[..o].contains(l) {
                return Err(Error::InvalidArgument(format!("joint observation {o} is listed twice")));
            }
        }
        if self.init.len() != n {
            return Err(Error::dims("initial distribution", n, self.init.len()));
        }
        check_simplex(&self.init, "initial distribution")?;
        let na = self.n_joint_actions();
        if self.trans.len() != n {
            return Err(Error::dims("transition table", n, self.trans.len()));
        }
        for (o, rows) in self.trans.iter().enumerate() {
            if rows.len() != na {
                return Err(Error::dims("transition actions", na, rows.len()));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::dims("transition row", n, row.len()));
                }
                check_simplex(row, &format!("transition row ({o}, {a})"))?;
            }
        }
        if let Some(r) = &self.reward {
            if r.len() != n || r.iter().any(|row| row.len() != na) {
                return Err(Error::InvalidArgument("reward table has the wrong shape".into()));
            }
        }
        Ok(())
    }

    /// True when no transition row depends on the action.
    pub fn action_independent(&self) -> bool {
        self.trans.iter().all(|rows| rows.iter().all(|r| r == &rows[0]))
    }

    /// Plain-text table. See [`parse_mdp`] for the grammar.
    pub fn to_text(&self, expert: Option<&TabularPolicy>) -> String {
        let mut s = String::new();
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let joinf = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        writeln!(s, "agents {}", self.n_agents()).unwrap();
        writeln!(s, "local {}", join(&self.n_local)).unwrap();
        writeln!(s, "actions {}", join(&self.n_actions)).unwrap();
        writeln!(s, "horizon {}", self.horizon).unwrap();
        for l in &self.local {
            writeln!(s, "obs {}", join(l)).unwrap();
        }
        writeln!(s, "init {}", joinf(&self.init)).unwrap();
        for (o, rows) in self.trans.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                writeln!(s, "trans {o} {a} {}", joinf(row)).unwrap();
            }
        }
        if let Some(r) = &self.reward {
            for (o, row) in r.iter().enumerate() {
                for (a, v) in row.iter().enumerate() {
                    writeln!(s, "reward {o} {a} {v:?}").unwrap();
                }
            }
        }
        if let Some(e) = expert {
            for o in 0..self.n_obs() {
                writeln!(s, "expert {o} {}", join(&e.greedy(self, o))).unwrap();
            }
        }
        s
    }
}

/// Parses the plain-text table format, one directive per line:
///
/// ```text
/// # comment
/// agents <M>
/// local <n_1> ... <n_M>          local observation counts
/// actions <k_1> ... <k_M>
/// horizon <T>
/// obs <o_1> ... <o_M>            one per joint observation, in index order
/// init <p_0> ... <p_{n-1}>
/// trans <o> <a|*> <p_0> ... <p_{n-1}>
/// reward <o> <a|*> <r>           optional
/// expert <o> <a_1> ... <a_M>     optional deterministic expert
/// ```
///
/// `<a>` is a joint action index; `*` applies the row to every joint action.
pub fn parse_mdp(text: &str) -> Result<(TabularDecMdp, Option<TabularPolicy>)> {
    let mut m = None;
    let mut n_local = None;
    let mut n_actions: Option<Vec<usize>> = None;
    let mut horizon = None;
    let mut local = Vec::new();
    let mut init = None;
    let mut trans_lines = Vec::new();
    let mut reward_lines = Vec::new();
    let mut expert_lines = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let perr = |reason: String| Error::Parse { line: line_no, reason };
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        let ints = |v: &[&str]| -> Result<Vec<usize>> {
            v.iter().map(|x| x.parse::<usize>().map_err(|_| perr(format!("expected an integer, got {x:?}")))).collect()
        };
        let floats = |v: &[&str]| -> Result<Vec<f64>> {
            v.iter().map(|x| x.parse::<f64>().map_err(|_| perr(format!("expected a number, got {x:?}")))).collect()
        };
        let action = |x: &str| -> Result<Option<usize>> {
            if x == "*" {
                Ok(None)
            } else {
                x.parse().map(Some).map_err(|_| perr(format!("expected an action index or *, got {x:?}")))
            }
        };
        match key {
            "agents" => m = Some(*ints(&rest)?.first().ok_or_else(|| perr("missing agent count".into()))?),
            "local" => n_local = Some(ints(&rest)?),
            "actions" => n_actions = Some(ints(&rest)?),
            "horizon" => horizon = Some(*ints(&rest)?.first().ok_or_else(|| perr("missing horizon".into()))?),
            "obs" => local.push(ints(&rest)?),
            "init" => init = Some(floats(&rest)?),
            "trans" | "reward" | "expert" => {
                if rest.len() < 2 {
                    return Err(perr(format!("{key} needs an observation and more fields")));
                }
                let o: usize = rest[0].parse().map_err(|_| perr(format!("bad observation index {:?}", rest[0])))?;
                match key {
                    "trans" => trans_lines.push((line_no, o, action(rest[1])?, floats(&rest[2..])?)),
                    "reward" => {
                        let r = floats(&rest[2..])?;
                        if r.len() != 1 {
                            return Err(perr("reward takes one value".into()));
                        }
                        reward_lines.push((line_no, o, action(rest[1])?, r[0]));
                    }
                    _ => expert_lines.push((line_no, o, ints(&rest[1..])?)),
                }
            }
            other => return Err(perr(format!("unknown directive {other:?}"))),
        }
    }
    let missing = |what: &str| Error::Parse { line: 0, reason: format!("missing {what}") };
    let m = m.ok_or_else(|| missing("agents"))?;
    let n_local = n_local.ok_or_else(|| missing("local"))?;
    let n_actions = n_actions.ok_or_else(|| missing("actions"))?;
    if n_local.len() != m || n_actions.len() != m {
        return Err(Error::Parse { line: 0, reason: format!("expected {m} local and action counts") });
    }
    let horizon = horizon.ok_or_else(|| missing("horizon"))?;
    let init = init.ok_or_else(|| missing("init"))?;
    let n = local.len();
    if n > MAX_JOINT_OBS || m > MAX_JOINT_OBS || n_actions.iter().any(|&a| a > MAX_ACTIONS) {
        return Err(Error::BudgetExceeded("instance is too large for exact enumeration".into()));
    }
    let na: usize = n_actions.iter().product();
    let mut trans: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; na]; n];
    for (line, o, a, row) in trans_lines {
        if o >= n {
            return Err(Error::Parse { line, reason: format!("observation {o} out of range") });
        }
        let targets: Vec<usize> = match a {
            Some(a) if a < na => vec![a],
            Some(a) => return Err(Error::Parse { line, reason: format!("joint action {a} out of range") }),
            None => (0..na).collect(),
        };
        for a in targets {
            trans[o][a] = Some(row.clone());
        }
    }
    let trans = trans
        .into_iter()
        .enumerate()
        .map(|(o, rows)| {
            rows.into_iter()
                .enumerate()
                .map(|(a, r)| r.ok_or_else(|| missing(&format!("transition row ({o}, {a})"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let reward = if reward_lines.is_empty() {
        None
    } else {
        let mut r = vec![vec![0.0; na]; n];
        for (line, o, a, v) in reward_lines {
            if o >= n || a.is_some_and(|a| a >= na) {
                return Err(Error::Parse { line, reason: "reward index out of range".into() });
            }
            match a {
                Some(a) => r[o][a] = v,
                None => r[o].iter_mut().for_each(|x| *x = v),
            }
        }
        Some(r)
    };
    let mdp = TabularDecMdp { n_local, n_actions, local, trans, init, horizon, reward };
    mdp.validate()?;
    let expert = if expert_lines.is_empty() {
        None
    } else {
        let mut acts = vec![None; n];
        for (line, o, a) in expert_lines {
            if o >= n || a.len() != m || a.iter().zip(&mdp.n_actions).any(|(&x, &k)| x >= k) {
                return Err(Error::Parse { line, reason: "expert entry out of range".into() });
            }
            acts[o] = Some(a);
        }
        let acts = acts
            .into_iter()
            .enumerate()
            .map(|(o, a)| a.ok_or_else(|| missing(&format!("expert action for observation {o}"))))
            .collect::<Result<Vec<_>>>()?;
        Some(TabularPolicy::deterministic_joint(&mdp, &acts)?)
    };
    Ok((mdp, expert))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TabularPolicy {
    /// `dist[o][a]` over joint actions.
    Joint(Vec<Vec<f64>>),
    /// `dist[i][view][a_i]`, with `view[i][o]` giving what agent `i` sees in
    /// joint observation `o` (its local observation, possibly paired with a
    /// message).
    Decentralized { views: Vec<Vec<usize>>, dist: Vec<Vec<Vec<f64>>> },
}

/// Per-agent views that are just the local observations.
pub fn local_views(mdp: &TabularDecMdp) -> Vec<Vec<usize>> {
    (0..mdp.n_agents()).map(|i| mdp.local.iter().map(|l| l[i]).collect()).collect()
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

impl TabularPolicy {
    pub fn deterministic_joint(mdp: &TabularDecMdp, actions: &[Vec<usize>]) -> Result<Self> {
        if actions.len() != mdp.n_obs() {
            return Err(Error::dims("expert actions", mdp.n_obs(), actions.len()));
        }
        Ok(TabularPolicy::Joint(actions.iter().map(|a| one_hot(mdp.n_joint_actions(), mdp.joint_action(a))).collect()))
    }

    /// Deterministic decentralized policy from `table[i][view]`.
    pub fn deterministic_decentralized(mdp: &TabularDecMdp, views: Vec<Vec<usize>>, table: &[Vec<usize>]) -> Self {
        let dist = table
            .iter()
            .enumerate()
            .map(|(i, t)| t.iter().map(|&a| one_hot(mdp.n_actions[i], a)).collect())
            .collect();
        TabularPolicy::Decentralized { views, dist }
    }

    /// Distribution over joint actions at `o`.
    pub fn joint_dist(&self, mdp: &TabularDecMdp, o: usize) -> Vec<f64> {
        match self {
            TabularPolicy::Joint(d) => d[o].clone(),
            TabularPolicy::Decentralized { views, dist } => (0..mdp.n_joint_actions())
                .map(|a| mdp.split_action(a).iter().enumerate().map(|(i, &ai)| dist[i][views[i][o]][ai]).product())
                .collect(),
        }
    }

    /// Most probable joint action at `o`, lowest index on ties, split per agent.
    pub fn greedy(&self, mdp: &TabularDecMdp, o: usize) -> Vec<usize> {
        let d = self.joint_dist(mdp, o);
        let mut best = 0;
        for (a, &p) in d.iter().enumerate() {
            if p > d[best] {
                best = a;
            }
        }
        mdp.split_action(best)
    }

    pub fn validate(&self, mdp: &TabularDecMdp) -> Result<()> {
        match self {
            TabularPolicy::Joint(d) => {
                if d.len() != mdp.n_obs() {
                    return Err(Error::dims("policy rows", mdp.n_obs(), d.len()));
                }
                for (o, row) in d.iter().enumerate() {
                    if row.len() != mdp.n_joint_actions() {
                        return Err(Error::dims("policy row", mdp.n_joint_actions(), row.len()));
                    }
                    check_simplex(row, &format!("policy row {o}"))?;
                }
            }
            TabularPolicy::Decentralized { views, dist } => {
                if views.len() != mdp.n_agents() || dist.len() != mdp.n_agents() {
                    return Err(Error::dims("policy agents", mdp.n_agents(), dist.len()));
                }
                for i in 0..mdp.n_agents() {
                    if views[i].len() != mdp.n_obs() || views[i].iter().any(|&v| v >= dist[i].len()) {
                        return Err(Error::InvalidArgument(format!("agent {i} view table is inconsistent")));
                    }
                    for row in &dist[i] {
                        if row.len() != mdp.n_actions[i] {
                            return Err(Error::dims("agent action row", mdp.n_actions[i], row.len()));
                        }
                        check_simplex(row, &format!("agent {i} policy row"))?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Uniform draw from the simplex.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    let err = 1.0 - v.iter().sum::<f64>();
    v[0] += err;
    v
}

/// Random instance with every combination of local observations present.
/// Rows are sometimes sparse so that distributions separate sharply.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R) -> TabularDecMdp {
    let m = rng.gen_range(1..=2);
    let n_local: Vec<usize> = if m == 1 {
        vec![rng.gen_range(1..=MAX_JOINT_OBS)]
    } else {
        let a = rng.gen_range(1..=4);
        vec![a, rng.gen_range(1..=(MAX_JOINT_OBS / a).min(4))]
    };
    let n_actions: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=3)).collect();
    let local: Vec<Vec<usize>> = if m == 1 {
        (0..n_local[0]).map(|x| vec![x]).collect()
    } else {
        (0..n_local[0]).flat_map(|x| (0..n_local[1]).map(move |y| vec![x, y])).collect()
    };
    let n = local.len();
    let na: usize = n_actions.iter().product();
    let row = |rng: &mut R| {
        if rng.gen_bool(0.3) {
            one_hot(n, rng.gen_range(0..n))
        } else {
            random_simplex(rng, n)
        }
    };
    let trans = (0..n).map(|_| (0..na).map(|_| row(rng)).collect()).collect();
    let init = row(rng);
    TabularDecMdp { n_local, n_actions, local, trans, init, horizon: rng.gen_range(1..=MAX_HORIZON), reward: None }
}

/// Random joint policy, deterministic with probability one half.
pub fn random_joint_policy<R: Rng + ?Sized>(rng: &mut R, mdp: &TabularDecMdp) -> TabularPolicy {
    let na = mdp.n_joint_actions();
    let det = rng.gen_bool(0.5);
    TabularPolicy::Joint(
        (0..mdp.n_obs()).map(|_| if det { one_hot(na, rng.gen_range(0..na)) } else { random_simplex(rng, na) }).collect(),
    )
}

/// Two agents, binary local observations drawn uniformly and independently
/// of the actions at every step. Each agent's expert action is the other
/// agent's observation.
pub fn xor_fixture() -> (TabularDecMdp, TabularPolicy) {
    let local = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
    let uniform = vec![0.25; 4];
    let mdp = TabularDecMdp {
        n_local: vec![2, 2],
        n_actions: vec![2, 2],
        trans: vec![vec![uniform.clone(); 4]; 4],
        init: uniform,
        horizon: 3,
        reward: None,
        local: local.clone(),
    };
    let acts: Vec<Vec<usize>> = local.iter().map(|l| vec![l[1], l[0]]).collect();
    let expert = TabularPolicy::deterministic_joint(&mdp, &acts).unwrap();
    (mdp, expert)
}

/// Same observation process as [`xor_fixture`], but each agent copies its
/// own observation, and actions steer the next observation.
pub fn separable_fixture() -> (TabularDecMdp, TabularPolicy) {
    let local = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
    let mut trans = vec![vec![vec![0.0; 4]; 4]; 4];
    for rows in trans.iter_mut() {
        for (a, row) in rows.iter_mut().enumerate() {
            // The joint action picks the likely next observation.
            for (o2, p) in row.iter_mut().enumerate() {
                *p = if o2 == a { 0.775 } else { 0.075 };
            }
        }
    }
    let mdp = TabularDecMdp {
        n_local: vec![2, 2],
        n_actions: vec![2, 2],
        trans,
        init: vec![0.4, 0.1, 0.3, 0.2],
        horizon: 4,
        reward: None,
        local: local.clone(),
    };
    let expert = TabularPolicy::deterministic_joint(&mdp, &local).unwrap();
    (mdp, expert)
}

/// One agent, start observation 0; action 0 leads to 1 and action 1 to 2,
/// both absorbing.
pub fn disjoint_fixture() -> (TabularDecMdp, TabularPolicy, TabularPolicy) {
    let trans = vec![
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        vec![vec![0.0, 1.0, 0.0]; 2],
        vec![vec![0.0, 0.0, 1.0]; 2],
    ];
    let mdp = TabularDecMdp {
        n_local: vec![3],
        n_actions: vec![2],
        local: vec![vec![0], vec![1], vec![2]],
        trans,
        init: vec![1.0, 0.0, 0.0],
        horizon: 1,
        reward: None,
    };
    let expert = TabularPolicy::deterministic_joint(&mdp, &[vec![0], vec![0], vec![0]]).unwrap();
    let learner = TabularPolicy::deterministic_joint(&mdp, &[vec![1], vec![1], vec![1]]).unwrap();
    (mdp, expert, learner)
}
