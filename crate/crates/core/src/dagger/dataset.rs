//! Aggregated demonstration data.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// One labeled timestep: every agent's full observation and the expert's
/// movement label for it (`None` for agents without a movement head).
#[derive(Debug, Clone, PartialEq)]
pub struct DemoRecord<S> {
    pub obs: Vec<Vec<S>>,
    pub labels: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetMode {
    /// One store of joint records; a batch is one set of timesteps.
    Shared,
    /// Records are split into one independent store per agent.
    PerAgent,
}

impl DatasetMode {
    pub fn tag(self) -> &'static str {
        match self {
            DatasetMode::Shared => "shared",
            DatasetMode::PerAgent => "per-agent",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "shared" => Some(DatasetMode::Shared),
            "per-agent" => Some(DatasetMode::PerAgent),
            _ => None,
        }
    }
}

/// Flat training batch for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBatch<S> {
    /// Row-major, `labels.len()` rows of the agent's observation width.
    pub obs: Vec<S>,
    pub labels: Vec<usize>,
}

impl<S> AgentBatch<S> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

type Slice<S> = (Vec<S>, usize);

#[derive(Debug, Clone)]
enum Store<S> {
    Shared(Vec<DemoRecord<S>>),
    PerAgent(Vec<Vec<Slice<S>>>),
}

/// Append-only store. Records are never removed or modified.
#[derive(Debug, Clone)]
pub struct DemoDataset<S> {
    n_agents: usize,
    min_size: usize,
    inserted: usize,
    store: Store<S>,
}

impl<S: Clone> DemoDataset<S> {
    pub fn new(n_agents: usize, mode: DatasetMode, min_size: usize) -> Self {
        let store = match mode {
            DatasetMode::Shared => Store::Shared(Vec::new()),
            DatasetMode::PerAgent => Store::PerAgent(vec![Vec::new(); n_agents]),
        };
        DemoDataset { n_agents, min_size, inserted: 0, store }
    }

    pub fn mode(&self) -> DatasetMode {
        match self.store {
            Store::Shared(_) => DatasetMode::Shared,
            Store::PerAgent(_) => DatasetMode::PerAgent,
        }
    }

    /// Number of records appended so far.
    pub fn len(&self) -> usize {
        self.inserted
    }

    pub fn is_empty(&self) -> bool {
        self.inserted == 0
    }

    pub fn min_size(&self) -> usize {
        self.min_size
    }

    pub fn ready(&self) -> bool {
        self.inserted >= self.min_size
    }

    pub fn push(&mut self, record: DemoRecord<S>) -> Result<()> {
        if record.obs.len() != self.n_agents || record.labels.len() != self.n_agents {
            return Err(Error::dims("demo record agents", self.n_agents, record.obs.len().min(record.labels.len())));
        }
        match &mut self.store {
            Store::Shared(v) => v.push(record),
            Store::PerAgent(stores) => {
                for ((s, o), l) in stores.iter_mut().zip(record.obs).zip(record.labels) {
                    if let Some(l) = l {
                        s.push((o, l));
                    }
                }
            }
        }
        self.inserted += 1;
        Ok(())
    }

    /// Joint records, in shared mode.
    pub fn records(&self) -> Option<&[DemoRecord<S>]> {
        match &self.store {
            Store::Shared(v) => Some(v),
            Store::PerAgent(_) => None,
        }
    }

    /// Every labeled `(observation, label)` pair of agent `i`, in insertion
    /// order, regardless of mode.
    pub fn agent_pairs(&self, i: usize) -> Vec<(&[S], usize)> {
        match &self.store {
            Store::Shared(v) => {
                v.iter().filter_map(|r| r.labels[i].map(|l| (r.obs[i].as_slice(), l))).collect()
            }
            Store::PerAgent(stores) => stores[i].iter().map(|(o, l)| (o.as_slice(), *l)).collect(),
        }
    }

    fn gate(&self, batch: usize) -> Result<()> {
        let need = self.min_size.max(batch);
        if self.inserted < need {
            return Err(Error::DatasetTooSmall { have: self.inserted, need });
        }
        Ok(())
    }

    /// Record indices of one shared batch, without replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        self.gate(batch)?;
        Ok(index::sample(rng, self.inserted, batch).into_vec())
    }

    /// Per-agent batches of shared records at the given indices. Agents
    /// without labels get an empty batch.
    pub fn batch_from_indices(&self, idx: &[usize]) -> Result<Vec<AgentBatch<S>>> {
        let Store::Shared(v) = &self.store else {
            return Err(Error::InvalidArgument("index batches need a shared dataset".into()));
        };
        let mut out: Vec<AgentBatch<S>> =
            (0..self.n_agents).map(|_| AgentBatch { obs: Vec::new(), labels: Vec::new() }).collect();
        for &k in idx {
            let r = v.get(k).ok_or_else(|| Error::InvalidArgument(format!("record {k} out of range")))?;
            for (i, b) in out.iter_mut().enumerate() {
                if let Some(l) = r.labels[i] {
                    b.obs.extend_from_slice(&r.obs[i]);
                    b.labels.push(l);
                }
            }
        }
        Ok(out)
    }

    /// One batch per agent: a common set of timesteps in shared mode,
    /// independent draws from each agent's store otherwise.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<AgentBatch<S>>> {
        match &self.store {
            Store::Shared(_) => {
                let idx = self.sample_indices(batch, rng)?;
                self.batch_from_indices(&idx)
            }
            Store::PerAgent(stores) => {
                self.gate(batch)?;
                Ok(stores
                    .iter()
                    .map(|s| {
                        if s.len() < batch {
                            return AgentBatch { obs: Vec::new(), labels: Vec::new() };
                        }
                        let mut b = AgentBatch { obs: Vec::new(), labels: Vec::with_capacity(batch) };
                        for k in index::sample(rng, s.len(), batch) {
                            b.obs.extend_from_slice(&s[k].0);
                            b.labels.push(s[k].1);
                        }
                        b
                    })
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(t: usize) -> DemoRecord<f64> {
        DemoRecord { obs: vec![vec![t as f64, 0.0], vec![t as f64, 1.0]], labels: vec![Some(t % 5), Some((t + 1) % 5)] }
    }

    #[test]
    fn gate_refuses_small_datasets() {
        let mut d = DemoDataset::new(2, DatasetMode::Shared, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in 0..9 {
            d.push(rec(t)).unwrap();
        }
        assert!(matches!(d.sample(4, &mut rng), Err(Error::DatasetTooSmall { have: 9, need: 10 })));
        d.push(rec(9)).unwrap();
        assert!(d.sample(4, &mut rng).is_ok());
        assert!(matches!(d.sample(11, &mut rng), Err(Error::DatasetTooSmall { need: 11, .. })));
    }

    #[test]
    fn shared_batches_share_timesteps() {
        let mut d = DemoDataset::new(2, DatasetMode::Shared, 1);
        for t in 0..50 {
            d.push(rec(t)).unwrap();
        }
        let b = d.sample(8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for r in 0..8 {
            assert_eq!(b[0].obs[2 * r], b[1].obs[2 * r]);
        }
    }

    #[test]
    fn modes_hold_the_same_population() {
        let mut s = DemoDataset::new(2, DatasetMode::Shared, 1);
        let mut p = DemoDataset::new(2, DatasetMode::PerAgent, 1);
        for t in 0..40 {
            s.push(rec(t)).unwrap();
            p.push(rec(t)).unwrap();
        }
        for i in 0..2 {
            assert_eq!(s.agent_pairs(i), p.agent_pairs(i));
        }
        let bs = s.sample(16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let bp = p.sample(16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let ts: Vec<f64> = bp[1].obs.chunks(2).map(|o| o[0]).collect();
        let tp: Vec<f64> = bp[0].obs.chunks(2).map(|o| o[0]).collect();
        assert_ne!(ts, tp, "per-agent draws are independent");
        assert_eq!(bs[0].obs.chunks(2).map(|o| o[0]).collect::<Vec<_>>(), bs[1].obs.chunks(2).map(|o| o[0]).collect::<Vec<_>>());
    }

    #[test]
    fn unlabeled_agents_are_skipped() {
        let mut d = DemoDataset::new(2, DatasetMode::Shared, 1);
        d.push(DemoRecord { obs: vec![vec![1.0], vec![2.0]], labels: vec![None, Some(3)] }).unwrap();
        let b = d.sample(1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(b[0].is_empty());
        assert_eq!(b[1].labels, vec![3]);
        assert!(d.push(DemoRecord { obs: vec![vec![1.0]], labels: vec![None] }).is_err());
    }

    proptest! {
        #[test]
        fn aggregation_is_monotone(sizes in prop::collection::vec(0usize..20, 1..8), per_agent in any::<bool>()) {
            let mode = if per_agent { DatasetMode::PerAgent } else { DatasetMode::Shared };
            let mut d = DemoDataset::new(2, mode, 1);
            let mut t = 0;
            let mut prev: Vec<Vec<(Vec<f64>, usize)>> = vec![Vec::new(), Vec::new()];
            for n in sizes {
                let before = d.len();
                for _ in 0..n {
                    d.push(rec(t)).unwrap();
                    t += 1;
                }
                prop_assert_eq!(d.len(), before + n);
                for (i, p) in prev.iter_mut().enumerate() {
                    let now: Vec<(Vec<f64>, usize)> = d.agent_pairs(i).into_iter().map(|(o, l)| (o.to_vec(), l)).collect();
                    prop_assert_eq!(&now[..p.len()], &p[..]);
                    *p = now;
                }
            }
        }
    }
}
