//! Random task sets in the style of the automotive benchmark and its
//! synthetic variant.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CauseEffectChain, Priority, Task, TaskIdx, TaskSet, Time};
use crate::sched::{is_schedulable, JldSet};

/// Time units per millisecond (task sets are emitted in microseconds).
const US_PER_MS: Time = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorProfile {
    pub name: String,
    pub cores: usize,
    pub periods_ms: Vec<Time>,
    /// Relative weight of each period; normalised before use.
    pub period_weights: Vec<f64>,
    /// Log-uniform WCET range per period class, in microseconds.
    pub wcet_ranges_us: Vec<(Time, Time)>,
    /// Per-core utilization the WCETs are scaled to.
    pub target_utilization: f64,
    pub chains_per_set: (usize, usize),
    /// Weight of drawing 1, 2, 3, ... distinct periods for one chain.
    pub periods_per_chain: Vec<f64>,
    pub tasks_per_period: (usize, usize),
    pub chain_size: (usize, usize),
    /// Probability that a chain slot reuses an existing task of that period.
    pub share_probability: f64,
    pub standalone_tasks: (usize, usize),
    /// Upper bound on distinct tasks, if any.
    #[serde(default)]
    pub max_tasks: Option<usize>,
    pub max_retries: u32,
}

impl GeneratorProfile {
    pub fn automotive() -> Self {
        Self {
            name: "automotive".into(),
            cores: 4,
            periods_ms: vec![1, 2, 5, 10, 20, 50, 100, 200, 1000],
            period_weights: vec![3.0, 2.0, 2.0, 25.0, 25.0, 3.0, 20.0, 1.0, 4.0],
            wcet_ranges_us: vec![
                (20, 100),
                (30, 150),
                (50, 300),
                (100, 600),
                (150, 1000),
                (300, 2000),
                (500, 4000),
                (800, 6000),
                (2000, 20000),
            ],
            target_utilization: 0.71,
            chains_per_set: (30, 46),
            periods_per_chain: vec![0.7, 0.2, 0.1],
            tasks_per_period: (2, 5),
            chain_size: (2, 15),
            share_probability: 0.2,
            standalone_tasks: (0, 8),
            max_tasks: None,
            max_retries: 50,
        }
    }

    pub fn synthetic() -> Self {
        Self {
            name: "synthetic".into(),
            target_utilization: 0.80,
            chains_per_set: (10, 20),
            periods_per_chain: vec![0.07, 0.3575, 0.2575, 0.1575, 0.1575],
            chain_size: (2, 25),
            ..Self::automotive()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "automotive" => Some(Self::automotive()),
            "synthetic" => Some(Self::synthetic()),
            _ => None,
        }
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(doc);
        let p: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("profile {}: {m}", self.name)));
        if self.cores == 0 {
            return bad("needs at least one core");
        }
        if self.periods_ms.is_empty()
            || self.periods_ms.len() != self.period_weights.len()
            || self.periods_ms.len() != self.wcet_ranges_us.len()
        {
            return bad("periods, weights and WCET ranges must have the same non-zero length");
        }
        if self.periods_ms.iter().any(|&p| p <= 0) {
            return bad("periods must be positive");
        }
        if self.wcet_ranges_us.iter().any(|&(a, b)| a <= 0 || a > b) {
            return bad("WCET ranges must satisfy 0 < low <= high");
        }
        for w in [&self.period_weights, &self.periods_per_chain] {
            if w.is_empty() || w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return bad("probabilities must be non-negative with a positive sum");
            }
        }
        if self.periods_per_chain.len() > self.periods_ms.len() {
            return bad("a chain cannot use more distinct periods than exist");
        }
        if !(self.target_utilization > 0.0 && self.target_utilization <= 1.0) {
            return bad("target utilization must lie in (0, 1]");
        }
        for (lo, hi) in [
            self.chains_per_set,
            self.tasks_per_period,
            self.chain_size,
            self.standalone_tasks,
        ] {
            if lo > hi {
                return bad("ranges must satisfy low <= high");
            }
        }
        if self.chain_size.0 < 2 {
            return bad("chains need at least two tasks");
        }
        if self.tasks_per_period.0 == 0 {
            return bad("at least one task per period");
        }
        if self.max_tasks.is_some_and(|m| m < self.chain_size.0) {
            return bad("chains need more distinct tasks than the task limit allows");
        }
        if !(0.0..=1.0).contains(&self.share_probability) {
            return bad("share probability must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn draw_chain_count(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.chains_per_set.0..=self.chains_per_set.1)
    }

    /// Number of distinct periods of one chain.
    pub fn draw_periods_per_chain(&self, rng: &mut impl Rng) -> usize {
        WeightedIndex::new(&self.periods_per_chain).unwrap().sample(rng) + 1
    }
}

struct Draft {
    period_class: usize,
    raw_wcet: f64,
    core: usize,
}

/// Generates one schedulable task set; identical seeds give identical sets.
pub fn generate(profile: &GeneratorProfile, seed: u64) -> Result<TaskSet> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = None;
    for _ in 0..=profile.max_retries {
        match attempt(profile, &mut rng) {
            Ok(ts) => match is_schedulable(&ts, &JldSet::new())? {
                f if f.schedulable => return Ok(ts),
                f => last_err = f.first_miss.map(|m| m.to_string()),
            },
            Err(Error::Generation(m)) => last_err = Some(m),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation(format!(
        "no schedulable task set after {} attempts (seed {seed}): {}",
        profile.max_retries + 1,
        last_err.unwrap_or_default()
    )))
}

pub fn generate_automotive(seed: u64) -> Result<TaskSet> {
    generate(&GeneratorProfile::automotive(), seed)
}

pub fn generate_synthetic(seed: u64) -> Result<TaskSet> {
    generate(&GeneratorProfile::synthetic(), seed)
}

fn attempt(p: &GeneratorProfile, rng: &mut ChaCha8Rng) -> Result<TaskSet> {
    let period_dist = WeightedIndex::new(&p.period_weights).unwrap();
    let mut drafts: Vec<Draft> = Vec::new();
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let limit = p.max_tasks.unwrap_or(usize::MAX);

    let new_task = |class: usize, drafts: &mut Vec<Draft>, rng: &mut ChaCha8Rng| -> Result<usize> {
        if drafts.len() >= limit {
            return Err(Error::Generation("task limit reached".into()));
        }
        let (lo, hi) = p.wcet_ranges_us[class];
        let raw = ((lo as f64).ln() + rng.random::<f64>() * ((hi as f64).ln() - (lo as f64).ln())).exp();
        drafts.push(Draft {
            period_class: class,
            raw_wcet: raw,
            core: 0,
        });
        Ok(drafts.len() - 1)
    };

    for _ in 0..p.draw_chain_count(rng) {
        let k = p.draw_periods_per_chain(rng);
        let mut classes = BTreeSet::new();
        while classes.len() < k {
            classes.insert(period_dist.sample(rng));
        }
        let mut classes: Vec<usize> = classes.into_iter().collect();
        // data flows from the fast end or the slow end with equal odds
        if rng.random_bool(0.5) {
            classes.reverse();
        }
        let mut members: Vec<usize> = Vec::new();
        let target = rng.random_range(p.chain_size.0..=p.chain_size.1);
        for &class in &classes {
            let n = rng.random_range(p.tasks_per_period.0..=p.tasks_per_period.1);
            for _ in 0..n {
                let reusable: Vec<usize> = (0..drafts.len())
                    .filter(|&i| drafts[i].period_class == class && !members.contains(&i))
                    .collect();
                let t = if !reusable.is_empty() && rng.random_bool(p.share_probability) {
                    reusable[rng.random_range(0..reusable.len())]
                } else {
                    new_task(class, &mut drafts, rng)?
                };
                members.push(t);
            }
        }
        members.truncate(target.max(p.chain_size.0));
        while members.len() < p.chain_size.0 {
            let class = *classes.last().unwrap();
            let t = new_task(class, &mut drafts, rng)?;
            members.push(t);
        }
        chains.push(members);
    }
    for _ in 0..rng.random_range(p.standalone_tasks.0..=p.standalone_tasks.1) {
        let class = period_dist.sample(rng);
        new_task(class, &mut drafts, rng)?;
    }

    // worst-fit allocation in random order, then per-core scaling
    let mut order: Vec<usize> = (0..drafts.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let util = |d: &Draft| d.raw_wcet / (p.periods_ms[d.period_class] * US_PER_MS) as f64;
    let mut load = vec![0.0; p.cores];
    for &i in &order {
        let core = (0..p.cores)
            .min_by(|&a, &b| load[a].partial_cmp(&load[b]).unwrap())
            .unwrap();
        drafts[i].core = core;
        load[core] += util(&drafts[i]);
    }

    let mut tasks: Vec<Task> = drafts
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let period = p.periods_ms[d.period_class] * US_PER_MS;
            let scale = if load[d.core] > 0.0 { p.target_utilization / load[d.core] } else { 1.0 };
            let wcet = ((d.raw_wcet * scale).round() as Time).clamp(1, period);
            Task {
                id: format!("t{i}"),
                core: d.core,
                wcet,
                period,
                deadline: period,
                phase: 0,
                priority: Priority::from_integer(0),
            }
        })
        .collect();

    // rate-monotonic, lower index first on equal periods
    for core in 0..p.cores {
        let mut on: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i].core == core).collect();
        on.sort_by_key(|&i| (std::cmp::Reverse(tasks[i].period), std::cmp::Reverse(i)));
        for (rank, &i) in on.iter().enumerate() {
            tasks[i].priority = Priority::from_integer(rank as i64 + 1);
        }
    }

    let chains = chains
        .into_iter()
        .enumerate()
        .map(|(i, m)| CauseEffectChain {
            id: format!("c{i}"),
            members: m.into_iter().map(TaskIdx).collect(),
        })
        .collect();
    let cores = (0..p.cores).map(|c| format!("core{c}")).collect();
    TaskSet::new("us", cores, tasks, chains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_task_set;

    #[test]
    fn automotive_sets_hit_target_utilization() {
        for seed in 0..3 {
            let ts = generate_automotive(seed).unwrap();
            assert_eq!(ts.cores().len(), 4);
            for c in 0..4 {
                let u = crate::search::to_f64(ts.core_utilization(c));
                assert!((u - 0.71).abs() <= 0.05, "core {c}: {u}");
            }
            assert!((30..=46).contains(&ts.chains().len()));
            for chain in ts.chains() {
                assert!((2..=15).contains(&chain.members.len()));
                let periods: BTreeSet<Time> = chain.members.iter().map(|&m| ts.task(m).period).collect();
                assert!((1..=3).contains(&periods.len()));
            }
        }
    }

    #[test]
    fn synthetic_sets_hit_target_utilization() {
        let ts = generate_synthetic(7).unwrap();
        for c in 0..4 {
            let u = crate::search::to_f64(ts.core_utilization(c));
            assert!((u - 0.80).abs() <= 0.05, "core {c}: {u}");
        }
        assert!((10..=20).contains(&ts.chains().len()));
        assert!(ts.chains().iter().all(|c| c.members.len() <= 25));
    }

    #[test]
    fn same_seed_same_set() {
        let a = generate_automotive(11).unwrap();
        let b = generate_automotive(11).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_task_set(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn chain_count_stays_in_range() {
        let p = GeneratorProfile::synthetic();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert!((10..=20).contains(&p.draw_chain_count(&mut rng)));
        }
    }

    #[test]
    fn periods_per_chain_histogram() {
        let p = GeneratorProfile::synthetic();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut hist = [0usize; 5];
        for _ in 0..n {
            hist[p.draw_periods_per_chain(&mut rng) - 1] += 1;
        }
        for (h, want) in hist.iter().zip([0.07, 0.3575, 0.2575, 0.1575, 0.1575]) {
            assert!((*h as f64 / n as f64 - want).abs() < 0.02, "{hist:?}");
        }
    }

    #[test]
    fn one_task_profile_cannot_build_a_chain() {
        let p = GeneratorProfile {
            max_tasks: Some(1),
            chains_per_set: (1, 1),
            ..GeneratorProfile::automotive()
        };
        assert!(matches!(generate(&p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn profile_json_round_trip() {
        let p = GeneratorProfile::synthetic();
        let doc = serde_json::to_string(&p).unwrap();
        assert_eq!(GeneratorProfile::from_json(&doc).unwrap(), p);
        assert!(GeneratorProfile::from_json(&doc.replace("\"cores\":4", "\"cores\":\"x\"")).is_err());
    }
}
