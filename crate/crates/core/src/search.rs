//! Anytime tree search over job-level dependency insertions.
//!
//! Every node is a feasible configuration. Expanding a node picks the next job
//! of the job ordering and creates one child per candidate dependency plus a
//! child that adds nothing. Children are sorted by the objective and the tree
//! is traversed depth first in limited-discrepancy rounds: round `d` follows
//! the best-ranked child everywhere except at no more than `d` levels.

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::analysis::{analyze, analyze_schedule, Analysis};
use crate::error::{Error, Result};
use crate::let_intervals::IntervalMode;
use crate::model::{JobRef, TaskSet, Time, Utilization};
use crate::sched::{simulate, Jld, JldDoc, JldSet, Schedule};
use crate::transform::{transform, verify_equivalence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Utilization, then summed reaction time, then summed data age.
    Lexicographic,
    /// Weighted sum of the three metrics, each normalised by the root's value.
    Weighted { util: f64, mrt: f64, mda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateScope {
    SameCore,
    AllCores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainOrder {
    DescendingLength,
    AscendingLength,
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub timeout: Duration,
    pub objective: Objective,
    pub scope: CandidateScope,
    pub chain_order: ChainOrder,
    pub seed: u64,
    /// Stop after this many node expansions; makes runs reproducible
    /// independently of machine speed.
    pub max_expansions: Option<u64>,
    /// Stop after this many candidate evaluations. One expansion of a large
    /// set can hold thousands of candidates, so this is the finer budget.
    pub max_evaluations: Option<u64>,
    /// Accept a node as best only if its transformed task set is verified
    /// equivalent.
    pub require_transformable: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            objective: Objective::Lexicographic,
            scope: CandidateScope::SameCore,
            chain_order: ChainOrder::DescendingLength,
            seed: 0,
            max_expansions: None,
            max_evaluations: None,
            require_transformable: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if let Objective::Weighted { util, mrt, mda } = self.objective {
            let w = [util, mrt, mda];
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Config("weights must be finite and non-negative".into()));
            }
            if w.iter().all(|x| *x == 0.0) {
                return Err(Error::Config("at least one weight must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metrics {
    pub utilization: Utilization,
    pub mrt: Vec<Time>,
    pub mda: Vec<Time>,
}

impl Metrics {
    pub fn of(a: &Analysis) -> Self {
        Self {
            utilization: a.utilization(),
            mrt: a.mrt(),
            mda: a.mda(),
        }
    }

    pub fn mrt_sum(&self) -> Time {
        self.mrt.iter().sum()
    }

    pub fn mda_sum(&self) -> Time {
        self.mda.iter().sum()
    }
}

/// A feasible configuration together with its analysis.
#[derive(Debug, Clone)]
pub struct SearchNode {
    pub jlds: JldSet,
    /// Position in the job ordering of the next job to receive a dependency.
    pub cursor: usize,
    pub metrics: Metrics,
    pub analysis: Analysis,
}

/// Chains ordered by length and the jobs of their tasks in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobOrdering {
    pub cec_vector: Vec<usize>,
    pub job_vector: Vec<JobRef>,
}

/// Jobs of the first hyperperiod window of every chain task, chain by chain
/// and member by member; each job appears once.
pub fn job_ordering(ts: &TaskSet, order: ChainOrder) -> JobOrdering {
    let mut cec_vector: Vec<usize> = (0..ts.chains().len()).collect();
    match order {
        ChainOrder::DescendingLength => {
            cec_vector.sort_by_key(|&c| (std::cmp::Reverse(ts.chains()[c].members.len()), c))
        }
        ChainOrder::AscendingLength => cec_vector.sort_by_key(|&c| (ts.chains()[c].members.len(), c)),
    }
    let mut seen = BTreeSet::new();
    let mut job_vector = Vec::new();
    for &c in &cec_vector {
        for &t in &ts.chains()[c].members {
            if seen.insert(t) {
                job_vector.extend((1..=ts.jobs_per_hyperperiod(t)).map(|i| JobRef::new(t, i)));
            }
        }
    }
    JobOrdering { cec_vector, job_vector }
}

/// Jobs of other tasks executing between the release and deadline of `job_x`
/// that could become its predecessor.
pub fn candidate_jobs(
    ts: &TaskSet,
    schedule: &Schedule,
    jlds: &JldSet,
    job_x: JobRef,
    scope: CandidateScope,
) -> Vec<JobRef> {
    let from = ts.release(job_x);
    let to = ts.absolute_deadline(job_x);
    let own_core = ts.task(job_x.task).core;
    let cores: Vec<usize> = match scope {
        CandidateScope::SameCore => vec![own_core],
        CandidateScope::AllCores => (0..ts.cores().len()).collect(),
    };
    let before = jlds.ancestors(job_x);
    let after = jlds.descendants(job_x);
    let mut out = BTreeSet::new();
    for core in cores {
        for seg in schedule.segments_overlapping(core, from, to) {
            let j = seg.job;
            if j.task != job_x.task
                && j.index <= ts.jobs_per_hyperperiod(j.task)
                && !before.contains(&j)
                && !after.contains(&j)
            {
                out.insert(j);
            }
        }
    }
    out.into_iter().collect()
}

/// Child of a node: the dependency set it adds and its metrics. Schedules are
/// recomputed when a child is expanded.
#[derive(Debug, Clone)]
pub struct Child {
    pub jlds: JldSet,
    pub cursor: usize,
    pub added: Option<Jld>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
enum Score {
    Lex(Utilization, Time, Time),
    Weighted(f64),
}

fn score(objective: Objective, root: &Metrics, m: &Metrics) -> Score {
    match objective {
        Objective::Lexicographic => Score::Lex(m.utilization, m.mrt_sum(), m.mda_sum()),
        Objective::Weighted { util, mrt, mda } => {
            let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
            let u = ratio(to_f64(m.utilization), to_f64(root.utilization));
            let r = ratio(m.mrt_sum() as f64, root.mrt_sum() as f64);
            let d = ratio(m.mda_sum() as f64, root.mda_sum() as f64);
            Score::Weighted(util * u + mrt * r + mda * d)
        }
    }
}

fn cmp_score(a: &Score, b: &Score) -> Ordering {
    match (a, b) {
        (Score::Lex(..), Score::Lex(..)) => a.partial_cmp(b).unwrap(),
        (Score::Weighted(x), Score::Weighted(y)) => x.total_cmp(y),
        _ => unreachable!("scores of one search share the objective"),
    }
}

pub fn to_f64(r: Utilization) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn encoding_hash(seed: u64, jlds: &JldSet) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    jlds.encoding().hash(&mut h);
    h.finish()
}

/// One expanded node in the search trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub node: u64,
    pub parent: Option<u64>,
    pub added: Option<JldDoc>,
    pub utilization: f64,
    pub mrt: Time,
    pub mda: Time,
    pub feasible_children: usize,
    pub best_utilization: f64,
    pub best_mrt: Time,
    pub best_mda: Time,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    pub expanded: u64,
    pub evaluated: u64,
    pub infeasible: u64,
    pub rejected_untransformable: u64,
    pub rounds: u32,
    pub exhausted: bool,
    pub timed_out: bool,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: SearchNode,
    pub root: SearchNode,
    pub audit: Vec<AuditEntry>,
    pub stats: SearchStats,
}

struct Search<'a> {
    ts: &'a TaskSet,
    cfg: &'a SearchConfig,
    ordering: JobOrdering,
    root_metrics: Metrics,
    best: SearchNode,
    best_score: Score,
    deadline: Option<Instant>,
    audit: Vec<AuditEntry>,
    stats: SearchStats,
    cache: HashMap<(Vec<(usize, u64, usize, u64)>, usize), Vec<Child>>,
    next_id: u64,
}

const CACHE_LIMIT: usize = 4096;

enum Stop {
    Budget,
    Failed(Error),
}

impl From<Error> for Stop {
    fn from(e: Error) -> Self {
        Stop::Failed(e)
    }
}

impl<'a> Search<'a> {
    fn out_of_budget(&mut self) -> bool {
        if let Some(d) = self.deadline {
            if Instant::now() >= d {
                self.stats.timed_out = true;
                return true;
            }
        }
        self.cfg.max_expansions.is_some_and(|m| self.stats.expanded >= m)
            || self.cfg.max_evaluations.is_some_and(|m| self.stats.evaluated >= m)
    }

    fn sort_key(&self, c: &Child) -> (Score, usize, u64) {
        (
            score(self.cfg.objective, &self.root_metrics, &c.metrics),
            c.jlds.len(),
            encoding_hash(self.cfg.seed, &c.jlds),
        )
    }

    fn sort_children(&self, children: Vec<Child>) -> Vec<Child> {
        let mut keyed: Vec<_> = children
            .into_iter()
            .map(|c| (self.sort_key(&c), c.jlds.encoding(), c))
            .collect();
        keyed.sort_by(|(ka, ea, _), (kb, eb, _)| {
            cmp_score(&ka.0, &kb.0)
                .then(ka.1.cmp(&kb.1))
                .then(ka.2.cmp(&kb.2))
                .then_with(|| ea.cmp(eb))
        });
        keyed.into_iter().map(|(_, _, c)| c).collect()
    }

    /// Considers an evaluated configuration for the global best.
    fn offer(&mut self, jlds: &JldSet, cursor: usize, metrics: &Metrics, analysis: Analysis) -> Result<()> {
        let s = score(self.cfg.objective, &self.root_metrics, metrics);
        if cmp_score(&s, &self.best_score) != Ordering::Less {
            return Ok(());
        }
        // never trade a chain's latency for utilization
        if metrics.mrt.iter().zip(&self.root_metrics.mrt).any(|(a, b)| a > b)
            || metrics.mda.iter().zip(&self.root_metrics.mda).any(|(a, b)| a > b)
        {
            return Ok(());
        }
        if self.cfg.require_transformable {
            // a Γ′ that misses deadlines or overflows the hyperperiod limit
            // is just another untransformable candidate
            let ok = transform(self.ts, jlds, &analysis)
                .and_then(|out| verify_equivalence(self.ts, jlds, &analysis, &out))
                .is_ok_and(|r| r.equivalent());
            if !ok {
                self.stats.rejected_untransformable += 1;
                return Ok(());
            }
        }
        self.best = SearchNode {
            jlds: jlds.clone(),
            cursor,
            metrics: metrics.clone(),
            analysis,
        };
        self.best_score = s;
        Ok(())
    }

    /// Children of `(jlds, cursor)`, sorted; `None` if the budget ran out
    /// before all children were evaluated.
    fn expand(&mut self, jlds: &JldSet, cursor: usize, metrics: &Metrics) -> Result<Option<Vec<Child>>, Stop> {
        let key = (jlds.encoding(), cursor);
        if let Some(c) = self.cache.get(&key) {
            return Ok(Some(c.clone()));
        }
        let job_x = self.ordering.job_vector[cursor];
        let schedule = simulate(self.ts, jlds)?;
        let candidates = candidate_jobs(self.ts, &schedule, jlds, job_x, self.cfg.scope);
        let mut children = vec![Child {
            jlds: jlds.clone(),
            cursor: cursor + 1,
            added: None,
            metrics: metrics.clone(),
        }];
        for cand in candidates {
            if self.out_of_budget() {
                return Ok(None);
            }
            let jld = Jld { pred: cand, succ: job_x };
            let next = jlds.with_added(self.ts, jld)?;
            self.stats.evaluated += 1;
            let analysis = match analyze(self.ts, &next, IntervalMode::ScheduleAware) {
                Ok(a) => a,
                Err(Error::Infeasible(_)) => {
                    self.stats.infeasible += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let m = Metrics::of(&analysis);
            self.offer(&next, cursor + 1, &m, analysis)?;
            children.push(Child {
                jlds: next,
                cursor: cursor + 1,
                added: Some(jld),
                metrics: m,
            });
        }
        let children = self.sort_children(children);
        if self.cache.len() >= CACHE_LIMIT {
            self.cache.clear();
        }
        self.cache.insert(key, children.clone());
        Ok(Some(children))
    }

    fn record(&mut self, node: u64, parent: Option<u64>, added: Option<Jld>, m: &Metrics, feasible: usize) {
        let best = &self.best.metrics;
        self.audit.push(AuditEntry {
            node,
            parent,
            added: added.map(|d| JldDoc {
                pred: self.ts.job_label(d.pred),
                succ: self.ts.job_label(d.succ),
            }),
            utilization: to_f64(m.utilization),
            mrt: m.mrt_sum(),
            mda: m.mda_sum(),
            feasible_children: feasible,
            best_utilization: to_f64(best.utilization),
            best_mrt: best.mrt_sum(),
            best_mda: best.mda_sum(),
        });
    }

    /// One depth-first round allowing at most `allowance` non-first choices.
    /// Returns whether the round was cut short by the allowance.
    fn round(&mut self, root: &Child, allowance: u32) -> Result<bool, Stop> {
        struct Frame {
            id: u64,
            children: Vec<Child>,
            next: usize,
            left: u32,
        }
        let mut pruned = false;
        let mut stack: Vec<Frame> = Vec::new();
        let mut pending: Option<(Child, Option<u64>, u32)> = Some((root.clone(), None, allowance));
        loop {
            if let Some((node, parent, left)) = pending.take() {
                if node.cursor < self.ordering.job_vector.len() {
                    if self.out_of_budget() {
                        return Err(Stop::Budget);
                    }
                    let Some(children) = self.expand(&node.jlds, node.cursor, &node.metrics)? else {
                        return Err(Stop::Budget);
                    };
                    self.stats.expanded += 1;
                    let id = self.next_id;
                    self.next_id += 1;
                    self.record(id, parent, node.added, &node.metrics, children.len());
                    stack.push(Frame {
                        id,
                        children,
                        next: 0,
                        left,
                    });
                }
            }
            let Some(top) = stack.last_mut() else {
                return Ok(pruned);
            };
            if top.next >= top.children.len() {
                stack.pop();
                continue;
            }
            let i = top.next;
            top.next += 1;
            let cost = u32::from(i > 0);
            if cost > top.left {
                pruned = true;
                top.next = top.children.len();
                continue;
            }
            pending = Some((top.children[i].clone(), Some(top.id), top.left - cost));
        }
    }
}

/// Searches dependency sets that lower the objective below the root's.
pub fn run_search(ts: &TaskSet, config: &SearchConfig) -> Result<SearchOutcome> {
    config.validate()?;
    let started = Instant::now();
    let root_analysis = analyze(ts, &JldSet::new(), IntervalMode::ScheduleAware)?;
    let root = SearchNode {
        jlds: JldSet::new(),
        cursor: 0,
        metrics: Metrics::of(&root_analysis),
        analysis: root_analysis,
    };
    let ordering = job_ordering(ts, config.chain_order);
    let mut search = Search {
        ts,
        cfg: config,
        root_metrics: root.metrics.clone(),
        best_score: score(config.objective, &root.metrics, &root.metrics),
        best: root.clone(),
        ordering,
        deadline: started.checked_add(config.timeout),
        audit: Vec::new(),
        stats: SearchStats::default(),
        cache: HashMap::new(),
        next_id: 0,
    };

    if ts.chains().is_empty() || search.ordering.job_vector.is_empty() {
        search.stats.exhausted = true;
    } else {
        let start = Child {
            jlds: JldSet::new(),
            cursor: 0,
            added: None,
            metrics: root.metrics.clone(),
        };
        let mut allowance = 0;
        loop {
            search.stats.rounds += 1;
            match search.round(&start, allowance) {
                Ok(false) => {
                    search.stats.exhausted = true;
                    break;
                }
                Ok(true) => allowance += 1,
                Err(Stop::Budget) => break,
                Err(Stop::Failed(e)) => return Err(e),
            }
        }
    }

    search.stats.elapsed_ms = started.elapsed().as_millis() as u64;
    Ok(SearchOutcome {
        best: search.best,
        root,
        audit: search.audit,
        stats: search.stats,
    })
}

/// Evaluates a configuration outside a search.
pub fn evaluate(ts: &TaskSet, jlds: &JldSet) -> Result<SearchNode> {
    let schedule = simulate(ts, jlds)?;
    let analysis = analyze_schedule(ts, schedule, IntervalMode::ScheduleAware)?;
    Ok(SearchNode {
        jlds: jlds.clone(),
        cursor: 0,
        metrics: Metrics::of(&analysis),
        analysis,
    })
}

/// Children of `node` sorted by the objective (no time limit).
pub fn create_and_sort_children(
    ts: &TaskSet,
    ordering: &JobOrdering,
    node: &SearchNode,
    config: &SearchConfig,
) -> Result<Vec<Child>> {
    if node.cursor >= ordering.job_vector.len() {
        return Ok(Vec::new());
    }
    let cfg = SearchConfig {
        require_transformable: false,
        max_expansions: None,
        max_evaluations: None,
        ..config.clone()
    };
    let mut s = Search {
        ts,
        cfg: &cfg,
        ordering: ordering.clone(),
        root_metrics: node.metrics.clone(),
        best_score: score(cfg.objective, &node.metrics, &node.metrics),
        best: node.clone(),
        deadline: None,
        audit: Vec::new(),
        stats: SearchStats::default(),
        cache: HashMap::new(),
        next_id: 0,
    };
    match s.expand(&node.jlds, node.cursor, &node.metrics) {
        Ok(Some(c)) => Ok(c),
        Ok(None) | Err(Stop::Budget) => unreachable!("no budget without a deadline"),
        Err(Stop::Failed(e)) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_task_set;
    use crate::testutil::{example_one, job};

    fn budgeted(n: u64) -> SearchConfig {
        SearchConfig {
            timeout: Duration::from_secs(600),
            max_expansions: Some(n),
            ..SearchConfig::default()
        }
    }

    #[test]
    fn example_one_candidates_for_first_tau3_job() {
        let ts = example_one();
        let s = simulate(&ts, &JldSet::new()).unwrap();
        let c = candidate_jobs(&ts, &s, &JldSet::new(), job(&ts, "tau3", 1), CandidateScope::SameCore);
        for want in [job(&ts, "tau2", 1), job(&ts, "tau2", 2), job(&ts, "tau1", 1)] {
            assert!(c.contains(&want), "{c:?}");
        }
    }

    #[test]
    fn lone_job_has_no_candidates() {
        let ts = parse_task_set(
            r#"{"unit":"us","cores":["a","b"],"tasks":[
                {"id":"x","core":"a","wcet":1,"period":4,"priority":1},
                {"id":"y","core":"b","wcet":1,"period":4,"priority":1}],
               "chains":[{"id":"E","members":["x","y"]}]}"#,
        )
        .unwrap();
        let s = simulate(&ts, &JldSet::new()).unwrap();
        assert!(candidate_jobs(&ts, &s, &JldSet::new(), job(&ts, "x", 1), CandidateScope::SameCore).is_empty());
        assert_eq!(
            candidate_jobs(&ts, &s, &JldSet::new(), job(&ts, "x", 1), CandidateScope::AllCores),
            vec![job(&ts, "y", 1)]
        );
    }

    #[test]
    fn cycle_closing_candidates_are_dropped() {
        let ts = example_one();
        let mut jlds = JldSet::new();
        jlds.insert(&ts, Jld { pred: job(&ts, "tau3", 1), succ: job(&ts, "tau2", 2) }).unwrap();
        let s = simulate(&ts, &jlds).unwrap();
        let c = candidate_jobs(&ts, &s, &jlds, job(&ts, "tau3", 1), CandidateScope::SameCore);
        assert!(!c.contains(&job(&ts, "tau2", 2)));
    }

    #[test]
    fn root_children_contain_known_dependency() {
        let ts = example_one();
        let root = evaluate(&ts, &JldSet::new()).unwrap();
        let ordering = job_ordering(&ts, ChainOrder::DescendingLength);
        let node = SearchNode {
            cursor: ordering.job_vector.iter().position(|&j| j == job(&ts, "tau3", 1)).unwrap(),
            ..root
        };
        let children = create_and_sort_children(&ts, &ordering, &node, &SearchConfig::default()).unwrap();
        assert!(children.iter().any(|c| c.added.is_none()));
        assert!(children
            .iter()
            .any(|c| c.added == Some(Jld { pred: job(&ts, "tau2", 1), succ: job(&ts, "tau3", 1) })));
        for pair in children.windows(2) {
            let key = |c: &Child| (c.metrics.utilization, c.metrics.mrt_sum(), c.metrics.mda_sum());
            assert!(key(&pair[0]) <= key(&pair[1]));
        }
    }

    #[test]
    fn example_one_search_reaches_known_optimum() {
        let ts = example_one();
        let out = run_search(&ts, &budgeted(3000)).unwrap();
        assert_eq!(out.best.metrics.utilization, Utilization::new(3, 5));
        assert!(out.best.metrics.mrt[0] <= 12, "{:?}", out.best.metrics);
    }

    #[test]
    fn tiny_timeout_returns_root() {
        let ts = example_one();
        let cfg = SearchConfig {
            timeout: Duration::from_nanos(1),
            ..SearchConfig::default()
        };
        let out = run_search(&ts, &cfg).unwrap();
        assert_eq!(out.best.metrics, out.root.metrics);
    }

    #[test]
    fn no_chains_returns_root() {
        let ts = parse_task_set(
            r#"{"unit":"us","cores":[0],"tasks":[{"id":"a","core":0,"wcet":1,"period":4,"priority":1}]}"#,
        )
        .unwrap();
        let out = run_search(&ts, &budgeted(10)).unwrap();
        assert!(out.best.jlds.is_empty());
        assert_eq!(out.stats.expanded, 0);
    }

    #[test]
    fn budgeted_search_is_deterministic_and_monotone() {
        let ts = example_one();
        let a = run_search(&ts, &budgeted(60)).unwrap();
        let b = run_search(&ts, &budgeted(60)).unwrap();
        assert_eq!(a.audit, b.audit);
        assert_eq!(a.best.jlds, b.best.jlds);
        for pair in a.audit.windows(2) {
            let k = |e: &AuditEntry| (e.best_utilization, e.best_mrt, e.best_mda);
            assert!(k(&pair[1]) <= k(&pair[0]));
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SearchConfig {
            objective: Objective::Weighted { util: 0.0, mrt: 0.0, mda: 0.0 },
            ..SearchConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SearchConfig {
            timeout: Duration::ZERO,
            ..SearchConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
