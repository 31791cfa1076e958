//! Tasks, jobs, cause-effect chains and task sets.
//!
//! All time quantities are integers in the base unit declared by the task-set
//! document (for instance microseconds). Nothing in the analysis rounds.

use std::collections::{HashMap, HashSet};
use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A time instant or duration in the task set's base unit. Always non-negative
/// for values stored in a [`TaskSet`]; signed so that index arithmetic can go
/// below zero transiently.
pub type Time = i64;

/// Task priority. Larger values mean higher priority. Rational so that new
/// priority levels can be inserted strictly between two existing ones.
pub type Priority = Ratio<i64>;

/// Exact utilization value.
pub type Utilization = Ratio<i64>;

pub const DEFAULT_HYPERPERIOD_LIMIT: Time = 1_000_000_000;

/// Position of a task inside its [`TaskSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskIdx(pub usize);

/// The `index`-th job (1-based) of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JobRef {
    pub task: TaskIdx,
    pub index: u64,
}

impl JobRef {
    pub fn new(task: TaskIdx, index: u64) -> Self {
        JobRef { task, index }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: String,
    pub core: usize,
    pub wcet: Time,
    pub period: Time,
    pub deadline: Time,
    pub phase: Time,
    pub priority: Priority,
}

impl Task {
    pub fn release_of(&self, index: u64) -> Time {
        self.phase + (index as Time - 1) * self.period
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CauseEffectChain {
    pub id: String,
    pub members: Vec<TaskIdx>,
}

impl CauseEffectChain {
    pub fn first(&self) -> TaskIdx {
        self.members[0]
    }

    pub fn last(&self) -> TaskIdx {
        *self.members.last().expect("chains have at least two members")
    }

    pub fn is_boundary(&self, task: TaskIdx) -> bool {
        self.first() == task || self.last() == task
    }

    pub fn position(&self, task: TaskIdx) -> Option<usize> {
        self.members.iter().position(|&m| m == task)
    }
}

/// A validated, immutable task set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSet {
    unit: String,
    cores: Vec<String>,
    tasks: Vec<Task>,
    chains: Vec<CauseEffectChain>,
    hyperperiod: Time,
    limit: Time,
}

/// Least common multiple of `periods`, failing when it exceeds `limit`.
pub fn hyperperiod<I>(periods: I, limit: Time) -> Result<Time>
where
    I: IntoIterator<Item = Time>,
{
    let mut acc: Option<Time> = None;
    for p in periods {
        if p <= 0 {
            return Err(Error::validation("period", format!("period must be positive, got {p}")));
        }
        let next = match acc {
            None => p,
            Some(a) => {
                let g = a.gcd(&p);
                (a / g).checked_mul(p).ok_or_else(|| Error::HyperperiodLimit {
                    what: "task set".into(),
                    limit,
                })?
            }
        };
        if next > limit {
            return Err(Error::HyperperiodLimit {
                what: "task set".into(),
                limit,
            });
        }
        acc = Some(next);
    }
    acc.ok_or_else(|| Error::validation("tasks", "hyperperiod of an empty set is undefined"))
}

impl TaskSet {
    /// Builds and validates a task set with the default hyperperiod limit.
    pub fn new(
        unit: impl Into<String>,
        cores: Vec<String>,
        tasks: Vec<Task>,
        chains: Vec<CauseEffectChain>,
    ) -> Result<Self> {
        Self::with_limit(unit, cores, tasks, chains, DEFAULT_HYPERPERIOD_LIMIT)
    }

    pub fn with_limit(
        unit: impl Into<String>,
        cores: Vec<String>,
        tasks: Vec<Task>,
        chains: Vec<CauseEffectChain>,
        limit: Time,
    ) -> Result<Self> {
        let mut seen_cores = HashSet::new();
        for (i, c) in cores.iter().enumerate() {
            if !seen_cores.insert(c) {
                return Err(Error::validation(format!("cores[{i}]"), format!("duplicate core id {c:?}")));
            }
        }
        if tasks.is_empty() {
            return Err(Error::validation("tasks", "a task set needs at least one task"));
        }
        let mut ids = HashSet::new();
        for (i, t) in tasks.iter().enumerate() {
            let path = format!("tasks[{i}]");
            if !ids.insert(t.id.as_str()) {
                return Err(Error::validation(format!("{path}.id"), format!("duplicate task id {:?}", t.id)));
            }
            if t.core >= cores.len() {
                return Err(Error::validation(format!("{path}.core"), "core index out of range"));
            }
            if t.period <= 0 {
                return Err(Error::validation(format!("{path}.period"), "period must be positive"));
            }
            if t.deadline != t.period {
                return Err(Error::validation(
                    format!("{path}.deadline"),
                    format!("implicit deadlines required: deadline {} != period {}", t.deadline, t.period),
                ));
            }
            if t.wcet <= 0 || t.wcet > t.deadline {
                return Err(Error::validation(
                    format!("{path}.wcet"),
                    format!("wcet must satisfy 0 < wcet <= deadline, got {}", t.wcet),
                ));
            }
            if t.phase < 0 {
                return Err(Error::validation(format!("{path}.phase"), "phase must be non-negative"));
            }
        }
        let mut prio_seen: HashMap<(usize, Priority), &str> = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if let Some(other) = prio_seen.insert((t.core, t.priority), &t.id) {
                return Err(Error::validation(
                    format!("tasks[{i}].priority"),
                    format!(
                        "priority {} of task {:?} already used by task {:?} on core {:?}",
                        t.priority, t.id, other, cores[t.core]
                    ),
                ));
            }
        }
        let mut chain_ids = HashSet::new();
        for (i, c) in chains.iter().enumerate() {
            let path = format!("chains[{i}]");
            if !chain_ids.insert(c.id.as_str()) {
                return Err(Error::validation(format!("{path}.id"), format!("duplicate chain id {:?}", c.id)));
            }
            if c.members.len() < 2 {
                return Err(Error::validation(
                    format!("{path}.members"),
                    format!("chain {:?} needs at least two tasks", c.id),
                ));
            }
            let mut in_chain = HashSet::new();
            for (j, m) in c.members.iter().enumerate() {
                if m.0 >= tasks.len() {
                    return Err(Error::validation(format!("{path}.members[{j}]"), "task index out of range"));
                }
                if !in_chain.insert(*m) {
                    return Err(Error::validation(
                        format!("{path}.members[{j}]"),
                        format!("task {:?} appears twice in chain {:?}", tasks[m.0].id, c.id),
                    ));
                }
            }
        }
        for (ci, core) in cores.iter().enumerate() {
            let periods: Vec<Time> = tasks.iter().filter(|t| t.core == ci).map(|t| t.period).collect();
            if !periods.is_empty() {
                hyperperiod(periods, limit).map_err(|_| Error::HyperperiodLimit {
                    what: format!("core {core:?}"),
                    limit,
                })?;
            }
        }
        let h = hyperperiod(tasks.iter().map(|t| t.period), limit)?;
        Ok(TaskSet {
            unit: unit.into(),
            cores,
            tasks,
            chains,
            hyperperiod: h,
            limit,
        })
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn cores(&self) -> &[String] {
        &self.cores
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn chains(&self) -> &[CauseEffectChain] {
        &self.chains
    }

    pub fn hyperperiod_limit(&self) -> Time {
        self.limit
    }

    pub fn task(&self, idx: TaskIdx) -> &Task {
        &self.tasks[idx.0]
    }

    pub fn task_index(&self, id: &str) -> Option<TaskIdx> {
        self.tasks.iter().position(|t| t.id == id).map(TaskIdx)
    }

    pub fn chain_index(&self, id: &str) -> Option<usize> {
        self.chains.iter().position(|c| c.id == id)
    }

    pub fn task_indices(&self) -> impl Iterator<Item = TaskIdx> + '_ {
        (0..self.tasks.len()).map(TaskIdx)
    }

    /// Hyperperiod of the whole task set.
    pub fn hyperperiod(&self) -> Time {
        self.hyperperiod
    }

    /// Largest phase in the task set.
    pub fn max_phase(&self) -> Time {
        self.tasks.iter().map(|t| t.phase).max().unwrap_or(0)
    }

    pub fn chain_hyperperiod(&self, chain: &CauseEffectChain) -> Time {
        chain
            .members
            .iter()
            .map(|m| self.task(*m).period)
            .fold(1, |acc: Time, p| acc.lcm(&p))
    }

    pub fn chain_max_phase(&self, chain: &CauseEffectChain) -> Time {
        chain.members.iter().map(|m| self.task(*m).phase).max().unwrap_or(0)
    }

    pub fn release(&self, job: JobRef) -> Time {
        self.task(job.task).release_of(job.index)
    }

    pub fn absolute_deadline(&self, job: JobRef) -> Time {
        self.release(job) + self.task(job.task).deadline
    }

    /// Number of jobs a task releases per hyperperiod of the task set.
    pub fn jobs_per_hyperperiod(&self, task: TaskIdx) -> u64 {
        (self.hyperperiod / self.task(task).period) as u64
    }

    /// Label used in reports, e.g. `tau2#3`.
    pub fn job_label(&self, job: JobRef) -> String {
        format!("{}#{}", self.task(job.task).id, job.index)
    }

    pub fn tasks_on_core(&self, core: usize) -> impl Iterator<Item = TaskIdx> + '_ {
        self.tasks
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.core == core)
            .map(|(i, _)| TaskIdx(i))
    }

    /// Chains that contain `task`.
    pub fn chains_of(&self, task: TaskIdx) -> impl Iterator<Item = &CauseEffectChain> + '_ {
        self.chains.iter().filter(move |c| c.members.contains(&task))
    }

    pub fn core_utilization(&self, core: usize) -> Utilization {
        self.tasks
            .iter()
            .filter(|t| t.core == core)
            .map(|t| Utilization::new(t.wcet, t.period))
            .fold(Utilization::from_integer(0), |a, b| a + b)
    }

    /// Mean of the per-core utilizations.
    pub fn system_utilization(&self) -> Utilization {
        if self.cores.is_empty() {
            return Utilization::from_integer(0);
        }
        let total = (0..self.cores.len())
            .map(|c| self.core_utilization(c))
            .fold(Utilization::from_integer(0), |a, b| a + b);
        total / self.cores.len() as i64
    }

    /// Copy of this task set with every task phase replaced.
    pub fn with_phases(&self, phases: &[Time]) -> Result<TaskSet> {
        assert_eq!(phases.len(), self.tasks.len());
        let tasks = self
            .tasks
            .iter()
            .zip(phases)
            .map(|(t, &p)| Task { phase: p, ..t.clone() })
            .collect();
        TaskSet::with_limit(self.unit.clone(), self.cores.clone(), tasks, self.chains.clone(), self.limit)
    }

    /// Serializes into the task-set document format.
    pub fn to_document(&self) -> TaskSetDoc {
        TaskSetDoc {
            unit: self.unit.clone(),
            cores: self.cores.iter().map(|c| Ident::Str(c.clone())).collect(),
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskDoc {
                    id: t.id.clone(),
                    core: Ident::Str(self.cores[t.core].clone()),
                    wcet: t.wcet,
                    period: t.period,
                    deadline: Some(t.deadline),
                    phase: Some(t.phase),
                    priority: PriorityRepr::from(t.priority),
                })
                .collect(),
            chains: self
                .chains
                .iter()
                .map(|c| ChainDoc {
                    id: c.id.clone(),
                    members: c.members.iter().map(|m| self.task(*m).id.clone()).collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("task-set documents always serialize")
    }
}

impl fmt::Display for JobRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task[{}]#{}", self.task.0, self.index)
    }
}

/// Core ids may be written as strings or as non-negative integers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ident {
    Num(u64),
    Str(String),
}

impl Ident {
    fn into_string(self) -> String {
        match self {
            Ident::Num(n) => n.to_string(),
            Ident::Str(s) => s,
        }
    }
}

/// Priorities are integers or `"p/q"` strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorityRepr {
    Int(i64),
    Text(String),
}

impl From<Priority> for PriorityRepr {
    fn from(p: Priority) -> Self {
        if p.is_integer() {
            PriorityRepr::Int(p.to_integer())
        } else {
            PriorityRepr::Text(format!("{}/{}", p.numer(), p.denom()))
        }
    }
}

impl PriorityRepr {
    fn to_priority(&self, path: &str) -> Result<Priority> {
        match self {
            PriorityRepr::Int(v) => Ok(Priority::from_integer(*v)),
            PriorityRepr::Text(s) => {
                let bad = || Error::Schema {
                    path: path.to_string(),
                    message: format!("cannot parse priority {s:?}"),
                };
                match s.split_once('/') {
                    Some((n, d)) => {
                        let n: i64 = n.trim().parse().map_err(|_| bad())?;
                        let d: i64 = d.trim().parse().map_err(|_| bad())?;
                        if d == 0 {
                            return Err(bad());
                        }
                        Ok(Priority::new(n, d))
                    }
                    None => s.trim().parse().map(Priority::from_integer).map_err(|_| bad()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDoc {
    pub id: String,
    pub core: Ident,
    pub wcet: Time,
    pub period: Time,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<Time>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Time>,
    pub priority: PriorityRepr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDoc {
    pub id: String,
    pub members: Vec<String>,
}

/// On-disk representation of a task set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSetDoc {
    pub unit: String,
    pub cores: Vec<Ident>,
    pub tasks: Vec<TaskDoc>,
    #[serde(default)]
    pub chains: Vec<ChainDoc>,
}

impl TaskSetDoc {
    pub fn into_task_set(self, limit: Time) -> Result<TaskSet> {
        let cores: Vec<String> = self.cores.into_iter().map(Ident::into_string).collect();
        let mut tasks = Vec::with_capacity(self.tasks.len());
        for (i, t) in self.tasks.into_iter().enumerate() {
            let path = format!("tasks[{i}]");
            let core_name = t.core.into_string();
            let core = cores.iter().position(|c| *c == core_name).ok_or_else(|| {
                Error::validation(format!("{path}.core"), format!("unknown core {core_name:?}"))
            })?;
            let priority = t.priority.to_priority(&format!("{path}.priority"))?;
            tasks.push(Task {
                id: t.id,
                core,
                wcet: t.wcet,
                period: t.period,
                deadline: t.deadline.unwrap_or(t.period),
                phase: t.phase.unwrap_or(0),
                priority,
            });
        }
        let mut chains = Vec::with_capacity(self.chains.len());
        for (i, c) in self.chains.into_iter().enumerate() {
            let mut members = Vec::with_capacity(c.members.len());
            for (j, m) in c.members.iter().enumerate() {
                let idx = tasks.iter().position(|t| t.id == *m).ok_or_else(|| {
                    Error::validation(
                        format!("chains[{i}].members[{j}]"),
                        format!("chain {:?} references unknown task {m:?}", c.id),
                    )
                })?;
                members.push(TaskIdx(idx));
            }
            chains.push(CauseEffectChain { id: c.id, members });
        }
        TaskSet::with_limit(self.unit, cores, tasks, chains, limit)
    }
}

/// Parses and validates a JSON task-set document.
pub fn parse_task_set(document: &str) -> Result<TaskSet> {
    parse_task_set_with_limit(document, DEFAULT_HYPERPERIOD_LIMIT)
}

pub fn parse_task_set_with_limit(document: &str, limit: Time) -> Result<TaskSet> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: TaskSetDoc = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    doc.into_task_set(limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::EXAMPLE_1;

    #[test]
    fn parses_example_one() {
        let ts = parse_task_set(EXAMPLE_1).unwrap();
        assert_eq!(ts.tasks().len(), 3);
        assert_eq!(ts.chain_hyperperiod(&ts.chains()[0]), 15);
        assert_eq!(ts.hyperperiod(), 15);
        let t2 = ts.task(ts.task_index("tau2").unwrap());
        assert_eq!((t2.deadline, t2.phase), (3, 0));
    }

    #[test]
    fn single_task_without_chains() {
        let ts = parse_task_set(
            r#"{"unit":"us","cores":["c0"],"tasks":[{"id":"a","core":"c0","wcet":2,"period":7,"priority":1}]}"#,
        )
        .unwrap();
        assert!(ts.chains().is_empty());
        assert_eq!(ts.hyperperiod(), 7);
    }

    #[test]
    fn chain_with_missing_task_is_rejected() {
        let doc = EXAMPLE_1.replace(r#"["tau1", "tau2", "tau3"]"#, r#"["tau1", "tau9"]"#);
        let err = parse_task_set(&doc).unwrap_err().to_string();
        assert!(err.contains("chains[0].members[1]"), "{err}");
        assert!(err.contains("tau9") && err.contains("\"E\""), "{err}");
    }

    #[test]
    fn duplicate_priority_on_core_is_rejected() {
        let doc = EXAMPLE_1.replace(r#""priority": 3"#, r#""priority": 2"#);
        let err = parse_task_set(&doc).unwrap_err().to_string();
        assert!(err.contains("tasks[1].priority"), "{err}");
    }

    #[test]
    fn schema_errors_carry_a_path() {
        let doc = EXAMPLE_1.replace(r#""wcet": 1, "period": 3"#, r#""wcet": "x", "period": 3"#);
        let err = parse_task_set(&doc).unwrap_err();
        assert!(matches!(err, Error::Schema { ref path, .. } if path == "tasks[1].wcet"), "{err}");
    }

    #[test]
    fn repeated_task_in_chain_is_rejected() {
        let doc = EXAMPLE_1.replace(r#"["tau1", "tau2", "tau3"]"#, r#"["tau1", "tau2", "tau1"]"#);
        assert!(parse_task_set(&doc).is_err());
    }

    #[test]
    fn hyperperiod_limit_is_enforced() {
        let err = parse_task_set_with_limit(EXAMPLE_1, 10).unwrap_err();
        assert!(matches!(err, Error::HyperperiodLimit { .. }));
    }

    #[test]
    fn hyperperiod_examples() {
        assert_eq!(hyperperiod([5, 3, 5], DEFAULT_HYPERPERIOD_LIMIT).unwrap(), 15);
        assert_eq!(hyperperiod([7], DEFAULT_HYPERPERIOD_LIMIT).unwrap(), 7);
        let bosch = [1, 2, 5, 10, 20, 50, 100, 200, 1000];
        assert_eq!(hyperperiod(bosch, DEFAULT_HYPERPERIOD_LIMIT).unwrap(), 1000);
        assert!(hyperperiod([1_000_003, 1_000_033], DEFAULT_HYPERPERIOD_LIMIT).is_err());
    }

    #[test]
    fn rational_priorities_round_trip() {
        let doc = EXAMPLE_1.replace(r#""priority": 1"#, r#""priority": "1/2""#);
        let ts = parse_task_set(&doc).unwrap();
        assert_eq!(ts.tasks()[2].priority, Priority::new(1, 2));
        let again = parse_task_set(&ts.to_json()).unwrap();
        assert_eq!(ts, again);
    }

    #[test]
    fn releases_are_periodic() {
        let ts = parse_task_set(EXAMPLE_1).unwrap();
        let t = TaskIdx(1);
        for i in 1..20 {
            assert_eq!(ts.release(JobRef::new(t, i + 1)) - ts.release(JobRef::new(t, i)), 3);
        }
    }
}
