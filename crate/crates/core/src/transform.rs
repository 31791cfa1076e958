//! Translation of an optimised configuration (skipped jobs plus job-level
//! dependencies) into a purely periodic task set.
//!
//! Tasks with skipped jobs or with jobs that hold a dependency are split into
//! one task per retained job, each releasing once per window.

use std::collections::BTreeMap;

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::analysis::Analysis;
use crate::chains::{analyze_chains, JobStream, LetTiming};
use crate::error::{Error, Result};
use crate::let_intervals::CommInterval;
use crate::model::{ChainDoc, JobRef, Priority, Task, TaskIdx, TaskSet, Time};
use crate::sched::{default_windows, simulate_with, JldSet, Schedule, SimOptions};

/// Retained job positions of one task inside its window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetainedJobs {
    pub task: TaskIdx,
    pub window: Time,
    pub jobs_per_window: u64,
    /// Zero-based positions, ascending.
    pub positions: Vec<u64>,
}

impl RetainedJobs {
    pub fn contains(&self, job: JobRef) -> bool {
        self.positions.binary_search(&((job.index - 1) % self.jobs_per_window)).is_ok()
    }

    fn is_complete(&self) -> bool {
        self.positions.len() as u64 == self.jobs_per_window
    }
}

/// Jobs that are kept because a primary chain needs them (all jobs of tasks at
/// a chain boundary or outside every chain).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimaryJobSet {
    pub tasks: Vec<RetainedJobs>,
}

pub fn primary_job_set(analysis: &Analysis) -> PrimaryJobSet {
    let tasks = analysis
        .skip_plan
        .tasks()
        .iter()
        .map(|s| RetainedJobs {
            task: s.task,
            window: s.window,
            jobs_per_window: s.jobs_per_window,
            positions: s.kept.clone(),
        })
        .collect();
    PrimaryJobSet { tasks }
}

/// Tasks whose consecutive retained jobs are more than one index apart.
pub fn detect_offset_conflicts(zeta: &PrimaryJobSet) -> Vec<TaskIdx> {
    zeta.tasks
        .iter()
        .filter(|r| r.positions.windows(2).any(|w| w[1] - w[0] > 1))
        .map(|r| r.task)
        .collect()
}

/// A retained job that has to wait for a retained job of another task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PriorityConflict {
    pub job: JobRef,
    pub pred: JobRef,
}

pub fn detect_priority_conflicts(zeta: &PrimaryJobSet, jlds: &JldSet) -> Vec<PriorityConflict> {
    jlds.iter()
        .filter(|d| zeta.tasks[d.succ.task.0].contains(d.succ) && zeta.tasks[d.pred.task.0].contains(d.pred))
        .map(|d| PriorityConflict {
            job: d.succ,
            pred: d.pred,
        })
        .collect()
}

/// How a task of the source set appears in the transformed set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceForm {
    Kept(TaskIdx),
    Split {
        window: Time,
        /// Transformed task and zero-based source position of each retained job.
        members: Vec<(TaskIdx, u64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub task: String,
    pub source: String,
    /// Source job index inside the first window, for split tasks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_job: Option<u64>,
    pub begin: Time,
    pub end: Time,
    pub shift: Time,
}

/// Mapping document written next to the transformed task set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingDoc {
    pub tasks: Vec<MappingEntry>,
    pub chains: Vec<ChainDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformedTaskSet {
    pub task_set: TaskSet,
    /// Interval of every transformed task, shift included.
    pub intervals: Vec<CommInterval>,
    /// Indexed by source task.
    pub sources: Vec<SourceForm>,
    pub mapping: MappingDoc,
}

impl TransformedTaskSet {
    pub fn split_count(&self) -> usize {
        self.sources.iter().filter(|s| matches!(s, SourceForm::Split { .. })).count()
    }

    /// Source job of a job of the transformed set.
    fn source_job(&self, source_ts: &TaskSet, source_of: &[TaskIdx], job: JobRef) -> JobRef {
        let src = source_of[job.task.0];
        let release = self.task_set.release(job);
        let s = source_ts.task(src);
        JobRef::new(src, ((release - s.phase) / s.period + 1) as u64)
    }

    fn source_of(&self) -> Vec<TaskIdx> {
        let mut out = vec![TaskIdx(0); self.task_set.tasks().len()];
        for (src, form) in self.sources.iter().enumerate() {
            match form {
                SourceForm::Kept(t) => out[t.0] = TaskIdx(src),
                SourceForm::Split { members, .. } => {
                    for (t, _) in members {
                        out[t.0] = TaskIdx(src);
                    }
                }
            }
        }
        out
    }
}

/// Builds the transformed task set for `analysis` (computed on `ts` with
/// `jlds`).
pub fn transform(ts: &TaskSet, jlds: &JldSet, analysis: &Analysis) -> Result<TransformedTaskSet> {
    let zeta = primary_job_set(analysis);
    let offsets = detect_offset_conflicts(&zeta);
    let priorities = detect_priority_conflicts(&zeta, jlds);
    split_and_assign(ts, analysis, &zeta, &offsets, &priorities)
}

struct Draft {
    id: String,
    source: TaskIdx,
    source_job: Option<u64>,
    core: usize,
    wcet: Time,
    period: Time,
    phase: Time,
    priority: Priority,
}

pub fn split_and_assign(
    ts: &TaskSet,
    analysis: &Analysis,
    zeta: &PrimaryJobSet,
    offset_conflicts: &[TaskIdx],
    priority_conflicts: &[PriorityConflict],
) -> Result<TransformedTaskSet> {
    let h = ts.hyperperiod();
    let mut holders: BTreeMap<JobRef, Vec<JobRef>> = BTreeMap::new();
    for c in priority_conflicts {
        holders.entry(c.job).or_default().push(c.pred);
    }

    let mut drafts: Vec<Draft> = Vec::new();
    let mut draft_of_source: Vec<Vec<(usize, u64)>> = vec![Vec::new(); ts.tasks().len()];
    let mut split_window = vec![0; ts.tasks().len()];
    for t in ts.task_indices() {
        let task = ts.task(t);
        let z = &zeta.tasks[t.0];
        let has_priority_conflict = holders.keys().any(|j| j.task == t);
        let split = has_priority_conflict || offset_conflicts.contains(&t) || !z.is_complete();
        if !split {
            draft_of_source[t.0].push((drafts.len(), 0));
            drafts.push(Draft {
                id: task.id.clone(),
                source: t,
                source_job: None,
                core: task.core,
                wcet: task.wcet,
                period: task.period,
                phase: task.phase,
                priority: task.priority,
            });
            continue;
        }
        let window = if has_priority_conflict { z.window.lcm(&h) } else { z.window };
        split_window[t.0] = window;
        let n = (window / task.period) as u64;
        for p in 0..n {
            if z.positions.binary_search(&(p % z.jobs_per_window)).is_err() {
                continue;
            }
            let job = JobRef::new(t, p + 1);
            let priority = match holders.get(&job) {
                Some(preds) => holder_priority(ts, task.core, preds)?.unwrap_or(task.priority),
                None => task.priority,
            };
            draft_of_source[t.0].push((drafts.len(), p));
            drafts.push(Draft {
                id: format!("{}@{}", task.id, p + 1),
                source: t,
                source_job: Some(p + 1),
                core: task.core,
                wcet: task.wcet,
                period: window,
                phase: (task.phase + p as Time * task.period).rem_euclid(window),
                priority,
            });
        }
    }

    // dense integer priorities per core
    let mut order: Vec<usize> = (0..drafts.len()).collect();
    // ties go to the source priority, then to the earlier release
    order.sort_by_key(|&d| {
        let x = &drafts[d];
        (x.core, x.priority, ts.task(x.source).priority, std::cmp::Reverse(x.phase))
    });
    let mut dense = vec![0i64; drafts.len()];
    let mut rank = 0;
    let mut core = usize::MAX;
    for &d in &order {
        if drafts[d].core != core {
            core = drafts[d].core;
            rank = 0;
        }
        rank += 1;
        dense[d] = rank;
    }

    let tasks: Vec<Task> = drafts
        .iter()
        .zip(&dense)
        .map(|(d, &p)| Task {
            id: d.id.clone(),
            core: d.core,
            wcet: d.wcet,
            period: d.period,
            deadline: d.period,
            phase: d.phase,
            priority: Priority::from_integer(p),
        })
        .collect();
    let task_set = TaskSet::with_limit(ts.unit(), ts.cores().to_vec(), tasks, Vec::new(), ts.hyperperiod_limit())?;

    let intervals: Vec<CommInterval> = drafts
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let src = analysis.intervals.get(d.source);
            CommInterval {
                task: TaskIdx(i),
                ..*src
            }
        })
        .collect();

    let sources = ts
        .task_indices()
        .map(|t| {
            let list = &draft_of_source[t.0];
            if split_window[t.0] == 0 {
                SourceForm::Kept(TaskIdx(list[0].0))
            } else {
                SourceForm::Split {
                    window: split_window[t.0],
                    members: list.iter().map(|&(d, p)| (TaskIdx(d), p)).collect(),
                }
            }
        })
        .collect();

    let mapping = MappingDoc {
        tasks: drafts
            .iter()
            .zip(&intervals)
            .map(|(d, i)| MappingEntry {
                task: d.id.clone(),
                source: ts.task(d.source).id.clone(),
                source_job: d.source_job,
                begin: i.begin,
                end: i.end,
                shift: i.applied_shift,
            })
            .collect(),
        chains: ts.to_document().chains,
    };

    Ok(TransformedTaskSet {
        task_set,
        intervals,
        sources,
        mapping,
    })
}

/// Priority strictly between the lowest-priority same-core predecessor and the
/// highest task below it. `None` if no predecessor shares the core.
fn holder_priority(ts: &TaskSet, core: usize, preds: &[JobRef]) -> Result<Option<Priority>> {
    let Some(anchor) = preds
        .iter()
        .map(|p| ts.task(p.task))
        .filter(|t| t.core == core)
        .map(|t| t.priority)
        .min()
    else {
        return Ok(None);
    };
    let below = ts
        .tasks_on_core(core)
        .map(|t| ts.task(t).priority)
        .filter(|&p| p < anchor)
        .max();
    let p = match below {
        Some(psi) => (psi + anchor) / Priority::from_integer(2),
        None => anchor - Priority::from_integer(1),
    };
    if below.is_some_and(|psi| !(psi < p && p < anchor)) {
        return Err(Error::Consistency("no priority level between the bounds".into()));
    }
    Ok(Some(p))
}

/// Result of comparing the transformed set against the optimised source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EquivalenceReport {
    pub segments_equal: bool,
    /// First instant at which the execution differs.
    pub first_divergence: Option<Time>,
    pub mrt_equal: bool,
    pub reference_mrt: Vec<Time>,
    pub transformed_mrt: Vec<Time>,
    pub utilization_equal: bool,
    /// Every transformed job runs inside its communication interval.
    /// Diagnostic only: once jobs are skipped, the remaining ones may start
    /// before an interval derived from the unskipped schedule.
    pub let_containment: bool,
}

impl EquivalenceReport {
    pub fn equivalent(&self) -> bool {
        self.segments_equal && self.mrt_equal && self.utilization_equal
    }
}

/// Compares the schedule of `ts` with `jlds` and skipped jobs removed against
/// the schedule of the transformed set without dependencies.
pub fn verify_equivalence(
    ts: &TaskSet,
    jlds: &JldSet,
    analysis: &Analysis,
    out: &TransformedTaskSet,
) -> Result<EquivalenceReport> {
    let h = ts.hyperperiod();
    let wrapped = out.sources.iter().enumerate().any(|(src, form)| match form {
        SourceForm::Split { window, members } => {
            let s = ts.task(TaskIdx(src));
            members.iter().any(|&(_, p)| s.phase + p as Time * s.period >= *window)
        }
        SourceForm::Kept(_) => false,
    });
    let from = ts.max_phase() + if wrapped { h } else { 0 };
    let to = from + h;
    let windows = (to + h - 1) / h + 1;

    let skip = |j: JobRef| analysis.skip_plan.is_skipped(j);
    let reference = simulate_with(
        ts,
        jlds,
        &SimOptions {
            skip: Some(&skip),
            windows: Some(windows.max(default_windows(ts.max_phase(), h) as Time) as u64),
        },
    )?;
    let transformed = simulate_with(
        &out.task_set,
        &JldSet::new(),
        &SimOptions {
            skip: None,
            windows: Some(windows as u64 + 1),
        },
    )?;

    let source_of = out.source_of();
    let mut first_divergence: Option<Time> = None;
    for core in 0..ts.cores().len() {
        let a: Vec<_> = clip(&reference, core, from, to, |j| j);
        let b: Vec<_> = clip(&transformed, core, from, to, |j| out.source_job(ts, &source_of, j));
        if a != b {
            let at = a
                .iter()
                .zip(&b)
                .find(|(x, y)| x != y)
                .map(|(x, y)| x.1.min(y.1))
                .or_else(|| a.get(b.len()).or(b.get(a.len())).map(|x| x.1))
                .unwrap_or(from);
            first_divergence = Some(first_divergence.map_or(at, |d: Time| d.min(at)));
        }
    }

    let timing = transformed_timing(ts, analysis, out);
    let (_, latencies) = analyze_chains(&analysis.shifted, &timing)?;
    let transformed_mrt: Vec<Time> = latencies.iter().map(|l| l.mrt).collect();
    let reference_mrt = analysis.mrt();

    let let_containment = out.task_set.task_indices().all(|t| {
        let iv = &out.intervals[t.0];
        let (a, b) = transformed.steady_window();
        transformed.records_released_in(t, a, b).all(|r| {
            let rel = r.release + iv.applied_shift;
            r.start - rel >= iv.begin && r.finish - rel <= iv.end
        })
    });

    Ok(EquivalenceReport {
        segments_equal: first_divergence.is_none(),
        first_divergence,
        mrt_equal: transformed_mrt == reference_mrt,
        reference_mrt,
        transformed_mrt,
        utilization_equal: out.task_set.system_utilization() == analysis.utilization(),
        let_containment,
    })
}

fn clip(
    s: &Schedule,
    core: usize,
    from: Time,
    to: Time,
    map: impl Fn(JobRef) -> JobRef,
) -> Vec<(JobRef, Time, Time)> {
    s.segments_overlapping(core, from, to)
        .iter()
        .map(|x| (map(x.job), x.from.max(from), x.to.min(to)))
        .collect()
}

/// LET timing of the source tasks as realised by the transformed set.
fn transformed_timing(ts: &TaskSet, analysis: &Analysis, out: &TransformedTaskSet) -> LetTiming {
    let streams = out
        .sources
        .iter()
        .enumerate()
        .map(|(src, form)| {
            let iv = analysis.intervals.get(TaskIdx(src));
            match form {
                SourceForm::Kept(t) => {
                    let task = out.task_set.task(*t);
                    JobStream::periodic(task.phase + iv.applied_shift, task.period, iv.begin, iv.end)
                }
                SourceForm::Split { window, members } => {
                    let period = ts.task(TaskIdx(src)).period;
                    let slots: Vec<(Time, u64)> = members
                        .iter()
                        .map(|&(t, p)| (out.task_set.task(t).phase, p))
                        .collect();
                    JobStream::family(
                        iv.applied_shift,
                        *window,
                        (*window / period) as u64,
                        &slots,
                        iv.begin,
                        iv.end,
                    )
                }
            }
        })
        .collect();
    LetTiming::from_streams(streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::analyze;
    use crate::let_intervals::IntervalMode;
    use crate::testutil::{example_one, example_one_with_two_jlds, job};

    #[test]
    fn two_dependency_conflicts() {
        let (ts, jlds) = example_one_with_two_jlds();
        let a = analyze(&ts, &jlds, IntervalMode::ScheduleAware).unwrap();
        let zeta = primary_job_set(&a);
        let t2 = ts.task_index("tau2").unwrap();
        assert_eq!(zeta.tasks[t2.0].positions, vec![1, 2, 4]);
        assert_eq!(detect_offset_conflicts(&zeta), vec![t2]);
        let pc = detect_priority_conflicts(&zeta, &jlds);
        assert_eq!(
            pc,
            vec![PriorityConflict {
                job: job(&ts, "tau2", 3),
                pred: job(&ts, "tau3", 2)
            }]
        );
    }

    #[test]
    fn no_dependencies_no_priority_conflicts() {
        let ts = example_one();
        let a = analyze(&ts, &JldSet::new(), IntervalMode::ScheduleAware).unwrap();
        assert!(detect_priority_conflicts(&primary_job_set(&a), &JldSet::new()).is_empty());
    }

    #[test]
    fn skipped_successor_is_not_a_conflict() {
        let (ts, jlds) = example_one_with_two_jlds();
        let a = analyze(&ts, &jlds, IntervalMode::ScheduleAware).unwrap();
        // tau2#1 is skipped, so tau3#1 -> tau2#1 needs no priority change
        assert!(a.skip_plan.is_skipped(job(&ts, "tau2", 1)));
        let pc = detect_priority_conflicts(&primary_job_set(&a), &jlds);
        assert!(pc.iter().all(|c| c.job != job(&ts, "tau2", 1)));
    }

    #[test]
    fn transform_splits_tau2_in_three() {
        let (ts, jlds) = example_one_with_two_jlds();
        let a = analyze(&ts, &jlds, IntervalMode::ScheduleAware).unwrap();
        let out = transform(&ts, &jlds, &a).unwrap();
        let split: Vec<_> = out
            .task_set
            .tasks()
            .iter()
            .filter(|t| t.id.starts_with("tau2@"))
            .map(|t| (t.id.clone(), t.period, t.phase))
            .collect();
        assert_eq!(
            split,
            vec![("tau2@2".into(), 15, 3), ("tau2@3".into(), 15, 6), ("tau2@5".into(), 15, 12)]
        );
        let p = |id: &str| out.task_set.task(out.task_set.task_index(id).unwrap()).priority;
        assert!(p("tau2@3") < p("tau3") && p("tau3") < p("tau1"));
        assert!(p("tau1") < p("tau2@2"));
        let report = verify_equivalence(&ts, &jlds, &a, &out).unwrap();
        assert!(report.equivalent(), "{report:?}");
        assert!(report.let_containment);
        assert_eq!(report.transformed_mrt, vec![12]);
        assert!(out.task_set.chains().is_empty());
        assert_eq!(out.mapping.chains.len(), 1);
    }

    #[test]
    fn corrupted_phase_is_reported_at_its_release() {
        let (ts, jlds) = example_one_with_two_jlds();
        let a = analyze(&ts, &jlds, IntervalMode::ScheduleAware).unwrap();
        let mut out = transform(&ts, &jlds, &a).unwrap();
        let phases: Vec<Time> = out
            .task_set
            .tasks()
            .iter()
            .map(|t| if t.id == "tau2@5" { 13 } else { t.phase })
            .collect();
        out.task_set = out.task_set.with_phases(&phases).unwrap();
        let report = verify_equivalence(&ts, &jlds, &a, &out).unwrap();
        assert!(!report.equivalent());
        assert_eq!(report.first_divergence, Some(12));
    }

    #[test]
    fn identity_transform_is_equivalent() {
        let ts = crate::model::parse_task_set(
            r#"{"unit":"us","cores":[0],"tasks":[
                {"id":"a","core":0,"wcet":1,"period":4,"priority":2},
                {"id":"b","core":0,"wcet":1,"period":4,"priority":1}],
               "chains":[{"id":"E","members":["a","b"]}]}"#,
        )
        .unwrap();
        let a = analyze(&ts, &JldSet::new(), IntervalMode::ScheduleAware).unwrap();
        let out = transform(&ts, &JldSet::new(), &a).unwrap();
        assert_eq!(out.split_count(), 0);
        assert!(verify_equivalence(&ts, &JldSet::new(), &a, &out).unwrap().equivalent());
    }
}
