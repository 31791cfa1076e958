//! Communication intervals: classic LET and schedule-aware shortened intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TaskIdx, TaskSet, Time};
use crate::sched::{simulate, JldSet, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMode {
    Classic,
    ScheduleAware,
}

impl std::str::FromStr for IntervalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" | "let" => Ok(Self::Classic),
            "schedule-aware" | "aware" => Ok(Self::ScheduleAware),
            other => Err(Error::Config(format!("unknown interval mode {other:?}"))),
        }
    }
}

/// Interval `[begin, end]` relative to a job's (shifted) release.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommInterval {
    pub task: TaskIdx,
    pub begin: Time,
    pub end: Time,
    /// Amount added to the task's phase.
    pub applied_shift: Time,
}

impl CommInterval {
    pub fn len(&self) -> Time {
        self.end - self.begin
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommIntervalMap {
    pub mode: IntervalMode,
    intervals: Vec<CommInterval>,
}

impl CommIntervalMap {
    pub fn new(mode: IntervalMode, intervals: Vec<CommInterval>) -> Self {
        Self { mode, intervals }
    }

    pub fn get(&self, task: TaskIdx) -> &CommInterval {
        &self.intervals[task.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &CommInterval> + '_ {
        self.intervals.iter()
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn report(&self, ts: &TaskSet) -> Vec<IntervalRow> {
        self.intervals
            .iter()
            .map(|i| IntervalRow {
                task: ts.task(i.task).id.clone(),
                begin: i.begin,
                end: i.end,
                shift: i.applied_shift,
                mode: self.mode,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub task: String,
    pub begin: Time,
    pub end: Time,
    pub shift: Time,
    pub mode: IntervalMode,
}

/// `[0, T]` for every task.
pub fn classic_intervals(ts: &TaskSet) -> CommIntervalMap {
    let intervals = ts
        .task_indices()
        .map(|t| CommInterval {
            task: t,
            begin: 0,
            end: ts.task(t).period,
            applied_shift: 0,
        })
        .collect();
    CommIntervalMap::new(IntervalMode::Classic, intervals)
}

/// Minimum relative start and maximum relative finish over the first
/// steady-state window.
pub fn earliest_start_latest_finish(schedule: &Schedule, task: TaskIdx) -> Result<(Time, Time)> {
    let (from, to) = schedule.steady_window();
    let mut es = Time::MAX;
    let mut lf = Time::MIN;
    for r in schedule.records_released_in(task, from, to) {
        es = es.min(r.start - r.release);
        lf = lf.max(r.finish - r.release);
    }
    if es == Time::MAX {
        return Err(Error::NotFound(format!(
            "task {} has no job in the steady-state window",
            task.0
        )));
    }
    Ok((es, lf))
}

/// Shortened intervals `[0, LF - ES]` and the task set with every phase
/// moved by `ES`.
pub fn schedule_aware_intervals(ts: &TaskSet, schedule: &Schedule) -> Result<(CommIntervalMap, TaskSet)> {
    let mut intervals = Vec::with_capacity(ts.tasks().len());
    let mut phases = Vec::with_capacity(ts.tasks().len());
    for t in ts.task_indices() {
        let (es, lf) = earliest_start_latest_finish(schedule, t)?;
        let task = ts.task(t);
        if lf > task.deadline {
            return Err(Error::Consistency(format!(
                "task {} finishes after its deadline in the supplied schedule",
                task.id
            )));
        }
        intervals.push(CommInterval {
            task: t,
            begin: 0,
            end: lf - es,
            applied_shift: es,
        });
        phases.push(task.phase + es);
    }
    let shifted = ts.with_phases(&phases)?;
    Ok((CommIntervalMap::new(IntervalMode::ScheduleAware, intervals), shifted))
}

/// Re-simulates the shifted task set and reports whether every core executes
/// the same slices as the original schedule over a common steady window.
pub fn cross_check_shift(schedule: &Schedule, shifted: &TaskSet, jlds: &JldSet) -> Result<bool> {
    let again = simulate(shifted, jlds)?;
    let from = schedule.max_phase().max(again.max_phase());
    let to = from + schedule.hyperperiod();
    for core in 0..schedule.core_count() {
        let clip = |s: &Schedule| -> Vec<_> {
            s.segments_overlapping(core, from, to)
                .iter()
                .map(|x| (x.job, x.from.max(from), x.to.min(to)))
                .collect()
        };
        if clip(schedule) != clip(&again) {
            return Ok(false);
        }
    }
    Ok(true)
}
