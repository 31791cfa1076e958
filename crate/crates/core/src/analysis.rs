//! End-to-end analysis of one configuration: schedule, intervals, primary
//! chains, latencies and skip plan.

use crate::chains::{analyze_chains, compute_skip_plan, ChainLatency, LetTiming, PrimaryChainSet, SkipPlan};
use crate::error::Result;
use crate::let_intervals::{classic_intervals, schedule_aware_intervals, CommIntervalMap, IntervalMode};
use crate::model::{TaskSet, Time, Utilization};
use crate::sched::{simulate, JldSet, Schedule};

#[derive(Debug, Clone)]
pub struct Analysis {
    pub schedule: Schedule,
    pub intervals: CommIntervalMap,
    /// Task set with phases moved by the applied interval shifts.
    pub shifted: TaskSet,
    pub timing: LetTiming,
    pub primaries: Vec<PrimaryChainSet>,
    pub latencies: Vec<ChainLatency>,
    pub skip_plan: SkipPlan,
}

impl Analysis {
    pub fn mode(&self) -> IntervalMode {
        self.intervals.mode
    }

    /// System utilization after skipping.
    pub fn utilization(&self) -> Utilization {
        self.skip_plan.system_utilization()
    }

    pub fn mrt(&self) -> Vec<Time> {
        self.latencies.iter().map(|l| l.mrt).collect()
    }

    pub fn mda(&self) -> Vec<Time> {
        self.latencies.iter().map(|l| l.mda).collect()
    }
}

pub fn analyze(ts: &TaskSet, jlds: &JldSet, mode: IntervalMode) -> Result<Analysis> {
    let schedule = simulate(ts, jlds)?;
    analyze_schedule(ts, schedule, mode)
}

/// Analysis of an already simulated schedule.
pub fn analyze_schedule(ts: &TaskSet, schedule: Schedule, mode: IntervalMode) -> Result<Analysis> {
    let (intervals, shifted) = match mode {
        IntervalMode::Classic => (classic_intervals(ts), ts.clone()),
        IntervalMode::ScheduleAware => schedule_aware_intervals(ts, &schedule)?,
    };
    let timing = LetTiming::new(&shifted, &intervals);
    let (primaries, latencies) = analyze_chains(&shifted, &timing)?;
    let skip_plan = compute_skip_plan(&shifted, &primaries);
    Ok(Analysis {
        schedule,
        intervals,
        shifted,
        timing,
        primaries,
        latencies,
        skip_plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{example_one, example_one_with_two_jlds};

    #[test]
    fn example_one_pipeline() {
        let ts = example_one();
        let a = analyze(&ts, &JldSet::new(), IntervalMode::ScheduleAware).unwrap();
        assert_eq!(a.mrt(), vec![13]);
        assert_eq!(a.mda(), vec![13]);
        assert_eq!(a.primaries[0].chains.len(), 3);
        assert_eq!(a.utilization(), Utilization::new(3, 5));

        let (ts, jlds) = example_one_with_two_jlds();
        let a = analyze(&ts, &jlds, IntervalMode::ScheduleAware).unwrap();
        assert_eq!(a.mrt(), vec![12]);
        assert_eq!(a.utilization(), Utilization::new(3, 5));
    }

    #[test]
    fn classic_mode_is_never_faster_than_schedule_aware() {
        let ts = example_one();
        let classic = analyze(&ts, &JldSet::new(), IntervalMode::Classic).unwrap();
        let aware = analyze(&ts, &JldSet::new(), IntervalMode::ScheduleAware).unwrap();
        assert!(aware.mrt()[0] <= classic.mrt()[0]);
        assert!(classic.intervals.iter().all(|i| i.applied_shift == 0));
    }
}
