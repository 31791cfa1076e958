//! Job chains under LET communication, primary job chains, reaction times and
//! job skipping.

use num_integer::Integer;

use crate::error::{Error, Result};
use crate::let_intervals::CommIntervalMap;
use crate::model::{JobRef, TaskIdx, TaskSet, Time, Utilization};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    offset: Time,
    pos: u64,
}

/// LET read/write instants of one task's jobs.
///
/// The jobs form a periodic pattern: every `period` time units, one job is
/// released at `origin + offset` for each slot. A slot's `pos` is the job's
/// position inside a block of `jobs_per_period` consecutive task instances,
/// so stream position `k` maps to job index `cycle * jobs_per_period + pos + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobStream {
    period: Time,
    jobs_per_period: u64,
    origin: Time,
    slots: Vec<Slot>,
    read_offset: Time,
    write_offset: Time,
}

impl JobStream {
    /// Plain periodic task: one job per period.
    pub fn periodic(phase: Time, period: Time, read_offset: Time, write_offset: Time) -> Self {
        Self {
            period,
            jobs_per_period: 1,
            origin: phase,
            slots: vec![Slot { offset: 0, pos: 0 }],
            read_offset,
            write_offset,
        }
    }

    /// Periodic task of which only the given positions of every `window` run.
    pub fn thinned(
        phase: Time,
        task_period: Time,
        window: Time,
        kept: &[u64],
        read_offset: Time,
        write_offset: Time,
    ) -> Self {
        let mut slots: Vec<Slot> = kept
            .iter()
            .map(|&p| Slot {
                offset: p as Time * task_period,
                pos: p,
            })
            .collect();
        slots.sort_by_key(|s| s.offset);
        Self {
            period: window,
            jobs_per_period: (window / task_period) as u64,
            origin: phase,
            slots,
            read_offset,
            write_offset,
        }
    }

    /// Arbitrary single-job-per-window releases at `origin + offset`.
    /// `members` holds `(offset, pos)` pairs with `0 <= offset < window`.
    pub fn family(
        origin: Time,
        window: Time,
        jobs_per_window: u64,
        members: &[(Time, u64)],
        read_offset: Time,
        write_offset: Time,
    ) -> Self {
        let mut slots: Vec<Slot> = members.iter().map(|&(offset, pos)| Slot { offset, pos }).collect();
        slots.sort_by_key(|s| s.offset);
        Self {
            period: window,
            jobs_per_period: jobs_per_window,
            origin,
            slots,
            read_offset,
            write_offset,
        }
    }

    pub fn period(&self) -> Time {
        self.period
    }

    pub fn first_release(&self) -> Time {
        self.origin + self.slots[0].offset
    }

    fn locate(&self, k: i64) -> (i64, usize) {
        let m = self.slots.len() as i64;
        (k.div_euclid(m), k.rem_euclid(m) as usize)
    }

    pub fn release(&self, k: i64) -> Time {
        let (c, s) = self.locate(k);
        self.origin + c * self.period + self.slots[s].offset
    }

    pub fn read_at(&self, k: i64) -> Time {
        self.release(k) + self.read_offset
    }

    pub fn write_at(&self, k: i64) -> Time {
        self.release(k) + self.write_offset
    }

    /// Task-level job index of stream position `k` (may be `<= 0` before the
    /// first release).
    pub fn index(&self, k: i64) -> i64 {
        let (c, s) = self.locate(k);
        c * self.jobs_per_period as i64 + self.slots[s].pos as i64 + 1
    }

    pub fn position_of_index(&self, index: u64) -> Option<i64> {
        let i = index.checked_sub(1)? as i64;
        let n = self.jobs_per_period as i64;
        let (c, pos) = (i.div_euclid(n), i.rem_euclid(n) as u64);
        let s = self.slots.iter().position(|x| x.pos == pos)?;
        Some(c * self.slots.len() as i64 + s as i64)
    }

    /// Last position released at or before `t`.
    pub fn last_released_at_or_before(&self, t: Time) -> i64 {
        let x = t - self.origin;
        let m = self.slots.len() as i64;
        let c = x.div_euclid(self.period);
        let r = x - c * self.period;
        match self.slots.iter().rposition(|s| s.offset <= r) {
            Some(s) => c * m + s as i64,
            None => c * m - 1,
        }
    }

    pub fn first_released_at_or_after(&self, t: Time) -> i64 {
        self.last_released_at_or_before(t - 1) + 1
    }

    /// Last job whose write happens at or before `t`.
    pub fn latest_writer(&self, t: Time) -> i64 {
        self.last_released_at_or_before(t - self.write_offset)
    }
}

/// LET timing of every task of a task set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LetTiming {
    streams: Vec<JobStream>,
}

impl LetTiming {
    pub fn new(shifted: &TaskSet, intervals: &CommIntervalMap) -> Self {
        let streams = shifted
            .task_indices()
            .map(|t| {
                let task = shifted.task(t);
                let i = intervals.get(t);
                JobStream::periodic(task.phase, task.period, i.begin, i.end)
            })
            .collect();
        Self { streams }
    }

    pub fn from_streams(streams: Vec<JobStream>) -> Self {
        Self { streams }
    }

    pub fn stream(&self, task: TaskIdx) -> &JobStream {
        &self.streams[task.0]
    }

    /// Same timing with the jobs skipped by `plan` removed.
    pub fn with_skips(&self, shifted: &TaskSet, plan: &SkipPlan) -> Self {
        let streams = self
            .streams
            .iter()
            .zip(plan.tasks())
            .enumerate()
            .map(|(t, (s, skips))| {
                if skips.skipped.is_empty() {
                    s.clone()
                } else {
                    let task = shifted.task(TaskIdx(t));
                    JobStream::thinned(
                        s.origin,
                        task.period,
                        skips.window,
                        &skips.kept,
                        s.read_offset,
                        s.write_offset,
                    )
                }
            })
            .collect();
        Self { streams }
    }
}

/// One data-propagation path through a cause-effect chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobChain {
    pub chain: usize,
    pub jobs: Vec<JobRef>,
    /// Absolute begin of the first job's interval.
    pub sampling_instant: Time,
    /// Absolute end of the last job's interval.
    pub output_instant: Time,
}

/// Stream positions of the chain ending at `last`, first member first.
fn walk_back(timing: &LetTiming, members: &[TaskIdx], last: i64) -> Vec<i64> {
    let mut pos = vec![0i64; members.len()];
    let n = members.len();
    pos[n - 1] = last;
    for i in (0..n - 1).rev() {
        let read = timing.stream(members[i + 1]).read_at(pos[i + 1]);
        pos[i] = timing.stream(members[i]).latest_writer(read);
    }
    pos
}

fn to_job_chain(timing: &LetTiming, chain: usize, members: &[TaskIdx], pos: &[i64]) -> Option<JobChain> {
    let mut jobs = Vec::with_capacity(members.len());
    for (&t, &k) in members.iter().zip(pos) {
        let idx = timing.stream(t).index(k);
        if idx < 1 {
            return None;
        }
        jobs.push(JobRef::new(t, idx as u64));
    }
    Some(JobChain {
        chain,
        jobs,
        sampling_instant: timing.stream(members[0]).read_at(pos[0]),
        output_instant: timing.stream(*members.last().unwrap()).write_at(pos[pos.len() - 1]),
    })
}

/// Job chain ending with `last_job`, following the last-writer rule backward.
/// `None` if the path would need a job before the first release.
pub fn find_job_chain(
    ts: &TaskSet,
    timing: &LetTiming,
    chain: usize,
    last_job: JobRef,
) -> Result<Option<JobChain>> {
    let c = &ts.chains()[chain];
    if last_job.task != c.last() {
        return Err(Error::Config(format!(
            "{} is not a job of the last task of chain {}",
            ts.job_label(last_job),
            c.id
        )));
    }
    let Some(k) = timing.stream(c.last()).position_of_index(last_job.index) else {
        return Ok(None);
    };
    let pos = walk_back(timing, &c.members, k);
    Ok(to_job_chain(timing, chain, &c.members, &pos))
}

/// Primary job chains of one cause-effect chain within a repetition window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimaryChainSet {
    pub chain: usize,
    /// Last jobs released in `[window.0, window.1)` are considered.
    pub window: (Time, Time),
    /// Ordered by sampling instant, one per first job.
    pub chains: Vec<JobChain>,
}

impl PrimaryChainSet {
    pub fn window_len(&self) -> Time {
        self.window.1 - self.window.0
    }
}

const MAX_WINDOW_ADVANCE: i64 = 1024;

/// Per first job, the chain with the earliest output among the chains whose
/// last job is released in the repetition window `[Φ + L, Φ + 2L)`.
///
/// A first job whose earliest chain ends with a job released before the window
/// belongs to the previous window and is not reported here, so every first job
/// is counted in exactly one window. If the window is so early that some chain
/// would reach before the first release, later windows are tried.
pub fn identify_primary_chains(ts: &TaskSet, timing: &LetTiming, chain: usize) -> Result<PrimaryChainSet> {
    let c = &ts.chains()[chain];
    let members = &c.members;
    let last = timing.stream(c.last());
    let phi = members.iter().map(|&m| timing.stream(m).first_release()).max().unwrap();
    let len = members.iter().fold(1, |acc: Time, &m| acc.lcm(&timing.stream(m).period()));

    'windows: for advance in 1..=MAX_WINDOW_ADVANCE {
        let from = phi + advance * len;
        let to = from + len;
        let k0 = last.first_released_at_or_after(from);
        let k1 = last.first_released_at_or_after(to);
        let mut prev_first = {
            let pos = walk_back(timing, members, k0 - 1);
            if to_job_chain(timing, chain, members, &pos).is_none() {
                continue 'windows;
            }
            pos[0]
        };
        let mut chains = Vec::new();
        for k in k0..k1 {
            let pos = walk_back(timing, members, k);
            if pos[0] != prev_first {
                let Some(jc) = to_job_chain(timing, chain, members, &pos) else {
                    continue 'windows;
                };
                chains.push(jc);
            }
            prev_first = pos[0];
        }
        if chains.is_empty() {
            return Err(Error::NoPrimaryChain(c.id.clone()));
        }
        return Ok(PrimaryChainSet {
            chain,
            window: (from, to),
            chains,
        });
    }
    Err(Error::NoPrimaryChain(c.id.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainLatency {
    pub chain: usize,
    /// Maximum reaction time.
    pub mrt: Time,
    /// Maximum data age, reported equal to the reaction time.
    pub mda: Time,
}

/// Worst span from the sampling instant of one primary chain to the output of
/// the next, wrapping once around the repetition window.
pub fn compute_mrt_mda(primary: &PrimaryChainSet) -> Result<ChainLatency> {
    let cs = &primary.chains;
    let (Some(first), Some(last)) = (cs.first(), cs.last()) else {
        return Err(Error::NoPrimaryChain(format!("#{}", primary.chain)));
    };
    let mut mrt = first.output_instant + primary.window_len() - last.sampling_instant;
    for pair in cs.windows(2) {
        mrt = mrt.max(pair[1].output_instant - pair[0].sampling_instant);
    }
    Ok(ChainLatency {
        chain: primary.chain,
        mrt,
        mda: mrt,
    })
}

/// Kept and skipped job positions of one task inside its skipping window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSkips {
    pub task: TaskIdx,
    /// Length of the repeating skip pattern.
    pub window: Time,
    pub jobs_per_window: u64,
    /// Zero-based positions `(index - 1) mod jobs_per_window` that run.
    pub kept: Vec<u64>,
    pub skipped: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipPlan {
    tasks: Vec<TaskSkips>,
    core_utilization: Vec<Utilization>,
    system_utilization: Utilization,
}

impl SkipPlan {
    /// Plan that skips nothing.
    pub fn none(ts: &TaskSet) -> Self {
        let tasks = ts
            .task_indices()
            .map(|t| TaskSkips {
                task: t,
                window: ts.task(t).period,
                jobs_per_window: 1,
                kept: vec![0],
                skipped: Vec::new(),
            })
            .collect();
        Self::from_tasks(ts, tasks)
    }

    fn from_tasks(ts: &TaskSet, tasks: Vec<TaskSkips>) -> Self {
        let mut core_utilization = vec![Utilization::from_integer(0); ts.cores().len()];
        for s in &tasks {
            let task = ts.task(s.task);
            core_utilization[task.core] += Utilization::new(task.wcet * s.kept.len() as i64, s.window);
        }
        let system_utilization = if core_utilization.is_empty() {
            Utilization::from_integer(0)
        } else {
            core_utilization.iter().copied().sum::<Utilization>() / core_utilization.len() as i64
        };
        Self {
            tasks,
            core_utilization,
            system_utilization,
        }
    }

    pub fn tasks(&self) -> &[TaskSkips] {
        &self.tasks
    }

    pub fn task(&self, task: TaskIdx) -> &TaskSkips {
        &self.tasks[task.0]
    }

    pub fn core_utilization(&self) -> &[Utilization] {
        &self.core_utilization
    }

    pub fn system_utilization(&self) -> Utilization {
        self.system_utilization
    }

    pub fn is_skipped(&self, job: JobRef) -> bool {
        let s = &self.tasks[job.task.0];
        !s.skipped.is_empty() && s.skipped.binary_search(&((job.index - 1) % s.jobs_per_window)).is_ok()
    }

    /// Number of skipped jobs per skipping window, summed over tasks.
    pub fn skip_count(&self) -> usize {
        self.tasks.iter().map(|s| s.skipped.len()).sum()
    }

    /// Skipped jobs of the first window of every task.
    pub fn skipped_jobs(&self) -> Vec<JobRef> {
        self.tasks
            .iter()
            .flat_map(|s| s.skipped.iter().map(move |&p| JobRef::new(s.task, p + 1)))
            .collect()
    }
}

/// Skips every job that belongs to no primary chain, except jobs of tasks that
/// are outside all chains or at the boundary of some chain.
pub fn compute_skip_plan(ts: &TaskSet, primaries: &[PrimaryChainSet]) -> SkipPlan {
    let n = ts.tasks().len();
    let mut window: Vec<Time> = vec![0; n];
    let mut boundary = vec![false; n];
    for p in primaries {
        let c = &ts.chains()[p.chain];
        for &m in &c.members {
            window[m.0] = if window[m.0] == 0 {
                p.window_len()
            } else {
                window[m.0].lcm(&p.window_len())
            };
        }
        boundary[c.first().0] = true;
        boundary[c.last().0] = true;
    }

    let mut needed: Vec<Vec<bool>> = (0..n)
        .map(|t| {
            let period = ts.tasks()[t].period;
            let jobs = if window[t] == 0 { 1 } else { (window[t] / period) as usize };
            vec![false; jobs]
        })
        .collect();
    for p in primaries {
        let c = &ts.chains()[p.chain];
        for &m in &c.members {
            let per = (p.window_len() / ts.task(m).period) as u64;
            let slots = &mut needed[m.0];
            let mut hit = vec![false; per as usize];
            for jc in &p.chains {
                let job = jc.jobs[c.position(m).unwrap()];
                hit[((job.index - 1) % per) as usize] = true;
            }
            for (pos, slot) in slots.iter_mut().enumerate() {
                *slot |= hit[pos % per as usize];
            }
        }
    }

    let tasks = ts
        .task_indices()
        .map(|t| {
            let period = ts.task(t).period;
            if window[t.0] == 0 || boundary[t.0] {
                let w = if window[t.0] == 0 { period } else { window[t.0] };
                let jobs = (w / period) as u64;
                return TaskSkips {
                    task: t,
                    window: w,
                    jobs_per_window: jobs,
                    kept: (0..jobs).collect(),
                    skipped: Vec::new(),
                };
            }
            let (kept, skipped): (Vec<u64>, Vec<u64>) =
                (0..needed[t.0].len() as u64).partition(|&p| needed[t.0][p as usize]);
            TaskSkips {
                task: t,
                window: window[t.0],
                jobs_per_window: needed[t.0].len() as u64,
                kept,
                skipped,
            }
        })
        .collect();
    SkipPlan::from_tasks(ts, tasks)
}

/// Primary chains and latencies of every chain.
pub fn analyze_chains(ts: &TaskSet, timing: &LetTiming) -> Result<(Vec<PrimaryChainSet>, Vec<ChainLatency>)> {
    let mut primaries = Vec::with_capacity(ts.chains().len());
    let mut latencies = Vec::with_capacity(ts.chains().len());
    for c in 0..ts.chains().len() {
        let p = identify_primary_chains(ts, timing, c)?;
        latencies.push(compute_mrt_mda(&p)?);
        primaries.push(p);
    }
    Ok((primaries, latencies))
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force reference implementations used by the tests.

    use std::collections::BTreeMap;

    use super::*;

    /// Absolute read and write instants of job `index` of `task`.
    pub fn io(ts: &TaskSet, iv: &CommIntervalMap, task: TaskIdx, index: i64) -> (Time, Time) {
        let t = ts.task(task);
        let r = t.phase + (index - 1) * t.period;
        (r + iv.get(task).begin, r + iv.get(task).end)
    }

    fn jobs_in(ts: &TaskSet, task: TaskIdx, horizon: Time) -> Vec<i64> {
        let t = ts.task(task);
        (1..).take_while(|i| t.phase + (i - 1) * t.period < horizon).collect()
    }

    /// `consumer` reads the value written by `producer`.
    fn reads_from(ts: &TaskSet, iv: &CommIntervalMap, p: (TaskIdx, i64), c: (TaskIdx, i64), horizon: Time) -> bool {
        let (_, w) = io(ts, iv, p.0, p.1);
        let (r, _) = io(ts, iv, c.0, c.1);
        w <= r
            && jobs_in(ts, p.0, horizon).into_iter().all(|other| {
                let (_, ow) = io(ts, iv, p.0, other);
                other == p.1 || !(w < ow && ow <= r)
            })
    }

    /// Every job chain whose last job is released before `horizon`.
    pub fn all_job_chains(ts: &TaskSet, iv: &CommIntervalMap, chain: usize, horizon: Time) -> Vec<Vec<i64>> {
        let members = &ts.chains()[chain].members;
        // producers may be released after the consumer when reads are delayed
        let reach = horizon + 2 * members.iter().map(|&m| ts.task(m).period).sum::<Time>();
        let mut out: Vec<Vec<i64>> = jobs_in(ts, *members.last().unwrap(), horizon)
            .into_iter()
            .map(|j| vec![j])
            .collect();
        for i in (0..members.len() - 1).rev() {
            let mut next = Vec::new();
            for partial in out {
                for cand in jobs_in(ts, members[i], reach) {
                    if reads_from(ts, iv, (members[i], cand), (members[i + 1], partial[0]), reach) {
                        let mut v = vec![cand];
                        v.extend(&partial);
                        next.push(v);
                    }
                }
            }
            out = next;
        }
        out
    }

    /// Per first job, the earliest-output chain, restricted to first jobs whose
    /// earliest chain ends with a job released in `[from, to)`.
    pub fn primary_by_enumeration(
        ts: &TaskSet,
        iv: &CommIntervalMap,
        chain: usize,
        from: Time,
        to: Time,
    ) -> Vec<(Vec<i64>, Time, Time)> {
        let members = &ts.chains()[chain].members;
        let last = *members.last().unwrap();
        let mut best: BTreeMap<i64, (Time, Vec<i64>)> = BTreeMap::new();
        for jc in all_job_chains(ts, iv, chain, to) {
            let out = io(ts, iv, last, *jc.last().unwrap()).1;
            let e = best.entry(jc[0]).or_insert((out, jc.clone()));
            if out < e.0 {
                *e = (out, jc);
            }
        }
        best.into_values()
            .filter(|(_, jc)| {
                let t = ts.task(last);
                let rel = t.phase + (jc.last().unwrap() - 1) * t.period;
                from <= rel && rel < to
            })
            .map(|(out, jc)| {
                let samp = io(ts, iv, members[0], jc[0]).0;
                (jc, samp, out)
            })
            .collect()
    }

    /// Worst event-to-output span from injecting an event at every integer
    /// instant and propagating last-writer LET buffers. An event at `e` is
    /// observed by first-task reads strictly after `e`.
    pub fn event_injection_mrt(ts: &TaskSet, iv: &CommIntervalMap, chain: usize, from: Time, len: Time) -> Time {
        let members = &ts.chains()[chain].members;
        let horizon = from + len * (members.len() as Time + 4);
        // (time, member, kind, job): at one instant, data flows along the
        // chain and a job reads before it writes
        let mut events = Vec::new();
        for (i, &m) in members.iter().enumerate() {
            for j in jobs_in(ts, m, horizon) {
                let (r, w) = io(ts, iv, m, j);
                events.push((r, i, 0u8, j));
                events.push((w, i, 1u8, j));
            }
        }
        events.sort();
        let mut read_value: BTreeMap<(usize, i64), Option<Time>> = BTreeMap::new();
        let mut buffer: Vec<Option<Time>> = vec![None; members.len()];
        let mut outputs: Vec<(Time, Time)> = Vec::new();
        for (t, i, kind, j) in events {
            if kind == 0 {
                let v = if i == 0 { Some(t) } else { buffer[i - 1] };
                read_value.insert((i, j), v);
            } else if let Some(v) = read_value.get(&(i, j)).copied().flatten() {
                buffer[i] = Some(v);
                if i + 1 == members.len() {
                    outputs.push((t, v));
                }
            }
        }
        let mut worst = 0;
        for e in from..from + len {
            let reaction = outputs
                .iter()
                .find(|&&(_, sample)| sample > e)
                .map(|&(t, _)| t)
                .expect("horizon long enough for a reaction");
            worst = worst.max(reaction - e);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use crate::let_intervals::{classic_intervals, schedule_aware_intervals, CommInterval, IntervalMode};
    use crate::model::{parse_task_set, CauseEffectChain, Priority, Task};
    use crate::sched::{simulate, JldSet};
    use crate::testutil::{example_one, example_one_with_two_jlds, job};
    use proptest::prelude::*;

    fn aware(ts: &TaskSet, jlds: &JldSet) -> (TaskSet, CommIntervalMap, LetTiming) {
        let s = simulate(ts, jlds).unwrap();
        let (iv, shifted) = schedule_aware_intervals(ts, &s).unwrap();
        let timing = LetTiming::new(&shifted, &iv);
        (shifted, iv, timing)
    }

    #[test]
    fn example_one_primary_chains_and_mrt() {
        let ts = example_one();
        let (shifted, _, timing) = aware(&ts, &JldSet::new());
        let p = identify_primary_chains(&shifted, &timing, 0).unwrap();
        assert_eq!(p.window, (16, 31));
        let spans: Vec<_> = p.chains.iter().map(|c| (c.sampling_instant, c.output_instant)).collect();
        assert_eq!(spans, vec![(10, 18), (15, 23), (20, 28)]);
        let l = compute_mrt_mda(&p).unwrap();
        assert_eq!((l.mrt, l.mda), (13, 13));
    }

    #[test]
    fn example_one_skips_two_of_five_tau2_jobs() {
        let ts = example_one();
        let (shifted, _, timing) = aware(&ts, &JldSet::new());
        let p = identify_primary_chains(&shifted, &timing, 0).unwrap();
        let plan = compute_skip_plan(&shifted, &[p]);
        let t2 = plan.task(ts.task_index("tau2").unwrap());
        assert_eq!((t2.window, t2.kept.len(), t2.skipped.len()), (15, 3, 2));
        assert_eq!(plan.skip_count(), 2);
        assert_eq!(SkipPlan::none(&ts).system_utilization(), Utilization::new(11, 15));
        assert_eq!(plan.system_utilization(), Utilization::new(9, 15));
    }

    #[test]
    fn two_dependencies_give_mrt_12_and_skip_first_and_fourth() {
        let (ts, jlds) = example_one_with_two_jlds();
        let (shifted, _, timing) = aware(&ts, &jlds);
        let p = identify_primary_chains(&shifted, &timing, 0).unwrap();
        assert_eq!(compute_mrt_mda(&p).unwrap().mrt, 12);
        let plan = compute_skip_plan(&shifted, &[p]);
        let t2 = plan.task(ts.task_index("tau2").unwrap());
        assert_eq!(t2.skipped, vec![0, 3]);
        assert_eq!(plan.system_utilization(), Utilization::new(9, 15));
    }

    #[test]
    fn find_job_chain_walks_last_writers() {
        let ts = example_one();
        let (shifted, _, timing) = aware(&ts, &JldSet::new());
        let jc = find_job_chain(&shifted, &timing, 0, job(&ts, "tau3", 4)).unwrap().unwrap();
        assert_eq!(jc.jobs, vec![job(&ts, "tau1", 3), job(&ts, "tau2", 6), job(&ts, "tau3", 4)]);
        assert_eq!((jc.sampling_instant, jc.output_instant), (10, 18));
        assert!(find_job_chain(&shifted, &timing, 0, job(&ts, "tau3", 1)).unwrap().is_none());
        assert!(find_job_chain(&shifted, &timing, 0, job(&ts, "tau1", 1)).is_err());
    }

    fn two_tasks(period_a: Time, period_b: Time) -> TaskSet {
        parse_task_set(&format!(
            r#"{{"unit":"us","cores":[0],"tasks":[
                {{"id":"a","core":0,"wcet":1,"period":{period_a},"priority":2}},
                {{"id":"b","core":0,"wcet":1,"period":{period_b},"priority":1}}],
               "chains":[{{"id":"E","members":["a","b"]}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn write_at_read_instant_is_visible() {
        let ts = two_tasks(4, 4);
        let timing = LetTiming::new(&ts, &classic_intervals(&ts));
        let jc = find_job_chain(&ts, &timing, 0, job(&ts, "b", 3)).unwrap().unwrap();
        // a#2 writes at 8 and b#3 reads at 8
        assert_eq!(jc.jobs[0], job(&ts, "a", 2));
    }

    #[test]
    fn equal_period_classic_pair_has_three_period_reaction() {
        let ts = two_tasks(7, 7);
        let iv = classic_intervals(&ts);
        let timing = LetTiming::new(&ts, &iv);
        let p = identify_primary_chains(&ts, &timing, 0).unwrap();
        // every consumer job heads exactly one primary chain
        assert_eq!(p.chains.len(), 1);
        assert_eq!(compute_mrt_mda(&p).unwrap().mrt, 21);
        assert_eq!(event_injection_mrt(&ts, &iv, 0, p.window.0, p.window_len()), 21);
        let by_oracle = primary_by_enumeration(&ts, &iv, 0, p.window.0, p.window.1);
        assert_eq!(by_oracle.len(), 1);
    }

    #[test]
    fn task_outside_chains_is_never_skipped() {
        let ts = parse_task_set(
            r#"{"unit":"us","cores":[0],"tasks":[
                {"id":"a","core":0,"wcet":1,"period":10,"priority":3},
                {"id":"b","core":0,"wcet":1,"period":2,"priority":2},
                {"id":"c","core":0,"wcet":1,"period":10,"priority":1},
                {"id":"x","core":0,"wcet":1,"period":5,"priority":4}],
               "chains":[{"id":"E","members":["a","b","c"]}]}"#,
        )
        .unwrap();
        let timing = LetTiming::new(&ts, &classic_intervals(&ts));
        let (p, _) = analyze_chains(&ts, &timing).unwrap();
        let plan = compute_skip_plan(&ts, &p);
        assert!(plan.task(TaskIdx(3)).skipped.is_empty());
        assert!(!plan.task(TaskIdx(1)).skipped.is_empty());
    }

    #[test]
    fn boundary_in_one_chain_dominates_middle_in_another() {
        let ts = parse_task_set(
            r#"{"unit":"us","cores":[0],"tasks":[
                {"id":"a","core":0,"wcet":1,"period":10,"priority":3},
                {"id":"b","core":0,"wcet":1,"period":2,"priority":2},
                {"id":"c","core":0,"wcet":1,"period":10,"priority":1}],
               "chains":[{"id":"E","members":["a","b","c"]},{"id":"F","members":["b","c"]}]}"#,
        )
        .unwrap();
        let timing = LetTiming::new(&ts, &classic_intervals(&ts));
        let (p, _) = analyze_chains(&ts, &timing).unwrap();
        let plan = compute_skip_plan(&ts, &p);
        assert!(plan.task(TaskIdx(1)).skipped.is_empty());
    }

    #[test]
    fn primary_set_repeats_one_window_later() {
        let ts = example_one();
        let (shifted, _, timing) = aware(&ts, &JldSet::new());
        let p = identify_primary_chains(&shifted, &timing, 0).unwrap();
        let last = shifted.chains()[0].last();
        for jc in &p.chains {
            let k = shifted.jobs_per_hyperperiod(last);
            let later = JobRef::new(last, jc.jobs.last().unwrap().index + k);
            let again = find_job_chain(&shifted, &timing, 0, later).unwrap().unwrap();
            for (a, b) in jc.jobs.iter().zip(&again.jobs) {
                assert_eq!(b.index - a.index, shifted.jobs_per_hyperperiod(a.task));
            }
            assert_eq!(again.output_instant - jc.output_instant, 15);
        }
    }

    // ---- randomized oracles ----

    const PERIODS: [Time; 9] = [2, 3, 4, 5, 6, 8, 10, 12, 20];

    #[derive(Debug, Clone)]
    struct Case {
        ts: TaskSet,
        iv: CommIntervalMap,
    }

    fn case() -> impl Strategy<Value = Case> {
        (2usize..=5)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec((0usize..PERIODS.len(), 0i64..1000, 0i64..1000, 0i64..1000), n),
                    Just(n).prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle()),
                    2usize..=n,
                )
            })
            .prop_filter_map("hyperperiod at most 200", |(params, order, len)| {
                let tasks: Vec<Task> = params
                    .iter()
                    .enumerate()
                    .map(|(i, &(p, phase, _, _))| {
                        let period = PERIODS[p];
                        Task {
                            id: format!("t{i}"),
                            core: 0,
                            wcet: 1,
                            period,
                            deadline: period,
                            phase: phase % period,
                            priority: Priority::from_integer(i as i64),
                        }
                    })
                    .collect();
                let members = order[..len].iter().map(|&i| TaskIdx(i)).collect();
                let chains = vec![CauseEffectChain { id: "E".into(), members }];
                let ts = TaskSet::with_limit("tu", vec!["0".to_string()], tasks, chains, 200).ok()?;
                let iv = params
                    .iter()
                    .enumerate()
                    .map(|(i, &(p, _, b, e))| {
                        let period = PERIODS[p];
                        let (mut begin, mut end) = (b % (period + 1), e % (period + 1));
                        if begin > end {
                            std::mem::swap(&mut begin, &mut end);
                        }
                        CommInterval { task: TaskIdx(i), begin, end, applied_shift: 0 }
                    })
                    .collect();
                Some(Case { ts, iv: CommIntervalMap::new(IntervalMode::ScheduleAware, iv) })
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(160))]

        #[test]
        fn primary_chains_match_exhaustive_enumeration(c in case()) {
            let timing = LetTiming::new(&c.ts, &c.iv);
            let p = identify_primary_chains(&c.ts, &timing, 0).unwrap();
            let got: Vec<_> = p.chains.iter()
                .map(|jc| (jc.jobs.iter().map(|j| j.index as i64).collect::<Vec<_>>(), jc.sampling_instant, jc.output_instant))
                .collect();
            let want = primary_by_enumeration(&c.ts, &c.iv, 0, p.window.0, p.window.1);
            prop_assert_eq!(got, want);
        }

        #[test]
        fn mrt_matches_event_injection(c in case()) {
            let timing = LetTiming::new(&c.ts, &c.iv);
            let p = identify_primary_chains(&c.ts, &timing, 0).unwrap();
            let l = compute_mrt_mda(&p).unwrap();
            let (from, len) = (p.window.0, p.window_len());
            prop_assert_eq!(l.mrt, event_injection_mrt(&c.ts, &c.iv, 0, from, len));
        }

        #[test]
        fn skipping_preserves_latency(c in case()) {
            let timing = LetTiming::new(&c.ts, &c.iv);
            let (p, lat) = analyze_chains(&c.ts, &timing).unwrap();
            let plan = compute_skip_plan(&c.ts, &p);
            let thinned = timing.with_skips(&c.ts, &plan);
            let (p2, lat2) = analyze_chains(&c.ts, &thinned).unwrap();
            prop_assert_eq!(lat, lat2);
            for (a, b) in p.iter().zip(&p2) {
                prop_assert_eq!(a.window_len(), b.window_len());
                let key = |s: &PrimaryChainSet| {
                    let mut v: Vec<_> = s.chains.iter()
                        .map(|c| (c.sampling_instant.rem_euclid(s.window_len()), c.output_instant - c.sampling_instant))
                        .collect();
                    v.sort();
                    v
                };
                prop_assert_eq!(key(a), key(b));
            }
            for jc in p.iter().flat_map(|s| &s.chains) {
                for &j in &jc.jobs {
                    prop_assert!(!plan.is_skipped(j));
                }
            }
        }
    }
}
