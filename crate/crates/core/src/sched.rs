//! Fixed-priority preemptive schedule simulation with job-level dependencies.
//!
//! The simulator is event driven over integer time. On every core the highest
//! priority job that is released, unfinished and *eligible* runs; a job becomes
//! eligible once all of its dependency predecessors have finished, wherever
//! they execute.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{DeadlineMiss, Error, Result};
use crate::model::{JobRef, TaskIdx, TaskSet, Time};

/// `pred` has to finish before `succ` may start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Jld {
    pub pred: JobRef,
    pub succ: JobRef,
}

/// A set of job-level dependencies.
///
/// Dependencies are stored for the first hyperperiod window of the task set
/// (job indices `1..=H/T`) and apply identically in every later window.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct JldSet {
    deps: BTreeSet<Jld>,
}

impl JldSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.deps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Jld> + '_ {
        self.deps.iter()
    }

    pub fn contains(&self, jld: &Jld) -> bool {
        self.deps.contains(jld)
    }

    pub fn insert(&mut self, ts: &TaskSet, jld: Jld) -> Result<()> {
        for (what, job) in [("predecessor", jld.pred), ("successor", jld.succ)] {
            if job.task.0 >= ts.tasks().len() {
                return Err(Error::Config(format!("dependency {what} references an unknown task")));
            }
            let n = ts.jobs_per_hyperperiod(job.task);
            if job.index == 0 || job.index > n {
                return Err(Error::Config(format!(
                    "dependency {what} {} lies outside the first hyperperiod window (indices 1..={n})",
                    ts.job_label(job)
                )));
            }
        }
        if jld.pred.task == jld.succ.task {
            return Err(Error::Config("a dependency must connect jobs of different tasks".into()));
        }
        if self.would_create_cycle(jld.pred, jld.succ) {
            return Err(Error::Config(format!(
                "dependency {} -> {} closes a cycle",
                ts.job_label(jld.pred),
                ts.job_label(jld.succ)
            )));
        }
        self.deps.insert(jld);
        Ok(())
    }

    /// Copy of this set with one more dependency.
    pub fn with_added(&self, ts: &TaskSet, jld: Jld) -> Result<JldSet> {
        let mut next = self.clone();
        next.insert(ts, jld)?;
        Ok(next)
    }

    pub fn would_create_cycle(&self, pred: JobRef, succ: JobRef) -> bool {
        pred == succ || self.descendants(succ).contains(&pred)
    }

    /// Jobs that must finish before `job` can start, transitively.
    pub fn ancestors(&self, job: JobRef) -> HashSet<JobRef> {
        self.walk(job, |d| (d.succ, d.pred))
    }

    /// Jobs that `job` must precede, transitively.
    pub fn descendants(&self, job: JobRef) -> HashSet<JobRef> {
        self.walk(job, |d| (d.pred, d.succ))
    }

    fn walk(&self, start: JobRef, edge: impl Fn(&Jld) -> (JobRef, JobRef)) -> HashSet<JobRef> {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(j) = queue.pop_front() {
            for d in &self.deps {
                let (from, to) = edge(d);
                if from == j && seen.insert(to) {
                    queue.push_back(to);
                }
            }
        }
        seen
    }

    /// Direct predecessors of `job` (in the first window).
    pub fn predecessors(&self, job: JobRef) -> impl Iterator<Item = JobRef> + '_ {
        self.deps.iter().filter(move |d| d.succ == job).map(|d| d.pred)
    }

    /// Canonical encoding used for deterministic ordering.
    pub fn encoding(&self) -> Vec<(usize, u64, usize, u64)> {
        self.deps
            .iter()
            .map(|d| (d.pred.task.0, d.pred.index, d.succ.task.0, d.succ.index))
            .collect()
    }

    pub fn to_doc(&self, ts: &TaskSet) -> Vec<JldDoc> {
        self.deps
            .iter()
            .map(|d| JldDoc {
                pred: ts.job_label(d.pred),
                succ: ts.job_label(d.succ),
            })
            .collect()
    }

    pub fn from_doc(ts: &TaskSet, docs: &[JldDoc]) -> Result<JldSet> {
        let mut set = JldSet::new();
        for d in docs {
            let jld = Jld {
                pred: parse_job_label(ts, &d.pred)?,
                succ: parse_job_label(ts, &d.succ)?,
            };
            set.insert(ts, jld)?;
        }
        Ok(set)
    }
}

/// Serialized dependency, jobs written as `task#index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JldDoc {
    pub pred: String,
    pub succ: String,
}

pub fn parse_job_label(ts: &TaskSet, label: &str) -> Result<JobRef> {
    let (task, index) = label
        .rsplit_once('#')
        .ok_or_else(|| Error::Config(format!("job label {label:?} is not of the form task#index")))?;
    let task = ts
        .task_index(task)
        .ok_or_else(|| Error::NotFound(format!("unknown task {task:?} in job label")))?;
    let index: u64 = index
        .parse()
        .map_err(|_| Error::Config(format!("bad job index in label {label:?}")))?;
    if index == 0 {
        return Err(Error::Config(format!("job indices start at 1 ({label:?})")));
    }
    Ok(JobRef::new(task, index))
}

/// Execution of one job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionRecord {
    pub job: JobRef,
    pub core: usize,
    pub release: Time,
    pub deadline: Time,
    pub start: Time,
    pub finish: Time,
    /// Disjoint, ordered `[from, to)` slices; lengths add up to the WCET.
    pub segments: Vec<(Time, Time)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub from: Time,
    pub to: Time,
    pub job: JobRef,
}

/// Simulated fixed-priority schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    hyperperiod: Time,
    max_phase: Time,
    windows: u64,
    records: Vec<ExecutionRecord>,
    by_task: Vec<Vec<u32>>,
    core_segments: Vec<Vec<Segment>>,
}

const NO_RECORD: u32 = u32::MAX;

impl Schedule {
    pub fn hyperperiod(&self) -> Time {
        self.hyperperiod
    }

    pub fn max_phase(&self) -> Time {
        self.max_phase
    }

    /// End of the analysed horizon `[0, Φ + 2H)`.
    pub fn horizon(&self) -> Time {
        self.max_phase + 2 * self.hyperperiod
    }

    /// First steady-state window `[Φ, Φ + H)`.
    pub fn steady_window(&self) -> (Time, Time) {
        (self.max_phase, self.max_phase + self.hyperperiod)
    }

    pub fn records(&self) -> &[ExecutionRecord] {
        &self.records
    }

    pub fn record(&self, job: JobRef) -> Option<&ExecutionRecord> {
        let list = self.by_task.get(job.task.0)?;
        let slot = *list.get(usize::try_from(job.index.checked_sub(1)?).ok()?)?;
        (slot != NO_RECORD).then(|| &self.records[slot as usize])
    }

    /// Records of `task` whose release lies in `[from, to)`.
    pub fn records_released_in(
        &self,
        task: TaskIdx,
        from: Time,
        to: Time,
    ) -> impl Iterator<Item = &ExecutionRecord> + '_ {
        self.by_task[task.0]
            .iter()
            .filter(|&&s| s != NO_RECORD)
            .map(move |&s| &self.records[s as usize])
            .filter(move |r| r.release >= from && r.release < to)
    }

    /// Execution slices on `core`, ordered by time.
    pub fn core_segments(&self, core: usize) -> &[Segment] {
        &self.core_segments[core]
    }

    /// Slices on `core` that overlap `[from, to)`.
    pub fn segments_overlapping(&self, core: usize, from: Time, to: Time) -> &[Segment] {
        let segs = &self.core_segments[core];
        let lo = segs.partition_point(|s| s.to <= from);
        let hi = segs.partition_point(|s| s.from < to);
        &segs[lo..hi.max(lo)]
    }

    pub fn core_count(&self) -> usize {
        self.core_segments.len()
    }

    /// Debug trace of the schedule.
    pub fn trace(&self, ts: &TaskSet) -> Vec<TraceEntry> {
        let mut entries: Vec<&ExecutionRecord> =
            self.records.iter().filter(|r| r.release < self.horizon()).collect();
        entries.sort_by_key(|r| (r.core, r.start, r.job));
        entries
            .into_iter()
            .map(|r| TraceEntry {
                core: ts.cores()[r.core].clone(),
                job: ts.job_label(r.job),
                release: r.release,
                deadline: r.deadline,
                start: r.start,
                finish: r.finish,
                segments: r.segments.iter().map(|&(a, b)| [a, b]).collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub core: String,
    pub job: String,
    pub release: Time,
    pub deadline: Time,
    pub start: Time,
    pub finish: Time,
    pub segments: Vec<[Time; 2]>,
}

/// Options for [`simulate_with`].
#[derive(Default)]
pub struct SimOptions<'a> {
    /// Jobs for which this returns true are never released.
    pub skip: Option<&'a dyn Fn(JobRef) -> bool>,
    /// Number of hyperperiod windows to simulate; never fewer than needed to
    /// cover `[0, Φ + 2H)`.
    pub windows: Option<u64>,
}

/// Outcome of a schedulability check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feasibility {
    pub schedulable: bool,
    pub first_miss: Option<DeadlineMiss>,
}

pub fn default_windows(max_phase: Time, hyperperiod: Time) -> u64 {
    if max_phase == 0 {
        2
    } else {
        // cover [0, Φ + 2H) plus one trailing window of interference
        3 + ((max_phase + hyperperiod - 1) / hyperperiod) as u64
    }
}

pub fn simulate(ts: &TaskSet, jlds: &JldSet) -> Result<Schedule> {
    simulate_with(ts, jlds, &SimOptions::default())
}

pub fn is_schedulable(ts: &TaskSet, jlds: &JldSet) -> Result<Feasibility> {
    match simulate(ts, jlds) {
        Ok(_) => Ok(Feasibility {
            schedulable: true,
            first_miss: None,
        }),
        Err(Error::Infeasible(miss)) => Ok(Feasibility {
            schedulable: false,
            first_miss: Some(miss),
        }),
        Err(e) => Err(e),
    }
}

/// Relative start and finish time `(S_J, F_J)` of a job.
pub fn relative_times(schedule: &Schedule, job: JobRef) -> Result<(Time, Time)> {
    let r = schedule
        .record(job)
        .ok_or_else(|| Error::NotFound(format!("job {job} is not part of the simulated horizon")))?;
    Ok((r.start - r.release, r.finish - r.release))
}

type JobKey = (u32, u64);

struct Live {
    job: JobRef,
    core: usize,
    rank: u32,
    release: Time,
    deadline: Time,
    remaining: Time,
    start: Option<Time>,
    finish: Option<Time>,
    segments: Vec<(Time, Time)>,
}

pub fn simulate_with(ts: &TaskSet, jlds: &JldSet, opts: &SimOptions<'_>) -> Result<Schedule> {
    let h = ts.hyperperiod();
    let phi = ts.max_phase();
    let windows = default_windows(phi, h).max(opts.windows.unwrap_or(0));
    let ncores = ts.cores().len();
    let ntasks = ts.tasks().len();
    let skip = |j: JobRef| opts.skip.is_some_and(|f| f(j));

    // dense per-core ranks, larger = higher priority
    let mut rank = vec![0u32; ntasks];
    for core in 0..ncores {
        let mut on_core: Vec<TaskIdx> = ts.tasks_on_core(core).collect();
        on_core.sort_by(|a, b| ts.task(*a).priority.cmp(&ts.task(*b).priority));
        for (r, t) in on_core.into_iter().enumerate() {
            rank[t.0] = r as u32;
        }
    }

    let jobs_total: Vec<u64> = ts
        .task_indices()
        .map(|t| windows * ts.jobs_per_hyperperiod(t))
        .collect();

    // replicate dependencies into every simulated window
    let mut waiting: HashMap<JobKey, u32> = HashMap::new();
    let mut successors: HashMap<JobKey, Vec<JobKey>> = HashMap::new();
    for d in jlds.iter() {
        let np = ts.jobs_per_hyperperiod(d.pred.task);
        let ns = ts.jobs_per_hyperperiod(d.succ.task);
        for w in 0..windows {
            let p = JobRef::new(d.pred.task, d.pred.index + w * np);
            let s = JobRef::new(d.succ.task, d.succ.index + w * ns);
            if skip(p) || skip(s) {
                continue;
            }
            let pk = (p.task.0 as u32, p.index);
            let sk = (s.task.0 as u32, s.index);
            *waiting.entry(sk).or_insert(0) += 1;
            successors.entry(pk).or_default().push(sk);
        }
    }

    let mut releases: BinaryHeap<Reverse<(Time, usize)>> = BinaryHeap::new();
    let mut next_index = vec![1u64; ntasks];
    for t in ts.task_indices() {
        if jobs_total[t.0] > 0 {
            releases.push(Reverse((ts.task(t).phase, t.0)));
        }
    }

    let mut live: Vec<Live> = Vec::new();
    let mut by_task: Vec<Vec<u32>> = jobs_total.iter().map(|&n| vec![NO_RECORD; n as usize]).collect();
    let mut ready: Vec<BinaryHeap<(u32, Reverse<u64>, u32)>> = (0..ncores).map(|_| BinaryHeap::new()).collect();
    let mut blocked: HashMap<JobKey, u32> = HashMap::new();
    let mut deadlines: BinaryHeap<Reverse<(Time, u32)>> = BinaryHeap::new();
    let mut running: Vec<Option<(u32, Time)>> = vec![None; ncores];
    let mut t: Time = 0;

    loop {
        // releases at t
        while let Some(&Reverse((rt, task))) = releases.peek() {
            if rt != t {
                break;
            }
            releases.pop();
            let idx = next_index[task];
            next_index[task] += 1;
            let tk = &ts.tasks()[task];
            if next_index[task] <= jobs_total[task] {
                releases.push(Reverse((rt + tk.period, task)));
            }
            let job = JobRef::new(TaskIdx(task), idx);
            if skip(job) {
                continue;
            }
            let id = live.len() as u32;
            live.push(Live {
                job,
                core: tk.core,
                rank: rank[task],
                release: rt,
                deadline: rt + tk.deadline,
                remaining: tk.wcet,
                start: None,
                finish: None,
                segments: Vec::new(),
            });
            by_task[task][(idx - 1) as usize] = id;
            deadlines.push(Reverse((rt + tk.deadline, id)));
            let key = (task as u32, idx);
            if waiting.get(&key).copied().unwrap_or(0) > 0 {
                blocked.insert(key, id);
            } else {
                ready[tk.core].push((rank[task], Reverse(idx), id));
            }
        }

        // deadline misses at t
        while let Some(&Reverse((dl, id))) = deadlines.peek() {
            if live[id as usize].finish.is_some() {
                deadlines.pop();
                continue;
            }
            if dl <= t {
                let j = &live[id as usize];
                return Err(Error::Infeasible(DeadlineMiss {
                    task: ts.task(j.job.task).id.clone(),
                    index: j.job.index,
                    deadline: dl,
                }));
            }
            break;
        }

        // dispatch
        for core in 0..ncores {
            let top = ready[core].peek().map(|e| e.2);
            let cur = running[core].map(|(id, _)| id);
            if top != cur {
                if let Some((id, from)) = running[core] {
                    if t > from {
                        live[id as usize].segments.push((from, t));
                    }
                }
                running[core] = top.map(|id| {
                    let j = &mut live[id as usize];
                    j.start.get_or_insert(t);
                    (id, t)
                });
            }
        }

        // next event
        let mut next = Time::MAX;
        if let Some(&Reverse((rt, _))) = releases.peek() {
            next = next.min(rt);
        }
        if let Some(&Reverse((dl, _))) = deadlines.peek() {
            next = next.min(dl);
        }
        for (id, _) in running.iter().flatten() {
            next = next.min(t + live[*id as usize].remaining);
        }
        if next == Time::MAX {
            break;
        }

        // advance
        let dt = next - t;
        let mut finished: Vec<u32> = Vec::new();
        for core in 0..ncores {
            if let Some((id, from)) = running[core] {
                let j = &mut live[id as usize];
                j.remaining -= dt;
                if j.remaining == 0 {
                    j.finish = Some(next);
                    j.segments.push((from, next));
                    let popped = ready[core].pop().map(|e| e.2);
                    debug_assert_eq!(popped, Some(id));
                    running[core] = None;
                    finished.push(id);
                }
            }
        }
        for id in finished {
            let j = &live[id as usize];
            let key = (j.job.task.0 as u32, j.job.index);
            if let Some(succ) = successors.get(&key) {
                for sk in succ {
                    let c = waiting.get_mut(sk).expect("successor is registered");
                    *c -= 1;
                    if *c == 0 {
                        if let Some(sid) = blocked.remove(sk) {
                            let s = &live[sid as usize];
                            ready[s.core].push((s.rank, Reverse(s.job.index), sid));
                        }
                    }
                }
            }
        }
        t = next;
    }

    if !blocked.is_empty() {
        return Err(Error::Consistency("jobs remained blocked by dependencies".into()));
    }

    let records: Vec<ExecutionRecord> = live
        .into_iter()
        .map(|j| ExecutionRecord {
            job: j.job,
            core: j.core,
            release: j.release,
            deadline: j.deadline,
            start: j.start.expect("every released job ran"),
            finish: j.finish.expect("every released job finished"),
            segments: j.segments,
        })
        .collect();

    let mut core_segments: Vec<Vec<Segment>> = vec![Vec::new(); ncores];
    for r in &records {
        for &(from, to) in &r.segments {
            core_segments[r.core].push(Segment { from, to, job: r.job });
        }
    }
    for segs in &mut core_segments {
        segs.sort_by_key(|s| s.from);
    }

    let schedule = Schedule {
        hyperperiod: h,
        max_phase: phi,
        windows,
        records,
        by_task,
        core_segments,
    };
    check_steady_state(&schedule)?;
    Ok(schedule)
}

/// Verifies that `[Φ+H, Φ+2H)` repeats `[Φ, Φ+H)` on every core.
fn check_steady_state(s: &Schedule) -> Result<()> {
    let (a, b) = s.steady_window();
    let h = s.hyperperiod;
    for (core, segs) in s.core_segments.iter().enumerate() {
        let clip = |from: Time, to: Time| -> Vec<(usize, Time, Time)> {
            segs.iter()
                .filter(|x| x.to > from && x.from < to)
                .map(|x| (x.job.task.0, x.from.max(from) - from, x.to.min(to) - from))
                .collect()
        };
        let first = clip(a, b);
        let second = clip(a + h, b + h);
        if first != second {
            let at = first
                .iter()
                .zip(&second)
                .find(|(x, y)| x != y)
                .map(|(x, y)| x.1.min(y.1))
                .unwrap_or_else(|| first.len().min(second.len()) as Time);
            return Err(Error::Consistency(format!(
                "schedule on core {core} is not periodic after the maximum phase (first difference near offset {at} of the window)"
            )));
        }
    }
    Ok(())
}
