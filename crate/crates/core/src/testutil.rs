use crate::model::{parse_task_set, JobRef, TaskSet};
use crate::sched::{Jld, JldSet};

pub(crate) const EXAMPLE_1: &str = include_str!("../testdata/example1.json");

pub(crate) fn example_one() -> TaskSet {
    parse_task_set(EXAMPLE_1).unwrap()
}

pub(crate) fn job(ts: &TaskSet, task: &str, index: u64) -> JobRef {
    JobRef::new(ts.task_index(task).unwrap(), index)
}

/// Example 1 with `tau3#1 -> tau2#1` and `tau3#2 -> tau2#3`.
pub(crate) fn example_one_with_two_jlds() -> (TaskSet, JldSet) {
    let ts = example_one();
    let mut jlds = JldSet::new();
    for (p, s) in [(1, 1), (2, 3)] {
        jlds.insert(&ts, Jld { pred: job(&ts, "tau3", p), succ: job(&ts, "tau2", s) })
            .unwrap();
    }
    (ts, jlds)
}
