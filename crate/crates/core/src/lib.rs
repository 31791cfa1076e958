//! Logical-execution-time analysis and optimisation of cause-effect chains
//! under fixed-priority scheduling with job-level dependencies.

pub mod error;
pub mod model;
pub mod sched;
pub mod let_intervals;
pub mod chains;
pub mod analysis;
pub mod transform;
pub mod search;
pub mod gen;
pub mod report;

pub use error::{DeadlineMiss, Error, Result};
pub use model::{
    parse_task_set, parse_task_set_with_limit, CauseEffectChain, JobRef, Priority, Task, TaskIdx,
    TaskSet, Time, Utilization,
};
pub use sched::{simulate, simulate_with, Jld, JldSet, Schedule, SimOptions};

#[cfg(test)]
pub(crate) mod testutil;
