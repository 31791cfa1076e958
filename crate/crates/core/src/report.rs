//! Machine-readable reports for the analysis, optimisation and benchmark
//! entry points.

use std::fmt::Write as _;

use serde::Serialize;

use crate::analysis::{analyze, Analysis};
use crate::error::{Error, Result};
use crate::gen::{generate, GeneratorProfile};
use crate::let_intervals::{IntervalMode, IntervalRow};
use crate::model::{TaskSet, Time, Utilization};
use crate::sched::{JldDoc, JldSet};
use crate::search::{run_search, to_f64, SearchConfig, SearchOutcome, SearchStats};
use crate::transform::{transform, verify_equivalence, EquivalenceReport, MappingDoc};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilizationDoc {
    pub value: f64,
    /// Exact ratio, e.g. `11/15`.
    pub exact: String,
}

impl From<Utilization> for UtilizationDoc {
    fn from(u: Utilization) -> Self {
        Self {
            value: to_f64(u),
            exact: format!("{}/{}", u.numer(), u.denom()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimaryChainDoc {
    pub jobs: Vec<String>,
    pub sampling: Time,
    pub output: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub chain: String,
    pub window: (Time, Time),
    pub primary_chains: Vec<PrimaryChainDoc>,
    pub mrt: Time,
    pub mda: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipRow {
    pub task: String,
    pub window: Time,
    pub jobs_per_window: u64,
    /// Job indices (1-based) skipped in the first window.
    pub skipped: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeReport {
    pub mode: IntervalMode,
    pub unit: String,
    pub hyperperiod: Time,
    /// Utilization with every job executing.
    pub utilization: UtilizationDoc,
    /// Utilization once jobs outside every primary chain are skipped.
    pub utilization_with_skipping: UtilizationDoc,
    pub intervals: Vec<IntervalRow>,
    pub chains: Vec<ChainReport>,
    pub skips: Vec<SkipRow>,
}

fn skip_rows(ts: &TaskSet, a: &Analysis) -> Vec<SkipRow> {
    a.skip_plan
        .tasks()
        .iter()
        .filter(|s| !s.skipped.is_empty())
        .map(|s| SkipRow {
            task: ts.task(s.task).id.clone(),
            window: s.window,
            jobs_per_window: s.jobs_per_window,
            skipped: s.skipped.iter().map(|p| p + 1).collect(),
        })
        .collect()
}

pub fn analysis_report(ts: &TaskSet, a: &Analysis) -> AnalyzeReport {
    let chains = a
        .primaries
        .iter()
        .zip(&a.latencies)
        .map(|(p, l)| ChainReport {
            chain: ts.chains()[p.chain].id.clone(),
            window: p.window,
            primary_chains: p
                .chains
                .iter()
                .map(|c| PrimaryChainDoc {
                    jobs: c.jobs.iter().map(|&j| ts.job_label(j)).collect(),
                    sampling: c.sampling_instant,
                    output: c.output_instant,
                })
                .collect(),
            mrt: l.mrt,
            mda: l.mda,
        })
        .collect();
    AnalyzeReport {
        mode: a.mode(),
        unit: ts.unit().to_string(),
        hyperperiod: ts.hyperperiod(),
        utilization: ts.system_utilization().into(),
        utilization_with_skipping: a.utilization().into(),
        intervals: a.intervals.report(ts),
        chains,
        skips: skip_rows(ts, a),
    }
}

/// Analysis of one configuration under the chosen interval mode.
pub fn cmd_analyze(ts: &TaskSet, jlds: &JldSet, mode: IntervalMode) -> Result<AnalyzeReport> {
    let a = analyze(ts, jlds, mode)?;
    Ok(analysis_report(ts, &a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainMetrics {
    pub chain: String,
    pub mrt: Time,
    pub mda: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsDoc {
    pub utilization: UtilizationDoc,
    pub chains: Vec<ChainMetrics>,
}

impl MetricsDoc {
    fn new(ts: &TaskSet, utilization: Utilization, a: &Analysis) -> Self {
        Self {
            utilization: utilization.into(),
            chains: a
                .latencies
                .iter()
                .map(|l| ChainMetrics {
                    chain: ts.chains()[l.chain].id.clone(),
                    mrt: l.mrt,
                    mda: l.mda,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedMrt {
    pub chain: String,
    /// Optimized MRT over the classic LET MRT.
    pub vs_classic: f64,
    /// Optimized MRT over the unoptimized schedule-aware MRT.
    pub vs_schedule_aware: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    /// Classic LET with every job executing.
    pub classic: MetricsDoc,
    /// Schedule-aware intervals without dependencies, skipping applied.
    pub schedule_aware: MetricsDoc,
    pub optimized: MetricsDoc,
    pub normalized_mrt: Vec<NormalizedMrt>,
    pub jlds: Vec<JldDoc>,
    pub skips: Vec<SkipRow>,
    pub skipped_jobs: usize,
    pub search: SearchStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceReport>,
}

impl RunReport {
    pub fn mean_normalized_mrt(&self) -> Option<f64> {
        mean(self.normalized_mrt.iter().map(|n| n.vs_classic))
    }

    pub fn mean_normalized_mrt_aware(&self) -> Option<f64> {
        mean(self.normalized_mrt.iter().map(|n| n.vs_schedule_aware))
    }

    /// `1 - optimized / classic` utilization.
    pub fn utilization_reduction(&self) -> f64 {
        1.0 - self.optimized.utilization.value / self.classic.utilization.value
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn ratio(a: Time, b: Time) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Γ′ and its mapping, produced on request.
#[derive(Debug, Clone)]
pub struct TransformedArtifacts {
    pub task_set: TaskSet,
    pub mapping: MappingDoc,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutput {
    pub report: RunReport,
    pub outcome: SearchOutcome,
    pub transformed: Option<TransformedArtifacts>,
}

pub fn cmd_optimize(ts: &TaskSet, config: &SearchConfig, emit_transformed: bool) -> Result<OptimizeOutput> {
    let classic = analyze(ts, &JldSet::new(), IntervalMode::Classic)?;
    let outcome = run_search(ts, config)?;
    let best = &outcome.best;
    let (equivalence, transformed) = if emit_transformed {
        let out = transform(ts, &best.jlds, &best.analysis)?;
        let eq = verify_equivalence(ts, &best.jlds, &best.analysis, &out)?;
        (
            Some(eq),
            Some(TransformedArtifacts {
                task_set: out.task_set,
                mapping: out.mapping,
            }),
        )
    } else {
        (None, None)
    };
    let normalized_mrt = best
        .analysis
        .latencies
        .iter()
        .zip(&classic.latencies)
        .zip(&outcome.root.analysis.latencies)
        .map(|((o, c), r)| NormalizedMrt {
            chain: ts.chains()[o.chain].id.clone(),
            vs_classic: ratio(o.mrt, c.mrt),
            vs_schedule_aware: ratio(o.mrt, r.mrt),
        })
        .collect();
    let report = RunReport {
        classic: MetricsDoc::new(ts, ts.system_utilization(), &classic),
        schedule_aware: MetricsDoc::new(ts, outcome.root.metrics.utilization, &outcome.root.analysis),
        optimized: MetricsDoc::new(ts, best.metrics.utilization, &best.analysis),
        normalized_mrt,
        jlds: best.jlds.to_doc(ts),
        skips: skip_rows(ts, &best.analysis),
        skipped_jobs: best.analysis.skip_plan.skip_count(),
        search: outcome.stats.clone(),
        equivalence,
    };
    Ok(OptimizeOutput {
        report,
        outcome,
        transformed,
    })
}

/// Version tag carried in the first column of every benchmark row.
pub const BENCH_CSV_VERSION: &str = "letchain-bench-1";

/// Columns of the benchmark CSV.
///
/// Utilizations are dimensionless; `util_reduction` is
/// `1 - optimized_util / baseline_util`; the `norm_mrt_*` columns are means
/// over the set's chains of optimized MRT divided by the classic LET MRT and
/// by the unoptimized schedule-aware MRT.
pub const BENCH_CSV_COLUMNS: [&str; 19] = [
    "version",
    "profile",
    "seed",
    "status",
    "tasks",
    "chains",
    "hyperperiod",
    "baseline_util",
    "aware_util",
    "optimized_util",
    "util_reduction",
    "norm_mrt_classic",
    "norm_mrt_aware",
    "max_norm_mrt_classic",
    "jlds",
    "skipped_jobs",
    "expanded",
    "evaluated",
    "equivalent",
];

#[derive(Debug, Clone, PartialEq)]
pub enum BenchStatus {
    Ok,
    GenerationFailed(String),
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub seed: u64,
    pub status: BenchStatus,
    pub task_set: Option<TaskSet>,
    pub report: Option<RunReport>,
    /// Per chain: whether schedule-aware MRT is within the classic MRT.
    pub aware_within_classic: Vec<bool>,
}

impl BenchRow {
    pub fn is_ok(&self) -> bool {
        self.status == BenchStatus::Ok
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub profile: GeneratorProfile,
    pub count: usize,
    /// Set `i` uses generator seed `seed + i`.
    pub seed: u64,
    pub search: SearchConfig,
    pub emit_transformed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchAggregate {
    pub sets: usize,
    pub mean_util_reduction: f64,
    pub median_util_reduction: f64,
    pub mean_norm_mrt: f64,
    pub median_norm_mrt: f64,
    pub mean_norm_mrt_aware: f64,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub profile: String,
    pub rows: Vec<BenchRow>,
}

pub fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    })
}

impl BenchResult {
    pub fn aggregate(&self) -> Option<BenchAggregate> {
        let reports: Vec<&RunReport> = self.rows.iter().filter_map(|r| r.report.as_ref()).collect();
        if reports.is_empty() {
            return None;
        }
        let red: Vec<f64> = reports.iter().map(|r| r.utilization_reduction()).collect();
        let norm: Vec<f64> = reports.iter().filter_map(|r| r.mean_normalized_mrt()).collect();
        let aware: Vec<f64> = reports.iter().filter_map(|r| r.mean_normalized_mrt_aware()).collect();
        Some(BenchAggregate {
            sets: reports.len(),
            mean_util_reduction: mean(red.iter().copied()).unwrap_or(0.0),
            median_util_reduction: median(red).unwrap_or(0.0),
            mean_norm_mrt: mean(norm.iter().copied()).unwrap_or(f64::NAN),
            median_norm_mrt: median(norm).unwrap_or(f64::NAN),
            mean_norm_mrt_aware: mean(aware.iter().copied()).unwrap_or(f64::NAN),
        })
    }

    /// Header, one row per set in seed order, then `mean` and `median`
    /// summary rows when at least one set succeeded. Wall time is left out so
    /// the output only depends on the inputs.
    pub fn to_csv(&self) -> String {
        let mut out = BENCH_CSV_COLUMNS.join(",");
        out.push('\n');
        let f = |x: f64| format!("{x:.6}");
        for row in &self.rows {
            let mut cells = vec![
                BENCH_CSV_VERSION.to_string(),
                self.profile.clone(),
                row.seed.to_string(),
            ];
            match (&row.status, &row.report, &row.task_set) {
                (BenchStatus::Ok, Some(r), Some(ts)) => {
                    let norm = r.normalized_mrt.iter().map(|n| n.vs_classic);
                    cells.extend([
                        "ok".to_string(),
                        ts.tasks().len().to_string(),
                        ts.chains().len().to_string(),
                        ts.hyperperiod().to_string(),
                        f(r.classic.utilization.value),
                        f(r.schedule_aware.utilization.value),
                        f(r.optimized.utilization.value),
                        f(r.utilization_reduction()),
                        r.mean_normalized_mrt().map(f).unwrap_or_default(),
                        r.mean_normalized_mrt_aware().map(f).unwrap_or_default(),
                        norm.reduce(f64::max).map(f).unwrap_or_default(),
                        r.jlds.len().to_string(),
                        r.skipped_jobs.to_string(),
                        r.search.expanded.to_string(),
                        r.search.evaluated.to_string(),
                        r.equivalence.as_ref().map(|e| e.equivalent().to_string()).unwrap_or_default(),
                    ]);
                }
                (status, _, _) => {
                    cells.push(match status {
                        BenchStatus::GenerationFailed(_) => "generation-failed".into(),
                        _ => "failed".into(),
                    });
                    cells.extend(std::iter::repeat_n(String::new(), BENCH_CSV_COLUMNS.len() - 4));
                }
            }
            let _ = writeln!(out, "{}", cells.join(","));
        }
        if let Some(a) = self.aggregate() {
            let summary = |label: &str, red: f64, norm: f64, aware: Option<f64>| {
                let mut cells = vec![BENCH_CSV_VERSION.to_string(), self.profile.clone(), label.to_string()];
                cells.push(a.sets.to_string());
                cells.extend(std::iter::repeat_n(String::new(), 6));
                cells.push(f(red));
                cells.push(f(norm));
                cells.push(aware.map(f).unwrap_or_default());
                cells.extend(std::iter::repeat_n(String::new(), BENCH_CSV_COLUMNS.len() - 13));
                cells.join(",")
            };
            let _ = writeln!(out, "{}", summary("mean", a.mean_util_reduction, a.mean_norm_mrt, Some(a.mean_norm_mrt_aware)));
            let _ = writeln!(out, "{}", summary("median", a.median_util_reduction, a.median_norm_mrt, None));
        }
        out
    }
}

/// Generates and optimizes `count` sets; per-set failures become rows.
pub fn cmd_bench(config: &BenchConfig) -> Result<BenchResult> {
    config.profile.validate()?;
    config.search.validate()?;
    let mut rows = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let seed = config.seed.wrapping_add(i as u64);
        let ts = match generate(&config.profile, seed) {
            Ok(ts) => ts,
            Err(Error::Generation(m)) => {
                rows.push(BenchRow {
                    seed,
                    status: BenchStatus::GenerationFailed(m),
                    task_set: None,
                    report: None,
                    aware_within_classic: Vec::new(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let search = SearchConfig {
            seed,
            ..config.search.clone()
        };
        match cmd_optimize(&ts, &search, config.emit_transformed) {
            Ok(out) => {
                let within = out
                    .report
                    .schedule_aware
                    .chains
                    .iter()
                    .zip(&out.report.classic.chains)
                    .map(|(a, c)| a.mrt <= c.mrt)
                    .collect();
                rows.push(BenchRow {
                    seed,
                    status: BenchStatus::Ok,
                    task_set: Some(ts),
                    report: Some(out.report),
                    aware_within_classic: within,
                });
            }
            Err(e) => rows.push(BenchRow {
                seed,
                status: BenchStatus::Failed(e.to_string()),
                task_set: Some(ts),
                report: None,
                aware_within_classic: Vec::new(),
            }),
        }
    }
    Ok(BenchResult {
        profile: config.profile.name.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{example_one, example_one_with_two_jlds};
    use std::time::Duration;

    #[test]
    fn example_one_analysis_report() {
        let ts = example_one();
        let r = cmd_analyze(&ts, &JldSet::new(), IntervalMode::ScheduleAware).unwrap();
        assert_eq!(r.utilization.exact, "11/15");
        assert!((r.utilization.value - 0.7333).abs() < 1e-4);
        assert_eq!(r.chains[0].mrt, 13);
        assert_eq!(r.chains[0].primary_chains.len(), 3);

        let classic = cmd_analyze(&ts, &JldSet::new(), IntervalMode::Classic).unwrap();
        for (row, t) in classic.intervals.iter().zip(ts.tasks()) {
            assert_eq!((row.begin, row.end), (0, t.period));
        }

        let (ts, jlds) = example_one_with_two_jlds();
        let r = cmd_analyze(&ts, &jlds, IntervalMode::ScheduleAware).unwrap();
        assert_eq!(r.utilization_with_skipping.exact, "3/5");
        assert_eq!(r.skips.len(), 1);
        assert_eq!(r.skips[0].task, "tau2");
        assert_eq!(r.skips[0].skipped, vec![1, 4]);
    }

    #[test]
    fn optimize_example_one_emits_equivalent_transform() {
        let ts = example_one();
        let cfg = SearchConfig {
            timeout: Duration::from_secs(30),
            max_expansions: Some(3000),
            ..Default::default()
        };
        let out = cmd_optimize(&ts, &cfg, true).unwrap();
        let r = &out.report;
        assert_eq!(r.optimized.utilization.exact, "3/5");
        assert!(r.optimized.chains[0].mrt <= 12);
        assert!(r.equivalence.as_ref().unwrap().equivalent());
        let splits = out
            .transformed
            .unwrap()
            .task_set
            .tasks()
            .iter()
            .filter(|t| t.id.starts_with("tau2@"))
            .count();
        assert_eq!(splits, 3);
        assert!(r.normalized_mrt.iter().all(|n| n.vs_classic > 0.0 && n.vs_classic <= 1.0));
    }

    #[test]
    fn empty_benchmark_is_header_only() {
        let cfg = BenchConfig {
            profile: GeneratorProfile::automotive(),
            count: 0,
            seed: 0,
            search: SearchConfig::default(),
            emit_transformed: false,
        };
        let csv = cmd_bench(&cfg).unwrap().to_csv();
        assert_eq!(csv, format!("{}\n", BENCH_CSV_COLUMNS.join(",")));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(Vec::new()), None);
    }
}
