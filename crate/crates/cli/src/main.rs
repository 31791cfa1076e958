use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use letchain::gen::{generate, GeneratorProfile};
use letchain::let_intervals::IntervalMode;
use letchain::report::{cmd_analyze, cmd_bench, cmd_optimize, BenchConfig};
use letchain::sched::{JldDoc, JldSet};
use letchain::search::{CandidateScope, Objective, SearchConfig};
use letchain::{parse_task_set, simulate, Error, TaskSet};

#[derive(Parser)]
#[command(name = "letchain", version, about = "LET cause-effect chain analysis and optimisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Communication intervals, primary chains, MRT/MDA and utilization.
    Analyze {
        task_set: PathBuf,
        #[arg(long, value_enum, default_value = "schedule-aware")]
        mode: Mode,
        /// JSON array of {"pred": "task#k", "succ": "task#k"}.
        #[arg(long)]
        jlds: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search job-level dependencies that lower utilization and latency.
    Optimize {
        task_set: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        /// Also emit the transformed task set and its equivalence check.
        #[arg(long)]
        emit_transformed: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and optimize task sets, writing one CSV row per set.
    Bench {
        /// `automotive`, `synthetic` or a profile JSON file.
        profile: String,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        emit_transformed: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate task sets; with --out, one file per seed.
    Generate {
        /// `automotive`, `synthetic` or a profile JSON file.
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fixed-priority schedule trace of one configuration.
    Simulate {
        task_set: PathBuf,
        #[arg(long)]
        jlds: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Classic,
    ScheduleAware,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    SameCore,
    All,
}

#[derive(Args)]
struct SearchArgs {
    /// Search time limit in seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    /// Weighted objective `u,m,a` over utilization, MRT and MDA.
    #[arg(long, conflicts_with = "lexicographic")]
    weights: Option<String>,
    /// Utilization first, then MRT, then MDA (default).
    #[arg(long)]
    lexicographic: bool,
    #[arg(long, value_enum, default_value = "same-core")]
    scope: Scope,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop after this many expansions, for machine-independent results.
    #[arg(long)]
    max_expansions: Option<u64>,
    /// Stop after this many candidate evaluations.
    #[arg(long)]
    max_evaluations: Option<u64>,
}

impl SearchArgs {
    fn config(&self) -> Result<SearchConfig, Error> {
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(Error::Config("--timeout must be a positive number of seconds".into()));
        }
        let objective = match &self.weights {
            None => Objective::Lexicographic,
            Some(w) => {
                let parts: Vec<f64> = w
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| Error::Config(format!("--weights: {e}")))?;
                let [util, mrt, mda] = parts[..] else {
                    return Err(Error::Config("--weights expects three values u,m,a".into()));
                };
                Objective::Weighted { util, mrt, mda }
            }
        };
        let cfg = SearchConfig {
            timeout: Duration::from_secs_f64(self.timeout),
            objective,
            scope: match self.scope {
                Scope::SameCore => CandidateScope::SameCore,
                Scope::All => CandidateScope::AllCores,
            },
            seed: self.seed,
            max_expansions: self.max_expansions,
            max_evaluations: self.max_evaluations,
            ..SearchConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Schema { .. }
        | Error::Validation { .. }
        | Error::HyperperiodLimit { .. }
        | Error::NotFound(_)
        | Error::NoPrimaryChain(_)
        | Error::Io(_) => 2,
        Error::Infeasible(_) | Error::Generation(_) => 3,
        Error::Consistency(_) => 4,
    }
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_task_set(path: &Path) -> Result<TaskSet, Error> {
    parse_task_set(&read(path)?)
}

fn load_jlds(ts: &TaskSet, path: Option<&Path>) -> Result<JldSet, Error> {
    let Some(path) = path else {
        return Ok(JldSet::new());
    };
    let docs: Vec<JldDoc> = serde_json::from_str(&read(path)?).map_err(|e| Error::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    JldSet::from_doc(ts, &docs)
}

fn load_profile(name: &str) -> Result<GeneratorProfile, Error> {
    match GeneratorProfile::by_name(name) {
        Some(p) => Ok(p),
        None => GeneratorProfile::from_json(&read(Path::new(name))?),
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Writes `files` into `out`, or prints the first one when no directory is given.
fn emit(out: Option<&Path>, files: &[(&str, String)]) -> Result<(), Error> {
    match out {
        None => {
            print!("{}", files[0].1);
            Ok(())
        }
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for (name, body) in files {
                fs::write(dir.join(name), body)?;
            }
            Ok(())
        }
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Analyze {
            task_set,
            mode,
            jlds,
            out,
        } => {
            let ts = load_task_set(&task_set)?;
            let jlds = load_jlds(&ts, jlds.as_deref())?;
            let mode = match mode {
                Mode::Classic => IntervalMode::Classic,
                Mode::ScheduleAware => IntervalMode::ScheduleAware,
            };
            let report = cmd_analyze(&ts, &jlds, mode)?;
            emit(out.as_deref(), &[("analysis.json", json(&report))])
        }
        Command::Optimize {
            task_set,
            search,
            emit_transformed,
            out,
        } => {
            let cfg = search.config()?;
            let ts = load_task_set(&task_set)?;
            let result = cmd_optimize(&ts, &cfg, emit_transformed)?;
            let r = &result.report;
            let mut files = vec![
                ("report.json", json(r)),
                ("jlds.json", json(&r.jlds)),
                ("skip_plan.json", json(&r.skips)),
                ("audit.json", json(&result.outcome.audit)),
            ];
            if let Some(t) = &result.transformed {
                files.push(("transformed.json", t.task_set.to_json()));
                files.push(("mapping.json", json(&t.mapping)));
            }
            emit(out.as_deref(), &files)?;
            match &r.equivalence {
                Some(eq) if !eq.equivalent() => Err(Error::Consistency(
                    "transformed task set is not equivalent to the optimized configuration".into(),
                )),
                _ => Ok(()),
            }
        }
        Command::Bench {
            profile,
            count,
            search,
            emit_transformed,
            out,
        } => {
            let cfg = BenchConfig {
                profile: load_profile(&profile)?,
                count,
                seed: search.seed,
                search: search.config()?,
                emit_transformed,
            };
            let result = cmd_bench(&cfg)?;
            emit(out.as_deref(), &[("bench.csv", result.to_csv())])
        }
        Command::Generate {
            profile,
            seed,
            count,
            out,
        } => {
            let profile = load_profile(&profile)?;
            if out.is_none() && count != 1 {
                return Err(Error::Config("--count above 1 needs --out".into()));
            }
            let mut files = Vec::with_capacity(count);
            for i in 0..count as u64 {
                let s = seed.wrapping_add(i);
                let name = format!("{}-{s}.json", profile.name);
                files.push((name, generate(&profile, s)?.to_json()));
            }
            let files: Vec<(&str, String)> = files.iter().map(|(n, b)| (n.as_str(), b.clone())).collect();
            if files.is_empty() {
                return Ok(());
            }
            emit(out.as_deref(), &files)
        }
        Command::Simulate { task_set, jlds, out } => {
            let ts = load_task_set(&task_set)?;
            let jlds = load_jlds(&ts, jlds.as_deref())?;
            let schedule = simulate(&ts, &jlds)?;
            emit(out.as_deref(), &[("trace.json", json(&schedule.trace(&ts)))])
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
