//! `fade`: run experiments, grids, the shipped reproduction specs, and the oracle checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fade_core::harness::{
    format_summary_table, parse_run_list, run_experiment, run_grid, write_grid, write_run, GridSpec, HarnessError,
    RunContext, RunRecord, RunSpec, DATA_ROOT_ENV,
};
use fade_core::oracle::run_oracle_suite;

const TABLE1: &str = include_str!("../../../specs/table1.toml");
const NONLINEAR: &str = include_str!("../../../specs/nonlinear.toml");
const EMNIST: &str = include_str!("../../../specs/emnist.toml");
const EMNIST_PARTIAL: &str = include_str!("../../../specs/emnist_partial.toml");

/// Exit status when an oracle check fails.
const ORACLE_FAILURE: u8 = 1;

#[derive(Parser)]
#[command(name = "fade", version, about = "Online weight-decay adaptation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the run (or `[[run]]` list) in a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Execute a hyperparameter grid and write the ranked table.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// The six linear-tracking methods at noise 0 and 1 with their best settings.
    #[command(name = "reproduce-table1")]
    ReproduceTable1 {
        #[command(flatten)]
        common: Common,
    },
    /// Teacher-student tracking with each method's best settings.
    #[command(name = "reproduce-nonlinear")]
    ReproduceNonlinear {
        #[command(flatten)]
        common: Common,
    },
    /// Label-permuted EMNIST with each method's best settings.
    #[command(name = "reproduce-emnist")]
    ReproduceEmnist {
        /// Permute only 23 of the 47 labels.
        #[arg(long)]
        partial: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference, replay, reduction and gradient checks.
    #[command(name = "check-oracles")]
    CheckOracles {
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds per run.
    #[arg(long)]
    seeds: Option<u64>,
    /// Total steps per run.
    #[arg(long)]
    steps: Option<u64>,
    /// Override any spec key, e.g. `--set learner.alpha=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// EMNIST directory.
    #[arg(long, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
}

impl Common {
    /// `--set` overrides followed by the flag overrides; `--steps` is kept apart
    /// when `rescale` is set.
    fn overrides(&self, rescale: bool) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(n) = self.seeds {
            o.push(format!("seeds={n}"));
        }
        if let (Some(n), false) = (self.steps, rescale) {
            o.push(format!("steps={n}"));
        }
        o
    }

    fn context(&self) -> RunContext {
        RunContext::new(self.data_root.clone())
    }
}

fn read_config(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Shorten shipped runs to `steps`, keeping the summary region the same
/// fraction of the run.
fn rescale(specs: &mut [RunSpec], steps: Option<u64>) -> Result<(), HarnessError> {
    let Some(steps) = steps else { return Ok(()) };
    for s in specs {
        if let Some(last) = s.summary_last {
            let scaled = (u128::from(last) * u128::from(steps) / u128::from(s.steps.max(1))) as u64;
            s.summary_last = Some(scaled.max(1));
        }
        s.steps = steps;
        s.validate()?;
    }
    Ok(())
}

fn run_all(specs: &[RunSpec], common: &Common) -> Result<Vec<RunRecord>, HarnessError> {
    let ctx = common.context();
    let mut records = Vec::with_capacity(specs.len());
    for spec in specs {
        let record = match run_experiment(spec, &ctx) {
            Ok(r) => r,
            Err(e) => {
                if let HarnessError::Numeric { run, seed, dump, .. } = &e {
                    let path = common.out.join(format!("{run}.seed{seed}.fault.json"));
                    if std::fs::create_dir_all(&common.out).is_ok() {
                        let body = serde_json::to_string_pretty(dump).unwrap_or_default();
                        if std::fs::write(&path, body).is_ok() {
                            eprintln!("learner state written to {}", path.display());
                        }
                    }
                }
                return Err(e);
            }
        };
        for p in write_run(&record, &common.out)? {
            eprintln!("wrote {}", p.display());
        }
        records.push(record);
    }
    Ok(records)
}

fn reproduce(shipped: &str, common: &Common) -> Result<(), HarnessError> {
    let mut specs = parse_run_list(shipped, &common.overrides(true))?;
    rescale(&mut specs, common.steps)?;
    let records = run_all(&specs, common)?;
    print!("{}", format_summary_table(&records));
    Ok(())
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(HarnessError::Config("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, HarnessError> {
    match cmd {
        Command::Run { config, common } => with_jobs(common.jobs, || {
            let specs = parse_run_list(&read_config(&config)?, &common.overrides(false))?;
            let records = run_all(&specs, &common)?;
            print!("{}", format_summary_table(&records));
            Ok(ExitCode::SUCCESS)
        })?,
        Command::Grid { config, common } => with_jobs(common.jobs, || {
            let grid = GridSpec::from_toml_str(&read_config(&config)?)?;
            let record = run_grid(&grid, &common.overrides(false), &common.context())?;
            for p in write_grid(&record, &common.out)? {
                eprintln!("wrote {}", p.display());
            }
            for (rank, &i) in record.ranking.iter().enumerate() {
                let c = &record.cells[i];
                let params: Vec<String> = c.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let mean = c.mean().map_or_else(|| "diverged".to_string(), |m| format!("{m:.4}"));
                println!("{:>4}  {:<12}  {}", rank + 1, mean, params.join(" "));
            }
            Ok(ExitCode::SUCCESS)
        })?,
        Command::ReproduceTable1 { common } => with_jobs(common.jobs, || reproduce(TABLE1, &common).map(|()| ExitCode::SUCCESS))?,
        Command::ReproduceNonlinear { common } => {
            with_jobs(common.jobs, || reproduce(NONLINEAR, &common).map(|()| ExitCode::SUCCESS))?
        }
        Command::ReproduceEmnist { partial, common } => {
            let shipped = if partial { EMNIST_PARTIAL } else { EMNIST };
            with_jobs(common.jobs, || reproduce(shipped, &common).map(|()| ExitCode::SUCCESS))?
        }
        Command::CheckOracles { jobs } => {
            let checks = with_jobs(jobs, run_oracle_suite)?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            println!("{} checks, {failed} failed", checks.len());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(ORACLE_FAILURE) })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
