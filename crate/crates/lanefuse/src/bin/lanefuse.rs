//! Thin command-line front end over the library: run and benchmark the
//! bundled workloads, generate datasets, and inspect UDF analysis and
//! plans. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use clap::{Parser, Subcommand};
use lanefuse::analyzer;
use lanefuse::config::EngineConfig;
use lanefuse::engine::Engine;
use lanefuse::harness;
use lanefuse::ir::text::parse_program;
use lanefuse::ir::UdfProgram;
use lanefuse::planner;
use lanefuse::synthesizer::{stage_summaries, Strategy};
use lanefuse::workloads::{self, WorkloadKind};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lanefuse", version, about = "Embedded analytics engine")]
struct Cli {
    /// TOML config overriding hardware profile and runtime topology.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed for data generation.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Emit machine-readable JSON instead of human-readable text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a workload end to end and report timing and checksums.
    Run {
        /// kmeans | logistic | linear | bayes
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 10_000)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        iters: usize,
        /// pipeline | operator | tiled | adaptive
        #[arg(long, default_value = "adaptive")]
        strategy: String,
        #[arg(long)]
        workers: Option<usize>,
        /// Save the result relation as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a workload dataset as CSV.
    Gen {
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 10_000)]
        rows: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze UDFs: vectorizability, predicted cycles, boundedness.
    Analyze {
        /// Textual IR file to analyze; omit to analyze a workload's UDFs.
        ir_file: Option<PathBuf>,
        #[arg(long)]
        workload: Option<String>,
    },
    /// Show the abstract plan and synthesized stages for a workload.
    Plan {
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 10_000)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        iters: usize,
        #[arg(long, default_value = "adaptive")]
        strategy: String,
    },
    /// Compare all four strategies on one workload (results verified
    /// equal before timing).
    BenchStrategies {
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 100_000)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        iters: usize,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compare natural reduce lowerings against forced hash tables.
    BenchReduce {
        /// Rows for the running-sum reduce (reduction variables).
        #[arg(long, default_value_t = 2_000_000)]
        sum_rows: usize,
        /// Rows for the small-key-domain grouped reduce (direct index).
        #[arg(long, default_value_t = 2_000_000)]
        group_rows: usize,
        #[arg(long, default_value_t = 10)]
        keys: usize,
    },
    /// Weak scaling: fixed rows per worker, growing worker count.
    Scale {
        #[arg(long, default_value = "kmeans")]
        workload: String,
        #[arg(long, default_value_t = 50_000)]
        rows_per_worker: usize,
        #[arg(long, default_value_t = 4)]
        max_workers: usize,
        #[arg(long, default_value_t = 5)]
        iters: usize,
    },
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn runtime_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();

    let engine = match &cli.config {
        Some(path) => match EngineConfig::from_toml_file(path) {
            Ok(cfg) => Engine::from_config(&cfg),
            Err(e) => return usage_error(&format!("--config: {e}")),
        },
        None => Engine::new(),
    };

    match run(cli, engine) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => usage_error(&m),
        Err(CliError::Runtime(m)) => runtime_error(&m),
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

fn parse_workload(s: &str) -> Result<WorkloadKind, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn parse_strategy(s: &str) -> Result<Strategy, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn workload_udfs(kind: WorkloadKind) -> Vec<UdfProgram> {
    match kind {
        WorkloadKind::KMeans => vec![
            workloads::kmeans::distance_udf(2, 3),
            workloads::kmeans::minimum_udf(2, 3),
            workloads::kmeans::reassign_udf(2, 3),
            workloads::kmeans::recompute_core_udf(2, 3),
        ],
        WorkloadKind::Logistic => vec![
            workloads::regression::gradient_udf(4, workloads::regression::Loss::Logistic),
            workloads::regression::apply_udf(4, 1.0),
        ],
        WorkloadKind::Linear => vec![
            workloads::regression::gradient_udf(4, workloads::regression::Loss::Squared),
            workloads::regression::apply_udf(4, 1.0),
        ],
        WorkloadKind::Bayes => {
            let p = workloads::bayes::Params::default();
            vec![workloads::bayes::count_udf(&p), workloads::bayes::normalize_udf(&p)]
        }
    }
}

fn print_stats(stats: &[analyzer::FunctionStats], json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(stats).unwrap());
        return;
    }
    println!(
        "{:<20} {:>12} {:>16} {:>12} {:>14}",
        "udf", "vectorizable", "compute-cycles", "load-cycles", "boundedness"
    );
    for s in stats {
        println!(
            "{:<20} {:>12} {:>16.2} {:>12.2} {:>14}",
            s.name,
            s.vectorizable,
            s.predicted_compute_cycles,
            s.load_cycles,
            match s.boundedness {
                analyzer::Boundedness::ComputeBound => "compute",
                analyzer::Boundedness::MemoryBound => "memory",
            }
        );
    }
}

fn run(cli: Cli, mut engine: Engine) -> Result<(), CliError> {
    let rt = |e: &dyn std::fmt::Display| CliError::Runtime(e.to_string());
    match cli.cmd {
        Cmd::Run {
            workload,
            rows,
            iters,
            strategy,
            workers,
            out,
        } => {
            let kind = parse_workload(&workload)?;
            let strategy = parse_strategy(&strategy)?;
            if let Some(n) = workers {
                engine = engine.with_executors(n);
            }
            let w = workloads::build(kind, rows, iters, cli.seed);
            let (ts, report) =
                harness::run_report(&engine, kind.name(), &w, strategy, harness::DEFAULT_REPS)
                    .map_err(|e| rt(&e))?;
            if let Some(path) = out {
                ts.relation.save_csv(&path).map_err(|e| rt(&e))?;
            }
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else {
                println!(
                    "{} [{}] workers={} wall_ms={:.2} rows={} relation={} context={}",
                    report.workload,
                    report.strategy,
                    report.workers,
                    report.wall_ms,
                    report.checksums.rows,
                    report.checksums.relation,
                    report.checksums.context,
                );
            }
            Ok(())
        }
        Cmd::Gen { workload, rows, out } => {
            let kind = parse_workload(&workload)?;
            let rel = workloads::generate(kind, rows, cli.seed);
            rel.save_csv(&out).map_err(|e| rt(&e))?;
            if !cli.json {
                println!("wrote {} rows to {}", rel.cardinality(), out.display());
            }
            Ok(())
        }
        Cmd::Analyze { ir_file, workload } => {
            let udfs = match (&ir_file, &workload) {
                (Some(path), None) => {
                    let text = std::fs::read_to_string(path).map_err(|e| rt(&e))?;
                    vec![parse_program(&text).map_err(|e| rt(&e))?]
                }
                (None, Some(name)) => workload_udfs(parse_workload(name)?),
                _ => {
                    return Err(CliError::Usage(
                        "analyze takes either an IR file or --workload".into(),
                    ))
                }
            };
            let stats: Vec<_> = udfs
                .iter()
                .map(|u| analyzer::analyze(u, &engine.hw))
                .collect::<Result<_, _>>()
                .map_err(|e| rt(&e))?;
            print_stats(&stats, cli.json);
            Ok(())
        }
        Cmd::Plan {
            workload,
            rows,
            iters,
            strategy,
        } => {
            let kind = parse_workload(&workload)?;
            let strategy = parse_strategy(&strategy)?;
            let w = workloads::build(kind, rows, iters, cli.seed);
            let abstract_plan = planner::plan(&w, &engine.hw).map_err(|e| rt(&e))?;
            let plan = engine.prepare(&w, strategy).map_err(|e| rt(&e))?;
            let stages = stage_summaries(&plan);
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&stages).unwrap());
            } else {
                println!("{}", planner::explain(&abstract_plan));
                println!("strategy: {}", strategy.name());
                for (i, s) in stages.iter().enumerate() {
                    println!(
                        "stage {i}: [{}] mode={:?} materialization={:?} reduce={:?}",
                        s.ops.join(", "),
                        s.mode,
                        s.materialization,
                        s.reduce_lowering
                    );
                }
            }
            Ok(())
        }
        Cmd::BenchStrategies {
            workload,
            rows,
            iters,
            workers,
        } => {
            let kind = parse_workload(&workload)?;
            if let Some(n) = workers {
                engine = engine.with_executors(n);
            }
            let w = workloads::build(kind, rows, iters, cli.seed);
            let reports = harness::bench_strategies(
                &engine,
                kind.name(),
                &w,
                &Strategy::ALL,
                harness::DEFAULT_REPS,
            )
            .map_err(|e| rt(&e))?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&reports).unwrap());
            } else {
                for r in &reports {
                    println!(
                        "{:<20} wall_ms={:>10.2} stages={} checksum={}",
                        r.strategy,
                        r.wall_ms,
                        r.stages.len(),
                        r.checksums.context
                    );
                }
            }
            Ok(())
        }
        Cmd::BenchReduce {
            sum_rows,
            group_rows,
            keys,
        } => {
            let sum = harness::sum_reduce_workflow(sum_rows, cli.seed);
            let grouped = harness::grouped_reduce_workflow(group_rows, keys, cli.seed);
            let mut reports = Vec::new();
            for (name, w) in [("running-sum", &sum), ("grouped", &grouped)] {
                reports.push(
                    harness::bench_reduce_lowering(&engine, name, w, harness::DEFAULT_REPS)
                        .map_err(|e| rt(&e))?,
                );
            }
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&reports).unwrap());
            } else {
                for r in &reports {
                    println!(
                        "{:<12} rows={:>9} {}={:.2}ms hash={:.2}ms speedup={:.2}x",
                        r.name, r.rows, r.natural_lowering, r.natural_ms, r.hash_ms, r.speedup
                    );
                }
            }
            Ok(())
        }
        Cmd::Scale {
            workload,
            rows_per_worker,
            max_workers,
            iters,
        } => {
            let kind = parse_workload(&workload)?;
            let seed = cli.seed;
            let workers: Vec<usize> = (0..)
                .map(|i| 1usize << i)
                .take_while(|n| *n <= max_workers)
                .collect();
            let points = harness::weak_scaling(
                |rows| workloads::build(kind, rows, iters, seed),
                &workers,
                rows_per_worker,
                Strategy::Adaptive,
                harness::DEFAULT_REPS,
            )
            .map_err(|e| rt(&e))?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&points).unwrap());
            } else {
                let cores = std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1);
                for p in &points {
                    println!(
                        "workers={:<2} rows={:>8} wall_ms={:>10.2} ratio={:.2}",
                        p.workers, p.rows, p.wall_ms, p.ratio
                    );
                }
                if cores < workers.last().copied().unwrap_or(1) {
                    println!(
                        "note: host has {cores} core(s); ratios above {cores} worker(s) \
                         measure oversubscription, not scaling"
                    );
                }
            }
            Ok(())
        }
    }
}
