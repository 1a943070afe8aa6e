use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ceal::combiner::MetricKind;
use ceal::executor::{brute_force_oracle, brute_force_oracle_space, Executor, OracleTable};
use ceal::harness::{
    derive_seed, run_bench, run_sweep, write_bench_csv, write_sweep_csv, BudgetSpec,
    ExperimentPlan, SweepParam, SweepRequest, DEFAULT_HISTORY_SIZE, DEFAULT_POOL_SIZE,
};
use ceal::metrics::{best_performance_measured, best_performance_oracle};
use ceal::parallel;
use ceal::space::{Configuration, SamplePool};
use ceal::tuner::{run, Algorithm, HistoricalData, TunerConfig, TuningRequest, TuningTrace};
use ceal::workflow::Workflow;

#[derive(Parser)]
#[command(
    name = "ceal",
    version,
    about = "Budgeted auto-tuning of coupled workflows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one tuner and write its trace.
    Tune(TuneArgs),
    /// Paired-seed comparison from a plan file.
    Bench(BenchArgs),
    /// Sensitivity to one budget parameter.
    Sweep(SweepArgs),
    /// Ground-truth table for a synthetic workflow.
    Oracle(OracleArgs),
    /// Synthetic component histories, one file per component.
    History(HistoryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecutorArg {
    Synth,
    External,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value = "ceal")]
    algo: Algorithm,
    #[arg(long)]
    m: usize,
    #[arg(long = "m-r")]
    m_r: Option<usize>,
    #[arg(long = "m-0")]
    m_0: Option<usize>,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "synth")]
    executor: ExecutorArg,
    /// Trace file (JSON lines), written as the run progresses.
    #[arg(long, default_value = "trace.jsonl")]
    out: PathBuf,
    /// Component history files, one per component in workflow order. Defaults
    /// to the workflow file's `history_file` entries.
    #[arg(long, num_args = 1..)]
    history: Vec<PathBuf>,
    #[arg(long)]
    metric: Option<MetricKind>,
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pool_size: usize,
    /// Use the configurations of a measured table (oracle CSV) as the pool.
    #[arg(long)]
    pool_table: Option<PathBuf>,
    /// Reuse measurements from an interrupted run's trace at `--out`.
    #[arg(long)]
    resume: bool,
    /// Save the final model here.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Measure the recommended configuration once more (not charged).
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct BenchArgs {
    plan: PathBuf,
    /// Output directory; defaults to the plan's `out_dir`, then `bench_out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Use the full repetition count.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values; defaults to the standard grid for `--param`.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value = "ceal")]
    algo: Algorithm,
    #[arg(long)]
    m: usize,
    #[arg(long = "m-r")]
    m_r: Option<usize>,
    #[arg(long = "m-0")]
    m_0: Option<usize>,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    /// Give the tuner free synthetic component histories.
    #[arg(long)]
    history: bool,
    #[arg(long)]
    metric: Option<MetricKind>,
    #[arg(long, default_value_t = 30)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pool_size: usize,
    #[arg(long, default_value_t = DEFAULT_HISTORY_SIZE)]
    history_size: usize,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Random pool of this size, drawn as `bench` draws it for `--seed`.
    #[arg(
        long,
        conflicts_with = "enumerate",
        required_unless_present = "enumerate"
    )]
    pool_size: Option<usize>,
    /// Every feasible configuration.
    #[arg(long)]
    enumerate: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "oracle.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct HistoryArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = DEFAULT_HISTORY_SIZE)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    parallel::configure_workers();
    let res = match cli.command {
        Command::Tune(a) => tune(a),
        Command::Bench(a) => bench(a),
        Command::Sweep(a) => sweep(a),
        Command::Oracle(a) => oracle(a),
        Command::History(a) => history(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_workflow(path: &Path) -> Result<Workflow> {
    Workflow::load(path).with_context(|| format!("loading workflow {}", path.display()))
}

fn describe(workflow: &Workflow, c: &Configuration) -> String {
    workflow
        .parameter_names()
        .iter()
        .zip(c.values())
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn tune(a: TuneArgs) -> Result<()> {
    let workflow = load_workflow(&a.spec)?;
    let metric = a.metric.unwrap_or(workflow.metric);
    let history = if a.history.is_empty() {
        HistoricalData::load(&workflow)?
    } else {
        HistoricalData::load_files(&workflow, &a.history)?
    };
    let budget = BudgetSpec {
        m: a.m,
        m_r: a.m_r,
        m_0: a.m_0,
        iters: a.iters,
        history: !history.is_empty(),
        metric: Some(metric),
    }
    .budget()?;

    let synth = match a.executor {
        ExecutorArg::Synth => Some(
            workflow
                .synthetic_executor()
                .context("--executor synth needs a synthetic section in the workflow file")?,
        ),
        ExecutorArg::External => None,
    };
    let pool_table = a
        .pool_table
        .as_deref()
        .map(OracleTable::read_csv)
        .transpose()?;
    let pool = match &pool_table {
        Some(t) => SamplePool::from_configurations(
            t.rows().iter().map(|r| r.configuration.clone()).collect(),
        )?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, "pool"));
            SamplePool::build(&workflow.space, a.pool_size, &mut rng)?
        }
    };
    let live: Box<dyn Executor> = match &synth {
        Some(s) => Box::new(s.with_seed(derive_seed(a.seed, "noise"))),
        None => Box::new(workflow.external_executor()?),
    };
    let previous = if a.resume && a.out.exists() {
        let t = TuningTrace::read(&a.out)?;
        log::info!("resuming from {} recorded iteration(s)", t.iterations.len());
        Some(t)
    } else {
        None
    };
    let replay = previous.as_ref().map(|t| t.replay(live.as_ref()));
    let executor: &dyn Executor = match &replay {
        Some(r) => r,
        None => live.as_ref(),
    };
    let config = TunerConfig::for_workflow(&workflow).with_metric(metric);
    let req = TuningRequest {
        workflow: &workflow,
        pool: &pool,
        budget,
        history: &history,
        executor,
        config: &config,
        seed: a.seed,
        checkpoint: Some(&a.out),
    };
    let outcome = run(a.algo, &req)?;
    let s = outcome.summary();
    if let Some(p) = &a.model_out {
        s.final_model.save(p)?;
    }

    let best = &s.best.configuration;
    println!("algorithm         {}", a.algo);
    println!("workflow          {}", workflow.name);
    println!("metric            {metric}");
    println!("best index        {}", s.best.pool_index);
    println!("best config       {}", describe(&workflow, best));
    println!("predicted         {}", s.best.predicted);
    if let Some(synth) = &synth {
        let table = brute_force_oracle(synth, pool.configurations())?;
        let p = best_performance_oracle(best, &table, metric)?;
        println!(
            "oracle            {} (x{:.4} of pool optimum)",
            p.value,
            p.normalized.unwrap_or(f64::NAN)
        );
    } else if let Some(table) = &pool_table {
        if let Ok(p) = best_performance_oracle(best, table, metric) {
            println!(
                "table             {} (x{:.4} of table optimum)",
                p.value,
                p.normalized.unwrap_or(f64::NAN)
            );
        }
    }
    match outcome
        .trace
        .workflow_measurements()
        .find(|r| &r.measurement.configuration == best)
    {
        Some(r) => println!(
            "measured          {} (during tuning)",
            r.measurement.metric(metric)
        ),
        None => println!("measured          - (not measured during tuning)"),
    }
    if a.verify {
        let p = best_performance_measured(best, live.as_ref(), metric)?;
        println!("verified          {} (extra run, not charged)", p.value);
    }
    println!(
        "component charge  {} ({} component runs)",
        s.charged_component_runs,
        outcome.trace.component_runs.len()
    );
    println!("workflow runs     {}", s.workflow_runs);
    println!("total charged     {} of {}", s.total_charged, budget.m);
    println!("failed runs       {}", s.failed_runs);
    println!(
        "switch iteration  {}",
        s.switch_iteration
            .map_or("-".to_string(), |i| i.to_string())
    );
    println!("trace             {}", a.out.display());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let (mut plan, base) = ExperimentPlan::load(&a.plan)?;
    if a.repetitions.is_some() {
        plan.repetitions = a.repetitions;
    }
    plan.full |= a.full;
    let out = a
        .out
        .or_else(|| plan.out_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("bench_out"));
    let report = run_bench(&plan, &base)?;
    let files = write_bench_csv(&report, &out)?;
    for agg in report.aggregates.iter().filter(|a| a.kind == "mean") {
        println!(
            "{:<6} m={:<4} m_r={:<3} m_0={:<3} I={:<2} {:<15} normalized {:.4}  mdape_top2 {:.4}",
            agg.algorithm.to_string(),
            agg.budget.m,
            agg.budget.m_r,
            agg.budget.m_0,
            agg.budget.iters,
            agg.metric.to_string(),
            agg.get("normalized").unwrap_or(f64::NAN),
            agg.get("mdape_top2").unwrap_or(f64::NAN),
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let spec = std::path::absolute(&a.spec)?;
    let req = SweepRequest {
        spec,
        algorithm: a.algo,
        base: BudgetSpec {
            m: a.m,
            m_r: a.m_r,
            m_0: a.m_0,
            iters: a.iters,
            history: a.history,
            metric: a.metric,
        },
        param: a.param,
        grid: a.grid,
        repetitions: a.repetitions,
        seed_base: a.seed_base,
        pool_size: a.pool_size,
        history_size: a.history_size,
        noise_sigma: None,
    };
    let (base, rows) = run_sweep(&req, Path::new("."))?;
    write_sweep_csv(&base, &rows, &a.out)?;
    for r in &rows {
        match (&r.warning, r.mean_normalized) {
            (Some(w), _) => println!("{}={:<6} skipped: {w}", r.param, r.value),
            (None, Some(n)) => println!("{}={:<6} normalized {n:.4}", r.param, r.value),
            (None, None) => println!("{}={:<6} -", r.param, r.value),
        }
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let workflow = load_workflow(&a.spec)?;
    let synth = workflow
        .synthetic_executor()
        .context("oracle tables need a synthetic workflow")?;
    let table = match a.pool_size {
        Some(n) if !a.enumerate => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, "pool"));
            let pool = SamplePool::build(&workflow.space, n, &mut rng)?;
            brute_force_oracle(&synth, pool.configurations())?
        }
        _ => brute_force_oracle_space(&synth, &workflow.space)?,
    };
    if table.is_empty() {
        bail!("no feasible configurations");
    }
    table.write_csv(&a.out)?;
    println!(
        "{} rows, optimum execution_time {} computer_time {}",
        table.len(),
        table.optimum(MetricKind::ExecutionTime),
        table.optimum(MetricKind::ComputerTime)
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn history(a: HistoryArgs) -> Result<()> {
    let workflow = load_workflow(&a.spec)?;
    let synth = workflow
        .synthetic_executor()
        .context("history collection needs a synthetic workflow")?
        .with_seed(derive_seed(a.seed, "noise"));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, "history"));
    let data = HistoricalData::collect(&workflow, &synth, a.rows, &mut rng)?;
    for p in data.write_files(&workflow, &a.out_dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
