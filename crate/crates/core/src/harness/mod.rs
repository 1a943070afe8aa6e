//! Experiment orchestration: paired-seed benchmarks, parameter sweeps,
//! oracle tables.

mod bench;
mod sweep;

pub use bench::{
    evaluate_outcome, run_bench, write_bench_csv, AggregateRow, BenchReport, BenchRow, BENCH_HEADER,
};
pub use sweep::{
    default_grid, run_sweep, write_sweep_csv, SweepParam, SweepRequest, SweepRow, SWEEP_HEADER,
};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::combiner::MetricKind;
use crate::error::{Error, Result};
use crate::executor::{brute_force_oracle, Executor, OracleTable, SyntheticExecutor};
use crate::space::SamplePool;
use crate::tuner::{Algorithm, Budget, HistoricalData};
use crate::workflow::Workflow;

/// The bundled two-component synthetic workflow.
pub const EXAMPLE_WORKFLOW: &str = include_str!("../../workflows/sim_analysis.json");

pub fn example_workflow() -> Workflow {
    Workflow::from_json(EXAMPLE_WORKFLOW, Path::new(".")).expect("bundled workflow is valid")
}

pub const QUICK_REPETITIONS: usize = 30;
pub const FULL_REPETITIONS: usize = 100;
pub const DEFAULT_POOL_SIZE: usize = 2000;
pub const DEFAULT_HISTORY_SIZE: usize = 500;

/// Independent seed for a named purpose within one repetition.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// One budget row of a plan. Unset `m_r` / `m_0` follow
/// [`Budget::recommended`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub m: usize,
    #[serde(default)]
    pub m_r: Option<usize>,
    #[serde(default)]
    pub m_0: Option<usize>,
    #[serde(default = "default_iters")]
    pub iters: usize,
    /// Give component-model algorithms free component histories.
    #[serde(default)]
    pub history: bool,
    #[serde(default)]
    pub metric: Option<MetricKind>,
}

fn default_iters() -> usize {
    3
}

impl BudgetSpec {
    pub fn budget(&self) -> Result<Budget> {
        let rec = Budget::recommended(self.m, self.history, self.iters);
        let (m_r, m_0) = match (self.m_r, self.m_0, rec) {
            (Some(r), Some(z), _) => (r, z),
            (r, z, Ok(b)) => (r.unwrap_or(b.m_r), z.unwrap_or(b.m_0)),
            (_, _, Err(e)) => return Err(e),
        };
        Budget::new(self.m, m_r, m_0, self.iters)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    Synth,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Workflow file, relative to the plan file.
    pub spec: PathBuf,
    pub algorithms: Vec<Algorithm>,
    pub budgets: Vec<BudgetSpec>,
    #[serde(default)]
    pub repetitions: Option<usize>,
    /// Use the full repetition count when `repetitions` is unset.
    #[serde(default)]
    pub full: bool,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    #[serde(default = "default_history")]
    pub history_size: usize,
    /// Overrides the workflow's noise level.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    #[serde(default = "default_executor")]
    pub executor: ExecutorKind,
    /// Pre-measured pool (oracle CSV); required with the external executor.
    #[serde(default)]
    pub pool_table: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_pool() -> usize {
    DEFAULT_POOL_SIZE
}

fn default_history() -> usize {
    DEFAULT_HISTORY_SIZE
}

fn default_executor() -> ExecutorKind {
    ExecutorKind::Synth
}

impl ExperimentPlan {
    pub fn repetitions(&self) -> usize {
        self.repetitions.unwrap_or(if self.full {
            FULL_REPETITIONS
        } else {
            QUICK_REPETITIONS
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions() == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if self.algorithms.is_empty() || self.budgets.is_empty() {
            return Err(Error::Config("plan needs algorithms and budgets".into()));
        }
        if self.pool_size == 0 {
            return Err(Error::Config("pool_size must be >= 1".into()));
        }
        if self.executor == ExecutorKind::External && self.pool_table.is_none() {
            return Err(Error::Config(
                "external executor needs a measured pool table for ground truth".into(),
            ));
        }
        for b in &self.budgets {
            b.budget()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: Self = serde_json::from_str(&text).map_err(|e| Error::json("plan file", e))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((plan, base))
    }
}

/// Everything shared by the algorithms of one repetition: pool, ground
/// truth, executor, component history, and the reference configuration's
/// true performance per metric.
pub struct RepContext {
    pub rep: usize,
    pub seed: u64,
    pub pool: SamplePool,
    pub oracle: Arc<OracleTable>,
    pub executor: Arc<dyn Executor>,
    pub history: Arc<HistoricalData>,
    pub reference: Option<(f64, f64)>,
}

impl RepContext {
    pub fn tuner_seed(&self) -> u64 {
        derive_seed(self.seed, "tuner")
    }
}

pub fn prepare_rep(
    workflow: &Workflow,
    base: &SyntheticExecutor,
    rep: usize,
    seed: u64,
    pool_size: usize,
    history_size: usize,
) -> Result<RepContext> {
    let mut pool_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pool"));
    let pool = SamplePool::build(&workflow.space, pool_size, &mut pool_rng)?;
    let oracle = brute_force_oracle(base, pool.configurations())?;
    let executor = base.with_seed(derive_seed(seed, "noise"));
    let history = if history_size > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "history"));
        HistoricalData::collect(workflow, &executor as &dyn Executor, history_size, &mut rng)?
    } else {
        HistoricalData::empty(workflow.components.len())
    };
    let reference = match &workflow.reference {
        Some(c) => {
            let m = base.true_measurement(c)?;
            Some((m.execution_time, m.computer_time))
        }
        None => None,
    };
    Ok(RepContext {
        rep,
        seed,
        pool,
        oracle: Arc::new(oracle),
        executor: Arc::new(executor),
        history: Arc::new(history),
        reference,
    })
}

/// Repetition over a measured pool table: the pool is the table, runs are
/// answered from it, and component data comes from history files only.
pub fn prepare_rep_table(
    workflow: &Workflow,
    table: &Arc<OracleTable>,
    history: &Arc<HistoricalData>,
    rep: usize,
    seed: u64,
) -> Result<RepContext> {
    let pool = SamplePool::from_configurations(
        table
            .rows()
            .iter()
            .map(|r| r.configuration.clone())
            .collect(),
    )?;
    let reference = workflow
        .reference
        .as_ref()
        .and_then(|c| table.row_of(c))
        .map(|r| (r.execution_time, r.computer_time));
    Ok(RepContext {
        rep,
        seed,
        pool,
        oracle: Arc::clone(table),
        executor: Arc::clone(table) as Arc<dyn Executor>,
        history: Arc::clone(history),
        reference,
    })
}

/// Format a float for CSV: shortest round-trip form, dot separator.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
