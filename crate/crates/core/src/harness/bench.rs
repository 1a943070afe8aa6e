//! Paired-seed benchmark over algorithms x budgets.
//!
//! `bench.csv` holds one `seed` row per (budget, algorithm, repetition),
//! followed for each (budget, algorithm) by a `mean` and a `median` row;
//! `bench_summary.csv` holds only the aggregate rows. Columns are
//! [`BENCH_HEADER`]. Aggregate rows leave per-seed identifiers empty.
//! Budget columns give the requested cell budget; `charged` is what the
//! algorithm actually spent.
//!
//! * `best_value`: true metric value of the best predicted configuration
//! * `normalized`: `best_value / pool optimum` (>= 1, lower is better)
//! * `recall_n`: model top-n vs true top-n over the whole pool, percent
//! * `mdape_all`, `mdape_top2`: median APE over the pool and over its best
//!   `ceil(0.02 * pool)` configurations
//! * `tuning_cost`: summed metric of every measured run (component runs
//!   included); `improvement`: reference value minus `best_value`;
//!   `least_uses`: `tuning_cost / improvement`, empty when it never pays off

use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{
    derive_seed, fmt_opt, prepare_rep, prepare_rep_table, BudgetSpec, ExecutorKind, ExperimentPlan,
    RepContext,
};
use crate::combiner::{MetricKind, Scorer};
use crate::error::{Error, Result};
use crate::executor::OracleTable;
use crate::metrics::{least_number_of_uses, mdape, recall_score, Payoff};
use crate::parallel;
use crate::tuner::{
    run, Algorithm, Budget, HistoricalData, TunerConfig, TuningOutcome, TuningRequest,
};
use crate::workflow::Workflow;

pub const RECALL_DEPTH: usize = 10;
pub const TOP_FRACTION: f64 = 0.02;

pub const BENCH_HEADER: &[&str] = &[
    "row_kind",
    "algorithm",
    "m",
    "m_r",
    "m_0",
    "iters",
    "history",
    "metric",
    "rep",
    "seed",
    "pool_fingerprint",
    "best_index",
    "best_value",
    "normalized",
    "recall_1",
    "recall_2",
    "recall_3",
    "recall_4",
    "recall_5",
    "recall_6",
    "recall_7",
    "recall_8",
    "recall_9",
    "recall_10",
    "mdape_all",
    "mdape_top2",
    "switch_iteration",
    "workflow_runs",
    "charged",
    "failed_runs",
    "tuning_cost",
    "improvement",
    "least_uses",
];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    pub budget: Budget,
    pub history: bool,
    pub metric: MetricKind,
    pub rep: usize,
    pub seed: u64,
    pub pool_fingerprint: String,
    pub best_index: usize,
    pub best_value: f64,
    pub normalized: f64,
    pub recalls: Vec<f64>,
    pub mdape_all: f64,
    pub mdape_top2: f64,
    pub switch_iteration: Option<usize>,
    pub workflow_runs: usize,
    pub charged: usize,
    pub failed_runs: usize,
    pub tuning_cost: f64,
    pub improvement: Option<f64>,
    pub least_uses: Option<f64>,
}

impl BenchRow {
    /// Numeric columns from `best_value` on, for aggregation.
    fn numbers(&self) -> Vec<Option<f64>> {
        let mut v = vec![Some(self.best_value), Some(self.normalized)];
        v.extend(self.recalls.iter().map(|&r| Some(r)));
        v.extend([
            Some(self.mdape_all),
            Some(self.mdape_top2),
            self.switch_iteration.map(|s| s as f64),
            Some(self.workflow_runs as f64),
            Some(self.charged as f64),
            Some(self.failed_runs as f64),
            Some(self.tuning_cost),
            self.improvement,
            self.least_uses,
        ]);
        v
    }

    fn record(&self) -> Vec<String> {
        let mut r = vec![
            "seed".to_string(),
            self.algorithm.to_string(),
            self.budget.m.to_string(),
            self.budget.m_r.to_string(),
            self.budget.m_0.to_string(),
            self.budget.iters.to_string(),
            self.history.to_string(),
            self.metric.to_string(),
            self.rep.to_string(),
            self.seed.to_string(),
            self.pool_fingerprint.clone(),
            self.best_index.to_string(),
        ];
        r.extend(self.numbers().into_iter().map(fmt_opt));
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    /// `mean` or `median`.
    pub kind: &'static str,
    pub algorithm: Algorithm,
    pub budget: Budget,
    pub history: bool,
    pub metric: MetricKind,
    pub values: Vec<Option<f64>>,
}

impl AggregateRow {
    /// Column value by header name.
    pub fn get(&self, column: &str) -> Option<f64> {
        let i = BENCH_HEADER.iter().position(|h| *h == column)?;
        self.values.get(i.checked_sub(12)?).copied().flatten()
    }

    fn record(&self) -> Vec<String> {
        let mut r = vec![
            self.kind.to_string(),
            self.algorithm.to_string(),
            self.budget.m.to_string(),
            self.budget.m_r.to_string(),
            self.budget.m_0.to_string(),
            self.budget.iters.to_string(),
            self.history.to_string(),
            self.metric.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ];
        r.extend(self.values.iter().copied().map(fmt_opt));
        r
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn aggregate(rows: &[&BenchRow]) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let cols: Vec<Vec<Option<f64>>> = rows.iter().map(|r| r.numbers()).collect();
    let width = cols.first().map_or(0, Vec::len);
    let mut means = Vec::with_capacity(width);
    let mut medians = Vec::with_capacity(width);
    for c in 0..width {
        let vals: Vec<f64> = cols.iter().filter_map(|r| r[c]).collect();
        means.push((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64));
        medians.push(median(vals));
    }
    (means, medians)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl BenchReport {
    pub fn rows_for(
        &self,
        algorithm: Algorithm,
        budget: &Budget,
        metric: MetricKind,
    ) -> Vec<&BenchRow> {
        self.rows
            .iter()
            .filter(|r| r.algorithm == algorithm && r.budget == *budget && r.metric == metric)
            .collect()
    }

    pub fn aggregate_for(
        &self,
        kind: &str,
        algorithm: Algorithm,
        budget: &Budget,
        metric: MetricKind,
    ) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| {
            a.kind == kind && a.algorithm == algorithm && a.budget == *budget && a.metric == metric
        })
    }
}

fn oriented(v: Vec<f64>, lower: bool) -> Vec<f64> {
    if lower {
        v
    } else {
        v.into_iter().map(|x| -x).collect()
    }
}

/// Score a finished run against the repetition's ground truth.
pub fn evaluate_outcome(
    outcome: &TuningOutcome,
    ctx: &RepContext,
    metric: MetricKind,
    history: bool,
) -> Result<BenchRow> {
    let oracle: &OracleTable = &ctx.oracle;
    let lower = metric.lower_is_better();
    let preds = parallel::map(ctx.pool.configurations(), |c| outcome.model.score(c))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<f64> = ctx
        .pool
        .configurations()
        .iter()
        .map(|c| {
            oracle
                .row_of(c)
                .map(|r| r.metric(metric))
                .ok_or_else(|| Error::Structure(format!("{c} missing from the oracle table")))
        })
        .collect::<Result<_>>()?;
    let p_o = oriented(preds.clone(), lower);
    let t_o = oriented(truth.clone(), lower);
    let recalls = (1..=RECALL_DEPTH.min(truth.len()))
        .map(|n| recall_score(n, &p_o, &t_o))
        .collect::<Result<Vec<_>>>()?;
    let mdape_all = mdape(&truth, &preds)?;
    let k = ((TOP_FRACTION * truth.len() as f64).ceil() as usize).max(1);
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| t_o[a].total_cmp(&t_o[b]).then(a.cmp(&b)));
    order.truncate(k);
    let top_truth: Vec<f64> = order.iter().map(|&i| truth[i]).collect();
    let top_pred: Vec<f64> = order.iter().map(|&i| preds[i]).collect();
    let mdape_top2 = mdape(&top_truth, &top_pred)?;

    let summary = outcome.summary();
    let best_value = truth[summary.best.pool_index];
    let optimum = oracle.optimum(metric);
    let normalized = if lower {
        best_value / optimum
    } else {
        optimum / best_value
    };
    let cost_metric = |m: &crate::executor::Measurement| match metric {
        MetricKind::ComputerTime => m.computer_time,
        _ => m.execution_time,
    };
    let tuning_cost: f64 = outcome
        .trace
        .iterations
        .iter()
        .flat_map(|it| &it.measurements)
        .filter(|r| r.measurement.is_ok())
        .map(|r| cost_metric(&r.measurement))
        .chain(
            outcome
                .trace
                .component_runs
                .iter()
                .filter(|r| r.measurement.is_ok())
                .map(|r| cost_metric(&r.measurement)),
        )
        .sum();
    let improvement = ctx.reference.map(|(exec, comp)| {
        let reference = match metric {
            MetricKind::ComputerTime => comp,
            MetricKind::ExecutionTime => exec,
            MetricKind::Throughput => 1.0 / exec,
        };
        if lower {
            reference - best_value
        } else {
            best_value - reference
        }
    });
    let least_uses = match improvement {
        Some(d) if tuning_cost > 0.0 => match least_number_of_uses(tuning_cost, d)? {
            Payoff::After { uses, .. } => Some(uses),
            Payoff::Never => None,
        },
        _ => None,
    };
    Ok(BenchRow {
        algorithm: outcome.trace.header.algorithm,
        budget: outcome.trace.header.budget,
        history,
        metric,
        rep: ctx.rep,
        seed: ctx.seed,
        pool_fingerprint: ctx.pool.fingerprint(),
        best_index: summary.best.pool_index,
        best_value,
        normalized,
        recalls,
        mdape_all,
        mdape_top2,
        switch_iteration: summary.switch_iteration,
        workflow_runs: summary.workflow_runs,
        charged: summary.total_charged,
        failed_runs: summary.failed_runs,
        tuning_cost,
        improvement,
        least_uses,
    })
}

pub(crate) fn prepare_contexts(
    plan: &ExperimentPlan,
    workflow: &Workflow,
    base_dir: &Path,
) -> Result<Vec<RepContext>> {
    let reps = plan.repetitions();
    let seeds: Vec<(usize, u64)> = (0..reps).map(|r| (r, plan.seed_base + r as u64)).collect();
    match plan.executor {
        ExecutorKind::Synth => {
            let mut base = workflow.synthetic_executor()?;
            if let Some(sigma) = plan.noise_sigma {
                base = base.with_noise(sigma);
            }
            parallel::map(&seeds, |&(rep, seed)| {
                prepare_rep(
                    workflow,
                    &base,
                    rep,
                    seed,
                    plan.pool_size,
                    plan.history_size,
                )
            })
            .into_iter()
            .collect()
        }
        ExecutorKind::External => {
            let path = plan
                .pool_table
                .as_ref()
                .ok_or_else(|| Error::Config("external benchmarks need a pool table".into()))?;
            let table = Arc::new(OracleTable::read_csv(&base_dir.join(path))?);
            let history = Arc::new(HistoricalData::load(workflow)?);
            seeds
                .iter()
                .map(|&(rep, seed)| prepare_rep_table(workflow, &table, &history, rep, seed))
                .collect()
        }
    }
}

/// Run every (budget, algorithm, repetition) cell. Cells run in parallel;
/// rows come back in (budget, algorithm, repetition) order.
pub fn run_bench(plan: &ExperimentPlan, base_dir: &Path) -> Result<BenchReport> {
    plan.validate()?;
    let workflow = Workflow::load(&base_dir.join(&plan.spec))?;
    let contexts = prepare_contexts(plan, &workflow, base_dir)?;
    bench_cells(&workflow, &contexts, &plan.algorithms, &plan.budgets)
}

pub(crate) fn bench_cells(
    workflow: &Workflow,
    contexts: &[RepContext],
    algorithms: &[Algorithm],
    budgets: &[BudgetSpec],
) -> Result<BenchReport> {
    let mut cells = Vec::new();
    for spec in budgets {
        for &alg in algorithms {
            for rep in 0..contexts.len() {
                cells.push((alg, rep, spec));
            }
        }
    }
    let results = parallel::map(&cells, |&(alg, rep, spec)| -> Result<BenchRow> {
        let ctx = &contexts[rep];
        let metric = spec.metric.unwrap_or(workflow.metric);
        let config = TunerConfig::for_workflow(workflow).with_metric(metric);
        let budget = spec.budget()?;
        let empty = HistoricalData::empty(workflow.components.len());
        let history = if spec.history {
            ctx.history.as_ref()
        } else {
            &empty
        };
        let req = TuningRequest {
            workflow,
            pool: &ctx.pool,
            budget,
            history,
            executor: ctx.executor.as_ref(),
            config: &config,
            seed: derive_seed(ctx.tuner_seed(), alg.as_str()),
            checkpoint: None,
        };
        let outcome = run(alg, &req)?;
        let mut row = evaluate_outcome(&outcome, ctx, metric, spec.history)?;
        // key rows by the requested cell budget, not the algorithm's effective one
        row.budget = budget;
        Ok(row)
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut aggregates = Vec::new();
    for chunk in rows.chunks(contexts.len().max(1)) {
        let refs: Vec<&BenchRow> = chunk.iter().collect();
        let (means, medians) = aggregate(&refs);
        let first = refs[0];
        for (kind, values) in [("mean", means), ("median", medians)] {
            aggregates.push(AggregateRow {
                kind,
                algorithm: first.algorithm,
                budget: first.budget,
                history: first.history,
                metric: first.metric,
                values,
            });
        }
    }
    Ok(BenchReport { rows, aggregates })
}

/// Write `bench.csv` and `bench_summary.csv` into `dir`.
pub fn write_bench_csv(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let full = dir.join("bench.csv");
    let summary = dir.join("bench_summary.csv");
    let mut w = csv::Writer::from_path(&full)?;
    let mut s = csv::Writer::from_path(&summary)?;
    w.write_record(BENCH_HEADER)?;
    s.write_record(BENCH_HEADER)?;
    let per_cell = if report.aggregates.is_empty() {
        report.rows.len().max(1)
    } else {
        report.rows.len() / (report.aggregates.len() / 2)
    };
    for (chunk, aggs) in report
        .rows
        .chunks(per_cell)
        .zip(report.aggregates.chunks(2))
    {
        for r in chunk {
            w.write_record(r.record())?;
        }
        for a in aggs {
            w.write_record(a.record())?;
            s.write_record(a.record())?;
        }
    }
    w.flush().map_err(|e| Error::io(&full, e))?;
    s.flush().map_err(|e| Error::io(&summary, e))?;
    Ok(vec![full, summary])
}
