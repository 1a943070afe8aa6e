//! One-parameter sensitivity sweeps (iterations, m_R share, m_0 share).
//!
//! Each grid value becomes one budget; every budget is run over the same
//! paired repetitions. Grid values that break the budget rules are kept as
//! `skipped` rows carrying the reason.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bench::{bench_cells, prepare_contexts};
use super::{fmt_f64, fmt_opt, BudgetSpec, ExecutorKind, ExperimentPlan};
use crate::error::{Error, Result};
use crate::tuner::{Algorithm, Budget};
use crate::workflow::Workflow;

pub const SWEEP_HEADER: &[&str] = &[
    "param",
    "value",
    "m",
    "m_r",
    "m_0",
    "iters",
    "status",
    "warning",
    "reps",
    "mean_normalized",
    "median_normalized",
    "mean_recall_1",
    "mean_recall_3",
    "mean_mdape_all",
    "mean_mdape_top2",
    "mean_tuning_cost",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "iters")]
    Iters,
    #[serde(rename = "m-r-frac")]
    MRFrac,
    #[serde(rename = "m-0-frac")]
    M0Frac,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Iters => "iters",
            SweepParam::MRFrac => "m-r-frac",
            SweepParam::M0Frac => "m-0-frac",
        }
    }

    /// Budget obtained by setting this parameter to `value` on `base`.
    /// Fractions are of `m`, rounded to the nearest run.
    pub fn apply(self, base: &Budget, value: f64) -> Result<Budget> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidBudget(format!(
                "grid value {value} is not usable"
            )));
        }
        let runs = (value * base.m as f64).round() as usize;
        match self {
            SweepParam::Iters => {
                if value.fract() != 0.0 {
                    return Err(Error::InvalidBudget(format!(
                        "iters = {value} is not whole"
                    )));
                }
                Budget::new(base.m, base.m_r, base.m_0, value as usize)
            }
            SweepParam::MRFrac => Budget::new(base.m, runs, base.m_0, base.iters),
            SweepParam::M0Frac => Budget::new(base.m, base.m_r, runs, base.iters),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iters" => Ok(SweepParam::Iters),
            "m-r-frac" => Ok(SweepParam::MRFrac),
            "m-0-frac" => Ok(SweepParam::M0Frac),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep parameter {other:?} (iters, m-r-frac, m-0-frac)"
            ))),
        }
    }
}

/// Iterations 1..=10; fractions from 5% of m up to the share left by the
/// other fixed budget, in 5% steps.
pub fn default_grid(param: SweepParam, base: &Budget) -> Vec<f64> {
    let upper = match param {
        SweepParam::Iters => return (1..=10).map(|i| i as f64).collect(),
        SweepParam::MRFrac => (base.m - base.m_0.min(base.m)) as f64 / base.m as f64,
        SweepParam::M0Frac => (base.m - base.m_r.min(base.m)) as f64 / base.m as f64,
    };
    (1..)
        .map(|k| (5 * k) as f64 / 100.0)
        .take_while(|f| *f <= upper + 1e-9)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub spec: PathBuf,
    pub algorithm: Algorithm,
    pub base: BudgetSpec,
    pub param: SweepParam,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    pub repetitions: usize,
    #[serde(default)]
    pub seed_base: u64,
    pub pool_size: usize,
    pub history_size: usize,
    #[serde(default)]
    pub noise_sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub budget: Option<Budget>,
    pub warning: Option<String>,
    pub reps: usize,
    pub mean_normalized: Option<f64>,
    pub median_normalized: Option<f64>,
    pub mean_recall_1: Option<f64>,
    pub mean_recall_3: Option<f64>,
    pub mean_mdape_all: Option<f64>,
    pub mean_mdape_top2: Option<f64>,
    pub mean_tuning_cost: Option<f64>,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.warning.is_none()
    }

    fn record(&self, base: &Budget) -> Vec<String> {
        let b = self.budget.unwrap_or(*base);
        let (m_r, m_0, iters) = match (self.budget, self.param) {
            (Some(b), _) => (b.m_r, b.m_0, b.iters),
            (None, SweepParam::MRFrac) => {
                ((self.value * b.m as f64).round() as usize, b.m_0, b.iters)
            }
            (None, SweepParam::M0Frac) => {
                (b.m_r, (self.value * b.m as f64).round() as usize, b.iters)
            }
            (None, SweepParam::Iters) => (b.m_r, b.m_0, self.value.max(0.0) as usize),
        };
        let mut r = vec![
            self.param.to_string(),
            fmt_f64(self.value),
            b.m.to_string(),
            m_r.to_string(),
            m_0.to_string(),
            iters.to_string(),
            if self.is_ok() { "ok" } else { "skipped" }.to_string(),
            self.warning.clone().unwrap_or_default(),
            self.reps.to_string(),
        ];
        r.extend(
            [
                self.mean_normalized,
                self.median_normalized,
                self.mean_recall_1,
                self.mean_recall_3,
                self.mean_mdape_all,
                self.mean_mdape_top2,
                self.mean_tuning_cost,
            ]
            .into_iter()
            .map(fmt_opt),
        );
        r
    }
}

pub fn run_sweep(req: &SweepRequest, base_dir: &Path) -> Result<(Budget, Vec<SweepRow>)> {
    let base = req.base.budget()?;
    let grid = req
        .grid
        .clone()
        .unwrap_or_else(|| default_grid(req.param, &base));
    let plan = ExperimentPlan {
        spec: req.spec.clone(),
        algorithms: vec![req.algorithm],
        budgets: vec![req.base.clone()],
        repetitions: Some(req.repetitions),
        full: false,
        seed_base: req.seed_base,
        pool_size: req.pool_size,
        history_size: if req.base.history {
            req.history_size
        } else {
            0
        },
        noise_sigma: req.noise_sigma,
        executor: ExecutorKind::Synth,
        pool_table: None,
        out_dir: None,
    };
    plan.validate()?;
    let workflow = Workflow::load(&base_dir.join(&req.spec))?;
    let contexts = prepare_contexts(&plan, &workflow, base_dir)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &value in &grid {
        let budget = match req.param.apply(&base, value) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("sweep {} = {value}: skipped ({e})", req.param);
                rows.push(SweepRow {
                    param: req.param,
                    value,
                    budget: None,
                    warning: Some(e.to_string()),
                    reps: 0,
                    mean_normalized: None,
                    median_normalized: None,
                    mean_recall_1: None,
                    mean_recall_3: None,
                    mean_mdape_all: None,
                    mean_mdape_top2: None,
                    mean_tuning_cost: None,
                });
                continue;
            }
        };
        let spec = BudgetSpec {
            m: budget.m,
            m_r: Some(budget.m_r),
            m_0: Some(budget.m_0),
            iters: budget.iters,
            history: req.base.history,
            metric: req.base.metric,
        };
        let report = bench_cells(&workflow, &contexts, &[req.algorithm], &[spec])?;
        let mean = report.aggregates.iter().find(|a| a.kind == "mean");
        let median = report.aggregates.iter().find(|a| a.kind == "median");
        let get = |a: Option<&super::AggregateRow>, col: &str| a.and_then(|a| a.get(col));
        rows.push(SweepRow {
            param: req.param,
            value,
            budget: Some(budget),
            warning: None,
            reps: report.rows.len(),
            mean_normalized: get(mean, "normalized"),
            median_normalized: get(median, "normalized"),
            mean_recall_1: get(mean, "recall_1"),
            mean_recall_3: get(mean, "recall_3"),
            mean_mdape_all: get(mean, "mdape_all"),
            mean_mdape_top2: get(mean, "mdape_top2"),
            mean_tuning_cost: get(mean, "tuning_cost"),
        });
    }
    Ok((base, rows))
}

pub fn write_sweep_csv(base: &Budget, rows: &[SweepRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record(r.record(base))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
