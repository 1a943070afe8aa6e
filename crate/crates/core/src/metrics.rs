//! Evaluation metrics: top-n recall, MdAPE, least number of uses, and the
//! true performance of a tuner's best predicted configuration.

use serde::{Deserialize, Serialize};

use crate::combiner::MetricKind;
use crate::error::{Error, Result};
use crate::executor::{Executor, Measurement, OracleTable};
use crate::space::Configuration;

/// Indices of the `n` smallest values; ties go to the lower index.
pub fn top_n(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Percentage of the model's top-`n` that are also in the measured top-`n`.
/// Both slices hold lower-is-better values aligned by configuration.
pub fn recall_score(n: usize, predicted: &[f64], measured: &[f64]) -> Result<f64> {
    if predicted.len() != measured.len() {
        return Err(Error::Structure(format!(
            "{} predictions for {} measurements",
            predicted.len(),
            measured.len()
        )));
    }
    if n == 0 || n > predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "recall n={n} outside 1..={}",
            predicted.len()
        )));
    }
    let mut in_measured = vec![false; measured.len()];
    for i in top_n(measured, n) {
        in_measured[i] = true;
    }
    let hits = top_n(predicted, n)
        .into_iter()
        .filter(|&i| in_measured[i])
        .count();
    Ok(hits as f64 / n as f64 * 100.0)
}

/// Sum of recall scores for `n = 1..=max_n`, truncated to the set size.
pub fn summed_recall(max_n: usize, predicted: &[f64], measured: &[f64]) -> Result<f64> {
    let upto = max_n.min(predicted.len());
    (1..=upto)
        .map(|n| recall_score(n, predicted, measured))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEvaluation {
    pub predicted: Vec<f64>,
    pub measured: Vec<f64>,
    /// `recalls[k]` is the recall score for `n = k + 1`.
    pub recalls: Vec<f64>,
}

impl RankedEvaluation {
    pub fn new(predicted: Vec<f64>, measured: Vec<f64>, max_n: usize) -> Result<Self> {
        let upto = max_n.min(predicted.len());
        let recalls = (1..=upto)
            .map(|n| recall_score(n, &predicted, &measured))
            .collect::<Result<_>>()?;
        Ok(Self {
            predicted,
            measured,
            recalls,
        })
    }
}

/// Absolute percentage error `|(actual - predicted) / actual|` (a fraction).
pub fn ape(actual: f64, predicted: f64) -> Result<f64> {
    if actual == 0.0 {
        return Err(Error::InvalidArgument(
            "APE undefined for zero actual".into(),
        ));
    }
    Ok(((actual - predicted) / actual).abs())
}

/// Median APE; even counts average the two central values.
pub fn mdape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::Structure("mdape inputs differ in length".into()));
    }
    if actual.is_empty() {
        return Err(Error::InvalidArgument("mdape of an empty set".into()));
    }
    let mut errs = actual
        .iter()
        .zip(predicted)
        .map(|(&a, &p)| ape(a, p))
        .collect::<Result<Vec<_>>>()?;
    errs.sort_by(f64::total_cmp);
    let n = errs.len();
    Ok(if n % 2 == 1 {
        errs[n / 2]
    } else {
        0.5 * (errs[n / 2 - 1] + errs[n / 2])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "payoff", rename_all = "snake_case")]
pub enum Payoff {
    /// Tuning is repaid after `uses` runs (`runs` = ceil).
    After { uses: f64, runs: u64 },
    /// The tuned configuration is no better than the reference.
    Never,
}

/// `N = cost / improvement`.
pub fn least_number_of_uses(cost: f64, improvement: f64) -> Result<Payoff> {
    if !(cost > 0.0) || !cost.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cost must be positive, got {cost}"
        )));
    }
    if !(improvement > 0.0) {
        return Ok(Payoff::Never);
    }
    let uses = cost / improvement;
    Ok(Payoff::After {
        uses,
        runs: uses.ceil() as u64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffReport {
    pub cost: f64,
    pub improvement: f64,
    pub payoff: Payoff,
}

impl PayoffReport {
    pub fn new(cost: f64, improvement: f64) -> Result<Self> {
        Ok(Self {
            cost,
            improvement,
            payoff: least_number_of_uses(cost, improvement)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPerformance {
    pub value: f64,
    /// `value` divided by the pool's true optimum, when an oracle exists.
    pub normalized: Option<f64>,
    /// The extra run used to verify the configuration. Never charged
    /// against the tuning budget.
    pub verification: Option<Measurement>,
}

/// Look up the true value of `best` in a ground-truth table.
pub fn best_performance_oracle(
    best: &Configuration,
    oracle: &OracleTable,
    metric: MetricKind,
) -> Result<BestPerformance> {
    let row = oracle
        .row_of(best)
        .ok_or_else(|| Error::InvalidArgument(format!("{best} is not in the oracle table")))?;
    let value = row.metric(metric);
    Ok(BestPerformance {
        value,
        normalized: Some(value / oracle.optimum(metric)),
        verification: None,
    })
}

/// Measure `best` once more with a live executor.
pub fn best_performance_measured(
    best: &Configuration,
    executor: &dyn Executor,
    metric: MetricKind,
) -> Result<BestPerformance> {
    let m = executor.measure_workflow(best);
    if !m.is_ok() {
        return Err(Error::Measurement(format!(
            "verification run of {best} failed: {}",
            m.diagnostic.clone().unwrap_or_default()
        )));
    }
    Ok(BestPerformance {
        value: m.metric(metric),
        normalized: None,
        verification: Some(m),
    })
}
