//! Low-fidelity workflow model: component-model predictions combined by a
//! fixed elementary function.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::space::{project, ComponentBinding, Configuration, SamplePool};
use crate::surrogate::SurrogateModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Wall-clock seconds of the slowest component.
    ExecutionTime,
    /// Core-hours: execution time x nodes x cores per node / 3600.
    ComputerTime,
    Throughput,
}

impl MetricKind {
    pub fn lower_is_better(self) -> bool {
        !matches!(self, MetricKind::Throughput)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::ExecutionTime => "execution_time",
            MetricKind::ComputerTime => "computer_time",
            MetricKind::Throughput => "throughput",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "execution_time" | "exec" => Ok(MetricKind::ExecutionTime),
            "computer_time" | "comp" => Ok(MetricKind::ComputerTime),
            "throughput" => Ok(MetricKind::Throughput),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinationFunction {
    Max,
    Min,
    Sum,
}

/// Bottleneck metrics combine with max (time) or min (throughput);
/// aggregate resource metrics combine with sum.
pub fn choose_function(metric: MetricKind) -> CombinationFunction {
    match metric {
        MetricKind::ExecutionTime => CombinationFunction::Max,
        MetricKind::ComputerTime => CombinationFunction::Sum,
        MetricKind::Throughput => CombinationFunction::Min,
    }
}

pub fn choose_function_by_name(metric: &str) -> Result<CombinationFunction> {
    metric.parse().map(choose_function)
}

impl CombinationFunction {
    /// Left fold in argument order, so results are reproducible bitwise.
    pub fn apply(self, values: impl IntoIterator<Item = f64>) -> Option<f64> {
        let mut it = values.into_iter();
        let first = it.next()?;
        Some(match self {
            CombinationFunction::Max => it.fold(first, f64::max),
            CombinationFunction::Min => it.fold(first, f64::min),
            CombinationFunction::Sum => it.fold(first, |a, b| a + b),
        })
    }
}

/// Anything that assigns a metric estimate to a workflow configuration.
pub trait Scorer: Send + Sync {
    fn score(&self, c: &Configuration) -> Result<f64>;
}

impl Scorer for SurrogateModel {
    fn score(&self, c: &Configuration) -> Result<f64> {
        self.predict(c.values())
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, c: &Configuration) -> Result<f64> {
        (**self).score(c)
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn score(&self, c: &Configuration) -> Result<f64> {
        (**self).score(c)
    }
}

#[derive(Clone, Debug)]
pub struct LowFidelityModel {
    models: Vec<SurrogateModel>,
    bindings: Vec<ComponentBinding>,
    function: CombinationFunction,
    offsets: Vec<f64>,
}

impl LowFidelityModel {
    /// `offsets` are constant contributions of unconfigurable components.
    pub fn new(
        models: Vec<SurrogateModel>,
        bindings: Vec<ComponentBinding>,
        function: CombinationFunction,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        if models.len() != bindings.len() {
            return Err(Error::Structure(format!(
                "{} component models for {} bindings",
                models.len(),
                bindings.len()
            )));
        }
        if models.is_empty() && offsets.is_empty() {
            return Err(Error::Structure("low-fidelity model has no inputs".into()));
        }
        for (m, b) in models.iter().zip(&bindings) {
            if m.feature_count() != b.indices.len() {
                return Err(Error::Structure(format!(
                    "component {} model takes {} features, binding supplies {}",
                    b.component,
                    m.feature_count(),
                    b.indices.len()
                )));
            }
        }
        Ok(Self {
            models,
            bindings,
            function,
            offsets,
        })
    }

    pub fn function(&self) -> CombinationFunction {
        self.function
    }

    pub fn models(&self) -> &[SurrogateModel] {
        &self.models
    }

    pub fn bindings(&self) -> &[ComponentBinding] {
        &self.bindings
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn component_predictions(&self, c: &Configuration) -> Result<Vec<f64>> {
        self.models
            .iter()
            .zip(&self.bindings)
            .map(|(m, b)| m.predict(project(c, b)?.values()))
            .collect()
    }

    pub fn score(&self, c: &Configuration) -> Result<f64> {
        let preds = self.component_predictions(c)?;
        Ok(self
            .function
            .apply(preds.into_iter().chain(self.offsets.iter().copied()))
            .expect("validated non-empty"))
    }
}

impl Scorer for LowFidelityModel {
    fn score(&self, c: &Configuration) -> Result<f64> {
        LowFidelityModel::score(self, c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub index: usize,
    pub score: f64,
}

/// Score `indices` of `pool` and sort best-first. Ties keep ascending pool
/// index. Scoring runs in parallel when available; the output is identical to
/// sequential evaluation.
pub fn rank_indices<S: Scorer + ?Sized>(
    scorer: &S,
    pool: &SamplePool,
    indices: &[usize],
    lower_is_better: bool,
) -> Result<Vec<Ranked>> {
    let scores = parallel::map(indices, |&i| scorer.score(pool.get(i)));
    let mut ranked = indices
        .iter()
        .zip(scores)
        .map(|(&index, s)| s.map(|score| Ranked { index, score }))
        .collect::<Result<Vec<_>>>()?;
    sort_ranked(&mut ranked, lower_is_better);
    Ok(ranked)
}

pub(crate) fn sort_ranked(ranked: &mut [Ranked], lower_is_better: bool) {
    ranked.sort_by(|a, b| {
        let o = if lower_is_better {
            a.score.total_cmp(&b.score)
        } else {
            b.score.total_cmp(&a.score)
        };
        o.then(a.index.cmp(&b.index))
    });
}

/// Rank the unconsumed entries of `pool` by low-fidelity score, ascending.
pub fn rank_pool(ml: &LowFidelityModel, pool: &SamplePool) -> Result<Vec<Ranked>> {
    let lower = ml.function != CombinationFunction::Min;
    rank_indices(ml, pool, &pool.available_indices(), lower)
}
