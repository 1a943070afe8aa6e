//! Batch selection, measurement with replacement, and the shared
//! active-learning loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trace::{
    BestPredicted, Checkpoint, ComponentRun, Evaluator, IterationRecord, MeasuredRow, Selected,
    Source, SwitchDecision, TraceHeader, TraceLine, TraceSummary, TuningTrace,
};
use super::{Algorithm, Budget, TuningOutcome, TuningRequest};
use crate::combiner::{rank_indices, LowFidelityModel, MetricKind, Scorer};
use crate::error::{Error, Result};
use crate::executor::{Executor, Measurement};
use crate::metrics::summed_recall;
use crate::space::{Configuration, SamplePool};
use crate::surrogate::{fit, SurrogateHyperparams, SurrogateModel, TrainingSet};

/// A whole-workflow model over the original configuration features plus the
/// component-model predictions.
#[derive(Clone, Debug)]
pub struct CombiningModel {
    pub low: LowFidelityModel,
    pub model: SurrogateModel,
}

impl CombiningModel {
    pub fn features(low: &LowFidelityModel, c: &Configuration) -> Result<Vec<f64>> {
        let mut f = c.values().to_vec();
        f.extend(low.component_predictions(c)?);
        Ok(f)
    }
}

impl Scorer for CombiningModel {
    fn score(&self, c: &Configuration) -> Result<f64> {
        self.model.predict(&Self::features(&self.low, c)?)
    }
}

#[derive(Clone, Debug)]
pub enum TunedModel {
    Surrogate(SurrogateModel),
    Combining(CombiningModel),
}

impl TunedModel {
    /// The trained whole-workflow surrogate.
    pub fn surrogate(&self) -> &SurrogateModel {
        match self {
            TunedModel::Surrogate(m) => m,
            TunedModel::Combining(c) => &c.model,
        }
    }
}

impl Scorer for TunedModel {
    fn score(&self, c: &Configuration) -> Result<f64> {
        match self {
            TunedModel::Surrogate(m) => m.score(c),
            TunedModel::Combining(m) => m.score(c),
        }
    }
}

/// Trains the whole-workflow model from `(configuration, metric)` rows.
pub trait ModelTrainer {
    type Model: Scorer + Clone;

    fn train(&self, rows: &[(Configuration, f64)]) -> Result<Self::Model>;
}

pub(crate) struct SurrogateTrainer<'h> {
    hp: &'h SurrogateHyperparams,
}

impl<'h> SurrogateTrainer<'h> {
    pub fn new(hp: &'h SurrogateHyperparams) -> Self {
        Self { hp }
    }
}

impl ModelTrainer for SurrogateTrainer<'_> {
    type Model = SurrogateModel;

    fn train(&self, rows: &[(Configuration, f64)]) -> Result<SurrogateModel> {
        let set = TrainingSet::from_rows(
            rows.iter()
                .map(|(c, y)| (c.values().to_vec(), *y))
                .collect(),
        )?;
        fit(&set, self.hp)
    }
}

/// Pool indices in preference order, consumed lazily.
pub(crate) struct Ranking {
    order: Vec<usize>,
    cursor: usize,
}

impl Ranking {
    pub fn new(order: Vec<usize>) -> Self {
        Self { order, cursor: 0 }
    }

    pub fn score<S: Scorer + ?Sized>(scorer: &S, pool: &SamplePool, lower: bool) -> Result<Self> {
        let ranked = rank_indices(scorer, pool, &pool.available_indices(), lower)?;
        Ok(Self::new(ranked.into_iter().map(|r| r.index).collect()))
    }

    fn next(&mut self, pool: &SamplePool) -> Option<usize> {
        while self.cursor < self.order.len() {
            let i = self.order[self.cursor];
            self.cursor += 1;
            if !pool.is_consumed(i) {
                return Some(i);
            }
        }
        None
    }
}

#[derive(Default)]
pub(crate) struct Round {
    selected: Vec<Selected>,
    pending: Vec<(usize, Source)>,
    measurements: Vec<MeasuredRow>,
    /// Successful measurements of this round: (pool index, metric value).
    pub ok: Vec<(usize, f64)>,
}

pub(crate) struct Session<'a> {
    pub pool: SamplePool,
    pub rng: ChaCha8Rng,
    pub metric: MetricKind,
    executor: &'a dyn Executor,
    header: TraceHeader,
    component_runs: Vec<ComponentRun>,
    iterations: Vec<IterationRecord>,
    measured: Vec<(usize, Measurement)>,
    failures: usize,
    max_failures: usize,
    checkpoint: Checkpoint,
    switch_iteration: Option<usize>,
}

impl<'a> Session<'a> {
    pub fn start(req: &TuningRequest<'a>, algorithm: Algorithm, budget: Budget) -> Result<Self> {
        if req.pool.is_empty() {
            return Err(Error::PoolExhausted("empty pool".into()));
        }
        if budget.workflow_runs() > req.pool.len() {
            return Err(Error::InvalidBudget(format!(
                "{} workflow runs requested from a pool of {}",
                budget.workflow_runs(),
                req.pool.len()
            )));
        }
        let header = TraceHeader {
            algorithm,
            workflow: req.workflow.name.clone(),
            space: req.workflow.space.fingerprint(),
            metric: req.config.metric,
            seed: req.seed,
            budget,
            pool_size: req.pool.len(),
            pool_fingerprint: req.pool.fingerprint(),
            history_rows: req.history.row_counts(req.workflow.components.len()),
        };
        let mut checkpoint = Checkpoint::new(req.checkpoint)?;
        checkpoint.write(&TraceLine::Header(header.clone()))?;
        Ok(Self {
            pool: req.pool.reset(),
            rng: ChaCha8Rng::seed_from_u64(req.seed),
            metric: req.config.metric,
            executor: req.executor,
            header,
            component_runs: Vec::new(),
            iterations: Vec::new(),
            measured: Vec::new(),
            failures: 0,
            max_failures: req.config.max_failures,
            checkpoint,
            switch_iteration: None,
        })
    }

    pub fn lower_is_better(&self) -> bool {
        self.metric.lower_is_better()
    }

    pub fn record_component_runs(&mut self, runs: Vec<ComponentRun>) -> Result<()> {
        if !runs.is_empty() {
            self.checkpoint
                .write(&TraceLine::ComponentRuns { runs: runs.clone() })?;
        }
        self.component_runs = runs;
        Ok(())
    }

    fn take_random(&mut self) -> Result<usize> {
        self.pool
            .take_random(&mut self.rng)
            .ok_or_else(|| Error::PoolExhausted("no unmeasured configurations left".into()))
    }

    fn take_ranked(&mut self, ranking: &mut Ranking) -> Result<usize> {
        let i = ranking
            .next(&self.pool)
            .ok_or_else(|| Error::PoolExhausted("ranking exhausted".into()))?;
        self.pool.consume(i)?;
        Ok(i)
    }

    pub fn select_random(&mut self, round: &mut Round, k: usize) -> Result<()> {
        for _ in 0..k {
            let i = self.take_random()?;
            round.push(i, Source::Random);
        }
        Ok(())
    }

    pub fn select_ranked(
        &mut self,
        round: &mut Round,
        ranking: &mut Ranking,
        k: usize,
    ) -> Result<()> {
        for _ in 0..k {
            let i = self.take_ranked(ranking)?;
            round.push(i, Source::Model);
        }
        Ok(())
    }

    /// Measure everything pending. A failed configuration is discarded and
    /// replaced by the next one its selection rule yields.
    pub fn measure(&mut self, round: &mut Round, mut ranking: Option<&mut Ranking>) -> Result<()> {
        while !round.pending.is_empty() {
            let pending = std::mem::take(&mut round.pending);
            let configs: Vec<Configuration> = pending
                .iter()
                .map(|&(i, _)| self.pool.get(i).clone())
                .collect();
            let ms = self.executor.measure_batch(&configs);
            for ((index, source), m) in pending.into_iter().zip(ms) {
                if m.is_ok() {
                    round.ok.push((index, m.metric(self.metric)));
                    self.measured.push((index, m.clone()));
                } else {
                    self.failures += 1;
                    log::warn!(
                        "run of {} failed: {}",
                        m.configuration,
                        m.diagnostic.as_deref().unwrap_or("")
                    );
                    if self.failures > self.max_failures {
                        return Err(Error::Measurement(format!(
                            "{} failed workflow runs",
                            self.failures
                        )));
                    }
                    let replacement = match (source, ranking.as_deref_mut()) {
                        (Source::Model, Some(r)) => self.take_ranked(r)?,
                        _ => self.take_random()?,
                    };
                    round.push(replacement, source);
                }
                round.measurements.push(MeasuredRow {
                    pool_index: index,
                    measurement: m,
                });
            }
        }
        Ok(())
    }

    /// Cumulative successful measurements as training rows.
    pub fn training_rows(&self) -> Vec<(Configuration, f64)> {
        self.measured
            .iter()
            .map(|(i, m)| (self.pool.get(*i).clone(), m.metric(self.metric)))
            .collect()
    }

    pub fn measured(&self) -> &[(usize, Measurement)] {
        &self.measured
    }

    pub fn commit(
        &mut self,
        round: Round,
        evaluator: Evaluator,
        switch: Option<SwitchDecision>,
    ) -> Result<()> {
        let iteration = self.iterations.len() + 1;
        if switch.is_some_and(|s| s.switch) {
            self.switch_iteration = Some(iteration);
        }
        let rec = IterationRecord {
            iteration,
            evaluator,
            selected: round.selected,
            measurements: round.measurements,
            switch,
        };
        self.checkpoint.write(&TraceLine::Iteration(rec.clone()))?;
        self.iterations.push(rec);
        Ok(())
    }
}

impl Round {
    fn push(&mut self, index: usize, source: Source) {
        self.selected.push(Selected {
            pool_index: index,
            source,
        });
        self.pending.push((index, source));
    }
}

fn oriented(values: Vec<f64>, lower: bool) -> Vec<f64> {
    if lower {
        values
    } else {
        values.into_iter().map(|v| -v).collect()
    }
}

/// Compare summed top-1..3 recalls of the two models on one measured batch.
/// Switch when the high-fidelity sum is at least the low-fidelity sum.
pub fn detect_switch(
    high: &dyn Scorer,
    low: &dyn Scorer,
    batch: &[Configuration],
    measured: &[f64],
    lower_is_better: bool,
) -> Result<SwitchDecision> {
    if batch.len() != measured.len() {
        return Err(Error::Structure(
            "batch and measurements differ in length".into(),
        ));
    }
    if batch.is_empty() {
        return Ok(SwitchDecision {
            switch: false,
            s_high: 0.0,
            s_low: 0.0,
        });
    }
    let predict =
        |s: &dyn Scorer| -> Result<Vec<f64>> { batch.iter().map(|c| s.score(c)).collect() };
    let truth = oriented(measured.to_vec(), lower_is_better);
    let s_high = summed_recall(3, &oriented(predict(high)?, lower_is_better), &truth)?;
    let s_low = summed_recall(3, &oriented(predict(low)?, lower_is_better), &truth)?;
    Ok(SwitchDecision {
        switch: s_high >= s_low,
        s_high,
        s_low,
    })
}

/// Best prediction over the whole pool, consumed entries included. Ties go
/// to the lower pool index.
pub fn best_predicted<S: Scorer + ?Sized>(
    model: &S,
    pool: &SamplePool,
    lower_is_better: bool,
) -> Result<BestPredicted> {
    let all: Vec<usize> = (0..pool.len()).collect();
    let top = rank_indices(model, pool, &all, lower_is_better)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::PoolExhausted("empty pool".into()))?;
    Ok(BestPredicted {
        pool_index: top.index,
        configuration: pool.get(top.index).clone(),
        predicted: top.score,
    })
}

/// Rounds of measure, (maybe) switch, refit, rank, select. With `low`, the
/// first round's model-selected configurations come from the low-fidelity
/// ranking and switch detection runs until the high-fidelity model wins;
/// without it the first round is all random and the refit model selects
/// every later batch.
/// `initial_high` stands in for the high-fidelity model before the first
/// refit. Without one, switch detection starts once a model is trained.
pub(crate) fn active_loop<T: ModelTrainer>(
    s: &mut Session,
    low: Option<&dyn Scorer>,
    trainer: &T,
    m_0: usize,
    sizes: &[usize],
    initial_high: Option<T::Model>,
) -> Result<T::Model> {
    let lower = s.lower_is_better();
    let mut round = Round::default();
    s.select_random(&mut round, m_0)?;
    let (mut ranking, mut evaluator) = match low {
        Some(ml) => {
            let mut r = Ranking::score(ml, &s.pool, lower)?;
            s.select_ranked(&mut round, &mut r, sizes[0])?;
            (Some(r), Evaluator::LowFidelity)
        }
        None => {
            s.select_random(&mut round, sizes[0])?;
            (None, Evaluator::Random)
        }
    };
    let mut high: Option<T::Model> = initial_high;
    for it in 0..sizes.len() {
        s.measure(&mut round, ranking.as_mut())?;
        let mut switch = None;
        if let (Evaluator::LowFidelity, Some(h), Some(ml)) = (evaluator, &high, low) {
            let batch: Vec<Configuration> = round
                .ok
                .iter()
                .map(|&(i, _)| s.pool.get(i).clone())
                .collect();
            let values: Vec<f64> = round.ok.iter().map(|&(_, v)| v).collect();
            switch = Some(detect_switch(h, ml, &batch, &values, lower)?);
        }
        let model = trainer.train(&s.training_rows())?;
        let selected_by = evaluator;
        if switch.is_some_and(|d| d.switch) || evaluator == Evaluator::Random {
            evaluator = Evaluator::HighFidelity;
        }
        s.commit(std::mem::take(&mut round), selected_by, switch)?;
        high = Some(model);
        if it + 1 < sizes.len() {
            let mut r = match (evaluator, low) {
                (Evaluator::LowFidelity, Some(ml)) => Ranking::score(ml, &s.pool, lower)?,
                _ => Ranking::score(high.as_ref().expect("trained"), &s.pool, lower)?,
            };
            s.select_ranked(&mut round, &mut r, sizes[it + 1])?;
            ranking = Some(r);
        }
    }
    Ok(high.expect("at least one iteration"))
}

/// The trace so far, without a summary.
pub(crate) fn into_trace(s: Session) -> TuningTrace {
    TuningTrace {
        header: s.header,
        component_runs: s.component_runs,
        iterations: s.iterations,
        summary: None,
    }
}

pub(crate) fn finish(
    mut s: Session,
    model: TunedModel,
    charged_component_runs: usize,
    component_models: Vec<SurrogateModel>,
) -> Result<TuningOutcome> {
    let best = best_predicted(&model, &s.pool, s.lower_is_better())?;
    let workflow_runs = s.measured.len();
    let summary = TraceSummary {
        switch_iteration: s.switch_iteration,
        charged_component_runs,
        workflow_runs,
        failed_runs: s.failures,
        total_charged: charged_component_runs + workflow_runs,
        best,
        final_model: model.surrogate().clone(),
        component_models,
    };
    s.checkpoint
        .write(&TraceLine::Summary(Box::new(summary.clone())))?;
    Ok(TuningOutcome {
        trace: TuningTrace {
            header: s.header,
            component_runs: s.component_runs,
            iterations: s.iterations,
            summary: Some(summary),
        },
        model,
    })
}
