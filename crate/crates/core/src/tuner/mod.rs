//! Tuning algorithms over a shared sample pool.

mod engine;
mod trace;

pub use engine::{best_predicted, detect_switch, CombiningModel, ModelTrainer, TunedModel};
pub use trace::{
    BestPredicted, ComponentRun, Evaluator, IterationRecord, MeasuredRow, Selected, Source,
    SwitchDecision, TraceHeader, TraceLine, TraceSummary, TuningTrace,
};

pub(crate) use engine::{
    active_loop, finish, into_trace, Ranking, Round, Session, SurrogateTrainer,
};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_al, run_alph, run_geist_like, run_rs, GeistOptions};
use crate::combiner::{choose_function, LowFidelityModel, MetricKind, Scorer};
use crate::error::{Error, Result};
use crate::executor::{import_history, Executor, Provenance, Record};
use crate::parallel;
use crate::space::{random_configuration, Configuration, SamplePool};
use crate::surrogate::{fit, SurrogateHyperparams, SurrogateModel, TrainingSet};
use crate::workflow::Workflow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ceal,
    Rs,
    Al,
    Geist,
    Alph,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Ceal,
        Algorithm::Rs,
        Algorithm::Al,
        Algorithm::Geist,
        Algorithm::Alph,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ceal => "ceal",
            Algorithm::Rs => "rs",
            Algorithm::Al => "al",
            Algorithm::Geist => "geist",
            Algorithm::Alph => "alph",
        }
    }

    /// Whether the algorithm builds component models first.
    pub fn uses_components(self) -> bool {
        matches!(self, Algorithm::Ceal | Algorithm::Alph)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm `{s}`")))
    }
}

/// Workflow-run budget. Component runs are charged as `m_r` workflow runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Budget {
    pub m: usize,
    pub m_r: usize,
    pub m_0: usize,
    pub iters: usize,
}

impl Budget {
    pub fn new(m: usize, m_r: usize, m_0: usize, iters: usize) -> Result<Self> {
        let b = Self { m, m_r, m_0, iters };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidBudget(msg));
        if self.iters == 0 {
            return bad("at least one iteration is required".into());
        }
        if self.m_r + self.m_0 >= self.m {
            return bad(format!(
                "m_R + m_0 = {} must be below m = {}",
                self.m_r + self.m_0,
                self.m
            ));
        }
        if self.model_selected() < self.iters {
            return bad(format!(
                "{} model-selected runs cannot fill {} iterations",
                self.model_selected(),
                self.iters
            ));
        }
        Ok(())
    }

    /// `m - m_0 - m_R`.
    pub fn model_selected(&self) -> usize {
        self.m - self.m_0 - self.m_r
    }

    /// Workflow runs measured: `m - m_R`.
    pub fn workflow_runs(&self) -> usize {
        self.m - self.m_r
    }

    /// Per-iteration batch sizes; the remainder goes one each to the
    /// earliest iterations.
    pub fn batch_sizes(&self) -> Vec<usize> {
        let base = self.model_selected() / self.iters;
        let rem = self.model_selected() % self.iters;
        (0..self.iters)
            .map(|i| base + usize::from(i < rem))
            .collect()
    }

    /// The same budget with no component runs.
    pub fn without_components(&self) -> Self {
        Self { m_r: 0, ..*self }
    }

    /// Defaults: `m_0` about 25% of `m` with history and 15% without;
    /// `m_R` 0 with history and about 30% of `m` without.
    pub fn recommended(m: usize, has_history: bool, iters: usize) -> Result<Self> {
        let frac = |f: f64| (f * m as f64).round() as usize;
        let (m_r, m_0) = if has_history {
            (0, frac(0.25))
        } else {
            (frac(0.3), frac(0.15))
        };
        Self::new(m, m_r, m_0, iters)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TunerConfig {
    pub metric: MetricKind,
    pub surrogate: SurrogateHyperparams,
    pub component_surrogate: SurrogateHyperparams,
    pub geist: GeistOptions,
    /// Failed runs tolerated before a tuner gives up.
    pub max_failures: usize,
}

impl TunerConfig {
    pub fn for_workflow(w: &Workflow) -> Self {
        Self {
            metric: w.metric,
            surrogate: w.surrogate.clone(),
            component_surrogate: w.component_surrogate.clone(),
            geist: GeistOptions::default(),
            max_failures: 1000,
        }
    }

    pub fn with_metric(mut self, metric: MetricKind) -> Self {
        self.metric = metric;
        self
    }
}

/// Previously measured component runs, per configurable component.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HistoricalData {
    pub components: Vec<Vec<Record>>,
}

impl HistoricalData {
    pub fn empty(components: usize) -> Self {
        Self {
            components: vec![Vec::new(); components],
        }
    }

    pub fn rows(&self, component: usize) -> usize {
        self.components.get(component).map_or(0, Vec::len)
    }

    pub fn row_counts(&self, components: usize) -> Vec<usize> {
        (0..components).map(|j| self.rows(j)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.components.iter().all(Vec::is_empty)
    }

    /// Keep records that are valid in each component space.
    pub fn from_records(workflow: &Workflow, records: Vec<Vec<Record>>) -> Result<Self> {
        if records.len() != workflow.components.len() {
            return Err(Error::Structure(format!(
                "history for {} components, workflow has {}",
                records.len(),
                workflow.components.len()
            )));
        }
        let components = records
            .into_iter()
            .zip(&workflow.components)
            .map(|(recs, comp)| {
                let before = recs.len();
                let kept: Vec<Record> = recs
                    .into_iter()
                    .filter(|r| comp.space.validate(&r.configuration()).is_ok())
                    .collect();
                if kept.len() < before {
                    log::warn!(
                        "component `{}`: {} history record(s) outside its space dropped",
                        comp.name,
                        before - kept.len()
                    );
                }
                kept
            })
            .collect();
        Ok(Self { components })
    }

    /// Read every component's `history_file`, if set.
    pub fn load(workflow: &Workflow) -> Result<Self> {
        let records = workflow
            .components
            .iter()
            .map(|c| match &c.history_file {
                Some(p) => import_history(p, Some(&c.space.fingerprint())).map(|(r, _)| r),
                None => Ok(Vec::new()),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_records(workflow, records)
    }

    /// Read history files given explicitly, one per component.
    pub fn load_files(workflow: &Workflow, files: &[PathBuf]) -> Result<Self> {
        if files.len() != workflow.components.len() {
            return Err(Error::Config(format!(
                "{} history files for {} components",
                files.len(),
                workflow.components.len()
            )));
        }
        let records = workflow
            .components
            .iter()
            .zip(files)
            .map(|(c, p)| import_history(p, Some(&c.space.fingerprint())).map(|(r, _)| r))
            .collect::<Result<Vec<_>>>()?;
        Self::from_records(workflow, records)
    }

    /// Measure `per_component` random configurations of every component.
    pub fn collect<R: Rng + ?Sized>(
        workflow: &Workflow,
        executor: &dyn Executor,
        per_component: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut components = Vec::with_capacity(workflow.components.len());
        for (j, comp) in workflow.components.iter().enumerate() {
            let configs = (0..per_component)
                .map(|_| random_configuration(&comp.space, rng))
                .collect::<Result<Vec<_>>>()?;
            let fp = comp.space.fingerprint();
            let ms = parallel::map(&configs, |c| executor.measure_component(j, c));
            let mut recs = Vec::with_capacity(ms.len());
            for mut m in ms.into_iter().filter(|m| m.is_ok()) {
                m.provenance = Provenance::History;
                recs.push(Record::from_measurement(&fp, &m)?);
            }
            components.push(recs);
        }
        Ok(Self { components })
    }

    /// Write one JSON-lines file per component into `dir`, named after the
    /// component. Returns the paths.
    pub fn write_files(&self, workflow: &Workflow, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for (recs, comp) in self.components.iter().zip(&workflow.components) {
            let path = dir.join(format!("{}_history.jsonl", comp.name));
            let mut text = String::new();
            for r in recs {
                text.push_str(&serde_json::to_string(r).map_err(|e| Error::json("history", e))?);
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

fn record_metric(r: &Record, metric: MetricKind) -> f64 {
    match metric {
        MetricKind::ExecutionTime => r.execution_time,
        MetricKind::ComputerTime => r.computer_time,
        MetricKind::Throughput => 1.0 / r.execution_time,
    }
}

#[derive(Clone, Debug)]
pub struct ComponentPhase {
    pub models: Vec<SurrogateModel>,
    pub runs: Vec<ComponentRun>,
    /// Budget charged: `m_R`, independent of the component count.
    pub charge: usize,
    pub training_rows: Vec<usize>,
}

impl ComponentPhase {
    pub fn low_fidelity(
        &self,
        workflow: &Workflow,
        metric: MetricKind,
    ) -> Result<LowFidelityModel> {
        LowFidelityModel::new(
            self.models.clone(),
            workflow.bindings(),
            choose_function(metric),
            workflow.fixed_offsets(metric),
        )
    }
}

/// Measure `m_r` random configurations of every component, add history, and
/// fit one model per component.
pub fn build_component_models<R: Rng + ?Sized>(
    workflow: &Workflow,
    m_r: usize,
    history: &HistoricalData,
    executor: &dyn Executor,
    rng: &mut R,
    config: &TunerConfig,
) -> Result<ComponentPhase> {
    let mut models = Vec::new();
    let mut runs = Vec::new();
    let mut training_rows = Vec::new();
    for (j, comp) in workflow.components.iter().enumerate() {
        let hist = history.components.get(j).map_or(&[][..], Vec::as_slice);
        if m_r == 0 && hist.is_empty() {
            return Err(Error::Config(format!(
                "component `{}` has no history and no component-run budget",
                comp.name
            )));
        }
        let mut configs: Vec<Configuration> = if m_r > 0 {
            SamplePool::build(&comp.space, m_r, rng)?
                .configurations()
                .to_vec()
        } else {
            Vec::new()
        };
        while configs.len() < m_r {
            configs.push(random_configuration(&comp.space, rng)?);
        }
        let mut set = TrainingSet::new();
        let mut ok = 0;
        let mut failures = 0;
        while ok < m_r {
            let ms = parallel::map(&configs, |c| executor.measure_component(j, c));
            let mut retry = 0;
            for m in ms {
                if m.is_ok() {
                    set.push(m.configuration.values().to_vec(), m.metric(config.metric))?;
                    ok += 1;
                } else {
                    failures += 1;
                    retry += 1;
                    log::warn!(
                        "component `{}` run {} failed: {}",
                        comp.name,
                        m.configuration,
                        m.diagnostic.as_deref().unwrap_or("")
                    );
                }
                runs.push(ComponentRun {
                    component: j,
                    measurement: m,
                });
            }
            if failures > config.max_failures {
                return Err(Error::Measurement(format!(
                    "component `{}`: {failures} failed runs",
                    comp.name
                )));
            }
            configs = (0..retry)
                .map(|_| random_configuration(&comp.space, rng))
                .collect::<Result<_>>()?;
        }
        for r in hist {
            set.push(r.values.clone(), record_metric(r, config.metric))?;
        }
        training_rows.push(set.len());
        models.push(fit(&set, &config.component_surrogate)?);
    }
    Ok(ComponentPhase {
        models,
        runs,
        charge: m_r,
        training_rows,
    })
}

/// Everything one tuning run needs. The pool is copied; consumption does not
/// leak between runs.
pub struct TuningRequest<'a> {
    pub workflow: &'a Workflow,
    pub pool: &'a SamplePool,
    pub budget: Budget,
    pub history: &'a HistoricalData,
    pub executor: &'a dyn Executor,
    pub config: &'a TunerConfig,
    pub seed: u64,
    /// Stream trace lines here as they are produced.
    pub checkpoint: Option<&'a Path>,
}

#[derive(Clone, Debug)]
pub struct TuningOutcome {
    pub trace: TuningTrace,
    pub model: TunedModel,
}

impl TuningOutcome {
    pub fn summary(&self) -> &TraceSummary {
        self.trace
            .summary
            .as_ref()
            .expect("finished runs carry a summary")
    }

    pub fn best_configuration(&self) -> &Configuration {
        &self.summary().best.configuration
    }
}

pub fn run_ceal(req: &TuningRequest) -> Result<TuningOutcome> {
    req.budget.validate()?;
    let mut session = Session::start(req, Algorithm::Ceal, req.budget)?;
    let phase = build_component_models(
        req.workflow,
        req.budget.m_r,
        req.history,
        req.executor,
        &mut session.rng,
        req.config,
    )?;
    session.record_component_runs(phase.runs.clone())?;
    let low = phase.low_fidelity(req.workflow, req.config.metric)?;
    let trainer = SurrogateTrainer::new(&req.config.surrogate);
    let model = active_loop(
        &mut session,
        Some(&low),
        &trainer,
        req.budget.m_0,
        &req.budget.batch_sizes(),
        None,
    )?;
    finish(
        session,
        TunedModel::Surrogate(model),
        phase.charge,
        phase.models,
    )
}

/// The workflow phase of the CEAL loop with caller-supplied models: `low`
/// ranks until the switch, `trainer` refits the high-fidelity model, and
/// `initial_high` (if any) is compared against `low` from the first batch
/// on. Charges nothing for components; `req.budget.m_r` must be 0. Used to
/// script evaluator behaviour; the trace has no summary.
pub fn run_scripted<T: ModelTrainer>(
    req: &TuningRequest,
    low: &dyn Scorer,
    trainer: &T,
    initial_high: Option<T::Model>,
) -> Result<TuningTrace> {
    req.budget.validate()?;
    if req.budget.m_r != 0 {
        return Err(Error::InvalidBudget(
            "scripted runs have no component phase".into(),
        ));
    }
    let mut session = Session::start(req, Algorithm::Ceal, req.budget)?;
    active_loop(
        &mut session,
        Some(low),
        trainer,
        req.budget.m_0,
        &req.budget.batch_sizes(),
        initial_high,
    )?;
    Ok(into_trace(session))
}

/// Run any algorithm by name.
pub fn run(algorithm: Algorithm, req: &TuningRequest) -> Result<TuningOutcome> {
    match algorithm {
        Algorithm::Ceal => run_ceal(req),
        Algorithm::Rs => run_rs(req),
        Algorithm::Al => run_al(req),
        Algorithm::Geist => run_geist_like(req),
        Algorithm::Alph => run_alph(req),
    }
}
