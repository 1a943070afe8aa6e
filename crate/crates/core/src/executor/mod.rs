//! Measurement backends.

mod external;
mod oracle;
mod store;
mod synthetic;

pub use external::{external_measure, parse_result_line, substitute, ExternalExecutor, ResultLine};
pub use oracle::{brute_force_oracle, brute_force_oracle_space, OracleRow, OracleTable};
pub use store::{import_history, AppendOutcome, MeasurementStore, Record};
pub use synthetic::{
    synth_component_time, FixedComponentLoad, SyntheticComponent, SyntheticExecutor,
    SyntheticWorkflowSpec,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::combiner::MetricKind;
use crate::error::{Error, Result};
use crate::parallel;
use crate::space::Configuration;

pub const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    External,
    History,
}

/// One observed run of a workflow (or of a single component).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub configuration: Configuration,
    /// Wall-clock seconds per component, including unconfigurable ones.
    pub component_times: Vec<f64>,
    /// Seconds; the maximum of `component_times`.
    pub execution_time: f64,
    /// Core-hours: execution time x nodes x cores per node / 3600.
    pub computer_time: f64,
    pub nodes: u32,
    pub cores_per_node: u32,
    pub status: Status,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

pub fn computer_time(execution_time: f64, nodes: u32, cores_per_node: u32) -> f64 {
    execution_time * nodes as f64 * cores_per_node as f64 / SECONDS_PER_HOUR
}

impl Measurement {
    /// Successful measurement; execution and computer time are derived from
    /// the component times.
    pub fn from_components(
        configuration: Configuration,
        component_times: Vec<f64>,
        nodes: u32,
        cores_per_node: u32,
        provenance: Provenance,
    ) -> Result<Self> {
        if component_times.is_empty() {
            return Err(Error::Measurement("no component times".into()));
        }
        if component_times.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::Measurement(format!(
                "component times must be finite and positive: {component_times:?}"
            )));
        }
        let execution_time = component_times.iter().copied().fold(f64::MIN, f64::max);
        Ok(Self {
            configuration,
            computer_time: computer_time(execution_time, nodes, cores_per_node),
            component_times,
            execution_time,
            nodes,
            cores_per_node,
            status: Status::Ok,
            provenance,
            diagnostic: None,
        })
    }

    pub fn failed(
        configuration: Configuration,
        provenance: Provenance,
        diagnostic: impl Into<String>,
    ) -> Self {
        Self {
            configuration,
            component_times: Vec::new(),
            execution_time: 0.0,
            computer_time: 0.0,
            nodes: 0,
            cores_per_node: 0,
            status: Status::Failed,
            provenance,
            diagnostic: Some(diagnostic.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn metric(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::ExecutionTime => self.execution_time,
            MetricKind::ComputerTime => self.computer_time,
            MetricKind::Throughput => 1.0 / self.execution_time,
        }
    }
}

/// A measurement backend. Implementations must be reentrant: batches may be
/// measured concurrently and results are keyed by configuration.
pub trait Executor: Send + Sync {
    fn measure_workflow(&self, config: &Configuration) -> Measurement;

    /// Run one configurable component alone with a component-space
    /// configuration.
    fn measure_component(&self, component: usize, config: &Configuration) -> Measurement;

    fn measure_batch(&self, configs: &[Configuration]) -> Vec<Measurement> {
        parallel::map(configs, |c| self.measure_workflow(c))
    }
}

/// Serves recorded measurements first and defers to `inner` for anything
/// not recorded. Used to resume a tuning run from a trace checkpoint.
pub struct ReplayExecutor<'a> {
    inner: &'a dyn Executor,
    workflow: HashMap<Configuration, Measurement>,
    components: HashMap<(usize, Configuration), Measurement>,
}

impl<'a> ReplayExecutor<'a> {
    pub fn new(inner: &'a dyn Executor) -> Self {
        Self {
            inner,
            workflow: HashMap::new(),
            components: HashMap::new(),
        }
    }

    pub fn record_workflow(&mut self, m: Measurement) {
        self.workflow.insert(m.configuration.clone(), m);
    }

    pub fn record_component(&mut self, component: usize, m: Measurement) {
        self.components
            .insert((component, m.configuration.clone()), m);
    }

    pub fn recorded(&self) -> usize {
        self.workflow.len() + self.components.len()
    }
}

impl Executor for ReplayExecutor<'_> {
    fn measure_workflow(&self, config: &Configuration) -> Measurement {
        match self.workflow.get(config) {
            Some(m) => m.clone(),
            None => self.inner.measure_workflow(config),
        }
    }

    fn measure_component(&self, component: usize, config: &Configuration) -> Measurement {
        match self.components.get(&(component, config.clone())) {
            Some(m) => m.clone(),
            None => self.inner.measure_component(component, config),
        }
    }
}
