//! Tuning traces as JSON lines.
//!
//! Line kinds, tagged by `"record"`:
//!
//! * `header`: algorithm, workflow, budget, seed, pool size and fingerprint
//! * `component_runs`: phase-one component measurements (absent when none)
//! * `iteration`: one per tuning round
//! * `summary`: best predicted configuration, charges, and the final models
//!
//! A trace cut short (no summary, possibly a torn last line) is a valid
//! checkpoint for resuming.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Algorithm, Budget};
use crate::combiner::MetricKind;
use crate::error::{Error, Result};
use crate::executor::{Executor, Measurement, ReplayExecutor};
use crate::space::Configuration;
use crate::surrogate::SurrogateModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluator {
    Random,
    LowFidelity,
    HighFidelity,
    Graph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Random,
    Model,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub pool_index: usize,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRow {
    pub pool_index: usize,
    pub measurement: Measurement,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchDecision {
    pub switch: bool,
    pub s_high: f64,
    pub s_low: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Evaluator that chose this round's model-selected configurations.
    pub evaluator: Evaluator,
    /// In selection order, including replacements for failed runs.
    pub selected: Vec<Selected>,
    pub measurements: Vec<MeasuredRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch: Option<SwitchDecision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRun {
    pub component: usize,
    pub measurement: Measurement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub algorithm: Algorithm,
    pub workflow: String,
    pub space: String,
    pub metric: MetricKind,
    pub seed: u64,
    pub budget: Budget,
    pub pool_size: usize,
    pub pool_fingerprint: String,
    /// History rows available per configurable component.
    pub history_rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPredicted {
    pub pool_index: usize,
    pub configuration: Configuration,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub switch_iteration: Option<usize>,
    pub charged_component_runs: usize,
    pub workflow_runs: usize,
    pub failed_runs: usize,
    /// `charged_component_runs + workflow_runs`.
    pub total_charged: usize,
    pub best: BestPredicted,
    pub final_model: SurrogateModel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub component_models: Vec<SurrogateModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    ComponentRuns { runs: Vec<ComponentRun> },
    Iteration(IterationRecord),
    Summary(Box<TraceSummary>),
}

impl TraceLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace lines serialize")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuningTrace {
    pub header: TraceHeader,
    pub component_runs: Vec<ComponentRun>,
    pub iterations: Vec<IterationRecord>,
    pub summary: Option<TraceSummary>,
}

impl TuningTrace {
    pub fn lines(&self) -> Vec<TraceLine> {
        let mut out = vec![TraceLine::Header(self.header.clone())];
        if !self.component_runs.is_empty() {
            out.push(TraceLine::ComponentRuns {
                runs: self.component_runs.clone(),
            });
        }
        out.extend(self.iterations.iter().cloned().map(TraceLine::Iteration));
        if let Some(s) = &self.summary {
            out.push(TraceLine::Summary(Box::new(s.clone())));
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for line in self.lines() {
            s.push_str(&line.to_json());
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Parse a trace. A torn final line is dropped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut header = None;
        let mut component_runs = Vec::new();
        let mut iterations = Vec::new();
        let mut summary = None;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        for (n, line) in lines.iter().enumerate() {
            let parsed = match serde_json::from_str::<TraceLine>(line) {
                Ok(p) => p,
                Err(e) if n + 1 == lines.len() && n > 0 => {
                    log::warn!("dropping torn final trace line: {e}");
                    break;
                }
                Err(e) => return Err(Error::json(format!("trace line {}", n + 1), e)),
            };
            match parsed {
                TraceLine::Header(h) if n == 0 => header = Some(h),
                TraceLine::Header(_) => {
                    return Err(Error::Config(format!(
                        "trace line {}: repeated header",
                        n + 1
                    )))
                }
                TraceLine::ComponentRuns { runs } => component_runs = runs,
                TraceLine::Iteration(it) => iterations.push(it),
                TraceLine::Summary(s) => summary = Some(*s),
            }
        }
        let header = header.ok_or_else(|| Error::Config("trace has no header".into()))?;
        Ok(Self {
            header,
            component_runs,
            iterations,
            summary,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(f).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        Self::parse(&text)
    }

    /// Every successful workflow measurement, in measurement order.
    pub fn workflow_measurements(&self) -> impl Iterator<Item = &MeasuredRow> {
        self.iterations
            .iter()
            .flat_map(|it| it.measurements.iter())
            .filter(|r| r.measurement.is_ok())
    }

    /// An executor that answers from this trace before consulting `inner`.
    pub fn replay<'a>(&self, inner: &'a dyn Executor) -> ReplayExecutor<'a> {
        let mut r = ReplayExecutor::new(inner);
        for run in &self.component_runs {
            r.record_component(run.component, run.measurement.clone());
        }
        for it in &self.iterations {
            for row in &it.measurements {
                r.record_workflow(row.measurement.clone());
            }
        }
        r
    }
}

/// Incremental trace writer; each line is flushed as soon as it is known.
pub(crate) struct Checkpoint {
    file: Option<File>,
}

impl Checkpoint {
    pub fn new(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(File::create(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Ok(Self { file })
    }

    pub fn write(&mut self, line: &TraceLine) -> Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{}", line.to_json())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io("trace checkpoint", e))?;
        }
        Ok(())
    }
}
