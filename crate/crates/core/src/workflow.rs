//! Workflow description files.
//!
//! A workflow file is JSON:
//!
//! ```json
//! {
//!   "name": "sim-ana",
//!   "metric": "execution_time",
//!   "cores_per_node": 36,
//!   "components": [
//!     {"name": "sim",
//!      "parameters": [{"name": "sim_procs", "range": {"lo": 2, "hi": 64, "step": 2}},
//!                     {"name": "sim_ppn", "list": [1, 2, 4, 8, 16, 32]}],
//!      "history_file": "sim_history.jsonl",
//!      "command": "./sim.sh {sim_procs} {sim_ppn}",
//!      "synthetic": {"serial_work": 2000, "alpha": 0.9, "overhead": 0.02,
//!                    "comm": 0.3, "procs": "sim_procs", "ppn": "sim_ppn"}}
//!   ],
//!   "constraints": [{"kind": "product_le", "params": ["sim_ppn", "sim_threads"], "bound": 36}],
//!   "fixed_components": [{"name": "io", "execution_time": 4.0, "nodes": 1}],
//!   "synthetic": {"coupling": 20.0, "noise_sigma": 0.05, "seed": 1},
//!   "external": {"command": "./run.sh {sim_procs} {sim_ppn}", "timeout_s": 600},
//!   "reference": [32, 16]
//! }
//! ```
//!
//! Workflow parameters are the union of component parameters in component
//! order; a name used by several components is one shared parameter. A
//! constraint applies to a component's own space when every name it reads
//! belongs to that component.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::combiner::MetricKind;
use crate::error::{Error, Result};
use crate::executor::{
    ExternalExecutor, FixedComponentLoad, SyntheticComponent, SyntheticExecutor,
    SyntheticWorkflowSpec,
};
use crate::space::{
    validate_bindings, ComponentBinding, Configuration, ConstraintDef, Parameter, ParameterSpace,
};
use crate::surrogate::SurrogateHyperparams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeDef {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<RangeDef>,
}

impl ParameterDef {
    pub fn build(&self) -> Result<Parameter> {
        match (&self.list, &self.range) {
            (Some(values), None) => Parameter::list(&self.name, values.clone()),
            (None, Some(r)) => Parameter::range(&self.name, r.lo, r.hi, r.step),
            _ => Err(Error::InvalidParameter {
                name: self.name.clone(),
                reason: "give exactly one of `list` or `range`".into(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDef {
    pub name: String,
    pub parameters: Vec<ParameterDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticComponent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedComponentDef {
    pub name: String,
    pub execution_time: f64,
    #[serde(default)]
    pub nodes: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalDef {
    pub command: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Allow a batch to run concurrently.
    #[serde(default)]
    pub concurrent: bool,
}

fn default_timeout() -> f64 {
    3600.0
}

fn default_cores_per_node() -> u32 {
    36
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowFile {
    pub name: String,
    pub metric: MetricKind,
    #[serde(default = "default_cores_per_node")]
    pub cores_per_node: u32,
    pub components: Vec<ComponentDef>,
    #[serde(default)]
    pub constraints: Vec<ConstraintDef>,
    #[serde(default)]
    pub fixed_components: Vec<FixedComponentDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticWorkflowSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalDef>,
    /// Expert configuration used as the payoff baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
    /// Hyperparameters of the whole-workflow model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateHyperparams>,
    /// Hyperparameters of the component models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_surrogate: Option<SurrogateHyperparams>,
}

#[derive(Clone, Debug)]
pub struct Component {
    pub name: String,
    pub space: ParameterSpace,
    pub binding: ComponentBinding,
    pub history_file: Option<PathBuf>,
    pub command: Option<String>,
    pub synthetic: Option<SyntheticComponent>,
}

#[derive(Clone, Debug)]
pub struct Workflow {
    pub name: String,
    pub metric: MetricKind,
    pub cores_per_node: u32,
    pub space: ParameterSpace,
    pub components: Vec<Component>,
    pub fixed: Vec<FixedComponentDef>,
    pub synthetic: Option<SyntheticWorkflowSpec>,
    pub external: Option<ExternalDef>,
    pub reference: Option<Configuration>,
    pub surrogate: SurrogateHyperparams,
    pub component_surrogate: SurrogateHyperparams,
}

impl Workflow {
    pub fn from_file_def(def: WorkflowFile, base_dir: &Path) -> Result<Self> {
        if def.components.is_empty() {
            return Err(Error::Config(
                "workflow has no configurable components".into(),
            ));
        }
        let mut params: Vec<Parameter> = Vec::new();
        let mut components = Vec::new();
        for (j, cdef) in def.components.iter().enumerate() {
            let mut local = Vec::new();
            let mut indices = Vec::new();
            for pdef in &cdef.parameters {
                let p = pdef.build()?;
                let idx = match params.iter().position(|q| q.name() == p.name()) {
                    Some(i) if params[i] == p => i,
                    Some(_) => {
                        return Err(Error::Config(format!(
                            "shared parameter `{}` has different domains",
                            p.name()
                        )))
                    }
                    None => {
                        params.push(p.clone());
                        params.len() - 1
                    }
                };
                local.push(p);
                indices.push(idx);
            }
            let own: Vec<ConstraintDef> = def
                .constraints
                .iter()
                .filter(|k| {
                    k.operands()
                        .is_ok_and(|ops| ops.iter().all(|o| local.iter().any(|p| p.name() == o)))
                })
                .cloned()
                .collect();
            components.push(Component {
                name: cdef.name.clone(),
                space: ParameterSpace::new(local, &own)?,
                binding: ComponentBinding::new(j, indices),
                history_file: cdef.history_file.as_ref().map(|f| base_dir.join(f)),
                command: cdef.command.clone(),
                synthetic: cdef.synthetic.clone(),
            });
        }
        let space = ParameterSpace::new(params, &def.constraints)?;
        let bindings: Vec<ComponentBinding> =
            components.iter().map(|c| c.binding.clone()).collect();
        validate_bindings(&bindings, space.dimension())?;
        for f in &def.fixed_components {
            if !(f.execution_time.is_finite() && f.execution_time > 0.0) {
                return Err(Error::Config(format!(
                    "fixed component `{}` needs a positive execution time",
                    f.name
                )));
            }
        }
        let reference = match def.reference {
            Some(v) => {
                let c = Configuration::new(v);
                space.validate(&c)?;
                Some(c)
            }
            None => None,
        };
        let surrogate = def.surrogate.unwrap_or_default();
        surrogate.validate()?;
        let component_surrogate = def.component_surrogate.unwrap_or_default();
        component_surrogate.validate()?;
        Ok(Self {
            name: def.name,
            metric: def.metric,
            cores_per_node: def.cores_per_node,
            space,
            components,
            fixed: def.fixed_components,
            synthetic: def.synthetic,
            external: def.external,
            reference,
            surrogate,
            component_surrogate,
        })
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let def: WorkflowFile =
            serde_json::from_str(text).map_err(|e| Error::json("workflow file", e))?;
        Self::from_file_def(def, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn bindings(&self) -> Vec<ComponentBinding> {
        self.components.iter().map(|c| c.binding.clone()).collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.space
            .parameters()
            .iter()
            .map(|p| p.name().to_string())
            .collect()
    }

    /// Constant low-fidelity contributions of unconfigurable components.
    pub fn fixed_offsets(&self, metric: MetricKind) -> Vec<f64> {
        self.fixed
            .iter()
            .map(|f| match metric {
                MetricKind::ExecutionTime => f.execution_time,
                MetricKind::ComputerTime => {
                    crate::executor::computer_time(f.execution_time, f.nodes, self.cores_per_node)
                }
                MetricKind::Throughput => 1.0 / f.execution_time,
            })
            .collect()
    }

    pub fn synthetic_executor(&self) -> Result<SyntheticExecutor> {
        let spec = self.synthetic.as_ref().ok_or_else(|| {
            Error::Config(format!("workflow `{}` has no synthetic section", self.name))
        })?;
        let comps = self
            .components
            .iter()
            .map(|c| {
                let s = c.synthetic.clone().ok_or_else(|| {
                    Error::Config(format!("component `{}` has no synthetic surface", c.name))
                })?;
                Ok((s, &c.space, c.binding.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let fixed = self
            .fixed
            .iter()
            .map(|f| FixedComponentLoad {
                time: f.execution_time,
                nodes: f.nodes,
            })
            .collect();
        SyntheticExecutor::new(spec, comps, fixed, self.cores_per_node)
    }

    pub fn external_executor(&self) -> Result<ExternalExecutor> {
        let ext = self.external.as_ref().ok_or_else(|| {
            Error::Config(format!("workflow `{}` has no external section", self.name))
        })?;
        if !(ext.timeout_s > 0.0) {
            return Err(Error::Config("external timeout must be positive".into()));
        }
        let comps = self
            .components
            .iter()
            .map(|c| {
                let names = c
                    .space
                    .parameters()
                    .iter()
                    .map(|p| p.name().to_string())
                    .collect();
                (c.command.clone(), names)
            })
            .collect();
        ExternalExecutor::new(
            ext.command.clone(),
            self.parameter_names(),
            comps,
            Duration::from_secs_f64(ext.timeout_s),
            ext.concurrent,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{
      "name": "t", "metric": "execution_time",
      "components": [
        {"name": "a", "parameters": [
           {"name": "p", "range": {"lo": 1, "hi": 8, "step": 1}},
           {"name": "ppn", "list": [1, 2, 4]}],
         "synthetic": {"serial_work": 10, "alpha": 1, "overhead": 0.1, "comm": 0,
                       "procs": "p", "ppn": "ppn"}},
        {"name": "b", "parameters": [
           {"name": "q", "range": {"lo": 1, "hi": 4, "step": 1}},
           {"name": "ppn", "list": [1, 2, 4]}],
         "synthetic": {"serial_work": 5, "alpha": 1, "overhead": 0.1, "comm": 0,
                       "procs": "q", "ppn": "ppn"}}
      ],
      "constraints": [{"kind": "product_le", "params": ["p", "ppn"], "bound": 16},
                      {"kind": "expression", "expr": "p + q <= 10"}],
      "fixed_components": [{"name": "io", "execution_time": 0.5, "nodes": 1}],
      "synthetic": {"coupling": 1.0, "noise_sigma": 0.0, "seed": 3},
      "reference": [4, 2, 2]
    }"#;

    #[test]
    fn shared_parameters_and_constraint_scoping() {
        let w = Workflow::from_json(TWO, Path::new(".")).unwrap();
        assert_eq!(w.parameter_names(), vec!["p", "ppn", "q"]);
        assert_eq!(w.components[1].binding.indices, vec![2, 1]);
        assert_eq!(w.components[0].space.constraints().len(), 1);
        assert_eq!(w.components[1].space.constraints().len(), 0);
        assert_eq!(w.space.constraints().len(), 2);
        assert_eq!(w.fixed_offsets(MetricKind::ExecutionTime), vec![0.5]);
        let exec = w.synthetic_executor().unwrap();
        let m = exec
            .true_measurement(&Configuration::new(vec![4.0, 2.0, 2.0]))
            .unwrap();
        assert_eq!(m.component_times.len(), 3);
        assert_eq!(m.nodes, 2 + 1 + 1);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_reference() {
        let bad = TWO.replace("\"metric\"", "\"metrc\": 1, \"metric\"");
        assert!(Workflow::from_json(&bad, Path::new(".")).is_err());
        let bad = TWO.replace("[4, 2, 2]", "[9, 4, 2]");
        assert!(Workflow::from_json(&bad, Path::new(".")).is_err());
        assert!(Workflow::from_json(TWO, Path::new("."))
            .unwrap()
            .external_executor()
            .is_err());
    }
}
