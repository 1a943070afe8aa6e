//! Seedable analytic stand-in for a coupled producer/consumer workflow.
//!
//! Each configurable component follows
//! `t = W / (p * threads)^alpha + o * p + kappa * log2(max(p, 2))`.
//! Coupled pairs pay `lambda * |1/t_a - 1/t_b|` on the slower side, which the
//! per-component models cannot see. Optional lognormal noise is keyed by the
//! seed and the configuration, so results do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Executor, Measurement, Provenance};
use crate::error::{Error, Result};
use crate::space::{project, ComponentBinding, Configuration, ParameterSpace};

/// Surface coefficients for one component. `procs`, `ppn` and `threads`
/// name parameters of the component's own space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticComponent {
    /// Serial work W, in seconds x cores.
    pub serial_work: f64,
    /// Parallel-efficiency exponent in (0, 1].
    pub alpha: f64,
    /// Per-process overhead, seconds.
    pub overhead: f64,
    /// Communication coefficient kappa, seconds.
    pub comm: f64,
    pub procs: String,
    #[serde(default)]
    pub ppn: Option<String>,
    #[serde(default)]
    pub threads: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorkflowSpec {
    /// Coupling penalty lambda, seconds per unit rate mismatch (1/s).
    #[serde(default)]
    pub coupling: f64,
    /// Producer/consumer pairs by component index; defaults to a chain.
    #[serde(default)]
    pub coupling_pairs: Option<Vec<[usize; 2]>>,
    /// Lognormal sigma of the multiplicative per-component noise.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Execution time of one component with `procs` processes of `threads`
/// threads each.
pub fn synth_component_time(spec: &SyntheticComponent, procs: f64, threads: f64) -> Result<f64> {
    if procs <= 0.0 || threads <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "process and thread counts must be positive (p={procs}, threads={threads})"
        )));
    }
    Ok(spec.serial_work / (procs * threads).powf(spec.alpha)
        + spec.overhead * procs
        + spec.comm * procs.max(2.0).log2())
}

#[derive(Clone, Debug)]
struct ResolvedComponent {
    surface: SyntheticComponent,
    binding: ComponentBinding,
    procs: usize,
    ppn: Option<usize>,
    threads: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct FixedComponentLoad {
    pub time: f64,
    pub nodes: u32,
}

#[derive(Clone, Debug)]
pub struct SyntheticExecutor {
    components: Vec<ResolvedComponent>,
    fixed: Vec<FixedComponentLoad>,
    pairs: Vec<[usize; 2]>,
    coupling: f64,
    noise_sigma: f64,
    seed: u64,
    cores_per_node: u32,
}

impl SyntheticExecutor {
    /// `components[j]` gives the surface, component space, and workflow
    /// binding of configurable component `j`.
    pub fn new(
        spec: &SyntheticWorkflowSpec,
        components: Vec<(SyntheticComponent, &ParameterSpace, ComponentBinding)>,
        fixed: Vec<FixedComponentLoad>,
        cores_per_node: u32,
    ) -> Result<Self> {
        if spec.coupling < 0.0 || spec.noise_sigma < 0.0 {
            return Err(Error::Config("synthetic coefficients must be >= 0".into()));
        }
        let n = components.len();
        let resolved = components
            .into_iter()
            .map(|(surface, space, binding)| {
                if surface.serial_work < 0.0
                    || surface.overhead < 0.0
                    || surface.comm < 0.0
                    || !(surface.alpha > 0.0 && surface.alpha <= 1.0)
                {
                    return Err(Error::Config(format!(
                        "synthetic surface out of range: {surface:?}"
                    )));
                }
                let find = |name: &str| {
                    space.index_of(name).ok_or_else(|| {
                        Error::Config(format!(
                            "synthetic role refers to unknown parameter `{name}`"
                        ))
                    })
                };
                Ok(ResolvedComponent {
                    procs: find(&surface.procs)?,
                    ppn: surface.ppn.as_deref().map(find).transpose()?,
                    threads: surface.threads.as_deref().map(find).transpose()?,
                    surface,
                    binding,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs = match &spec.coupling_pairs {
            Some(p) => p.clone(),
            None => (1..n).map(|j| [j - 1, j]).collect(),
        };
        if pairs.iter().flatten().any(|&j| j >= n) {
            return Err(Error::Config(
                "coupling pair refers to unknown component".into(),
            ));
        }
        Ok(Self {
            components: resolved,
            fixed,
            pairs,
            coupling: spec.coupling,
            noise_sigma: spec.noise_sigma,
            seed: spec.seed,
            cores_per_node,
        })
    }

    /// Same surface with a different noise seed (for paired repetitions).
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_noise(&self, sigma: f64) -> Self {
        Self {
            noise_sigma: sigma,
            ..self.clone()
        }
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn cores_per_node(&self) -> u32 {
        self.cores_per_node
    }

    fn role(c: &Configuration, idx: Option<usize>) -> f64 {
        idx.map_or(1.0, |i| c.values()[i])
    }

    fn component_load(&self, j: usize, cj: &Configuration) -> Result<(f64, u32)> {
        let comp = &self.components[j];
        let p = cj.values()[comp.procs];
        let threads = Self::role(cj, comp.threads);
        let t = synth_component_time(&comp.surface, p, threads)?;
        let nodes = match comp.ppn {
            Some(i) => (p / cj.values()[i]).ceil() as u32,
            None => 1,
        };
        Ok((t, nodes))
    }

    fn noise_factors(&self, tag: u64, c: &Configuration, count: usize) -> Vec<f64> {
        if self.noise_sigma == 0.0 {
            return vec![1.0; count];
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(tag.to_le_bytes());
        for v in c.values() {
            h.update(v.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);
        let dist = LogNormal::new(0.0, self.noise_sigma).expect("sigma validated");
        (0..count).map(|_| dist.sample(&mut rng)).collect()
    }

    fn evaluate(&self, c: &Configuration, noisy: bool) -> Result<Measurement> {
        let mut times = Vec::with_capacity(self.components.len() + self.fixed.len());
        let mut nodes = 0u32;
        for (j, comp) in self.components.iter().enumerate() {
            let cj = project(c, &comp.binding)?;
            let (t, n) = self.component_load(j, &cj)?;
            times.push(t);
            nodes += n;
        }
        let mut penalties = vec![0.0; times.len()];
        for &[a, b] in &self.pairs {
            let mismatch = (1.0 / times[a] - 1.0 / times[b]).abs();
            let slower = if times[a] >= times[b] { a } else { b };
            penalties[slower] += self.coupling * mismatch;
        }
        let factors = if noisy {
            self.noise_factors(u64::MAX, c, times.len())
        } else {
            vec![1.0; times.len()]
        };
        for ((t, pen), f) in times.iter_mut().zip(&penalties).zip(&factors) {
            *t = (*t + pen) * f;
        }
        for fixed in &self.fixed {
            times.push(fixed.time);
            nodes += fixed.nodes;
        }
        Measurement::from_components(
            c.clone(),
            times,
            nodes,
            self.cores_per_node,
            Provenance::Synthetic,
        )
    }

    /// Noise-free workflow measurement; the ground truth used by the oracle.
    pub fn true_measurement(&self, c: &Configuration) -> Result<Measurement> {
        self.evaluate(c, false)
    }

    pub fn synth_measure(&self, c: &Configuration) -> Result<Measurement> {
        self.evaluate(c, true)
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }
}

impl Executor for SyntheticExecutor {
    fn measure_workflow(&self, config: &Configuration) -> Measurement {
        self.synth_measure(config).unwrap_or_else(|e| {
            Measurement::failed(config.clone(), Provenance::Synthetic, e.to_string())
        })
    }

    fn measure_component(&self, component: usize, config: &Configuration) -> Measurement {
        let run = || -> Result<Measurement> {
            if component >= self.components.len() {
                return Err(Error::Structure(format!("no component {component}")));
            }
            let (t, nodes) = self.component_load(component, config)?;
            let f = self.noise_factors(component as u64, config, 1)[0];
            Measurement::from_components(
                config.clone(),
                vec![t * f],
                nodes,
                self.cores_per_node,
                Provenance::Synthetic,
            )
        };
        run().unwrap_or_else(|e| {
            Measurement::failed(config.clone(), Provenance::Synthetic, e.to_string())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Parameter;

    fn surface(w: f64, alpha: f64, o: f64, k: f64) -> SyntheticComponent {
        SyntheticComponent {
            serial_work: w,
            alpha,
            overhead: o,
            comm: k,
            procs: "procs".into(),
            ppn: Some("ppn".into()),
            threads: Some("threads".into()),
        }
    }

    fn component_space() -> ParameterSpace {
        ParameterSpace::unconstrained(vec![
            Parameter::range("procs", 1.0, 64.0, 1.0).unwrap(),
            Parameter::range("ppn", 1.0, 36.0, 1.0).unwrap(),
            Parameter::range("threads", 1.0, 4.0, 1.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn ideal_scaling() {
        let t = synth_component_time(&surface(100.0, 1.0, 0.0, 0.0), 5.0, 2.0).unwrap();
        assert_eq!(t, 10.0);
        assert!(synth_component_time(&surface(100.0, 1.0, 0.0, 0.0), 0.0, 1.0).is_err());
    }

    #[test]
    fn overhead_creates_interior_optimum() {
        let s = surface(100.0, 1.0, 0.1, 0.0);
        let best = (1..=100)
            .map(|p| (p, synth_component_time(&s, p as f64, 1.0).unwrap()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        // Continuous optimum sqrt(W / o) = 31.6.
        assert!(best.0 == 31 || best.0 == 32, "{best:?}");
        let a = synth_component_time(&s, 17.0, 1.0).unwrap();
        let b = synth_component_time(&s, 17.0, 1.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    fn two_component(coupling: f64, sigma: f64) -> (SyntheticExecutor, ParameterSpace) {
        let space = component_space();
        let wf = ParameterSpace::unconstrained(
            [
                "a_procs",
                "a_ppn",
                "a_threads",
                "b_procs",
                "b_ppn",
                "b_threads",
            ]
            .iter()
            .zip(component_space().parameters().iter().cycle())
            .map(|(n, p)| Parameter::list(*n, p.domain().to_vec()).unwrap())
            .collect(),
        )
        .unwrap();
        let exec = SyntheticExecutor::new(
            &SyntheticWorkflowSpec {
                coupling,
                coupling_pairs: None,
                noise_sigma: sigma,
                seed: 1,
            },
            vec![
                (
                    surface(80.0, 1.0, 0.0, 0.0),
                    &space,
                    ComponentBinding::new(0, vec![0, 1, 2]),
                ),
                (
                    surface(50.0, 1.0, 0.0, 0.0),
                    &space,
                    ComponentBinding::new(1, vec![3, 4, 5]),
                ),
            ],
            vec![],
            36,
        )
        .unwrap();
        (exec, wf)
    }

    #[test]
    fn workflow_aggregation() {
        let (exec, _) = two_component(0.0, 0.0);
        // Times 80/10 = 8 s and 50/10 = 5 s, one node each.
        let c = Configuration::new(vec![10.0, 10.0, 1.0, 10.0, 10.0, 1.0]);
        let m = exec.synth_measure(&c).unwrap();
        assert_eq!(m.component_times, vec![8.0, 5.0]);
        assert_eq!(m.execution_time, 8.0);
        assert_eq!(m.nodes, 2);
        assert!((m.computer_time - 8.0 * 2.0 * 36.0 / 3600.0).abs() < 1e-15);
        assert_eq!(exec.synth_measure(&c).unwrap(), m);
    }

    #[test]
    fn coupling_penalises_slower_side() {
        let (exec, _) = two_component(10.0, 0.0);
        let c = Configuration::new(vec![10.0, 10.0, 1.0, 10.0, 10.0, 1.0]);
        let m = exec.synth_measure(&c).unwrap();
        let pen = 10.0 * (1.0f64 / 8.0 - 1.0 / 5.0).abs();
        assert!((m.component_times[0] - (8.0 + pen)).abs() < 1e-12);
        assert_eq!(m.component_times[1], 5.0);
    }

    #[test]
    fn noise_is_keyed_by_configuration() {
        let (exec, _) = two_component(1.0, 0.1);
        let a = Configuration::new(vec![10.0, 10.0, 1.0, 10.0, 10.0, 1.0]);
        let b = Configuration::new(vec![11.0, 10.0, 1.0, 10.0, 10.0, 1.0]);
        let first = exec.synth_measure(&a).unwrap();
        exec.synth_measure(&b).unwrap();
        assert_eq!(exec.synth_measure(&a).unwrap(), first);
        assert_ne!(first, exec.true_measurement(&a).unwrap());
        assert_ne!(exec.with_seed(2).synth_measure(&a).unwrap(), first);
        assert_eq!(
            exec.with_noise(0.0).synth_measure(&a).unwrap(),
            exec.true_measurement(&a).unwrap()
        );
    }

    #[test]
    fn single_component_time_is_workflow_time() {
        let space = component_space();
        let exec = SyntheticExecutor::new(
            &SyntheticWorkflowSpec {
                coupling: 5.0,
                coupling_pairs: None,
                noise_sigma: 0.0,
                seed: 0,
            },
            vec![(
                surface(100.0, 0.9, 0.05, 0.2),
                &space,
                ComponentBinding::identity(0, 3),
            )],
            vec![],
            36,
        )
        .unwrap();
        let c = Configuration::new(vec![20.0, 10.0, 2.0]);
        let w = exec.measure_workflow(&c);
        let comp = exec.measure_component(0, &c);
        assert_eq!(w.execution_time, comp.execution_time);
        assert_eq!(w.nodes, 2);
    }
}
