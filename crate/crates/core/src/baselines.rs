//! Comparison tuners: random sampling, plain active learning, a
//! graph-guided sampler, and active learning over a component-combining
//! model.

use serde::{Deserialize, Serialize};

use crate::combiner::LowFidelityModel;
use crate::error::{Error, Result};
use crate::parallel;
use crate::space::{Configuration, ParameterSpace, SamplePool};
use crate::surrogate::{fit, SurrogateHyperparams, TrainingSet};
use crate::tuner::{
    active_loop, build_component_models, finish, Algorithm, Budget, CombiningModel, Evaluator,
    ModelTrainer, Ranking, Round, Session, SurrogateTrainer, TunedModel, TuningOutcome,
    TuningRequest,
};

/// `m` random pool configurations, one fit.
pub fn run_rs(req: &TuningRequest) -> Result<TuningOutcome> {
    let m = req.budget.m;
    if m == 0 {
        return Err(Error::InvalidBudget("m must be >= 1".into()));
    }
    let budget = Budget {
        m,
        m_r: 0,
        m_0: m,
        iters: 1,
    };
    let mut s = Session::start(req, Algorithm::Rs, budget)?;
    let mut round = Round::default();
    s.select_random(&mut round, m)?;
    s.measure(&mut round, None)?;
    let model = SurrogateTrainer::new(&req.config.surrogate).train(&s.training_rows())?;
    s.commit(round, Evaluator::Random, None)?;
    finish(s, TunedModel::Surrogate(model), 0, Vec::new())
}

/// Active learning without component models; any `m_r` in the budget is
/// ignored.
pub fn run_al(req: &TuningRequest) -> Result<TuningOutcome> {
    let budget = req.budget.without_components();
    budget.validate()?;
    let mut s = Session::start(req, Algorithm::Al, budget)?;
    let trainer = SurrogateTrainer::new(&req.config.surrogate);
    let model = active_loop(
        &mut s,
        None,
        &trainer,
        budget.m_0,
        &budget.batch_sizes(),
        None,
    )?;
    finish(s, TunedModel::Surrogate(model), 0, Vec::new())
}

struct CombiningTrainer<'a> {
    low: &'a LowFidelityModel,
    hp: &'a SurrogateHyperparams,
}

impl ModelTrainer for CombiningTrainer<'_> {
    type Model = CombiningModel;

    fn train(&self, rows: &[(Configuration, f64)]) -> Result<CombiningModel> {
        let set = TrainingSet::from_rows(
            rows.iter()
                .map(|(c, y)| Ok((CombiningModel::features(self.low, c)?, *y)))
                .collect::<Result<_>>()?,
        )?;
        Ok(CombiningModel {
            low: self.low.clone(),
            model: fit(&set, self.hp)?,
        })
    }
}

/// Component models as in CEAL, then active learning on a model whose
/// features are the configuration followed by each component prediction.
pub fn run_alph(req: &TuningRequest) -> Result<TuningOutcome> {
    req.budget.validate()?;
    let mut s = Session::start(req, Algorithm::Alph, req.budget)?;
    let phase = build_component_models(
        req.workflow,
        req.budget.m_r,
        req.history,
        req.executor,
        &mut s.rng,
        req.config,
    )?;
    s.record_component_runs(phase.runs.clone())?;
    let low = phase.low_fidelity(req.workflow, req.config.metric)?;
    let trainer = CombiningTrainer {
        low: &low,
        hp: &req.config.surrogate,
    };
    let model = active_loop(
        &mut s,
        None,
        &trainer,
        req.budget.m_0,
        &req.budget.batch_sizes(),
        None,
    )?;
    finish(s, TunedModel::Combining(model), phase.charge, phase.models)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    /// Edges between configurations one domain step apart in one parameter.
    UnitStep,
    /// `k` nearest neighbours in normalized domain-position coordinates.
    Knn { k: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeistOptions {
    /// Share of measurements labelled "top".
    pub top_fraction: f64,
    pub sweeps: usize,
    pub graph: GraphKind,
}

impl Default for GeistOptions {
    fn default() -> Self {
        Self {
            top_fraction: 0.05,
            sweeps: 10,
            graph: GraphKind::Knn { k: 8 },
        }
    }
}

/// Undirected adjacency over pool indices.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<usize>>,
}

impl NeighborGraph {
    fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in edges {
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { adjacency }
    }

    pub fn unit_step(pool: &SamplePool, space: &ParameterSpace) -> Result<Self> {
        let positions = domain_positions(pool, space)?;
        let params = space.parameters();
        let mut edges = Vec::new();
        for (i, pos) in positions.iter().enumerate() {
            for (d, &p) in pos.iter().enumerate() {
                if p + 1 < params[d].len() {
                    let mut v = pool.get(i).values().to_vec();
                    v[d] = params[d].domain()[p + 1];
                    if let Some(j) = pool.index_of(&Configuration::new(v)) {
                        edges.push((i, j));
                    }
                }
            }
        }
        Ok(Self::from_edges(pool.len(), edges))
    }

    pub fn knn(pool: &SamplePool, space: &ParameterSpace, k: usize) -> Result<Self> {
        let positions = domain_positions(pool, space)?;
        let scale: Vec<f64> = space
            .parameters()
            .iter()
            .map(|p| {
                if p.len() > 1 {
                    1.0 / (p.len() - 1) as f64
                } else {
                    0.0
                }
            })
            .collect();
        let coords: Vec<Vec<f64>> = positions
            .iter()
            .map(|pos| pos.iter().zip(&scale).map(|(&p, s)| p as f64 * s).collect())
            .collect();
        let n = coords.len();
        let nearest = parallel::map_range(n, |i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dist = coords[i]
                        .iter()
                        .zip(&coords[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                    (dist, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
            d.into_iter().map(|(_, j)| j).collect::<Vec<_>>()
        });
        Ok(Self::from_edges(
            n,
            nearest
                .into_iter()
                .enumerate()
                .flat_map(|(i, js)| js.into_iter().map(move |j| (i, j))),
        ))
    }

    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Self {
        let n = adjacency.len();
        Self::from_edges(
            n,
            adjacency
                .into_iter()
                .enumerate()
                .flat_map(|(i, js)| js.into_iter().map(move |j| (i, j))),
        )
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

fn domain_positions(pool: &SamplePool, space: &ParameterSpace) -> Result<Vec<Vec<usize>>> {
    pool.configurations()
        .iter()
        .map(|c| {
            if c.len() != space.dimension() {
                return Err(Error::Structure("pool does not match space".into()));
            }
            space
                .parameters()
                .iter()
                .zip(c.values())
                .map(|(p, &v)| {
                    p.position(v)
                        .ok_or_else(|| Error::Structure(format!("{v} not in `{}`", p.name())))
                })
                .collect()
        })
        .collect()
}

/// Averaging sweeps: labelled nodes hold their label, every other node
/// takes the mean of its neighbours' previous scores. Unlabelled nodes start
/// at 0.5; isolated ones keep it.
pub fn propagate(graph: &NeighborGraph, labels: &[Option<f64>], sweeps: usize) -> Vec<f64> {
    let mut score: Vec<f64> = labels.iter().map(|l| l.unwrap_or(0.5)).collect();
    for _ in 0..sweeps {
        let prev = score.clone();
        for (i, s) in score.iter_mut().enumerate() {
            if labels[i].is_some() {
                continue;
            }
            let nb = graph.neighbors(i);
            if !nb.is_empty() {
                *s = nb.iter().map(|&j| prev[j]).sum::<f64>() / nb.len() as f64;
            }
        }
    }
    score
}

/// 1.0 for measurements in the best `ceil(top_fraction * count)` so far,
/// 0.0 for the rest.
pub fn top_labels(
    n: usize,
    measured: &[(usize, f64)],
    top_fraction: f64,
    lower_is_better: bool,
) -> Vec<Option<f64>> {
    let mut order: Vec<usize> = (0..measured.len()).collect();
    order.sort_by(|&a, &b| {
        let o = measured[a].1.total_cmp(&measured[b].1);
        let o = if lower_is_better { o } else { o.reverse() };
        o.then(measured[a].0.cmp(&measured[b].0))
    });
    let k = ((top_fraction * measured.len() as f64).ceil() as usize).max(1);
    let mut labels = vec![None; n];
    for (rank, &m) in order.iter().enumerate() {
        labels[measured[m].0] = Some(if rank < k { 1.0 } else { 0.0 });
    }
    labels
}

/// Random first round, then batches with the highest propagated
/// top-likelihood.
pub fn run_geist_like(req: &TuningRequest) -> Result<TuningOutcome> {
    let budget = req.budget.without_components();
    budget.validate()?;
    let opts = &req.config.geist;
    if !(opts.top_fraction > 0.0 && opts.top_fraction <= 1.0) {
        return Err(Error::InvalidArgument(
            "top_fraction must be in (0, 1]".into(),
        ));
    }
    let graph = match opts.graph {
        GraphKind::UnitStep => NeighborGraph::unit_step(req.pool, &req.workflow.space)?,
        GraphKind::Knn { k } => NeighborGraph::knn(req.pool, &req.workflow.space, k)?,
    };
    let mut s = Session::start(req, Algorithm::Geist, budget)?;
    let lower = s.lower_is_better();
    let sizes = budget.batch_sizes();
    let mut round = Round::default();
    s.select_random(&mut round, budget.m_0 + sizes[0])?;
    let mut ranking: Option<Ranking> = None;
    let mut evaluator = Evaluator::Random;
    for it in 0..sizes.len() {
        s.measure(&mut round, ranking.as_mut())?;
        s.commit(std::mem::take(&mut round), evaluator, None)?;
        if it + 1 < sizes.len() {
            let measured: Vec<(usize, f64)> = s
                .measured()
                .iter()
                .map(|(i, m)| (*i, m.metric(s.metric)))
                .collect();
            let labels = top_labels(s.pool.len(), &measured, opts.top_fraction, lower);
            let score = propagate(&graph, &labels, opts.sweeps);
            let mut order = s.pool.available_indices();
            order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
            let mut r = Ranking::new(order);
            s.select_ranked(&mut round, &mut r, sizes[it + 1])?;
            ranking = Some(r);
            evaluator = Evaluator::Graph;
        }
    }
    let model = SurrogateTrainer::new(&req.config.surrogate).train(&s.training_rows())?;
    finish(s, TunedModel::Surrogate(model), 0, Vec::new())
}
