//! Exhaustive noise-free ground truth over a pool or a small space.
//!
//! CSV layout:
//! `index,execution_time,computer_time,nodes,cores_per_node,rank_execution_time,rank_computer_time,v0,v1,...`
//! with one row per configuration in input order; ranks are 1-based with
//! ties broken by row index.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use super::{Executor, Measurement, Provenance, SyntheticExecutor};
use crate::combiner::MetricKind;
use crate::error::{Error, Result};
use crate::parallel;
use crate::space::{space_size, Configuration, ParameterSpace, ENUMERATION_LIMIT};

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub configuration: Configuration,
    pub execution_time: f64,
    pub computer_time: f64,
    pub nodes: u32,
    pub cores_per_node: u32,
    pub rank_execution_time: usize,
    pub rank_computer_time: usize,
}

impl OracleRow {
    pub fn metric(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::ExecutionTime => self.execution_time,
            MetricKind::ComputerTime => self.computer_time,
            MetricKind::Throughput => 1.0 / self.execution_time,
        }
    }

    /// 1-based; throughput shares the execution-time order.
    pub fn rank(&self, kind: MetricKind) -> usize {
        match kind {
            MetricKind::ComputerTime => self.rank_computer_time,
            _ => self.rank_execution_time,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleTable {
    rows: Vec<OracleRow>,
    lookup: HashMap<Configuration, usize>,
}

fn ranks(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; values.len()];
    for (r, i) in idx.into_iter().enumerate() {
        out[i] = r + 1;
    }
    out
}

impl OracleTable {
    fn from_parts(configs: Vec<Configuration>, ms: Vec<(f64, f64, u32, u32)>) -> Self {
        let exec: Vec<f64> = ms.iter().map(|m| m.0).collect();
        let comp: Vec<f64> = ms.iter().map(|m| m.1).collect();
        let re = ranks(&exec);
        let rc = ranks(&comp);
        let rows: Vec<OracleRow> = configs
            .into_iter()
            .enumerate()
            .map(|(i, c)| OracleRow {
                configuration: c,
                execution_time: exec[i],
                computer_time: comp[i],
                nodes: ms[i].2,
                cores_per_node: ms[i].3,
                rank_execution_time: re[i],
                rank_computer_time: rc[i],
            })
            .collect();
        let lookup = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.configuration.clone(), i))
            .collect();
        Self { rows, lookup }
    }

    pub fn rows(&self) -> &[OracleRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_of(&self, c: &Configuration) -> Option<&OracleRow> {
        self.lookup.get(c).map(|&i| &self.rows[i])
    }

    pub fn values(&self, kind: MetricKind) -> Vec<f64> {
        self.rows.iter().map(|r| r.metric(kind)).collect()
    }

    /// The best (smallest for times, largest for throughput) value.
    pub fn optimum(&self, kind: MetricKind) -> f64 {
        let vals = self.values(kind);
        if kind.lower_is_better() {
            vals.into_iter().fold(f64::INFINITY, f64::min)
        } else {
            vals.into_iter().fold(f64::NEG_INFINITY, f64::max)
        }
    }

    /// Row indices of the `k` best rows, best first.
    pub fn top_rows(&self, kind: MetricKind, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by_key(|&i| self.rows[i].rank(kind));
        idx.truncate(k);
        idx
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| Error::io(path, e))?);
        let dims = self.rows.first().map_or(0, |r| r.configuration.len());
        let mut header: Vec<String> = [
            "index",
            "execution_time",
            "computer_time",
            "nodes",
            "cores_per_node",
            "rank_execution_time",
            "rank_computer_time",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..dims).map(|d| format!("v{d}")));
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![
                i.to_string(),
                r.execution_time.to_string(),
                r.computer_time.to_string(),
                r.nodes.to_string(),
                r.cores_per_node.to_string(),
                r.rank_execution_time.to_string(),
                r.rank_computer_time.to_string(),
            ];
            rec.extend(r.configuration.values().iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut configs = Vec::new();
        let mut ms = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number `{s}` in {}", path.display())))
            };
            let int = |s: &str| {
                s.parse::<u32>()
                    .map_err(|_| Error::Config(format!("bad integer `{s}` in {}", path.display())))
            };
            if rec.len() < 7 {
                return Err(Error::Config(format!(
                    "short oracle row in {}",
                    path.display()
                )));
            }
            ms.push((
                parse(&rec[1])?,
                parse(&rec[2])?,
                int(&rec[3])?,
                int(&rec[4])?,
            ));
            configs.push(Configuration::new(
                rec.iter().skip(7).map(parse).collect::<Result<_>>()?,
            ));
        }
        Ok(Self::from_parts(configs, ms))
    }
}

/// Answers workflow runs from a measured table; component runs fail.
impl Executor for OracleTable {
    fn measure_workflow(&self, config: &Configuration) -> Measurement {
        match self.row_of(config) {
            Some(r) => Measurement::from_components(
                config.clone(),
                vec![r.execution_time],
                r.nodes,
                r.cores_per_node,
                Provenance::External,
            )
            .unwrap_or_else(|e| {
                Measurement::failed(config.clone(), Provenance::External, e.to_string())
            }),
            None => Measurement::failed(
                config.clone(),
                Provenance::External,
                "not in the pool table",
            ),
        }
    }

    fn measure_component(&self, component: usize, config: &Configuration) -> Measurement {
        Measurement::failed(
            config.clone(),
            Provenance::External,
            format!("pool tables hold no runs of component {component}"),
        )
    }
}

/// Noise-free evaluation of every configuration, in input order.
pub fn brute_force_oracle(
    exec: &SyntheticExecutor,
    configs: &[Configuration],
) -> Result<OracleTable> {
    let ms = parallel::map(configs, |c| exec.true_measurement(c));
    let ms = ms.into_iter().collect::<Result<Vec<_>>>()?;
    let parts = ms
        .iter()
        .map(|m| (m.execution_time, m.computer_time, m.nodes, m.cores_per_node))
        .collect();
    Ok(OracleTable::from_parts(configs.to_vec(), parts))
}

/// Oracle over every feasible point of `space`; refuses spaces larger than
/// the enumeration limit.
pub fn brute_force_oracle_space(
    exec: &SyntheticExecutor,
    space: &ParameterSpace,
) -> Result<OracleTable> {
    let card = space_size(space);
    if card.saturated || card.count > ENUMERATION_LIMIT as u128 {
        return Err(Error::TooLargeToEnumerate {
            size: card.count.to_string(),
            limit: ENUMERATION_LIMIT,
        });
    }
    let configs = space.enumerate_feasible(ENUMERATION_LIMIT)?;
    brute_force_oracle(exec, &configs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_ties_by_index() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 0.5]), vec![3, 2, 4, 1]);
    }
}
