//! Discrete configuration spaces, feasibility constraints, sampling, and
//! sample pools.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use evalexpr::{
    build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node,
    Value,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Attempts allowed before [`random_configuration`] gives up on a space.
pub const MAX_REJECTION_ATTEMPTS: usize = 10_000;

/// Spaces at or below this size may be enumerated exhaustively.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// One tunable dimension with an ordered, duplicate-free numeric domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    name: String,
    domain: Vec<f64>,
}

impl Parameter {
    pub fn list(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let bad = |reason: &str| Error::InvalidParameter {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if values.is_empty() {
            return Err(bad("empty domain"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite option value"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("domain must be strictly increasing"));
        }
        Ok(Self {
            name,
            domain: values,
        })
    }

    /// Arithmetic range `lo, lo + step, ...` up to and including `hi` when it
    /// lies on the grid. Expands to `floor((hi - lo) / step) + 1` values.
    pub fn range(name: impl Into<String>, lo: f64, hi: f64, step: f64) -> Result<Self> {
        let name = name.into();
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || step <= 0.0 || hi < lo {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("bad range lo={lo} hi={hi} step={step}"),
            });
        }
        let count = range_len(lo, hi, step);
        let domain = (0..count).map(|k| lo + k as f64 * step).collect();
        Self::list(name, domain)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &[f64] {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    /// Position of `value` in the domain.
    pub fn position(&self, value: f64) -> Option<usize> {
        self.domain
            .binary_search_by(|probe| probe.total_cmp(&value))
            .ok()
    }
}

pub(crate) fn range_len(lo: f64, hi: f64, step: f64) -> usize {
    // Small tolerance so that e.g. (0.3 - 0.1) / 0.1 lands on 2, not 1.999...
    ((hi - lo) / step + 1e-9).floor() as usize + 1
}

/// Serializable constraint definition, referring to parameters by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintDef {
    /// Product of the named parameters must not exceed `bound`.
    ProductLe { params: Vec<String>, bound: f64 },
    /// Weighted sum of the named parameters must not exceed `bound`.
    LinearLe { terms: Vec<LinearTerm>, bound: f64 },
    /// Boolean expression over parameter names, e.g.
    /// `ceil(a / b) + ceil(c / d) <= 32`.
    Expression { expr: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearTerm {
    pub param: String,
    pub coef: f64,
}

impl ConstraintDef {
    /// Parameter names the predicate reads.
    pub fn operands(&self) -> Result<Vec<String>> {
        Ok(match self {
            ConstraintDef::ProductLe { params, .. } => params.clone(),
            ConstraintDef::LinearLe { terms, .. } => {
                terms.iter().map(|t| t.param.clone()).collect()
            }
            ConstraintDef::Expression { expr } => {
                let tree = parse_expression(expr)?;
                let mut names: Vec<String> = tree
                    .iter_variable_identifiers()
                    .map(str::to_string)
                    .collect();
                names.sort();
                names.dedup();
                names
            }
        })
    }
}

fn parse_expression(expr: &str) -> Result<Node<DefaultNumericTypes>> {
    build_operator_tree::<DefaultNumericTypes>(expr)
        .map_err(|e| Error::InvalidConstraint(format!("`{expr}`: {e}")))
}

#[derive(Clone, Debug)]
enum Compiled {
    ProductLe {
        idx: Vec<usize>,
        bound: f64,
    },
    LinearLe {
        terms: Vec<(usize, f64)>,
        bound: f64,
    },
    Expression {
        tree: Node<DefaultNumericTypes>,
        vars: Vec<(String, usize)>,
    },
}

/// A feasibility predicate bound to the parameter order of one space.
#[derive(Clone, Debug)]
pub struct Constraint {
    def: ConstraintDef,
    compiled: Compiled,
}

impl Constraint {
    fn compile(def: &ConstraintDef, parameters: &[Parameter]) -> Result<Self> {
        let lookup = |name: &str| -> Result<usize> {
            parameters
                .iter()
                .position(|p| p.name == name)
                .ok_or_else(|| Error::InvalidConstraint(format!("unknown parameter `{name}`")))
        };
        let compiled = match def {
            ConstraintDef::ProductLe { params, bound } => {
                if params.is_empty() {
                    return Err(Error::InvalidConstraint(
                        "product_le without operands".into(),
                    ));
                }
                Compiled::ProductLe {
                    idx: params.iter().map(|n| lookup(n)).collect::<Result<_>>()?,
                    bound: *bound,
                }
            }
            ConstraintDef::LinearLe { terms, bound } => {
                if terms.is_empty() {
                    return Err(Error::InvalidConstraint("linear_le without terms".into()));
                }
                Compiled::LinearLe {
                    terms: terms
                        .iter()
                        .map(|t| Ok((lookup(&t.param)?, t.coef)))
                        .collect::<Result<_>>()?,
                    bound: *bound,
                }
            }
            ConstraintDef::Expression { expr } => {
                let tree = parse_expression(expr)?;
                let vars = def
                    .operands()?
                    .into_iter()
                    .map(|n| {
                        let i = lookup(&n)?;
                        Ok((n, i))
                    })
                    .collect::<Result<_>>()?;
                Compiled::Expression { tree, vars }
            }
        };
        let constraint = Self {
            def: def.clone(),
            compiled,
        };
        // Type-check expressions once against the first point of the space.
        if let Compiled::Expression { .. } = constraint.compiled {
            let probe: Vec<f64> = parameters.iter().map(|p| p.domain[0]).collect();
            constraint.evaluate(&probe)?;
        }
        Ok(constraint)
    }

    pub fn def(&self) -> &ConstraintDef {
        &self.def
    }

    fn evaluate(&self, values: &[f64]) -> Result<bool> {
        Ok(match &self.compiled {
            Compiled::ProductLe { idx, bound } => {
                idx.iter().map(|&i| values[i]).product::<f64>() <= *bound
            }
            Compiled::LinearLe { terms, bound } => {
                terms.iter().map(|&(i, c)| c * values[i]).sum::<f64>() <= *bound
            }
            Compiled::Expression { tree, vars } => {
                let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
                for (name, i) in vars {
                    ctx.set_value(name.clone(), Value::Float(values[*i]))
                        .map_err(|e| Error::InvalidConstraint(e.to_string()))?;
                }
                tree.eval_boolean_with_context(&ctx)
                    .map_err(|e| Error::InvalidConstraint(format!("{:?}: {e}", self.def)))?
            }
        })
    }

    /// Pure predicate check. Evaluation errors count as violations.
    pub fn holds(&self, values: &[f64]) -> bool {
        self.evaluate(values).unwrap_or(false)
    }
}

/// One point of a space: option values aligned with the space's parameters.
///
/// Equality and hashing are bitwise on the values, which is exact because
/// every value is copied out of a parameter domain.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(Vec<f64>);

impl Configuration {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for Configuration {}

impl Hash for Configuration {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.len().hash(state);
        for v in &self.0 {
            v.to_bits().hash(state);
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Unconstrained cardinality; saturates at `u128::MAX`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cardinality {
    pub count: u128,
    pub saturated: bool,
}

impl Cardinality {
    pub fn as_f64(&self) -> f64 {
        self.count as f64
    }
}

#[derive(Clone, Debug)]
pub struct ParameterSpace {
    parameters: Vec<Parameter>,
    constraints: Vec<Constraint>,
}

impl ParameterSpace {
    pub fn new(parameters: Vec<Parameter>, constraints: &[ConstraintDef]) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &parameters {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate parameter `{}`",
                    p.name
                )));
            }
        }
        let constraints = constraints
            .iter()
            .map(|d| Constraint::compile(d, &parameters))
            .collect::<Result<_>>()?;
        Ok(Self {
            parameters,
            constraints,
        })
    }

    pub fn unconstrained(parameters: Vec<Parameter>) -> Result<Self> {
        Self::new(parameters, &[])
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn dimension(&self) -> usize {
        self.parameters.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    pub fn is_feasible(&self, c: &Configuration) -> bool {
        self.constraints.iter().all(|k| k.holds(c.values()))
    }

    /// Checks shape, domain membership, and constraints.
    pub fn validate(&self, c: &Configuration) -> Result<()> {
        if c.len() != self.dimension() {
            return Err(Error::Structure(format!(
                "configuration has {} values, space has {} parameters",
                c.len(),
                self.dimension()
            )));
        }
        for (p, &v) in self.parameters.iter().zip(c.values()) {
            if p.position(v).is_none() {
                return Err(Error::Structure(format!(
                    "value {v} is not an option of `{}`",
                    p.name
                )));
            }
        }
        if !self.is_feasible(c) {
            return Err(Error::Structure(format!(
                "configuration {c} violates a constraint"
            )));
        }
        Ok(())
    }

    /// Stable content hash of parameters and constraints (16 hex digits).
    pub fn fingerprint(&self) -> String {
        let defs: Vec<&ConstraintDef> = self.constraints.iter().map(|c| &c.def).collect();
        let canonical = serde_json::to_string(&(&self.parameters, defs)).expect("space serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Lexicographic enumeration of feasible points, last parameter fastest.
    pub fn enumerate_feasible(&self, limit: u64) -> Result<Vec<Configuration>> {
        let size = space_size(self);
        if size.saturated || size.count > limit as u128 {
            return Err(Error::TooLargeToEnumerate {
                size: format!("{}", size.count),
                limit,
            });
        }
        let mut out = Vec::new();
        if self.parameters.is_empty() {
            let c = Configuration::new(vec![]);
            if self.is_feasible(&c) {
                out.push(c);
            }
            return Ok(out);
        }
        let mut odometer = vec![0usize; self.dimension()];
        let mut values: Vec<f64> = self.parameters.iter().map(|p| p.domain[0]).collect();
        loop {
            if self.constraints.iter().all(|k| k.holds(&values)) {
                out.push(Configuration::new(values.clone()));
            }
            let mut d = self.dimension();
            loop {
                if d == 0 {
                    return Ok(out);
                }
                d -= 1;
                odometer[d] += 1;
                if odometer[d] < self.parameters[d].len() {
                    values[d] = self.parameters[d].domain[odometer[d]];
                    break;
                }
                odometer[d] = 0;
                values[d] = self.parameters[d].domain[0];
            }
        }
    }

    fn draw_unconstrained<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.parameters
            .iter()
            .map(|p| p.domain[rng.random_range(0..p.domain.len())])
            .collect()
    }
}

/// Product of domain sizes, ignoring constraints. The empty space has one
/// point.
pub fn space_size(space: &ParameterSpace) -> Cardinality {
    let mut count: u128 = 1;
    let mut saturated = false;
    for p in &space.parameters {
        match count.checked_mul(p.len() as u128) {
            Some(c) => count = c,
            None => {
                count = u128::MAX;
                saturated = true;
            }
        }
    }
    Cardinality { count, saturated }
}

/// Monte-Carlo estimate of the feasible fraction of the unconstrained space.
pub fn feasible_fraction_estimate(
    space: &ParameterSpace,
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample_count must be >= 1".into()));
    }
    if space.constraints.is_empty() {
        return Ok(1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..sample_count)
        .filter(|_| {
            let v = space.draw_unconstrained(&mut rng);
            space.constraints.iter().all(|k| k.holds(&v))
        })
        .count();
    Ok(hits as f64 / sample_count as f64)
}

/// Exact feasible fraction by enumeration (spaces up to [`ENUMERATION_LIMIT`]).
pub fn feasible_fraction_exact(space: &ParameterSpace) -> Result<f64> {
    let size = space_size(space);
    let feasible = space.enumerate_feasible(ENUMERATION_LIMIT)?;
    Ok(feasible.len() as f64 / size.count as f64)
}

/// Uniform draw per dimension, rejecting constraint violations.
pub fn random_configuration<R: Rng + ?Sized>(
    space: &ParameterSpace,
    rng: &mut R,
) -> Result<Configuration> {
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        let v = space.draw_unconstrained(rng);
        if space.constraints.iter().all(|k| k.holds(&v)) {
            return Ok(Configuration::new(v));
        }
    }
    Err(Error::InfeasibleSpace {
        attempts: MAX_REJECTION_ATTEMPTS,
    })
}

/// Pool size that contains a top-`1/n` configuration with probability about
/// `probability`: `ceil(-n * ln(1 - probability))`.
pub fn pool_size_for(n: f64, probability: f64) -> Result<usize> {
    if !(n >= 1.0) || !n.is_finite() {
        return Err(Error::InvalidArgument(format!("n must be >= 1, got {n}")));
    }
    if !(probability > 0.0 && probability < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability must be in (0, 1), got {probability}"
        )));
    }
    let p = (-n * (1.0 - probability).ln()).ceil();
    Ok((p as usize).max(1))
}

/// Maps a component's parameters onto workflow-space indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentBinding {
    pub component: usize,
    pub indices: Vec<usize>,
}

impl ComponentBinding {
    pub fn new(component: usize, indices: Vec<usize>) -> Self {
        Self { component, indices }
    }

    pub fn identity(component: usize, dimension: usize) -> Self {
        Self::new(component, (0..dimension).collect())
    }

    pub fn validate(&self, dimension: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for &i in &self.indices {
            if i >= dimension {
                return Err(Error::Structure(format!(
                    "binding index {i} out of range for {dimension} parameters"
                )));
            }
            if !seen.insert(i) {
                return Err(Error::Structure(format!("binding repeats index {i}")));
            }
        }
        Ok(())
    }
}

/// Checks that every workflow parameter is covered by some binding.
pub fn validate_bindings(bindings: &[ComponentBinding], dimension: usize) -> Result<()> {
    let mut covered = vec![false; dimension];
    for b in bindings {
        b.validate(dimension)?;
        for &i in &b.indices {
            covered[i] = true;
        }
    }
    if let Some(i) = covered.iter().position(|c| !c) {
        return Err(Error::Structure(format!(
            "workflow parameter {i} is not bound to any component"
        )));
    }
    Ok(())
}

/// Extract the component sub-configuration selected by `binding`.
pub fn project(config: &Configuration, binding: &ComponentBinding) -> Result<Configuration> {
    binding
        .indices
        .iter()
        .map(|&i| {
            config.values().get(i).copied().ok_or_else(|| {
                Error::Structure(format!(
                    "binding index {i} out of range for configuration of length {}",
                    config.len()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Configuration::new)
}

/// Distinct feasible configurations with monotone consumption.
#[derive(Clone, Debug)]
pub struct SamplePool {
    entries: Vec<Configuration>,
    consumed: Vec<bool>,
    // Unconsumed indices (unordered) and each entry's slot in `available`.
    available: Vec<usize>,
    slot: Vec<usize>,
    lookup: HashMap<Configuration, usize>,
}

impl SamplePool {
    pub fn from_configurations(entries: Vec<Configuration>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, c) in entries.iter().enumerate() {
            if lookup.insert(c.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate pool entry {c}")));
            }
        }
        let n = entries.len();
        Ok(Self {
            entries,
            consumed: vec![false; n],
            available: (0..n).collect(),
            slot: (0..n).collect(),
            lookup,
        })
    }

    /// `p` distinct feasible configurations drawn at random. Small spaces are
    /// enumerated and shuffled; if fewer than `p` feasible points exist the
    /// pool holds all of them and a warning is logged.
    pub fn build<R: Rng + ?Sized>(space: &ParameterSpace, p: usize, rng: &mut R) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("pool size must be >= 1".into()));
        }
        let size = space_size(space);
        let small = !size.saturated
            && size.count <= ENUMERATION_LIMIT as u128
            && size.count <= 8 * p as u128;
        let entries = if small {
            let mut all = space.enumerate_feasible(ENUMERATION_LIMIT)?;
            if all.is_empty() {
                return Err(Error::InfeasibleSpace { attempts: 0 });
            }
            if all.len() < p {
                log::warn!(
                    "space has only {} feasible configurations; pool of {p} requested",
                    all.len()
                );
            }
            all.shuffle(rng);
            all.truncate(p);
            all
        } else {
            let mut seen = HashSet::with_capacity(p);
            let mut entries = Vec::with_capacity(p);
            let mut misses = 0usize;
            while entries.len() < p {
                let v = Configuration::new(space.draw_unconstrained(rng));
                if space.is_feasible(&v) && seen.insert(v.clone()) {
                    entries.push(v);
                    misses = 0;
                } else {
                    misses += 1;
                    if misses >= MAX_REJECTION_ATTEMPTS {
                        if entries.is_empty() {
                            return Err(Error::InfeasibleSpace { attempts: misses });
                        }
                        log::warn!(
                            "stopped after {} distinct feasible configurations; pool of {p} requested",
                            entries.len()
                        );
                        break;
                    }
                }
            }
            entries
        };
        Self::from_configurations(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> &Configuration {
        &self.entries[index]
    }

    pub fn configurations(&self) -> &[Configuration] {
        &self.entries
    }

    pub fn index_of(&self, c: &Configuration) -> Option<usize> {
        self.lookup.get(c).copied()
    }

    pub fn is_consumed(&self, index: usize) -> bool {
        self.consumed[index]
    }

    pub fn available_count(&self) -> usize {
        self.available.len()
    }

    /// Unconsumed indices in ascending order.
    pub fn available_indices(&self) -> Vec<usize> {
        let mut v = self.available.clone();
        v.sort_unstable();
        v
    }

    /// Mark an entry consumed. Consumption is permanent.
    pub fn consume(&mut self, index: usize) -> Result<()> {
        if index >= self.entries.len() {
            return Err(Error::Structure(format!("pool index {index} out of range")));
        }
        if self.consumed[index] {
            return Err(Error::InvalidArgument(format!(
                "pool entry {index} already consumed"
            )));
        }
        self.consumed[index] = true;
        let s = self.slot[index];
        let last = *self
            .available
            .last()
            .expect("non-empty when unconsumed exists");
        self.available.swap_remove(s);
        if last != index {
            self.slot[last] = s;
        }
        Ok(())
    }

    /// Consume and return a uniformly chosen unconsumed entry.
    pub fn take_random<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<usize> {
        if self.available.is_empty() {
            return None;
        }
        // Choose by rank among sorted available indices so the result does not
        // depend on the internal swap-remove layout.
        let mut sorted = self.available_indices();
        let pick = sorted.swap_remove(rng.random_range(0..sorted.len()));
        self.consume(pick).expect("available entry");
        Some(pick)
    }

    /// A fresh copy with no consumed entries.
    pub fn reset(&self) -> Self {
        Self::from_configurations(self.entries.clone()).expect("entries already distinct")
    }

    /// Content hash of the entries in order (16 hex digits).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.entries {
            for v in c.values() {
                h.update(v.to_le_bytes());
            }
            h.update([0xff]);
        }
        hex::encode(&h.finalize()[..8])
    }
}
