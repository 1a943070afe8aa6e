//! Gradient-boosted regression trees with squared-error loss.
//!
//! Split search is exact greedy over sorted unique feature values. Training
//! rows are put into a canonical order before fitting, so a model depends only
//! on the multiset of rows and the hyperparameters.

use std::cmp::Ordering;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "ceal-surrogate";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateHyperparams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub subsample_fraction: f64,
    pub seed: u64,
    /// Fit on `ln(target)` and exponentiate predictions.
    pub log_target: bool,
}

impl Default for SurrogateHyperparams {
    fn default() -> Self {
        Self {
            tree_count: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            subsample_fraction: 1.0,
            seed: 0,
            log_target: false,
        }
    }
}

impl SurrogateHyperparams {
    /// Deep, unshrunk trees that interpolate distinct training points.
    pub fn memorizing() -> Self {
        Self {
            tree_count: 20,
            max_depth: 32,
            learning_rate: 1.0,
            min_samples_leaf: 1,
            subsample_fraction: 1.0,
            seed: 0,
            log_target: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| {
            Err(Error::InvalidArgument(format!(
                "surrogate hyperparams: {m}"
            )))
        };
        if self.tree_count == 0 {
            return bad("tree_count must be positive");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be positive");
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad("subsample_fraction must be in (0, 1]");
        }
        Ok(())
    }
}

/// Rows of (encoded configuration, target).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    rows: Vec<(Vec<f64>, f64)>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let mut set = Self::new();
        for (x, y) in rows {
            set.push(x, y)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, features: Vec<f64>, target: f64) -> Result<()> {
        if let Some((first, _)) = self.rows.first() {
            if first.len() != features.len() {
                return Err(Error::Structure(format!(
                    "feature length {} differs from {}",
                    features.len(),
                    first.len()
                )));
            }
        }
        if !target.is_finite() || features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite training value".into()));
        }
        self.rows.push((features, target));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[(Vec<f64>, f64)] {
        &self.rows
    }

    pub fn feature_count(&self) -> Option<usize> {
        self.rows.first().map(|(x, _)| x.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Axis-aligned regression tree stored as a flat node array; node 0 is the
/// root. Rows with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
}

impl RegressionTree {
    fn evaluate(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    format: String,
    version: u32,
    feature_count: usize,
    training_rows: usize,
    base_prediction: f64,
    hyperparams: SurrogateHyperparams,
    trees: Vec<RegressionTree>,
}

// Exact for constant inputs, unlike sum / n.
fn running_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (i, v) in values.enumerate() {
        mean += (v - mean) / (i as f64 + 1.0);
    }
    mean
}

fn cmp_rows(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> Ordering {
    for (x, y) in a.0.iter().zip(&b.0) {
        match x.total_cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.1.total_cmp(&b.1)
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    residuals: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let value = running_mean(rows.iter().map(|&i| self.residuals[i]));
        self.nodes.push(TreeNode::Leaf { value });
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let n = rows.len();
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return self.leaf(rows);
        }
        let sum: f64 = rows.iter().map(|&i| self.residuals[i]).sum();
        let sum_sq: f64 = rows.iter().map(|&i| self.residuals[i].powi(2)).sum();
        let node_sse = sum_sq - sum * sum / n as f64;
        if node_sse <= 1e-14 * sum_sq.max(f64::MIN_POSITIVE) {
            return self.leaf(rows);
        }

        let dims = self.features[rows[0]].len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for f in 0..dims {
            // Ties on the feature value keep canonical row order.
            order.sort_by(|&a, &b| {
                self.features[a][f]
                    .total_cmp(&self.features[b][f])
                    .then(a.cmp(&b))
            });
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.residuals[order[k - 1]];
                let lo = self.features[order[k - 1]][f];
                let hi = self.features[order[k]][f];
                if k < self.min_leaf || n - k < self.min_leaf || lo >= hi {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64
                    - sum * sum / n as f64;
                if gain > 1e-12 * node_sse && best.is_none_or(|(g, _, _)| gain > g) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((gain, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return self.leaf(rows);
        };
        // Stable partition keeps canonical order within each side.
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.features[i][feature] <= threshold);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0 });
        let l = self.build(&mut left, depth + 1);
        let r = self.build(&mut right, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        id
    }
}

fn mse(targets: &[f64], predictions: &[f64]) -> f64 {
    targets
        .iter()
        .zip(predictions)
        .map(|(t, p)| (t - p).powi(2))
        .sum::<f64>()
        / targets.len() as f64
}

/// Fit a model; returns it with the training MSE after the base prediction
/// and after each tree (in the fitted target scale).
pub fn fit_traced(
    data: &TrainingSet,
    hp: &SurrogateHyperparams,
) -> Result<(SurrogateModel, Vec<f64>)> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut rows = data.rows.clone();
    rows.sort_by(cmp_rows);
    if hp.log_target && rows.iter().any(|(_, y)| *y <= 0.0) {
        return Err(Error::InvalidArgument(
            "log_target requires positive targets".into(),
        ));
    }
    let features: Vec<Vec<f64>> = rows.iter().map(|(x, _)| x.clone()).collect();
    let targets: Vec<f64> = rows
        .iter()
        .map(|(_, y)| if hp.log_target { y.ln() } else { *y })
        .collect();
    let n = rows.len();
    let base = running_mean(targets.iter().copied());
    let mut predictions = vec![base; n];
    let mut losses = vec![mse(&targets, &predictions)];
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let sample_n = ((hp.subsample_fraction * n as f64).ceil() as usize).clamp(1, n);

    let mut trees = Vec::with_capacity(hp.tree_count);
    for _ in 0..hp.tree_count {
        let residuals: Vec<f64> = targets
            .iter()
            .zip(&predictions)
            .map(|(t, p)| t - p)
            .collect();
        if residuals.iter().all(|&r| r == 0.0) {
            break;
        }
        let mut sample: Vec<usize> = if sample_n < n {
            let mut s = index::sample(&mut rng, n, sample_n).into_vec();
            s.sort_unstable();
            s
        } else {
            (0..n).collect()
        };
        let mut builder = TreeBuilder {
            features: &features,
            residuals: &residuals,
            max_depth: hp.max_depth,
            min_leaf: hp.min_samples_leaf,
            nodes: Vec::new(),
        };
        builder.build(&mut sample, 0);
        let tree = RegressionTree {
            nodes: builder.nodes,
        };
        for (p, x) in predictions.iter_mut().zip(&features) {
            *p += hp.learning_rate * tree.evaluate(x);
        }
        let loss = mse(&targets, &predictions);
        if hp.subsample_fraction >= 1.0 {
            let prev = *losses.last().expect("seeded with base loss");
            debug_assert!(
                loss <= prev + 1e-9 * prev.max(1e-300),
                "training loss rose from {prev} to {loss}"
            );
        }
        losses.push(loss);
        trees.push(tree);
    }

    let model = SurrogateModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_FORMAT_VERSION,
        feature_count: features[0].len(),
        training_rows: n,
        base_prediction: base,
        hyperparams: hp.clone(),
        trees,
    };
    Ok((model, losses))
}

pub fn fit(data: &TrainingSet, hp: &SurrogateHyperparams) -> Result<SurrogateModel> {
    fit_traced(data, hp).map(|(m, _)| m)
}

/// Retrain from scratch on the cumulative data; the prior model is dropped.
pub fn refit(
    _prior: Option<SurrogateModel>,
    cumulative: &TrainingSet,
    hp: &SurrogateHyperparams,
) -> Result<SurrogateModel> {
    fit(cumulative, hp)
}

impl SurrogateModel {
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_count {
            return Err(Error::Structure(format!(
                "model expects {} features, got {}",
                self.feature_count,
                features.len()
            )));
        }
        let raw = self.base_prediction
            + self.hyperparams.learning_rate
                * self.trees.iter().map(|t| t.evaluate(features)).sum::<f64>();
        Ok(if self.hyperparams.log_target {
            raw.exp()
        } else {
            raw
        })
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn training_rows(&self) -> usize {
        self.training_rows
    }

    pub fn base_prediction(&self) -> f64 {
        self.base_prediction
    }

    pub fn hyperparams(&self) -> &SurrogateHyperparams {
        &self.hyperparams
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: SurrogateModel =
            serde_json::from_str(text).map_err(|e| Error::json("surrogate model", e))?;
        if model.format != MODEL_FORMAT || model.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format {} v{}",
                model.format, model.version
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn grid_linear() -> TrainingSet {
        let mut set = TrainingSet::new();
        for i in 0..20 {
            for j in 0..10 {
                let (x1, x2) = (1.0 + i as f64, 1.0 + j as f64);
                set.push(vec![x1, x2], 3.0 * x1 + x2).unwrap();
            }
        }
        set
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    #[test]
    fn constant_targets_predict_exactly() {
        let mut set = TrainingSet::new();
        for i in 0..7 {
            set.push(vec![i as f64, (i * i) as f64], 0.1).unwrap();
        }
        let m = fit(&set, &SurrogateHyperparams::default()).unwrap();
        for i in 0..20 {
            assert_eq!(m.predict(&[i as f64, 3.0]).unwrap(), 0.1);
        }
    }

    #[test]
    fn single_row_is_reproduced() {
        let set = TrainingSet::from_rows(vec![(vec![4.0, 2.0], 17.25)]).unwrap();
        let m = fit(&set, &SurrogateHyperparams::default()).unwrap();
        assert!((m.predict(&[4.0, 2.0]).unwrap() - 17.25).abs() < 1e-9);
    }

    #[test]
    fn linear_grid_fits_within_five_percent_mdape() {
        let set = grid_linear();
        assert_eq!(set.len(), 200);
        let m = fit(&set, &SurrogateHyperparams::default()).unwrap();
        let apes: Vec<f64> = set
            .rows()
            .iter()
            .map(|(x, y)| ((y - m.predict(x).unwrap()) / y).abs())
            .collect();
        let md = median(apes);
        assert!(md < 0.05, "mdape {md}");
    }

    #[test]
    fn empty_and_bad_inputs() {
        assert!(matches!(
            fit(&TrainingSet::new(), &SurrogateHyperparams::default()),
            Err(Error::EmptyTrainingSet)
        ));
        let mut set = TrainingSet::new();
        set.push(vec![1.0], 1.0).unwrap();
        assert!(set.push(vec![1.0, 2.0], 1.0).is_err());
        assert!(set.push(vec![1.0], f64::NAN).is_err());
        let m = fit(&set, &SurrogateHyperparams::default()).unwrap();
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(Error::Structure(_))));
        let hp = SurrogateHyperparams {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(fit(&set, &hp).is_err());
    }

    #[test]
    fn constant_features_degenerate_to_base() {
        let set = TrainingSet::from_rows(vec![
            (vec![1.0, 1.0], 2.0),
            (vec![1.0, 1.0], 4.0),
            (vec![1.0, 1.0], 6.0),
        ])
        .unwrap();
        let m = fit(&set, &SurrogateHyperparams::default()).unwrap();
        assert!(m.trees().iter().all(|t| t.node_count() == 1));
        assert_eq!(m.predict(&[1.0, 1.0]).unwrap(), 4.0);
    }

    #[test]
    fn memorizes_training_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut set = TrainingSet::new();
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..100.0)).collect();
            let y = 5.0 + x[0] * x[1] / 50.0 + (x[2] - x[3]).abs();
            set.push(x, y).unwrap();
        }
        let m = fit(&set, &SurrogateHyperparams::memorizing()).unwrap();
        for (x, y) in set.rows() {
            let p = m.predict(x).unwrap();
            assert!(((p - y) / y).abs() < 1e-6, "{p} vs {y}");
        }
    }

    #[test]
    fn refit_same_data_is_bit_identical() {
        let set = grid_linear();
        let hp = SurrogateHyperparams {
            subsample_fraction: 0.7,
            seed: 3,
            ..Default::default()
        };
        let a = fit(&set, &hp).unwrap();
        let b = refit(Some(a.clone()), &set, &hp).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let x = [rng.random_range(0.0..25.0), rng.random_range(0.0..12.0)];
            assert_eq!(
                a.predict(&x).unwrap().to_bits(),
                b.predict(&x).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn refit_with_duplicate_row_moves_predictions_boundedly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut set = TrainingSet::new();
        for _ in 0..40 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..10.0)).collect();
            let y = x[0] * 2.0 + x[1].sqrt() + rng.random_range(0.0..1.0);
            set.push(x, y).unwrap();
        }
        let hp = SurrogateHyperparams::default();
        let before = fit(&set, &hp).unwrap();
        let mean = set.rows().iter().map(|r| r.1).sum::<f64>() / set.len() as f64;
        let max_residual = set
            .rows()
            .iter()
            .map(|r| (r.1 - mean).abs())
            .fold(0.0, f64::max);
        let mut grown = set.clone();
        let dup = set.rows()[5].clone();
        grown.push(dup.0, dup.1).unwrap();
        let after = refit(Some(before.clone()), &grown, &hp).unwrap();
        let mut worst = 0.0f64;
        for (x, _) in set.rows() {
            worst = worst.max((after.predict(x).unwrap() - before.predict(x).unwrap()).abs());
        }
        assert!(worst > 0.0);
        assert!(
            worst < 2.0 * hp.learning_rate * max_residual,
            "change {worst} vs bound {}",
            2.0 * hp.learning_rate * max_residual
        );
    }

    #[test]
    fn training_loss_is_non_increasing() {
        let (_, losses) = fit_traced(&grid_linear(), &SurrogateHyperparams::default()).unwrap();
        assert!(losses.len() > 2);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0], "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn log_target_round_trips_positive_values() {
        let set = grid_linear();
        let hp = SurrogateHyperparams {
            log_target: true,
            ..Default::default()
        };
        let m = fit(&set, &hp).unwrap();
        let p = m.predict(&[10.0, 5.0]).unwrap();
        assert!((p - 35.0).abs() / 35.0 < 0.1, "{p}");
        let neg = TrainingSet::from_rows(vec![(vec![1.0], -1.0)]).unwrap();
        assert!(fit(&neg, &hp).is_err());
    }

    #[test]
    fn serialization_round_trip_and_version_check() {
        let m = fit(&grid_linear(), &SurrogateHyperparams::default()).unwrap();
        let back = SurrogateModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
        let tampered = m.to_json().replace("\"version\":1", "\"version\":99");
        assert!(SurrogateModel::from_json(&tampered).is_err());
    }
}
