//! Random forests of CART trees for regression and (multiclass)
//! classification.
//!
//! Trees are grown on bootstrap resamples with `mtry` candidate features per
//! split. Split thresholds sit at midpoints between sorted distinct values;
//! among equally good splits the lowest feature index, then the lowest
//! threshold, wins. Each tree draws from its own random stream keyed by
//! `(seed, tree index)`, and training rows are put in a canonical order first,
//! so a fit depends neither on thread scheduling nor on input row order.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` picks ⌈√p⌉ for classification and
    /// max(1, ⌊p/3⌋) for regression.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            mtry: None,
            min_leaf: 5,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::validation("forest.n_trees", "must be at least 1"));
        }
        if self.min_leaf == 0 {
            return Err(Error::validation("forest.min_leaf", "must be at least 1"));
        }
        if self.mtry == Some(0) {
            return Err(Error::validation("forest.mtry", "must be at least 1"));
        }
        Ok(())
    }

    fn resolved_mtry(&self, p: usize, classification: bool) -> Result<usize> {
        match self.mtry {
            Some(m) if m > p => Err(Error::validation("forest.mtry", format!("{m} exceeds {p} features"))),
            Some(m) => Ok(m),
            None if classification => Ok(((p as f64).sqrt().ceil() as usize).clamp(1, p)),
            None => Ok((p / 3).max(1)),
        }
    }
}

/// Training response.
#[derive(Clone, Copy, Debug)]
pub enum Response<'a> {
    Regression(&'a [f64]),
    Classification { labels: &'a [usize], n_classes: usize },
}

impl Response<'_> {
    fn len(&self) -> usize {
        match self {
            Response::Regression(y) => y.len(),
            Response::Classification { labels, .. } => labels.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    Classification { n_classes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Regression: `[mean]`. Classification: class counts.
    Leaf { value: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { value } => return value,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Tree>,
    pub task: Task,
    pub n_features: usize,
    /// Every feature was constant in training; trees are single leaves.
    pub constant_features: bool,
    /// Out-of-bag predictions are not computed.
    pub oob_available: bool,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Schema(format!(
                "row width {} does not match forest width {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Mean of the trees' leaf means.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_width(x)?;
        if !matches!(self.task, Task::Regression) {
            return Err(Error::Model("predict on a classification forest; use predict_proba".into()));
        }
        Ok(self.trees.iter().map(|t| t.leaf(x)[0]).sum::<f64>() / self.trees.len() as f64)
    }

    /// Average of the trees' leaf class proportions.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        let Task::Classification { n_classes } = self.task else {
            return Err(Error::Model("predict_proba on a regression forest".into()));
        };
        let mut acc = vec![0.0; n_classes];
        for t in &self.trees {
            let counts = t.leaf(x);
            let total: f64 = counts.iter().sum();
            for (a, c) in acc.iter_mut().zip(counts) {
                *a += c / total;
            }
        }
        let nt = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= nt);
        Ok(acc)
    }

    #[cfg(test)]
    fn from_leaves(task: Task, leaves: Vec<Vec<f64>>) -> Self {
        ForestModel {
            trees: leaves
                .into_iter()
                .map(|value| Tree {
                    nodes: vec![Node::Leaf { value }],
                })
                .collect(),
            task,
            n_features: 1,
            constant_features: false,
            oob_available: false,
        }
    }
}

/// Fits a forest on `rows` (each of equal width) and `response`.
pub fn fit_forest(rows: &[Vec<f64>], response: Response<'_>, config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    let n = rows.len();
    if response.len() != n {
        return Err(Error::Schema(format!("{n} rows but {} responses", response.len())));
    }
    let p = rows.first().map_or(0, Vec::len);
    if p == 0 {
        return Err(Error::Model("forest needs at least one feature".into()));
    }
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Schema("rows differ in width".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Model("non-finite feature value".into()));
    }
    if n < 2 * config.min_leaf {
        return Err(Error::Model(format!(
            "{n} training rows is fewer than 2 × min_leaf ({})",
            config.min_leaf
        )));
    }
    let task = match response {
        Response::Regression(y) => {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Model("non-finite response".into()));
            }
            Task::Regression
        }
        Response::Classification { labels, n_classes } => {
            if let Some(bad) = labels.iter().find(|l| **l >= n_classes) {
                return Err(Error::Model(format!("class label {bad} out of range")));
            }
            let first = labels[0];
            if labels.iter().all(|l| *l == first) {
                return Err(Error::Model("classification needs at least two classes present".into()));
            }
            Task::Classification { n_classes }
        }
    };
    let mtry = config.resolved_mtry(p, matches!(task, Task::Classification { .. }))?;

    // Canonical row order: lexicographic on features, then response.
    let target: Vec<f64> = match response {
        Response::Regression(y) => y.to_vec(),
        Response::Classification { labels, .. } => labels.iter().map(|l| *l as f64).collect(),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .iter()
            .zip(&rows[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(target[a].total_cmp(&target[b]))
    });
    let cols: Vec<Vec<f64>> = (0..p).map(|j| order.iter().map(|&i| rows[i][j]).collect()).collect();
    let y: Vec<f64> = order.iter().map(|&i| target[i]).collect();

    let constant_features = cols.iter().all(|c| c.iter().all(|v| *v == c[0]));
    let grower = Grower {
        cols: &cols,
        y: &y,
        task,
        mtry,
        min_leaf: config.min_leaf,
        max_depth: config.max_depth,
    };
    let trees: Vec<Tree> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let idx: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grower.grow(idx, &mut rng, constant_features)
        })
        .collect();

    Ok(ForestModel {
        trees,
        task,
        n_features: p,
        constant_features,
        oob_available: false,
    })
}

struct Grower<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    task: Task,
    mtry: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn leaf_value(&self, idx: &[usize]) -> Vec<f64> {
        match self.task {
            Task::Regression => vec![idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64],
            Task::Classification { n_classes } => {
                let mut c = vec![0.0; n_classes];
                for &i in idx {
                    c[self.y[i] as usize] += 1.0;
                }
                c
            }
        }
    }

    /// Impurity × count: SSE for regression, n·Gini for classification.
    fn impurity(&self, idx: &[usize]) -> f64 {
        match self.task {
            Task::Regression => {
                let n = idx.len() as f64;
                let s: f64 = idx.iter().map(|&i| self.y[i]).sum();
                let ss: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
                (ss - s * s / n).max(0.0)
            }
            Task::Classification { .. } => {
                let c = self.leaf_value(idx);
                let n = idx.len() as f64;
                n - c.iter().map(|v| v * v).sum::<f64>() / n
            }
        }
    }

    fn grow(&self, root: Vec<usize>, rng: &mut ChaCha8Rng, single_leaf: bool) -> Tree {
        let mut nodes: Vec<Node> = Vec::new();
        // (node slot, samples, depth)
        let mut stack = vec![(0usize, root, 0usize)];
        nodes.push(Node::Leaf { value: vec![] });
        while let Some((slot, idx, depth)) = stack.pop() {
            let split = if single_leaf
                || idx.len() < 2 * self.min_leaf
                || self.max_depth.is_some_and(|d| depth >= d)
                || self.impurity(&idx) <= 1e-12
            {
                None
            } else {
                self.best_split(&idx, rng)
            };
            match split {
                None => nodes[slot] = Node::Leaf { value: self.leaf_value(&idx) },
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| self.cols[s.feature][i] <= s.threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: vec![] });
                    let right = nodes.len();
                    nodes.push(Node::Leaf { value: vec![] });
                    nodes[slot] = Node::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left,
                        right,
                    };
                    stack.push((right, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
            }
        }
        Tree { nodes }
    }

    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let p = self.cols.len();
        let mut features = sample(rng, p, self.mtry).into_vec();
        features.sort_unstable();
        let mut best: Option<BestSplit> = None;
        let n = idx.len();
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in &features {
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.cols[f][i], self.y[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[n - 1].0 {
                continue;
            }
            match self.task {
                Task::Regression => {
                    let total: f64 = sorted.iter().map(|v| v.1).sum();
                    let total_sq: f64 = sorted.iter().map(|v| v.1 * v.1).sum();
                    let (mut ls, mut lss) = (0.0, 0.0);
                    for k in 0..n - 1 {
                        ls += sorted[k].1;
                        lss += sorted[k].1 * sorted[k].1;
                        let nl = k + 1;
                        if sorted[k].0 == sorted[k + 1].0 || nl < self.min_leaf || n - nl < self.min_leaf {
                            continue;
                        }
                        let nr = (n - nl) as f64;
                        let rs = total - ls;
                        let rss = total_sq - lss;
                        let score = (lss - ls * ls / nl as f64) + (rss - rs * rs / nr);
                        consider(&mut best, score, f, 0.5 * (sorted[k].0 + sorted[k + 1].0));
                    }
                }
                Task::Classification { n_classes } => {
                    let mut right = vec![0.0; n_classes];
                    for v in sorted.iter() {
                        right[v.1 as usize] += 1.0;
                    }
                    let mut left = vec![0.0; n_classes];
                    for k in 0..n - 1 {
                        let c = sorted[k].1 as usize;
                        left[c] += 1.0;
                        right[c] -= 1.0;
                        let nl = k + 1;
                        if sorted[k].0 == sorted[k + 1].0 || nl < self.min_leaf || n - nl < self.min_leaf {
                            continue;
                        }
                        let nlf = nl as f64;
                        let nrf = (n - nl) as f64;
                        let gl = nlf - left.iter().map(|v| v * v).sum::<f64>() / nlf;
                        let gr = nrf - right.iter().map(|v| v * v).sum::<f64>() / nrf;
                        consider(&mut best, gl + gr, f, 0.5 * (sorted[k].0 + sorted[k + 1].0));
                    }
                }
            }
        }
        best
    }
}

fn consider(best: &mut Option<BestSplit>, score: f64, feature: usize, threshold: f64) {
    if best.as_ref().is_none_or(|b| score < b.score) {
        *best = Some(BestSplit {
            score,
            feature,
            threshold,
        });
    }
}

/// Regression forest prediction.
pub fn predict_forest(model: &ForestModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn small() -> ForestConfig {
        ForestConfig {
            n_trees: 25,
            min_leaf: 1,
            ..Default::default()
        }
    }

    #[test]
    fn separable_feature_reproduced() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 2) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[0] == 1.0 { 10.0 } else { -3.0 }).collect();
        let m = fit_forest(&rows, Response::Regression(&y), &small()).unwrap();
        for (r, yi) in rows.iter().zip(&y) {
            assert_eq!(m.predict(r).unwrap(), *yi);
        }
    }

    #[test]
    fn constant_response() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let y = vec![7.0; 12];
        let m = fit_forest(&rows, Response::Regression(&y), &ForestConfig::default()).unwrap();
        assert_eq!(m.predict(&[100.0, -3.0]).unwrap(), 7.0);
    }

    #[test]
    fn constant_features_flagged() {
        let rows = vec![vec![1.0, 2.0]; 12];
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let m = fit_forest(&rows, Response::Regression(&y), &small()).unwrap();
        assert!(m.constant_features);
        assert!((m.predict(&[1.0, 2.0]).unwrap() - 5.5).abs() < 3.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 3) as f64, ((i * 13) % 7) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 2.0 + r[1]).collect();
        let a = fit_forest(&rows, Response::Regression(&y), &small()).unwrap();
        let b = fit_forest(&rows, Response::Regression(&y), &small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_tree_leaf_mean() {
        let m = ForestModel::from_leaves(Task::Regression, vec![vec![3.5]]);
        assert_eq!(predict_forest(&m, &[0.0]).unwrap(), 3.5);
        assert!(m.predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn pure_leaf_probability_one() {
        let m = ForestModel::from_leaves(Task::Classification { n_classes: 3 }, vec![vec![0.0, 4.0, 0.0]]);
        assert_eq!(m.predict_proba(&[0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn averages_tree_proportions() {
        // leaf proportions (0.2, 0.8) and (0.4, 0.6) → (0.3, 0.7)
        let m = ForestModel::from_leaves(
            Task::Classification { n_classes: 2 },
            vec![vec![1.0, 4.0], vec![2.0, 3.0]],
        );
        let p = m.predict_proba(&[0.0]).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-15 && (p[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn preconditions() {
        let rows = vec![vec![1.0]; 4];
        assert!(fit_forest(&rows, Response::Regression(&[1.0, 2.0, 3.0, 4.0]), &ForestConfig::default()).is_err());
        let labels = [1usize; 12];
        let rows = vec![vec![1.0]; 12];
        let r = Response::Classification {
            labels: &labels,
            n_classes: 2,
        };
        assert!(fit_forest(&rows, r, &ForestConfig::default()).is_err());
        let cfg = ForestConfig {
            mtry: Some(3),
            ..small()
        };
        assert!(fit_forest(&rows, Response::Regression(&[0.0; 12]), &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn classification_in_simplex(seed in 0u64..1000, n in 12usize..40) {
            let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![((i as u64 * 31 + seed) % 5) as f64, (i % 3) as f64]).collect();
            let labels: Vec<usize> = (0..n).map(|i| ((i as u64 + seed) % 3) as usize).collect();
            let cfg = ForestConfig { n_trees: 10, seed, min_leaf: 2, ..Default::default() };
            let m = fit_forest(&rows, Response::Classification { labels: &labels, n_classes: 3 }, &cfg).unwrap();
            for r in &rows {
                let p = m.predict_proba(r).unwrap();
                prop_assert!(p.iter().all(|v| *v >= 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn regression_within_training_range(seed in 0u64..1000, ys in proptest::collection::vec(-50.0f64..50.0, 10..30)) {
            let rows: Vec<Vec<f64>> = (0..ys.len()).map(|i| vec![i as f64, (i % 4) as f64]).collect();
            let cfg = ForestConfig { n_trees: 10, seed, min_leaf: 1, ..Default::default() };
            let m = fit_forest(&rows, Response::Regression(&ys), &cfg).unwrap();
            let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for x in [-10.0, 0.0, 5.5, 100.0] {
                let v = m.predict(&[x, 1.0]).unwrap();
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }

        #[test]
        fn invariant_to_row_order(seed in 0u64..1000) {
            let mut data: Vec<(Vec<f64>, f64)> = (0..30)
                .map(|i| (vec![(i % 5) as f64, ((i * 7) % 3) as f64], ((i * 11) % 13) as f64))
                .collect();
            let cfg = ForestConfig { n_trees: 15, seed: 9, min_leaf: 2, ..Default::default() };
            let fit = |d: &[(Vec<f64>, f64)]| {
                let rows: Vec<Vec<f64>> = d.iter().map(|r| r.0.clone()).collect();
                let y: Vec<f64> = d.iter().map(|r| r.1).collect();
                fit_forest(&rows, Response::Regression(&y), &cfg).unwrap()
            };
            let a = fit(&data);
            data.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = fit(&data);
            for x in 0..5 {
                for z in 0..3 {
                    let row = [x as f64, z as f64];
                    prop_assert_eq!(a.predict(&row).unwrap(), b.predict(&row).unwrap());
                }
            }
        }
    }
}
