use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_xy;
use crate::container::{Block, Container};
use crate::error::{Error, Result};
use crate::matrix::{bce_with_logit, sigmoid, Matrix};

const PRIOR_CLAMP: f64 = 1e-6;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Row fraction drawn (seeded) for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            subsample: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Split feature, or `None` for a leaf.
    pub feature: Option<usize>,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Self {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            let n = &self.nodes[k];
            match n.feature {
                None => return n.value,
                Some(f) => k = if x[f] <= n.threshold { n.left } else { n.right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, k: usize) -> usize {
            let n = &t.nodes[k];
            match n.feature {
                None => 0,
                Some(_) => 1 + walk(t, n.left).max(walk(t, n.right)),
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub config: GbdtConfig,
    pub dim: usize,
    /// Prior log-odds per class.
    pub init: Vec<f64>,
    /// `trees[class][stage]`.
    pub trees: Vec<Vec<Tree>>,
    /// Training loss per class after each stage (index 0 is the prior).
    #[serde(skip)]
    pub history: Vec<Vec<f64>>,
}

struct Sorted {
    /// Feature-major copy of the inputs.
    xt: Matrix,
    /// Row indices sorted by each feature.
    order: Vec<Vec<u32>>,
}

impl Sorted {
    fn new(x: &Matrix) -> Self {
        let xt = x.transpose();
        let order = (0..xt.rows())
            .map(|f| {
                let col = xt.row(f);
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { xt, order }
    }
}

#[derive(Clone, Copy)]
struct Acc {
    sum: f64,
    count: usize,
    last: f64,
    best_gain: f64,
    best_feature: usize,
    best_threshold: f64,
}

const NONE: u32 = u32::MAX;

/// Fits one regression tree to `target` over the rows marked in `in_sample`, growing
/// level by level with exact greedy variance-reduction splits.
fn fit_tree(data: &Sorted, target: &[f64], in_sample: &[bool], cfg: &GbdtConfig) -> Tree {
    let n = target.len();
    let mut node_of: Vec<u32> = (0..n)
        .map(|i| if in_sample[i] { 0 } else { NONE })
        .collect();
    let (sum, count) = (0..n)
        .filter(|&i| in_sample[i])
        .fold((0.0, 0usize), |a, i| (a.0 + target[i], a.1 + 1));
    let mut nodes = vec![Node::leaf(if count > 0 { sum / count as f64 } else { 0.0 })];
    let mut stats = vec![(sum, count)];
    let mut frontier: Vec<usize> = vec![0];
    for _depth in 0..cfg.max_depth {
        let splittable: Vec<usize> = frontier
            .iter()
            .copied()
            .filter(|&k| stats[k].1 >= 2 * cfg.min_samples_leaf.max(1))
            .collect();
        if splittable.is_empty() {
            break;
        }
        // slot of each frontier node in the accumulator table
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, &k) in splittable.iter().enumerate() {
            slot[k] = s;
        }
        let fresh = Acc {
            sum: 0.0,
            count: 0,
            last: 0.0,
            best_gain: MIN_GAIN,
            best_feature: usize::MAX,
            best_threshold: 0.0,
        };
        let mut best = vec![fresh; splittable.len()];
        for (f, order) in data.order.iter().enumerate() {
            let col = data.xt.row(f);
            let mut acc: Vec<Acc> = best
                .iter()
                .map(|b| Acc {
                    sum: 0.0,
                    count: 0,
                    last: 0.0,
                    ..*b
                })
                .collect();
            for &row in order {
                let row = row as usize;
                let k = node_of[row];
                if k == NONE || slot[k as usize] == usize::MAX {
                    continue;
                }
                let s = slot[k as usize];
                let a = &mut acc[s];
                let v = col[row];
                if a.count >= cfg.min_samples_leaf.max(1) && v > a.last {
                    let (tot, cnt) = stats[k as usize];
                    let rc = cnt - a.count;
                    if rc >= cfg.min_samples_leaf.max(1) {
                        let rs = tot - a.sum;
                        let gain = a.sum * a.sum / a.count as f64 + rs * rs / rc as f64
                            - tot * tot / cnt as f64;
                        if gain > a.best_gain {
                            let mut thr = a.last + 0.5 * (v - a.last);
                            if thr >= v {
                                thr = a.last;
                            }
                            a.best_gain = gain;
                            a.best_feature = f;
                            a.best_threshold = thr;
                        }
                    }
                }
                a.sum += target[row];
                a.count += 1;
                a.last = v;
            }
            for (b, a) in best.iter_mut().zip(&acc) {
                b.best_gain = a.best_gain;
                b.best_feature = a.best_feature;
                b.best_threshold = a.best_threshold;
            }
        }
        let mut next = Vec::new();
        let mut child_of = vec![(usize::MAX, usize::MAX); nodes.len()];
        for (s, &k) in splittable.iter().enumerate() {
            let b = best[s];
            if b.best_feature == usize::MAX {
                continue;
            }
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::leaf(0.0));
            nodes.push(Node::leaf(0.0));
            stats.push((0.0, 0));
            stats.push((0.0, 0));
            nodes[k] = Node {
                feature: Some(b.best_feature),
                threshold: b.best_threshold,
                left: l,
                right: r,
                value: nodes[k].value,
            };
            child_of.resize(nodes.len(), (usize::MAX, usize::MAX));
            child_of[k] = (l, r);
            next.push(l);
            next.push(r);
        }
        if next.is_empty() {
            break;
        }
        for row in 0..n {
            let k = node_of[row];
            if k == NONE {
                continue;
            }
            let (l, r) = child_of[k as usize];
            if l == usize::MAX {
                continue;
            }
            let node = nodes[k as usize];
            let c = if data.xt.get(node.feature.expect("split"), row) <= node.threshold {
                l
            } else {
                r
            };
            node_of[row] = c as u32;
            stats[c].0 += target[row];
            stats[c].1 += 1;
        }
        for &c in &next {
            let (s, cnt) = stats[c];
            nodes[c].value = s / cnt as f64;
        }
        frontier = next;
    }
    // internal nodes keep their mean only for inspection; prediction never reads it
    Tree { nodes }
}

fn train_class(
    x: &Matrix,
    data: &Sorted,
    y: &[f64],
    cfg: &GbdtConfig,
    class: usize,
) -> (f64, Vec<Tree>, Vec<f64>) {
    let n = y.len();
    let prior = (y.iter().sum::<f64>() / n as f64).clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let init = (prior / (1.0 - prior)).ln();
    let mut f = vec![init; n];
    let loss = |f: &[f64]| {
        f.iter()
            .zip(y)
            .map(|(&z, &y)| bce_with_logit(z, y))
            .sum::<f64>()
            / n as f64
    };
    let mut history = vec![loss(&f)];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut rng = crate::rng::rng_for(cfg.seed, "gbdt-subsample", class as u64);
    let mut in_sample = vec![true; n];
    for _ in 0..cfg.n_trees {
        if cfg.subsample < 1.0 {
            for v in in_sample.iter_mut() {
                *v = rng.random::<f64>() < cfg.subsample;
            }
        }
        let residual: Vec<f64> = f.iter().zip(y).map(|(&z, &y)| y - sigmoid(z)).collect();
        let tree = fit_tree(data, &residual, &in_sample, cfg);
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += cfg.learning_rate * tree.predict(x.row(i));
        }
        history.push(loss(&f));
        trees.push(tree);
    }
    (init, trees, history)
}

/// Stagewise boosting on the logistic loss, one ensemble per target column.
pub fn train_gbdt(x: &Matrix, y: &Matrix, cfg: &GbdtConfig) -> Result<GbdtModel> {
    check_xy(x, y)?;
    if !(cfg.learning_rate > 0.0) || !(cfg.subsample > 0.0 && cfg.subsample <= 1.0) {
        return Err(Error::Config(
            "GBDT needs learning_rate > 0 and subsample in (0, 1]".into(),
        ));
    }
    let data = Sorted::new(x);
    let classes: Vec<usize> = (0..y.cols()).collect();
    let fitted =
        crate::parallel::par_map(&classes, |&c| train_class(x, &data, &y.column(c), cfg, c));
    let mut model = GbdtModel {
        config: cfg.clone(),
        dim: x.cols(),
        init: Vec::new(),
        trees: Vec::new(),
        history: Vec::new(),
    };
    for (init, trees, h) in fitted {
        model.init.push(init);
        model.trees.push(trees);
        model.history.push(h);
    }
    Ok(model)
}

/// Per-class probabilities, `N x C`.
pub fn predict_gbdt(m: &GbdtModel, x: &Matrix) -> Result<Matrix> {
    if x.cols() != m.dim {
        return Err(Error::Shape(format!(
            "GBDT expects {} features, got {}",
            m.dim,
            x.cols()
        )));
    }
    let c = m.init.len();
    let mut out = Matrix::zeros(x.rows(), c);
    for i in 0..x.rows() {
        let row = x.row(i);
        for k in 0..c {
            let z = m.init[k]
                + m.config.learning_rate * m.trees[k].iter().map(|t| t.predict(row)).sum::<f64>();
            out.set(i, k, sigmoid(z));
        }
    }
    Ok(out)
}

impl GbdtModel {
    pub fn to_blocks(&self, prefix: &str, c: &mut Container) {
        c.push(Block::vector(format!("{prefix}.init"), self.init.clone()));
        for (k, trees) in self.trees.iter().enumerate() {
            for (t, tree) in trees.iter().enumerate() {
                let flat = tree
                    .nodes
                    .iter()
                    .flat_map(|n| {
                        let f = n.feature.map_or(-1.0, |f| f as f64);
                        [f, n.threshold, n.left as f64, n.right as f64, n.value]
                    })
                    .collect();
                c.push(Block::new(
                    format!("{prefix}.tree.{k}.{t}"),
                    vec![tree.nodes.len(), 5],
                    flat,
                ));
            }
        }
    }

    pub fn from_blocks(
        prefix: &str,
        config: GbdtConfig,
        dim: usize,
        c: &Container,
    ) -> Result<Self> {
        let init = c.vector(&format!("{prefix}.init"))?;
        let mut trees = Vec::with_capacity(init.len());
        for k in 0..init.len() {
            let mut class_trees = Vec::with_capacity(config.n_trees);
            for t in 0..config.n_trees {
                let b = c.block(&format!("{prefix}.tree.{k}.{t}"))?;
                if b.dims.len() != 2 || b.dims[1] != 5 {
                    return Err(Error::Format(format!("malformed tree block `{}`", b.name)));
                }
                let nodes: Vec<Node> = b
                    .values
                    .chunks_exact(5)
                    .map(|v| Node {
                        feature: (v[0] >= 0.0).then_some(v[0] as usize),
                        threshold: v[1],
                        left: v[2] as usize,
                        right: v[3] as usize,
                        value: v[4],
                    })
                    .collect();
                let bad = nodes.iter().any(|n| {
                    n.feature.is_some_and(|f| {
                        f >= dim || n.left >= nodes.len() || n.right >= nodes.len()
                    })
                });
                if nodes.is_empty() || bad {
                    return Err(Error::Format(format!(
                        "tree block `{}` references missing nodes",
                        b.name
                    )));
                }
                class_trees.push(Tree { nodes });
            }
            trees.push(class_trees);
        }
        Ok(Self {
            config,
            dim,
            init,
            trees,
            history: Vec::new(),
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new("gbdt", &(self.config.clone(), self.dim))?;
        self.to_blocks("gbdt", &mut c);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("gbdt")?;
        let (config, dim): (GbdtConfig, usize) = c.hyper()?;
        Self::from_blocks("gbdt", config, dim, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize, d: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = crate::rng::rng_from_seed(seed);
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = Matrix::from_vec(
            n,
            2,
            (0..n)
                .flat_map(|i| {
                    [
                        f64::from(x.get(i, 0) + 0.3 * x.get(i, 1) > 0.6),
                        f64::from(x.get(i, d - 1) > 0.7),
                    ]
                })
                .collect(),
        )
        .unwrap();
        (x, y)
    }

    #[test]
    fn zero_trees_predict_prior() {
        let (x, y) = dataset(50, 3, 1);
        let m = train_gbdt(
            &x,
            &y,
            &GbdtConfig {
                n_trees: 0,
                ..Default::default()
            },
        )
        .unwrap();
        let p = predict_gbdt(&m, &x).unwrap();
        for c in 0..2 {
            let prior = y.column(c).iter().sum::<f64>() / 50.0;
            assert!(p.column(c).iter().all(|v| (v - prior).abs() < 1e-12));
        }
    }

    #[test]
    fn stumps_separate_threshold_data() {
        let x = Matrix::from_vec(20, 1, (0..20).map(|i| i as f64).collect()).unwrap();
        let y = Matrix::from_vec(20, 1, (0..20).map(|i| f64::from(i >= 12)).collect()).unwrap();
        let cfg = GbdtConfig {
            n_trees: 50,
            max_depth: 1,
            ..Default::default()
        };
        let m = train_gbdt(&x, &y, &cfg).unwrap();
        let p = predict_gbdt(&m, &x).unwrap();
        assert!((0..20).all(|i| (p.get(i, 0) > 0.5) == (y.get(i, 0) > 0.5)));
        assert!(m.trees[0].iter().all(|t| t.depth() <= 1));
        // the first split lands between the classes
        assert_eq!(m.trees[0][0].nodes[0].threshold, 11.5);
    }

    #[test]
    fn loss_non_increasing_and_depth_limited() {
        let (x, y) = dataset(200, 4, 2);
        let m = train_gbdt(
            &x,
            &y,
            &GbdtConfig {
                n_trees: 30,
                max_depth: 3,
                ..Default::default()
            },
        )
        .unwrap();
        for h in &m.history {
            assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        }
        assert!(m.trees.iter().flatten().all(|t| t.depth() <= 3));
    }

    #[test]
    fn split_search_matches_brute_force() {
        let (x, y) = dataset(40, 3, 3);
        let r: Vec<f64> = y.column(0).iter().map(|v| v - 0.4).collect();
        let cfg = GbdtConfig {
            max_depth: 1,
            ..Default::default()
        };
        let tree = fit_tree(&Sorted::new(&x), &r, &vec![true; 40], &cfg);
        // brute force over every feature and every observed value as threshold
        let total: f64 = r.iter().sum();
        let mut best = (f64::NEG_INFINITY, 0, 0.0);
        for f in 0..3 {
            let mut vals: Vec<f64> = x.column(f);
            vals.sort_by(f64::total_cmp);
            for &t in &vals[..39] {
                let (mut ls, mut lc) = (0.0, 0.0);
                for i in 0..40 {
                    if x.get(i, f) <= t {
                        ls += r[i];
                        lc += 1.0;
                    }
                }
                let rs = total - ls;
                let gain = ls * ls / lc + rs * rs / (40.0 - lc) - total * total / 40.0;
                if gain > best.0 + 1e-12 {
                    best = (gain, f, t);
                }
            }
        }
        let root = tree.nodes[0];
        assert_eq!(root.feature, Some(best.1));
        let left: Vec<usize> = (0..40).filter(|&i| x.get(i, best.1) <= best.2).collect();
        let left_tree: Vec<usize> = (0..40)
            .filter(|&i| x.get(i, best.1) <= root.threshold)
            .collect();
        assert_eq!(left, left_tree);
    }

    #[test]
    fn column_permutation_invariance() {
        let (x, y) = dataset(120, 4, 4);
        let perm = [2, 0, 3, 1];
        let xp = x.select_cols(&perm);
        let cfg = GbdtConfig {
            n_trees: 20,
            ..Default::default()
        };
        let a = predict_gbdt(&train_gbdt(&x, &y, &cfg).unwrap(), &x).unwrap();
        let b = predict_gbdt(&train_gbdt(&xp, &y, &cfg).unwrap(), &xp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn container_round_trip() {
        let (x, y) = dataset(60, 3, 5);
        let m = train_gbdt(
            &x,
            &y,
            &GbdtConfig {
                n_trees: 5,
                subsample: 0.8,
                ..Default::default()
            },
        )
        .unwrap();
        let bytes = m.to_container().unwrap().to_bytes();
        let back = GbdtModel::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.trees, m.trees);
        assert_eq!(
            predict_gbdt(&back, &x).unwrap(),
            predict_gbdt(&m, &x).unwrap()
        );
        assert_eq!(back.to_container().unwrap().to_bytes(), bytes);
    }
}
