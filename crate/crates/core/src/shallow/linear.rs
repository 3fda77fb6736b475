use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::check_xy;
use crate::container::{Block, Container};
use crate::error::{Error, Result};
use crate::matrix::{bce_with_logit, gemm, sigmoid, Matrix};

/// Per-class linear heads `w_c . x + b_c`, used by logistic regression and the SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// `C x D`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub l2: f64,
    pub trained: bool,
    /// Per-head objective value after each epoch.
    #[serde(skip)]
    pub history: Vec<Vec<f64>>,
}

impl LinearModel {
    pub fn untrained(classes: usize, dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(classes, dim),
            bias: vec![0.0; classes],
            l2: 0.0,
            trained: false,
            history: Vec::new(),
        }
    }

    /// A ready-to-use model from explicit parameters.
    pub fn from_weights(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::Shape(format!(
                "{} weight rows but {} biases",
                weights.rows(),
                bias.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            l2: 0.0,
            trained: true,
            history: Vec::new(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Raw scores `X W^T + b`, `N x C`.
    pub fn decision_function(&self, x: &Matrix) -> Result<Matrix> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        if x.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.cols()
            )));
        }
        let c = self.n_classes();
        let mut out = Matrix::zeros(x.rows(), c);
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(&self.bias);
        }
        gemm(
            x.rows(),
            x.cols(),
            c,
            1.0,
            x.data(),
            false,
            self.weights.data(),
            true,
            1.0,
            out.data_mut(),
        );
        Ok(out)
    }

    pub fn to_blocks(&self, prefix: &str, c: &mut Container) {
        c.push(Block::matrix(format!("{prefix}.weights"), &self.weights));
        c.push(Block::vector(format!("{prefix}.bias"), self.bias.clone()));
        c.push(Block::scalar(format!("{prefix}.l2"), self.l2));
    }

    pub fn from_blocks(prefix: &str, c: &Container) -> Result<Self> {
        let weights = c.matrix(&format!("{prefix}.weights"))?;
        let bias = c.vector(&format!("{prefix}.bias"))?;
        let mut m = Self::from_weights(weights, bias)?;
        m.l2 = c.scalar(&format!("{prefix}.l2"))?;
        Ok(m)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(
            "linear",
            &serde_json::json!({ "classes": self.n_classes(), "dim": self.dim() }),
        )?;
        self.to_blocks("linear", &mut c);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("linear")?;
        Self::from_blocks("linear", c)
    }
}

/// Per-class probabilities `sigmoid(w_c . x + b_c)`.
pub fn predict_linear(model: &LinearModel, x: &Matrix) -> Result<Matrix> {
    let mut s = model.decision_function(x)?;
    for v in s.data_mut() {
        *v = sigmoid(*v);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogRegSolver {
    /// Full-batch gradient descent with Armijo backtracking starting from `lr`.
    FullBatch,
    /// Fixed-step mini-batch gradient descent; one shuffle per epoch shared by all heads.
    MiniBatch { batch_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    pub solver: LogRegSolver,
    /// Full-batch runs stop once the gradient norm falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 300,
            lr: 4.0,
            solver: LogRegSolver::FullBatch,
            tol: 1e-7,
            seed: 0,
        }
    }
}

/// Mean binary cross-entropy plus `l2 / 2 * |w|^2` for one head, with its gradient.
/// The bias is not regularized.
pub fn logreg_objective(w: &[f64], b: f64, x: &Matrix, y: &[f64], l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.rows();
    let d = x.cols();
    let mut z = vec![b; n];
    gemm(n, d, 1, 1.0, x.data(), false, w, false, 1.0, &mut z);
    let mut loss = 0.0;
    let mut r = vec![0.0; n];
    for i in 0..n {
        loss += bce_with_logit(z[i], y[i]);
        r[i] = sigmoid(z[i]) - y[i];
    }
    let inv = 1.0 / n as f64;
    loss = loss * inv + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    let mut gw: Vec<f64> = w.iter().map(|v| l2 * v).collect();
    gemm(1, n, d, inv, &r, false, x.data(), false, 1.0, &mut gw);
    let gb = r.iter().sum::<f64>() * inv;
    (loss, gw, gb)
}

fn objective_only(w: &[f64], b: f64, x: &Matrix, y: &[f64], l2: f64) -> f64 {
    let n = x.rows();
    let mut z = vec![b; n];
    gemm(n, x.cols(), 1, 1.0, x.data(), false, w, false, 1.0, &mut z);
    let bce: f64 = z.iter().zip(y).map(|(&z, &y)| bce_with_logit(z, y)).sum();
    bce / n as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

fn train_head_full(x: &Matrix, y: &[f64], cfg: &LogRegConfig) -> (Vec<f64>, f64, Vec<f64>) {
    let mut w = vec![0.0; x.cols()];
    let mut b = 0.0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut loss, mut gw, mut gb) = logreg_objective(&w, b, x, y, cfg.l2);
    for _ in 0..cfg.epochs {
        let g2 = gw.iter().map(|v| v * v).sum::<f64>() + gb * gb;
        if g2.sqrt() < cfg.tol {
            history.push(loss);
            continue;
        }
        let mut step = cfg.lr;
        let mut accepted = false;
        for _ in 0..60 {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(w, g)| w - step * g).collect();
            let b_new = b - step * gb;
            let f = objective_only(&w_new, b_new, x, y, cfg.l2);
            if f <= loss - 1e-4 * step * g2 {
                w = w_new;
                b = b_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if accepted {
            (loss, gw, gb) = logreg_objective(&w, b, x, y, cfg.l2);
        }
        history.push(loss);
    }
    (w, b, history)
}

fn train_head_minibatch(
    x: &Matrix,
    y: &[f64],
    cfg: &LogRegConfig,
    batch: usize,
) -> (Vec<f64>, f64, Vec<f64>) {
    let n = x.rows();
    let d = x.cols();
    let batch = batch.clamp(1, n);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    // every head replays the same shuffle sequence
    let mut rng = crate::rng::rng_for(cfg.seed, "logreg-shuffle", 0);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut gw: Vec<f64> = w.iter().map(|v| cfg.l2 * v).collect();
            let mut gb = 0.0;
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let row = x.row(i);
                let r = (sigmoid(crate::matrix::dot(&w, row) + b) - y[i]) * inv;
                for (g, v) in gw.iter_mut().zip(row) {
                    *g += r * v;
                }
                gb += r;
            }
            for (w, g) in w.iter_mut().zip(&gw) {
                *w -= cfg.lr * g;
            }
            b -= cfg.lr * gb;
        }
        history.push(objective_only(&w, b, x, y, cfg.l2));
    }
    (w, b, history)
}

/// Trains one logistic-regression head per target column of `y` (`N x C`).
pub fn train_logreg(x: &Matrix, y: &Matrix, cfg: &LogRegConfig) -> Result<LinearModel> {
    check_xy(x, y)?;
    if !(cfg.l2 >= 0.0 && cfg.lr > 0.0) {
        return Err(Error::Config(format!(
            "logreg needs l2 >= 0 and lr > 0, got {} and {}",
            cfg.l2, cfg.lr
        )));
    }
    let classes: Vec<usize> = (0..y.cols()).collect();
    let heads = crate::parallel::par_map(&classes, |&c| {
        let yc = y.column(c);
        match cfg.solver {
            LogRegSolver::FullBatch => train_head_full(x, &yc, cfg),
            LogRegSolver::MiniBatch { batch_size } => train_head_minibatch(x, &yc, cfg, batch_size),
        }
    });
    let mut model = LinearModel::untrained(y.cols(), x.cols());
    for (c, (w, b, h)) in heads.into_iter().enumerate() {
        if !w.iter().all(|v| v.is_finite()) || !b.is_finite() {
            return Err(Error::Numerical(format!("logreg head {c} diverged")));
        }
        model.weights.row_mut(c).copy_from_slice(&w);
        model.bias[c] = b;
        model.history.push(h);
    }
    model.l2 = cfg.l2;
    model.trained = true;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_problem(n: usize, d: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = crate::rng::rng_from_seed(seed);
        let x = Matrix::from_vec(
            n,
            d,
            (0..n * d)
                .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                .collect(),
        )
        .unwrap();
        let y = Matrix::from_vec(
            n,
            2,
            (0..n)
                .flat_map(|i| {
                    let s = x.get(i, 0) - 0.5 * x.get(i, 1);
                    [f64::from(s > 0.0), f64::from(x.get(i, 1) > 0.3)]
                })
                .collect(),
        )
        .unwrap();
        (x, y)
    }

    #[test]
    fn zero_weights_give_half() {
        let m = LinearModel::from_weights(Matrix::zeros(2, 3), vec![0.0, 0.0]).unwrap();
        let p = predict_linear(&m, &Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn untrained_errors() {
        let m = LinearModel::untrained(1, 1);
        assert!(matches!(
            predict_linear(&m, &Matrix::zeros(1, 1)),
            Err(Error::Untrained)
        ));
    }

    #[test]
    fn saturation_and_monotone_scaling() {
        let m = LinearModel::from_weights(Matrix::zeros(1, 1), vec![20.0]).unwrap();
        assert!(predict_linear(&m, &Matrix::zeros(1, 1)).unwrap().get(0, 0) >= 1.0 - 1e-8);
        let x = Matrix::from_rows(&[[0.3, -1.0], [-2.0, 0.1], [1.0, 1.0]]).unwrap();
        let w = Matrix::from_rows(&[[0.7, 0.4]]).unwrap();
        let p1 = predict_linear(
            &LinearModel::from_weights(w.clone(), vec![0.0]).unwrap(),
            &x,
        )
        .unwrap();
        let mut w2 = w.clone();
        w2.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        let p2 = predict_linear(&LinearModel::from_weights(w2, vec![0.0]).unwrap(), &x).unwrap();
        for (a, b) in p1.data().iter().zip(p2.data()) {
            assert!((b - 0.5).abs() > (a - 0.5).abs());
            assert_eq!(a > &0.5, b > &0.5);
        }
    }

    #[test]
    fn separable_points_fit() {
        let x = Matrix::from_rows(&[[-1.0], [1.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let cfg = LogRegConfig {
            l2: 0.0,
            epochs: 2000,
            ..Default::default()
        };
        let m = train_logreg(&x, &y, &cfg).unwrap();
        let p = predict_linear(&m, &x).unwrap();
        let bce = -((1.0 - p.get(0, 0)).ln() + p.get(1, 0).ln()) / 2.0;
        assert!(bce < 0.01, "{bce}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = random_problem(40, 5, 3);
        let yc = y.column(0);
        let mut rng = crate::rng::rng_from_seed(9);
        let w: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
        let b = 0.3;
        let l2 = 0.1;
        let (_, gw, gb) = logreg_objective(&w, b, &x, &yc, l2);
        let h = 1e-5;
        for j in 0..=5 {
            let (mut wp, mut wm, mut bp, mut bm) = (w.clone(), w.clone(), b, b);
            if j < 5 {
                wp[j] += h;
                wm[j] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            let fd = (objective_only(&wp, bp, &x, &yc, l2) - objective_only(&wm, bm, &x, &yc, l2))
                / (2.0 * h);
            let an = if j < 5 { gw[j] } else { gb };
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
            assert!(rel <= 1e-6, "coordinate {j}: {fd} vs {an}");
        }
    }

    #[test]
    fn full_batch_loss_non_increasing() {
        let (x, y) = random_problem(200, 4, 4);
        let m = train_logreg(
            &x,
            &y,
            &LogRegConfig {
                epochs: 100,
                ..Default::default()
            },
        )
        .unwrap();
        for h in &m.history {
            assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        }
    }

    #[test]
    fn minibatch_deterministic() {
        let (x, y) = random_problem(100, 3, 5);
        let cfg = LogRegConfig {
            solver: LogRegSolver::MiniBatch { batch_size: 16 },
            lr: 0.5,
            epochs: 20,
            ..Default::default()
        };
        let a = train_logreg(&x, &y, &cfg).unwrap();
        let b = train_logreg(&x, &y, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        let p = predict_linear(&a, &x).unwrap();
        let acc = (0..100)
            .filter(|&i| (p.get(i, 0) > 0.5) == (y.get(i, 0) > 0.5))
            .count();
        assert!(acc > 85);
    }

    #[test]
    fn container_round_trip() {
        let (x, y) = random_problem(50, 3, 6);
        let m = train_logreg(
            &x,
            &y,
            &LogRegConfig {
                epochs: 10,
                ..Default::default()
            },
        )
        .unwrap();
        let bytes = m.to_container().unwrap().to_bytes();
        let back = LinearModel::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.weights, m.weights);
        assert_eq!(back.bias, m.bias);
        assert_eq!(back.to_container().unwrap().to_bytes(), bytes);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Matrix::from_rows(&[[f64::NAN]]).unwrap();
        assert!(train_logreg(&x, &Matrix::zeros(1, 1), &LogRegConfig::default()).is_err());
        assert!(matches!(
            train_logreg(
                &Matrix::zeros(2, 1),
                &Matrix::zeros(3, 1),
                &LogRegConfig::default()
            ),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn heads_are_independent(seed in 0u64..1000) {
            let (x, y) = random_problem(60, 3, seed);
            let cfg = LogRegConfig { epochs: 30, ..Default::default() };
            let a = train_logreg(&x, &y, &cfg).unwrap();
            let swapped = y.select_cols(&[1, 0]);
            let b = train_logreg(&x, &swapped, &cfg).unwrap();
            let pa = predict_linear(&a, &x).unwrap();
            let pb = predict_linear(&b, &x).unwrap();
            prop_assert_eq!(pa.column(0), pb.column(1));
            prop_assert_eq!(pa.column(1), pb.column(0));
        }
    }
}
