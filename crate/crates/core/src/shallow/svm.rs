use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_xy, LinearModel};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 10,
            seed: 0,
        }
    }
}

/// Pegasos for one head. The bias is carried as an extra constant feature, so it
/// shares the regularizer and the projection. Returns the average of the iterates
/// visited during the final epoch.
fn pegasos(x: &Matrix, y: &[f64], cfg: &SvmConfig) -> Vec<f64> {
    let n = x.rows();
    let d = x.cols();
    let radius = 1.0 / cfg.lambda.sqrt();
    let mut w = vec![0.0; d + 1];
    let mut avg = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::rng_for(cfg.seed, "svm-shuffle", 0);
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let row = x.row(i);
            let margin = y[i] * (dot(&w[..d], row) + w[d]);
            let shrink = 1.0 - eta * cfg.lambda;
            for v in w.iter_mut() {
                *v *= shrink;
            }
            if margin < 1.0 {
                let g = eta * y[i];
                for (v, xv) in w[..d].iter_mut().zip(row) {
                    *v += g * xv;
                }
                w[d] += g;
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
            if epoch + 1 == cfg.epochs {
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += v;
                }
            }
        }
    }
    let inv = 1.0 / n as f64;
    avg.iter_mut().for_each(|v| *v *= inv);
    avg
}

/// Trains one linear SVM head per target column; outputs are uncalibrated scores.
pub fn train_linear_svm(z: &Matrix, y: &Matrix, cfg: &SvmConfig) -> Result<LinearModel> {
    check_xy(z, y)?;
    if !(cfg.lambda > 0.0) || cfg.epochs == 0 {
        return Err(Error::Config(format!(
            "SVM needs lambda > 0 and epochs > 0, got {} / {}",
            cfg.lambda, cfg.epochs
        )));
    }
    let classes: Vec<usize> = (0..y.cols()).collect();
    let heads = crate::parallel::par_map(&classes, |&c| {
        let signs: Vec<f64> = y
            .column(c)
            .iter()
            .map(|&v| if v > 0.5 { 1.0 } else { -1.0 })
            .collect();
        pegasos(z, &signs, cfg)
    });
    let d = z.cols();
    let mut model = LinearModel::untrained(y.cols(), d);
    for (c, w) in heads.into_iter().enumerate() {
        model.weights.row_mut(c).copy_from_slice(&w[..d]);
        model.bias[c] = w[d];
    }
    model.l2 = cfg.lambda;
    model.trained = true;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_pair_has_positive_margins() {
        let x = Matrix::from_rows(&[[-1.0, 0.5], [1.0, 0.2]]).unwrap();
        let y = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let m = train_linear_svm(
            &x,
            &y,
            &SvmConfig {
                lambda: 1e-2,
                epochs: 200,
                seed: 1,
            },
        )
        .unwrap();
        let s = m.decision_function(&x).unwrap();
        assert!(-s.get(0, 0) >= 0.0 && s.get(1, 0) >= 0.0, "{:?}", s.data());
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let mut rng = crate::rng::rng_from_seed(2);
        let x = Matrix::from_vec(50, 3, (0..150).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = Matrix::from_vec(50, 1, (0..50).map(|i| (i % 2) as f64).collect()).unwrap();
        let m = train_linear_svm(
            &x,
            &y,
            &SvmConfig {
                lambda: 1e6,
                epochs: 5,
                seed: 0,
            },
        )
        .unwrap();
        assert!(m.weights.frobenius_norm() <= 1e-2);
    }

    #[test]
    fn flipped_labels_flip_scores() {
        let mut rng = crate::rng::rng_from_seed(3);
        let x = Matrix::from_vec(
            40,
            2,
            (0..80).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        )
        .unwrap();
        let y = Matrix::from_vec(
            40,
            1,
            (0..40).map(|i| f64::from(x.get(i, 0) > 0.1)).collect(),
        )
        .unwrap();
        let flipped = Matrix::from_vec(40, 1, y.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        let cfg = SvmConfig {
            lambda: 1e-2,
            epochs: 20,
            seed: 4,
        };
        let a = train_linear_svm(&x, &y, &cfg)
            .unwrap()
            .decision_function(&x)
            .unwrap();
        let b = train_linear_svm(&x, &flipped, &cfg)
            .unwrap()
            .decision_function(&x)
            .unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p + q).abs() < 1e-12);
            assert!(*p == 0.0 || p.signum() == -q.signum());
        }
    }
}
