use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::{Block, Container};
use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};

const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum KernelBasis {
    /// `exp(-gamma |x - y|^2)`
    Rbf { gamma: f64 },
    /// `(gamma x.y + coef)^3`
    Polynomial { gamma: f64, coef: f64 },
}

impl KernelBasis {
    /// Kernel matrix between the rows of `a` and `b`.
    pub fn gram(&self, a: &Matrix, b: &Matrix) -> Matrix {
        let (n, m, d) = (a.rows(), b.rows(), a.cols());
        let mut k = Matrix::zeros(n, m);
        gemm(
            n,
            d,
            m,
            1.0,
            a.data(),
            false,
            b.data(),
            true,
            0.0,
            k.data_mut(),
        );
        match *self {
            KernelBasis::Rbf { gamma } => {
                let na: Vec<f64> = a
                    .iter_rows()
                    .map(|r| r.iter().map(|v| v * v).sum())
                    .collect();
                let nb: Vec<f64> = b
                    .iter_rows()
                    .map(|r| r.iter().map(|v| v * v).sum())
                    .collect();
                for i in 0..n {
                    for (j, v) in k.row_mut(i).iter_mut().enumerate() {
                        let d2 = (na[i] + nb[j] - 2.0 * *v).max(0.0);
                        *v = (-gamma * d2).exp();
                    }
                }
            }
            KernelBasis::Polynomial { gamma, coef } => {
                for v in k.data_mut() {
                    *v = (gamma * *v + coef).powi(3);
                }
            }
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ApproxKind {
    /// `m` landmarks; `None` picks `min(1024, N / 10)`.
    Nystroem {
        m: Option<usize>,
    },
    RandomKitchenSinks {
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: ApproxKind,
    pub basis: KernelBasis,
    #[serde(default)]
    pub seed: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kind: ApproxKind::Nystroem { m: None },
            basis: KernelBasis::Rbf { gamma: 0.01 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelApproximator {
    Nystroem {
        basis: KernelBasis,
        landmarks: Matrix,
        /// `K_bb^(-1/2)`, `m x m`.
        normalization: Matrix,
    },
    RandomKitchenSinks {
        gamma: f64,
        /// `D_r x d`.
        omega: Matrix,
        phase: Vec<f64>,
    },
}

/// Fits a kernel approximation on the training rows.
pub fn fit_kernel_approx(x: &Matrix, cfg: &KernelConfig) -> Result<KernelApproximator> {
    let n = x.rows();
    if n == 0 || !x.all_finite() {
        return Err(Error::InvalidInput(
            "kernel approximation needs finite, non-empty data".into(),
        ));
    }
    match cfg.kind {
        ApproxKind::Nystroem { m } => {
            let m = m.unwrap_or_else(|| (n / 10).clamp(1, 1024));
            if m == 0 || m > n {
                return Err(Error::Config(format!(
                    "Nystroem needs 1 <= m <= N, got m = {m}, N = {n}"
                )));
            }
            // the first m of one seeded permutation, so landmark sets nest as m grows
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut crate::rng::rng_for(cfg.seed, "nystroem", 0));
            let landmarks = x.select_rows(&order[..m]);
            let kbb = cfg.basis.gram(&landmarks, &landmarks);
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(m, m, kbb.data()));
            let mut normalization = Matrix::zeros(m, m);
            for k in 0..m {
                let s = 1.0 / eig.eigenvalues[k].max(EIGEN_FLOOR).sqrt();
                let u = eig.eigenvectors.column(k);
                for i in 0..m {
                    let ui = u[i] * s;
                    for (j, v) in normalization.row_mut(i).iter_mut().enumerate() {
                        *v += ui * u[j];
                    }
                }
            }
            Ok(KernelApproximator::Nystroem {
                basis: cfg.basis,
                landmarks,
                normalization,
            })
        }
        ApproxKind::RandomKitchenSinks { dim } => {
            let KernelBasis::Rbf { gamma } = cfg.basis else {
                return Err(Error::Unsupported(
                    "random kitchen sinks only approximate the RBF kernel".into(),
                ));
            };
            if dim == 0 || gamma <= 0.0 {
                return Err(Error::Config(
                    "random kitchen sinks need dim > 0 and gamma > 0".into(),
                ));
            }
            let d = x.cols();
            let mut rng = crate::rng::rng_for(cfg.seed, "rks", 0);
            let normal =
                Normal::new(0.0, (2.0 * gamma).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
            let omega = Matrix::from_vec(
                dim,
                d,
                (0..dim * d).map(|_| normal.sample(&mut rng)).collect(),
            )?;
            let phase = (0..dim)
                .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
                .collect();
            Ok(KernelApproximator::RandomKitchenSinks {
                gamma,
                omega,
                phase,
            })
        }
    }
}

impl KernelApproximator {
    pub fn input_dim(&self) -> usize {
        match self {
            KernelApproximator::Nystroem { landmarks, .. } => landmarks.cols(),
            KernelApproximator::RandomKitchenSinks { omega, .. } => omega.cols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            KernelApproximator::Nystroem { landmarks, .. } => landmarks.rows(),
            KernelApproximator::RandomKitchenSinks { omega, .. } => omega.rows(),
        }
    }

    /// Maps rows into the approximate feature space, `N x output_dim`.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "kernel map expects {} features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        match self {
            KernelApproximator::Nystroem {
                basis,
                landmarks,
                normalization,
            } => basis.gram(x, landmarks).matmul(normalization),
            KernelApproximator::RandomKitchenSinks { omega, phase, .. } => {
                let dim = omega.rows();
                let mut z = Matrix::zeros(x.rows(), dim);
                gemm(
                    x.rows(),
                    x.cols(),
                    dim,
                    1.0,
                    x.data(),
                    false,
                    omega.data(),
                    true,
                    0.0,
                    z.data_mut(),
                );
                let scale = (2.0 / dim as f64).sqrt();
                for i in 0..z.rows() {
                    for (v, p) in z.row_mut(i).iter_mut().zip(phase) {
                        *v = scale * (*v + p).cos();
                    }
                }
                Ok(z)
            }
        }
    }

    pub fn to_blocks(&self, prefix: &str, c: &mut Container) {
        match self {
            KernelApproximator::Nystroem {
                basis,
                landmarks,
                normalization,
            } => {
                let (kind, gamma, coef) = match *basis {
                    KernelBasis::Rbf { gamma } => (0.0, gamma, 0.0),
                    KernelBasis::Polynomial { gamma, coef } => (1.0, gamma, coef),
                };
                c.push(Block::vector(
                    format!("{prefix}.nystroem"),
                    vec![kind, gamma, coef],
                ));
                c.push(Block::matrix(format!("{prefix}.landmarks"), landmarks));
                c.push(Block::matrix(
                    format!("{prefix}.normalization"),
                    normalization,
                ));
            }
            KernelApproximator::RandomKitchenSinks {
                gamma,
                omega,
                phase,
            } => {
                c.push(Block::scalar(format!("{prefix}.rks_gamma"), *gamma));
                c.push(Block::matrix(format!("{prefix}.omega"), omega));
                c.push(Block::vector(format!("{prefix}.phase"), phase.clone()));
            }
        }
    }

    pub fn from_blocks(prefix: &str, c: &Container) -> Result<Self> {
        if let Ok(p) = c.block(&format!("{prefix}.nystroem")) {
            let [kind, gamma, coef] = p.values[..] else {
                return Err(Error::Format("malformed Nystroem parameters".into()));
            };
            let basis = if kind == 0.0 {
                KernelBasis::Rbf { gamma }
            } else {
                KernelBasis::Polynomial { gamma, coef }
            };
            return Ok(KernelApproximator::Nystroem {
                basis,
                landmarks: c.matrix(&format!("{prefix}.landmarks"))?,
                normalization: c.matrix(&format!("{prefix}.normalization"))?,
            });
        }
        Ok(KernelApproximator::RandomKitchenSinks {
            gamma: c.scalar(&format!("{prefix}.rks_gamma"))?,
            omega: c.matrix(&format!("{prefix}.omega"))?,
            phase: c.vector(&format!("{prefix}.phase"))?,
        })
    }
}
