use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, PcaTarget};
use crate::container::{Block, Container};
use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};

const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `D x k`, one orthonormal component per column.
    pub components: Matrix,
    /// Retained eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Every eigenvalue of the training covariance, non-increasing.
    pub all_eigenvalues: Vec<f64>,
    pub whiten: bool,
}

/// Smallest `k` whose leading eigenvalues explain at least `fraction` of the variance.
pub fn components_for_fraction(eigenvalues: &[f64], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, v) in eigenvalues.iter().enumerate() {
        acc += v.max(0.0);
        if acc / total >= fraction - 1e-12 {
            return i + 1;
        }
    }
    eigenvalues.len()
}

/// Fits PCA on the rows of `train` (population covariance).
pub fn fit_pca(train: &[&Matrix], target: PcaTarget, whiten: bool) -> Result<PcaModel> {
    target.validate()?;
    let d = train.first().map_or(0, |m| m.cols());
    let n: usize = train.iter().map(|m| m.rows()).sum();
    if n < 2 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least two rows, got {n}"
        )));
    }
    if train.iter().any(|m| m.cols() != d) {
        return Err(Error::Shape("PCA inputs differ in width".into()));
    }
    let mut mean = vec![0.0; d];
    for r in train.iter().flat_map(|m| m.iter_rows()) {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v;
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    // covariance = Xc^T Xc / n, accumulated chunk by chunk
    let mut cov = vec![0.0; d * d];
    for m in train {
        let mut centered = (*m).clone();
        for i in 0..centered.rows() {
            for (v, mu) in centered.row_mut(i).iter_mut().zip(&mean) {
                *v -= mu;
            }
        }
        gemm(
            d,
            centered.rows(),
            d,
            1.0 / n as f64,
            centered.data(),
            true,
            centered.data(),
            false,
            1.0,
            &mut cov,
        );
    }
    let sym = DMatrix::from_row_slice(d, d, &cov);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let all_eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let k = match target {
        PcaTarget::Components(k) => k.min(d),
        PcaTarget::VarianceFraction(f) => components_for_fraction(&all_eigenvalues, f),
    };
    let mut components = Matrix::zeros(d, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(i);
        // sign convention: largest-magnitude entry positive
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            components.set(r, c, sign * v[r]);
        }
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues: all_eigenvalues[..k].to_vec(),
        all_eigenvalues,
        whiten,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        if m.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "PCA fitted on {} columns, got {}",
                self.input_dim(),
                m.cols()
            )));
        }
        let mut centered = m.clone();
        for i in 0..centered.rows() {
            for (v, mu) in centered.row_mut(i).iter_mut().zip(&self.mean) {
                *v -= mu;
            }
        }
        let mut out = centered.matmul(&self.components)?;
        if self.whiten {
            let scale: Vec<f64> = self
                .eigenvalues
                .iter()
                .map(|e| 1.0 / e.max(EIGEN_FLOOR).sqrt())
                .collect();
            for i in 0..out.rows() {
                for (v, s) in out.row_mut(i).iter_mut().zip(&scale) {
                    *v *= s;
                }
            }
        }
        Ok(out)
    }

    pub fn apply(&self, f: &FeatureMatrix) -> Result<FeatureMatrix> {
        Ok(f.with_values(self.transform(&f.values)?))
    }

    /// Maps projected rows back to the input space.
    pub fn inverse_transform(&self, z: &Matrix) -> Result<Matrix> {
        let mut z = z.clone();
        if self.whiten {
            for i in 0..z.rows() {
                for (v, e) in z.row_mut(i).iter_mut().zip(&self.eigenvalues) {
                    *v *= e.max(EIGEN_FLOOR).sqrt();
                }
            }
        }
        let mut out = z.matmul(&self.components.transpose())?;
        for i in 0..out.rows() {
            for (v, mu) in out.row_mut(i).iter_mut().zip(&self.mean) {
                *v += mu;
            }
        }
        Ok(out)
    }

    pub fn to_blocks(&self, prefix: &str, c: &mut Container) {
        c.push(Block::vector(format!("{prefix}.mean"), self.mean.clone()));
        c.push(Block::new(
            format!("{prefix}.components"),
            vec![self.components.rows(), self.components.cols()],
            self.components.data().to_vec(),
        ));
        c.push(Block::vector(
            format!("{prefix}.eigenvalues"),
            self.eigenvalues.clone(),
        ));
        c.push(Block::vector(
            format!("{prefix}.all_eigenvalues"),
            self.all_eigenvalues.clone(),
        ));
        c.push(Block::scalar(
            format!("{prefix}.whiten"),
            if self.whiten { 1.0 } else { 0.0 },
        ));
    }

    pub fn from_blocks(prefix: &str, c: &Container) -> Result<Self> {
        let comp = c.block(&format!("{prefix}.components"))?;
        if comp.dims.len() != 2 {
            return Err(Error::Format("PCA components must be a matrix".into()));
        }
        Ok(Self {
            mean: c.block(&format!("{prefix}.mean"))?.values.clone(),
            components: Matrix::from_vec(comp.dims[0], comp.dims[1], comp.values.clone())?,
            eigenvalues: c.block(&format!("{prefix}.eigenvalues"))?.values.clone(),
            all_eigenvalues: c
                .block(&format!("{prefix}.all_eigenvalues"))?
                .values
                .clone(),
            whiten: c.scalar(&format!("{prefix}.whiten"))? != 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, scales: &[f64], seed: u64) -> Matrix {
        let mut rng = crate::rng::rng_from_seed(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut m = Matrix::zeros(n, scales.len());
        for i in 0..n {
            for (j, s) in scales.iter().enumerate() {
                m.set(i, j, s * normal.sample(&mut rng) + 1.5);
            }
        }
        m
    }

    #[test]
    fn fraction_selection() {
        assert_eq!(components_for_fraction(&[8.0, 1.0, 0.5, 0.5], 0.95), 3);
        assert_eq!(components_for_fraction(&[8.0, 1.0, 0.5, 0.5], 0.8), 1);
        assert_eq!(components_for_fraction(&[8.0, 1.0, 0.5, 0.5], 1.0), 4);
    }

    #[test]
    fn components_orthonormal_and_sorted() {
        let x = gaussian(500, &[3.0, 1.0, 0.2, 2.0, 0.5], 1);
        let p = fit_pca(&[&x], PcaTarget::Components(5), false).unwrap();
        let gram = p.components.transpose().matmul(&p.components).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - e).abs() < 1e-6);
            }
        }
        assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn axis_aligned_data_gives_permuted_identity() {
        let x = gaussian(4000, &[1.0, 4.0, 2.0], 2);
        let p = fit_pca(&[&x], PcaTarget::Components(3), false).unwrap();
        // expected ordering by variance: axis 1, axis 2, axis 0
        for (c, axis) in [1usize, 2, 0].into_iter().enumerate() {
            for r in 0..3 {
                let e = if r == axis { 1.0 } else { 0.0 };
                assert!(
                    (p.components.get(r, c).abs() - e).abs() < 0.05,
                    "component {c}"
                );
            }
        }
    }

    #[test]
    fn reconstruction_error_is_discarded_variance() {
        let x = gaussian(300, &[2.0, 1.0, 0.7, 0.3, 0.1, 0.05], 3);
        for k in 1..=6 {
            let p = fit_pca(&[&x], PcaTarget::Components(k), false).unwrap();
            let back = p.inverse_transform(&p.transform(&x).unwrap()).unwrap();
            let err: f64 = x
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / x.rows() as f64;
            let discarded: f64 = p.all_eigenvalues[k..].iter().sum();
            assert!(
                (err - discarded).abs() < 1e-6,
                "k={k}: {err} vs {discarded}"
            );
        }
    }

    #[test]
    fn full_fraction_is_invertible() {
        let mut rng = crate::rng::rng_from_seed(5);
        let x = Matrix::from_vec(50, 4, (0..200).map(|_| rng.random::<f64>()).collect()).unwrap();
        let p = fit_pca(&[&x], PcaTarget::VarianceFraction(1.0), true).unwrap();
        assert_eq!(p.n_components(), 4);
        let back = p.inverse_transform(&p.transform(&x).unwrap()).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_fraction() {
        let x = gaussian(10, &[1.0, 1.0], 4);
        assert!(fit_pca(&[&x], PcaTarget::VarianceFraction(0.0), false).is_err());
        assert!(fit_pca(&[&x], PcaTarget::VarianceFraction(1.01), false).is_err());
    }
}
