//! Shallow classifiers: logistic regression, linear SVM over kernel-approximation
//! features, probability calibration and gradient-boosted trees. Multi-label problems
//! are handled by one independent binary head per class.

mod calibrate;
mod gbdt;
mod kernel;
mod linear;
mod svm;

pub use calibrate::{calibrate, fit_calibrator, CalibrationKind, Calibrator};
pub use gbdt::{predict_gbdt, train_gbdt, GbdtConfig, GbdtModel, Node, Tree};
pub use kernel::{fit_kernel_approx, ApproxKind, KernelApproximator, KernelBasis, KernelConfig};
pub use linear::{
    logreg_objective, predict_linear, train_logreg, LinearModel, LogRegConfig, LogRegSolver,
};
pub use svm::{train_linear_svm, SvmConfig};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Checks that features and `N x C` targets line up and are finite.
pub(crate) fn check_xy(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} target rows",
            x.rows(),
            y.rows()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if !x.all_finite() {
        return Err(Error::InvalidInput("non-finite feature values".into()));
    }
    if !y.all_finite() {
        return Err(Error::InvalidInput("non-finite targets".into()));
    }
    Ok(())
}
