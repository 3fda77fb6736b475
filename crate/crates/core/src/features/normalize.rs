use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const VARIANCE_FLOOR: f64 = 1e-8;
const FLOORED_STD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatsSource {
    PerRecording,
    TrainingSet,
}

/// Per-column mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmvnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl CmvnStats {
    /// Population statistics over every row of every matrix (two passes).
    pub fn fit_matrices(parts: &[&Matrix]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols());
        if let Some(m) = parts.iter().find(|m| m.cols() != cols) {
            return Err(Error::Shape(format!(
                "CMVN over {cols} and {} columns",
                m.cols()
            )));
        }
        let n: usize = parts.iter().map(|m| m.rows()).sum();
        if n == 0 {
            return Err(Error::InvalidInput(
                "CMVN statistics need at least one frame".into(),
            ));
        }
        let mut mean = vec![0.0; cols];
        for r in parts.iter().flat_map(|m| m.iter_rows()) {
            for (acc, &v) in mean.iter_mut().zip(r) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= n as f64;
        }
        let mut var = vec![0.0; cols];
        for r in parts.iter().flat_map(|m| m.iter_rows()) {
            for ((acc, &v), mu) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var
            .iter()
            .map(|v| (v / n as f64).max(VARIANCE_FLOOR).sqrt())
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "CMVN fitted on {} columns, got {}",
                self.mean.len(),
                m.cols()
            )));
        }
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                let sd = self.std[j];
                // floored (constant) columns map to exactly zero
                *v = if sd <= FLOORED_STD {
                    0.0
                } else {
                    (*v - self.mean[j]) / sd
                };
            }
        }
        Ok(out)
    }
}

/// Normalizes every column to zero mean and unit variance. With
/// [`StatsSource::TrainingSet`], `training` supplies the statistics.
pub fn cmvn(
    f: &FeatureMatrix,
    source: StatsSource,
    training: Option<&CmvnStats>,
) -> Result<FeatureMatrix> {
    let stats = match source {
        StatsSource::PerRecording => {
            if f.rows() < 2 {
                return Err(Error::InvalidInput(
                    "per-recording CMVN needs at least two frames".into(),
                ));
            }
            CmvnStats::fit_matrices(&[&f.values])?
        }
        StatsSource::TrainingSet => training.cloned().ok_or_else(|| {
            Error::InvalidInput("training-set CMVN requires fitted statistics".into())
        })?,
    };
    Ok(f.with_values(stats.apply(&f.values)?))
}
