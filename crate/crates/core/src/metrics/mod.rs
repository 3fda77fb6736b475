//! Evaluation metrics. Quantities that are undefined for the given data (no positives,
//! no predictions) are `None` and drop out of macro averages.

mod curves;
mod report;

use serde::{Deserialize, Serialize};

pub use curves::{pr_ap, purity_coverage_curve, roc_auc, Curve, CurvePoint};
pub use report::{
    evaluate, ClassMetrics, EvalOptions, EvalTrack, FoldSummary, MacroScheme, MetricsReport,
    METRIC_NAMES,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }

    /// TP / P
    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn recall(&self) -> Option<f64> {
        self.sensitivity()
    }

    /// TN / N
    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    /// TP / PP
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn seg_metrics(&self) -> SegMetrics {
        SegMetrics {
            purity: self.precision(),
            coverage: self.recall(),
            jaccard: ratio(self.tp, self.tp + self.fn_ + self.fp),
        }
    }
}

pub fn confusion(y: &[bool], yhat: &[bool]) -> Result<ConfusionCounts> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y.iter().zip(yhat) {
        match (t, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SegMetrics {
    pub purity: Option<f64>,
    pub coverage: Option<f64>,
    pub jaccard: Option<f64>,
}

pub fn seg_metrics(y: &[bool], yhat: &[bool]) -> Result<SegMetrics> {
    Ok(confusion(y, yhat)?.seg_metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundaryCounts {
    pub matched: usize,
    pub n_true: usize,
    pub n_pred: usize,
}

impl BoundaryCounts {
    pub fn add(&mut self, o: &BoundaryCounts) {
        self.matched += o.matched;
        self.n_true += o.n_true;
        self.n_pred += o.n_pred;
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.matched, self.n_pred)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.matched, self.n_true)
    }
}

/// Greedy one-to-one matching in time order: each predicted boundary takes the
/// earliest unmatched true boundary within `tolerance` seconds.
pub fn boundary_matches(truth: &[f64], pred: &[f64], tolerance: f64) -> BoundaryCounts {
    let tol = tolerance + 1e-9;
    let mut used = vec![false; truth.len()];
    let mut lo = 0;
    let mut matched = 0;
    for &p in pred {
        while lo < truth.len() && (used[lo] || truth[lo] < p - tol) {
            lo += 1;
        }
        if let Some(k) = (lo..truth.len())
            .take_while(|&k| truth[k] <= p + tol)
            .find(|&k| !used[k])
        {
            used[k] = true;
            matched += 1;
        }
    }
    BoundaryCounts {
        matched,
        n_true: truth.len(),
        n_pred: pred.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryPr {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn boundary_pr(truth: &[f64], pred: &[f64], tolerance: f64) -> BoundaryPr {
    let c = boundary_matches(truth, pred, tolerance);
    BoundaryPr {
        precision: c.precision(),
        recall: c.recall(),
    }
}

/// Segment boundaries (every start and end), sorted.
pub fn boundaries(segments: &[(f64, f64)]) -> Vec<f64> {
    let mut b: Vec<f64> = segments.iter().flat_map(|&(s, e)| [s, e]).collect();
    b.sort_by(f64::total_cmp);
    b
}

/// Arithmetic mean of the defined values.
pub fn macro_average(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Frames scored for class `c` under one-vs-no-call: frames positive for `c` and
/// frames with no call at all.
pub fn one_vs_no_call_subset(targets: &crate::matrix::Matrix, c: usize) -> Vec<usize> {
    (0..targets.rows())
        .filter(|&i| {
            let row = targets.row(i);
            row[c] > 0.5 || row.iter().all(|&v| v <= 0.5)
        })
        .collect()
}
