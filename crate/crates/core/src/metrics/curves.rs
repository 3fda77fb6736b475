use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub threshold: f64,
}

/// Points in order of strictly decreasing threshold.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_csv_atomic(path, |w| {
            w.write_record(["threshold", "x", "y"])?;
            for p in &self.points {
                w.write_record([p.threshold.to_string(), p.x.to_string(), p.y.to_string()])?;
            }
            Ok(())
        })
    }
}

/// Cumulative (score, TP, FP) after each distinct score, highest first. Tied scores
/// move together.
fn sweep(y: &[bool], scores: &[f64]) -> Result<Vec<(f64, usize, usize)>> {
    if y.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} scores",
            y.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut k = 0;
    while k < idx.len() {
        let s = scores[idx[k]];
        while k < idx.len() && scores[idx[k]] == s {
            if y[idx[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        out.push((s, tp, fp));
    }
    Ok(out)
}

/// ROC curve (x = FPR, y = TPR) and its trapezoidal area; `None` when one class is
/// missing.
pub fn roc_auc(y: &[bool], scores: &[f64]) -> Result<Option<(Curve, f64)>> {
    let steps = sweep(y, scores)?;
    let p = y.iter().filter(|&&v| v).count();
    let n = y.len() - p;
    if p == 0 || n == 0 {
        return Ok(None);
    }
    let mut points = vec![CurvePoint {
        x: 0.0,
        y: 0.0,
        threshold: f64::INFINITY,
    }];
    let mut auc = 0.0;
    let (mut ptp, mut pfp) = (0usize, 0usize);
    for (s, tp, fp) in steps {
        // trapezoid in integer units keeps the sum exact until the final division
        auc += (fp - pfp) as f64 * (tp + ptp) as f64;
        points.push(CurvePoint {
            x: fp as f64 / n as f64,
            y: tp as f64 / p as f64,
            threshold: s,
        });
        (ptp, pfp) = (tp, fp);
    }
    Ok(Some((Curve { points }, auc / (2.0 * p as f64 * n as f64))))
}

/// Precision-recall curve (x = recall, y = precision) and step-integrated AP;
/// `None` without positives.
pub fn pr_ap(y: &[bool], scores: &[f64]) -> Result<Option<(Curve, f64)>> {
    let steps = sweep(y, scores)?;
    let p = y.iter().filter(|&&v| v).count();
    if p == 0 {
        return Ok(None);
    }
    let mut points = Vec::with_capacity(steps.len());
    let mut ap = 0.0;
    let mut prev_tp = 0;
    for (s, tp, fp) in steps {
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (tp - prev_tp) as f64 / p as f64 * precision;
        prev_tp = tp;
        points.push(CurvePoint {
            x: tp as f64 / p as f64,
            y: precision,
            threshold: s,
        });
    }
    // rounding in the running sum can overshoot 1 by an ulp or two
    Ok(Some((Curve { points }, ap.min(1.0))))
}

/// Purity (y) against coverage (x) as the decision threshold sweeps; the framewise
/// counterpart of the PR curve.
pub fn purity_coverage_curve(y: &[bool], scores: &[f64]) -> Result<Option<Curve>> {
    Ok(pr_ap(y, scores)?.map(|(c, _)| c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn auc(y: &[bool], s: &[f64]) -> f64 {
        roc_auc(y, s).unwrap().unwrap().1
    }

    #[test]
    fn fixtures() {
        assert_eq!(
            auc(&[true, false, true, false], &[0.9, 0.8, 0.7, 0.6]),
            0.75
        );
        assert_eq!(auc(&[true, true, false], &[0.9, 0.8, 0.7]), 1.0);
        assert_eq!(auc(&[true, false, true, false], &[0.5; 4]), 0.5);
        let ap = pr_ap(&[true, false, true], &[0.9, 0.8, 0.7])
            .unwrap()
            .unwrap()
            .1;
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(pr_ap(&[true, true], &[0.1, 0.7]).unwrap().unwrap().1, 1.0);
        assert!(roc_auc(&[true, true], &[0.1, 0.2]).unwrap().is_none());
        assert!(pr_ap(&[false, false], &[0.1, 0.2]).unwrap().is_none());
    }

    #[test]
    fn curve_shape() {
        let (c, _) = roc_auc(&[true, false, true, false], &[0.9, 0.8, 0.8, 0.1])
            .unwrap()
            .unwrap();
        assert!(c
            .points
            .windows(2)
            .all(|w| w[0].threshold > w[1].threshold && w[0].x <= w[1].x));
        assert_eq!(c.points.last().map(|p| (p.x, p.y)), Some((1.0, 1.0)));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("roc.csv");
        c.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(p)
            .unwrap()
            .starts_with("threshold,x,y\ninf,0,0\n"));
    }

    fn case() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
        (1usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::bool::ANY, n),
                prop::collection::vec(0u8..10, n),
            )
                .prop_map(|(y, s)| (y, s.into_iter().map(|v| v as f64 / 10.0).collect()))
        })
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance((y, s) in case()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            let a = roc_auc(&y, &s).unwrap();
            let b = roc_auc(&y, &t).unwrap();
            prop_assert_eq!(a.as_ref().map(|r| r.1), b.as_ref().map(|r| r.1));
            if let (Some(a), Some(b)) = (a, b) {
                let xy = |c: &Curve| c.points.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>();
                prop_assert_eq!(xy(&a.0), xy(&b.0));
            }
            prop_assert_eq!(pr_ap(&y, &s).unwrap().map(|r| r.1), pr_ap(&y, &t).unwrap().map(|r| r.1));
        }

        #[test]
        fn permutation_invariance((y, s) in case(), seed in 0u64..100) {
            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..y.len()).collect();
            idx.shuffle(&mut crate::rng::rng_from_seed(seed));
            let yp: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
            let sp: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            prop_assert_eq!(roc_auc(&y, &s).unwrap(), roc_auc(&yp, &sp).unwrap());
            prop_assert_eq!(pr_ap(&y, &s).unwrap(), pr_ap(&yp, &sp).unwrap());
        }
    }
}
