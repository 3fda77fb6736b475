use serde::{Deserialize, Serialize};

use crate::container::{Block, Container};
use crate::error::{Error, Result};
use crate::matrix::{bce_with_logit, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationKind {
    Platt,
    #[default]
    Isotonic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Calibrator {
    /// `sigmoid(a * s + b)` with `a >= 0`.
    Platt { a: f64, b: f64 },
    /// Non-decreasing step function: `values[k]` applies from `thresholds[k]` upwards.
    Isotonic {
        thresholds: Vec<f64>,
        values: Vec<f64>,
    },
}

fn check(scores: &[f64], labels: &[f64]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().chain(labels).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite calibration data".into()));
    }
    let pos = labels.iter().filter(|&&y| y > 0.5).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::DegenerateCalibration(format!(
            "calibration labels are single-class ({pos} positives of {})",
            labels.len()
        )));
    }
    Ok(pos)
}

/// Platt scaling: Newton's method on the cross-entropy against Platt's smoothed targets.
fn fit_platt(scores: &[f64], labels: &[f64], pos: usize) -> (f64, f64) {
    let neg = labels.len() - pos;
    let hi = (pos as f64 + 1.0) / (pos as f64 + 2.0);
    let lo = 1.0 / (neg as f64 + 2.0);
    let t: Vec<f64> = labels
        .iter()
        .map(|&y| if y > 0.5 { hi } else { lo })
        .collect();
    let f = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&t)
            .map(|(&s, &t)| bce_with_logit(a * s + b, t))
            .sum()
    };
    let (mut a, mut b) = (0.0, ((pos as f64 + 1.0) / (neg as f64 + 1.0)).ln());
    let mut fv = f(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (&s, &t) in scores.iter().zip(&t) {
            let p = sigmoid(a * s + b);
            let r = p - t;
            let w = p * (1.0 - p);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        if ga.abs() < 1e-10 && gb.abs() < 1e-10 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det);
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = f(na, nb);
            if nf < fv + 1e-4 * step * (ga * da + gb * db) {
                (a, b, fv) = (na, nb, nf);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if a < 0.0 {
        // anti-correlated scores: fall back to the constant that keeps ranking intact
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        return (0.0, (mean / (1.0 - mean)).ln());
    }
    (a, b)
}

/// Pool-adjacent-violators over tied-score groups. Returns the block thresholds and
/// values plus the fitted value of every input, in input order.
pub(crate) fn pava(scores: &[f64], labels: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // (sum, weight, min score)
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    let mut k = 0;
    while k < idx.len() {
        let s = scores[idx[k]];
        let (mut sum, mut w) = (0.0, 0.0);
        while k < idx.len() && scores[idx[k]] == s {
            sum += labels[idx[k]];
            w += 1.0;
            k += 1;
        }
        blocks.push((sum, w, s));
        while blocks.len() > 1 {
            let (s2, w2, _) = blocks[blocks.len() - 1];
            let (s1, w1, m1) = blocks[blocks.len() - 2];
            if s1 / w1 > s2 / w2 {
                blocks.pop();
                *blocks.last_mut().expect("two blocks") = (s1 + s2, w1 + w2, m1);
            } else {
                break;
            }
        }
    }
    let thresholds: Vec<f64> = blocks.iter().map(|b| b.2).collect();
    let values: Vec<f64> = blocks.iter().map(|b| b.0 / b.1).collect();
    let fitted = scores
        .iter()
        .map(|&s| step_lookup(&thresholds, &values, s))
        .collect();
    (thresholds, values, fitted)
}

fn step_lookup(thresholds: &[f64], values: &[f64], s: f64) -> f64 {
    let k = thresholds.partition_point(|&t| t <= s);
    values[k.saturating_sub(1)]
}

/// Fits a calibrator on held-out scores. Labels are 0/1.
pub fn fit_calibrator(scores: &[f64], labels: &[f64], kind: CalibrationKind) -> Result<Calibrator> {
    let pos = check(scores, labels)?;
    Ok(match kind {
        CalibrationKind::Platt => {
            let (a, b) = fit_platt(scores, labels, pos);
            Calibrator::Platt { a, b }
        }
        CalibrationKind::Isotonic => {
            let (thresholds, values, _) = pava(scores, labels);
            Calibrator::Isotonic { thresholds, values }
        }
    })
}

pub fn calibrate(c: &Calibrator, scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|&s| c.apply(s)).collect()
}

impl Calibrator {
    pub fn apply(&self, s: f64) -> f64 {
        match self {
            Calibrator::Platt { a, b } => sigmoid(a * s + b),
            Calibrator::Isotonic { thresholds, values } => step_lookup(thresholds, values, s),
        }
    }

    pub fn to_blocks(&self, prefix: &str, c: &mut Container) {
        match self {
            Calibrator::Platt { a, b } => {
                c.push(Block::vector(format!("{prefix}.platt"), vec![*a, *b]))
            }
            Calibrator::Isotonic { thresholds, values } => {
                c.push(Block::vector(format!("{prefix}.iso_x"), thresholds.clone()));
                c.push(Block::vector(format!("{prefix}.iso_y"), values.clone()));
            }
        }
    }

    pub fn from_blocks(prefix: &str, c: &Container) -> Result<Self> {
        if let Ok(b) = c.block(&format!("{prefix}.platt")) {
            let [a, b] = b.values[..] else {
                return Err(Error::Format("malformed Platt block".into()));
            };
            return Ok(Calibrator::Platt { a, b });
        }
        let thresholds = c.vector(&format!("{prefix}.iso_x"))?;
        let values = c.vector(&format!("{prefix}.iso_y"))?;
        if thresholds.len() != values.len() || thresholds.is_empty() {
            return Err(Error::Format("malformed isotonic blocks".into()));
        }
        Ok(Calibrator::Isotonic { thresholds, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // max-min characterization of the isotonic fit over tied-score groups
    fn oracle(scores: &[f64], labels: &[f64]) -> Vec<f64> {
        let mut groups: Vec<(f64, f64, f64)> = Vec::new(); // score, sum, count
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        for i in idx {
            match groups.last_mut() {
                Some(g) if g.0 == scores[i] => {
                    g.1 += labels[i];
                    g.2 += 1.0;
                }
                _ => groups.push((scores[i], labels[i], 1.0)),
            }
        }
        let g = groups.len();
        let fit: Vec<f64> = (0..g)
            .map(|i| {
                (0..=i)
                    .map(|j| {
                        (i..g)
                            .map(|k| {
                                let (s, n) = groups[j..=k]
                                    .iter()
                                    .fold((0.0, 0.0), |a, g| (a.0 + g.1, a.1 + g.2));
                                s / n
                            })
                            .fold(f64::INFINITY, f64::min)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        scores
            .iter()
            .map(|s| fit[groups.iter().position(|g| g.0 == *s).unwrap()])
            .collect()
    }

    #[test]
    fn hand_pava_fixture() {
        let (_, _, fitted) = pava(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]);
        assert_eq!(fitted, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn isotonic_prediction_is_stepwise_and_clamped() {
        let c = fit_calibrator(
            &[1.0, 2.0, 3.0],
            &[1.0, 0.0, 1.0],
            CalibrationKind::Isotonic,
        )
        .unwrap();
        assert_eq!(
            calibrate(&c, &[-5.0, 1.5, 2.5, 3.0, 99.0]),
            vec![0.5, 0.5, 0.5, 1.0, 1.0]
        );
    }

    #[test]
    fn platt_symmetric_data_centres_at_half() {
        let scores: Vec<f64> = (-20..=20)
            .filter(|&v| v != 0)
            .map(|v| v as f64 / 4.0)
            .collect();
        // overlapping classes, mirrored around zero
        let labels: Vec<f64> = scores
            .iter()
            .map(|&s| f64::from((s > 0.0) ^ (s.abs() < 1.0)))
            .collect();
        let c = fit_calibrator(&scores, &labels, CalibrationKind::Platt).unwrap();
        assert!((c.apply(0.0) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn platt_slope_is_non_negative() {
        let scores = [0.0, 1.0, 2.0, 3.0];
        let c = fit_calibrator(&scores, &[1.0, 1.0, 0.0, 0.0], CalibrationKind::Platt).unwrap();
        let p = calibrate(&c, &scores);
        assert!(p.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_class_is_degenerate() {
        for kind in [CalibrationKind::Platt, CalibrationKind::Isotonic] {
            assert!(matches!(
                fit_calibrator(&[1.0, 2.0], &[1.0, 1.0], kind),
                Err(Error::DegenerateCalibration(_))
            ));
        }
    }

    #[test]
    fn blocks_round_trip() {
        let mut c = Container::new("cal", &()).unwrap();
        let iso = fit_calibrator(
            &[0.1, 0.4, 0.2, 0.9],
            &[0.0, 1.0, 0.0, 1.0],
            CalibrationKind::Isotonic,
        )
        .unwrap();
        let platt = fit_calibrator(
            &[0.1, 0.4, 0.2, 0.9],
            &[0.0, 1.0, 0.0, 1.0],
            CalibrationKind::Platt,
        )
        .unwrap();
        iso.to_blocks("a", &mut c);
        platt.to_blocks("b", &mut c);
        let c = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(Calibrator::from_blocks("a", &c).unwrap(), iso);
        assert_eq!(Calibrator::from_blocks("b", &c).unwrap(), platt);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=12).prop_flat_map(|n| {
            (
                prop::collection::vec(0i32..6, n),
                prop::collection::vec(prop::bool::ANY, n),
            )
                .prop_map(|(s, y)| {
                    (
                        s.into_iter().map(f64::from).collect(),
                        y.into_iter().map(f64::from).collect(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn pava_matches_max_min_oracle((s, y) in instance()) {
            let (_, _, fitted) = pava(&s, &y);
            let expect = oracle(&s, &y);
            for (a, b) in fitted.iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-12, "{:?} vs {:?}", fitted, expect);
            }
        }

        #[test]
        fn calibrators_preserve_ranking((s, y) in instance(), probe in prop::collection::vec(-2.0f64..8.0, 20)) {
            prop_assume!(y.iter().any(|&v| v > 0.5) && y.iter().any(|&v| v < 0.5));
            for kind in [CalibrationKind::Platt, CalibrationKind::Isotonic] {
                let c = fit_calibrator(&s, &y, kind).unwrap();
                let mut probe = probe.clone();
                probe.sort_by(f64::total_cmp);
                let p = calibrate(&c, &probe);
                prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
