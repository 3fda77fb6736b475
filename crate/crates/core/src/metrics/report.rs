use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    boundary_matches, confusion, macro_average, one_vs_no_call_subset, pr_ap, roc_auc,
    BoundaryCounts, ConfusionCounts, Curve,
};
use crate::error::{Error, Result};
use crate::labels::{binary_runs, grid_start};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacroScheme {
    #[default]
    OneVsRest,
    /// Each class scored only against frames without any call.
    OneVsNoCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub threshold: f64,
    pub scheme: MacroScheme,
    pub boundary_tolerance_s: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            scheme: MacroScheme::OneVsRest,
            boundary_tolerance_s: 0.2,
        }
    }
}

/// Frame-aligned targets and probabilities for one recording, both `T x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrack {
    pub recording_id: String,
    pub targets: Matrix,
    pub probs: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub purity: Option<f64>,
    pub coverage: Option<f64>,
    pub jaccard: Option<f64>,
    pub boundary_precision: Option<f64>,
    pub boundary_recall: Option<f64>,
}

const N_FIELDS: usize = 10;

pub const METRIC_NAMES: [&str; N_FIELDS] = [
    "precision",
    "recall",
    "specificity",
    "auc",
    "ap",
    "purity",
    "coverage",
    "jaccard",
    "boundary_precision",
    "boundary_recall",
];

impl ClassMetrics {
    pub fn fields(&self) -> [Option<f64>; N_FIELDS] {
        [
            self.precision,
            self.recall,
            self.specificity,
            self.auc,
            self.ap,
            self.purity,
            self.coverage,
            self.jaccard,
            self.boundary_precision,
            self.boundary_recall,
        ]
    }

    fn from_fields(f: [Option<f64>; N_FIELDS]) -> Self {
        Self {
            precision: f[0],
            recall: f[1],
            specificity: f[2],
            auc: f[3],
            ap: f[4],
            purity: f[5],
            coverage: f[6],
            jaccard: f[7],
            boundary_precision: f[8],
            boundary_recall: f[9],
        }
    }

    /// Field-wise mean over the metrics where each field is defined.
    pub fn mean(items: &[ClassMetrics]) -> ClassMetrics {
        let mut out = [None; N_FIELDS];
        for (k, slot) in out.iter_mut().enumerate() {
            let v: Vec<Option<f64>> = items.iter().map(|m| m.fields()[k]).collect();
            *slot = macro_average(&v);
        }
        Self::from_fields(out)
    }

    /// Field-wise sample standard deviation; 0 for a single value, undefined for none.
    pub fn sample_std(items: &[ClassMetrics]) -> ClassMetrics {
        let mut out = [None; N_FIELDS];
        for (k, slot) in out.iter_mut().enumerate() {
            let v: Vec<f64> = items.iter().filter_map(|m| m.fields()[k]).collect();
            if v.len() == 1 {
                *slot = Some(0.0);
            } else if v.len() >= 2 {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
                *slot = Some(var.sqrt());
            }
        }
        Self::from_fields(out)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassCurves {
    pub roc: Curve,
    pub pr: Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub n_folds: usize,
    pub macro_mean: ClassMetrics,
    pub macro_std: ClassMetrics,
    pub per_class_mean: BTreeMap<String, ClassMetrics>,
    pub per_class_std: BTreeMap<String, ClassMetrics>,
    /// With one fold the standard deviations are reported as 0.
    #[serde(default)]
    pub single_fold: bool,
    /// Folds in which a macro metric was undefined and left out of the mean.
    #[serde(default)]
    pub undefined: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub scheme: MacroScheme,
    pub threshold: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub counts: BTreeMap<String, ConfusionCounts>,
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    /// Classes left out of the macro average for lack of positive frames.
    pub excluded: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<FoldSummary>,
    #[serde(skip)]
    pub curves: BTreeMap<String, ClassCurves>,
}

fn segments_of(track: &[bool]) -> Vec<f64> {
    binary_runs(track)
        .into_iter()
        .flat_map(|(s, e)| [grid_start(s), grid_start(e)])
        .collect()
}

/// Scores framewise probabilities against targets, per class and macro-averaged.
pub fn evaluate(
    tracks: &[EvalTrack],
    classes: &[String],
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let c = classes.len();
    for t in tracks {
        if t.targets.cols() != c || t.probs.cols() != c || t.targets.rows() != t.probs.rows() {
            return Err(Error::Shape(format!(
                "`{}`: targets {}x{}, probabilities {}x{}, {} classes",
                t.recording_id,
                t.targets.rows(),
                t.targets.cols(),
                t.probs.rows(),
                t.probs.cols(),
                c
            )));
        }
    }
    let mut per_class = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut curves = BTreeMap::new();
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for (k, name) in classes.iter().enumerate() {
        let (mut y, mut s) = (Vec::new(), Vec::new());
        let mut bc = BoundaryCounts::default();
        for t in tracks {
            let rows: Vec<usize> = match opts.scheme {
                MacroScheme::OneVsRest => (0..t.targets.rows()).collect(),
                MacroScheme::OneVsNoCall => one_vs_no_call_subset(&t.targets, k),
            };
            y.extend(rows.iter().map(|&i| t.targets.get(i, k) > 0.5));
            s.extend(rows.iter().map(|&i| t.probs.get(i, k)));
            let truth: Vec<bool> = t.targets.column(k).iter().map(|&v| v > 0.5).collect();
            let pred: Vec<bool> = t
                .probs
                .column(k)
                .iter()
                .map(|&v| v >= opts.threshold)
                .collect();
            bc.add(&boundary_matches(
                &segments_of(&truth),
                &segments_of(&pred),
                opts.boundary_tolerance_s,
            ));
        }
        let yhat: Vec<bool> = s.iter().map(|&v| v >= opts.threshold).collect();
        let cc = confusion(&y, &yhat)?;
        let seg = cc.seg_metrics();
        let roc = roc_auc(&y, &s)?;
        let pr = pr_ap(&y, &s)?;
        let m = ClassMetrics {
            precision: cc.precision(),
            recall: cc.recall(),
            specificity: cc.specificity(),
            auc: roc.as_ref().map(|r| r.1),
            ap: pr.as_ref().map(|r| r.1),
            purity: seg.purity,
            coverage: seg.coverage,
            jaccard: seg.jaccard,
            boundary_precision: bc.precision(),
            boundary_recall: bc.recall(),
        };
        if cc.tp + cc.fn_ > 0 {
            included.push(m);
        } else {
            excluded.push(name.clone());
        }
        curves.insert(
            name.clone(),
            ClassCurves {
                roc: roc.map(|r| r.0).unwrap_or_default(),
                pr: pr.map(|r| r.0).unwrap_or_default(),
            },
        );
        per_class.insert(name.clone(), m);
        counts.insert(name.clone(), cc);
    }
    Ok(MetricsReport {
        classes: classes.to_vec(),
        scheme: opts.scheme,
        threshold: opts.threshold,
        per_class,
        counts,
        macro_avg: ClassMetrics::mean(&included),
        excluded,
        folds: None,
        curves,
    })
}

impl MetricsReport {
    /// Mean and sample standard deviation over per-fold reports.
    pub fn summarize(folds: &[MetricsReport]) -> FoldSummary {
        let macros: Vec<ClassMetrics> = folds.iter().map(|r| r.macro_avg).collect();
        let mut names: Vec<&String> = folds.iter().flat_map(|r| r.per_class.keys()).collect();
        names.sort();
        names.dedup();
        let mut per_class_mean = BTreeMap::new();
        let mut per_class_std = BTreeMap::new();
        for n in names {
            let items: Vec<ClassMetrics> = folds
                .iter()
                .filter(|r| !r.excluded.contains(n))
                .filter_map(|r| r.per_class.get(n).copied())
                .collect();
            per_class_mean.insert(n.clone(), ClassMetrics::mean(&items));
            per_class_std.insert(n.clone(), ClassMetrics::sample_std(&items));
        }
        let mut undefined = BTreeMap::new();
        for (k, name) in METRIC_NAMES.iter().enumerate() {
            let n = macros.iter().filter(|m| m.fields()[k].is_none()).count();
            if n > 0 {
                undefined.insert(name.to_string(), n);
            }
        }
        FoldSummary {
            n_folds: folds.len(),
            macro_mean: ClassMetrics::mean(&macros),
            macro_std: ClassMetrics::sample_std(&macros),
            per_class_mean,
            per_class_std,
            single_fold: folds.len() == 1,
            undefined,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json_atomic(path, self)
    }

    /// Writes `{class}.roc.csv`, `{class}.pr.csv` and `{class}.purity_coverage.csv`.
    pub fn write_curves(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, c) in &self.curves {
            c.roc.write_csv(&dir.join(format!("{name}.roc.csv")))?;
            c.pr.write_csv(&dir.join(format!("{name}.pr.csv")))?;
            c.pr.write_csv(&dir.join(format!("{name}.purity_coverage.csv")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(targets: &[[f64; 2]], probs: &[[f64; 2]]) -> EvalTrack {
        EvalTrack {
            recording_id: "r".into(),
            targets: Matrix::from_rows(targets).unwrap(),
            probs: Matrix::from_rows(probs).unwrap(),
        }
    }

    fn names() -> Vec<String> {
        vec!["rumble".into(), "roar".into()]
    }

    #[test]
    fn one_vs_no_call_equals_subset_binary() {
        let t = track(
            &[
                [1.0, 0.0],
                [1.0, 0.0],
                [0.0, 1.0],
                [0.0, 0.0],
                [0.0, 0.0],
                [0.0, 1.0],
            ],
            &[
                [0.9, 0.1],
                [0.4, 0.2],
                [0.8, 0.9],
                [0.3, 0.1],
                [0.6, 0.2],
                [0.7, 0.6],
            ],
        );
        let opts = EvalOptions {
            scheme: MacroScheme::OneVsNoCall,
            ..Default::default()
        };
        let r = evaluate(&[t], &names(), &opts).unwrap();
        // rumble frames plus no-call frames: rows 0, 1, 3, 4
        let y = [true, true, false, false];
        let s = [0.9, 0.4, 0.3, 0.6];
        let auc = roc_auc(&y, &s).unwrap().unwrap().1;
        assert_eq!(r.per_class["rumble"].auc, Some(auc));
        let cc = confusion(&y, &s.map(|v| v >= 0.5)).unwrap();
        assert_eq!(r.counts["rumble"], cc);
    }

    #[test]
    fn macro_skips_classes_without_positives() {
        let t = track(
            &[[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]],
            &[[0.9, 0.1], [0.2, 0.7], [0.8, 0.1]],
        );
        let r = evaluate(&[t], &names(), &EvalOptions::default()).unwrap();
        assert_eq!(r.excluded, vec!["roar".to_string()]);
        assert_eq!(r.macro_avg.auc, Some(1.0));
        assert_eq!(r.macro_avg.precision, Some(1.0));
    }

    #[test]
    fn boundaries_and_summary() {
        let t = track(
            &[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            &[[0.1, 0.0], [0.9, 0.0], [0.9, 0.0], [0.2, 0.9]],
        );
        let r = evaluate(
            &[t],
            &names(),
            &EvalOptions {
                boundary_tolerance_s: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.per_class["rumble"].boundary_precision, Some(1.0));
        assert_eq!(r.per_class["rumble"].jaccard, Some(1.0));
        let s = MetricsReport::summarize(&[r.clone(), r.clone()]);
        assert_eq!(s.macro_mean.jaccard, Some(1.0));
        assert_eq!(s.macro_std.jaccard, Some(0.0));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"macro\""));
        let dir = tempfile::tempdir().unwrap();
        r.write_curves(dir.path()).unwrap();
        assert!(dir.path().join("roar.pr.csv").exists());
    }

    #[test]
    fn sample_std_definition() {
        let a = ClassMetrics {
            auc: Some(0.8),
            ..Default::default()
        };
        let b = ClassMetrics {
            auc: Some(0.6),
            ..Default::default()
        };
        let s = ClassMetrics::sample_std(&[a, b]);
        assert!((s.auc.unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(ClassMetrics::sample_std(&[a]).auc, Some(0.0));
        assert_eq!(ClassMetrics::sample_std(&[]).auc, None);
    }
}
