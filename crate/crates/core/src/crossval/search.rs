use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::FoldPlan;
use crate::config::set_path;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureMatrix};
use crate::labels::FrameLabels;
use crate::metrics::{
    evaluate, ClassMetrics, ConfusionCounts, EvalOptions, EvalTrack, MetricsReport,
};
use crate::parallel::par_map;
use crate::pipeline::{DetectionConfig, Detector, FramewiseProbabilities, ModelSpec, TrainItem};
use crate::rng::derive_seed;

/// A base configuration and a grid of dotted-path overrides into
/// `{"features": .., "model": ..}`; the candidates are the Cartesian product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub features: FeatureConfig,
    pub model: ModelSpec,
    pub grid: BTreeMap<String, Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// `key=value` pairs joined by `,` in key order; `base` for an empty grid.
    pub id: String,
    pub features: FeatureConfig,
    pub model: ModelSpec,
}

impl SearchSpace {
    pub fn single(features: FeatureConfig, model: ModelSpec) -> Self {
        Self {
            features,
            model,
            grid: BTreeMap::new(),
        }
    }

    pub fn candidates(&self) -> Result<Vec<Candidate>> {
        if let Some((k, _)) = self.grid.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Config(format!(
                "empty search space: no values for `{k}`"
            )));
        }
        let base = json!({ "features": self.features, "model": self.model });
        let mut combos: Vec<Vec<(&String, &Value)>> = vec![Vec::new()];
        for (k, values) in &self.grid {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    values
                        .iter()
                        .map(move |v| [c.clone(), vec![(k, v)]].concat())
                })
                .collect();
        }
        let mut out = Vec::with_capacity(combos.len());
        for combo in combos {
            let mut tree = base.clone();
            for (k, v) in &combo {
                set_path(&mut tree, k, (*v).clone())?;
            }
            let id = if combo.is_empty() {
                "base".to_string()
            } else {
                combo
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let features: FeatureConfig = serde_json::from_value(tree["features"].clone())
                .map_err(|e| Error::Config(format!("candidate {id}: features: {e}")))?;
            let model: ModelSpec = serde_json::from_value(tree["model"].clone())
                .map_err(|e| Error::Config(format!("candidate {id}: model: {e}")))?;
            features.validate()?;
            out.push(Candidate {
                id,
                features,
                model,
            });
        }
        Ok(out)
    }
}

/// Labels and durations of the corpus, aligned by index with the recording ids.
#[derive(Debug, Clone, Copy)]
pub struct CvData<'a> {
    pub ids: &'a [String],
    pub labels: &'a [FrameLabels],
    pub durations: &'a [f64],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvOptions {
    pub detection: DetectionConfig,
    pub eval: EvalOptions,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub outer_fold: usize,
    pub config_id: String,
    /// Absent when the space has a single candidate and no inner turns run.
    pub mean_inner_dev_loss: Option<f64>,
    pub chosen: bool,
}

/// Recordings that entered any fitting step for one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub outer_fold: usize,
    pub outer: Vec<String>,
    pub touched: Vec<String>,
    pub clean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterFold {
    pub fold: usize,
    pub chosen: String,
    /// Best candidate of each inner turn, in fold order.
    pub inner_choices: Vec<String>,
    pub report: MetricsReport,
    pub audit: LeakageAudit,
    #[serde(skip)]
    pub tracks: Vec<FramewiseProbabilities>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<OuterFold>,
    pub search: Vec<SearchRow>,
    pub aggregate: MetricsReport,
}

fn needs_dev(spec: &ModelSpec) -> bool {
    matches!(spec, ModelSpec::Svm { .. } | ModelSpec::Neural { .. })
}

/// Smallest id among the most frequent entries.
fn modal(choices: &[String]) -> String {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for c in choices {
        *freq.entry(c).or_default() += 1;
    }
    let top = freq.values().copied().max().unwrap_or(0);
    freq.into_iter()
        .find(|(_, n)| *n == top)
        .map(|(k, _)| k.to_string())
        .unwrap_or_default()
}

struct Ctx<'a> {
    plan: &'a FoldPlan,
    data: CvData<'a>,
    cands: &'a [Candidate],
    feats: &'a BTreeMap<u32, Vec<FeatureMatrix>>,
    opts: &'a CvOptions,
    classes: Vec<String>,
}

impl Ctx<'_> {
    fn index_of(&self, folds: &[usize]) -> Vec<usize> {
        (0..self.data.ids.len())
            .filter(|&i| {
                self.plan
                    .fold_of(&self.data.ids[i])
                    .is_some_and(|f| folds.contains(&f))
            })
            .collect()
    }

    fn items(&self, cand: &Candidate, idx: &[usize]) -> Vec<TrainItem<'_>> {
        let f = &self.feats[&cand.features.hash()];
        idx.iter()
            .map(|&i| TrainItem {
                features: &f[i],
                labels: &self.data.labels[i],
                duration: self.data.durations[i],
            })
            .collect()
    }

    fn fit(&self, cand: &Candidate, train: &[usize], dev: &[usize], seed: u64) -> Result<Detector> {
        let (det, _) = Detector::train(
            &cand.model,
            &cand.features,
            &self.classes,
            &self.items(cand, train),
            &self.items(cand, dev),
            seed,
        )?;
        Ok(det)
    }

    fn outer(&self, t: usize) -> Result<(OuterFold, Vec<SearchRow>)> {
        let k = self.plan.k;
        let inner: Vec<usize> = (1..k).map(|d| (t + d) % k).collect();
        let mut losses = vec![Vec::new(); self.cands.len()];
        let mut inner_choices = Vec::new();
        let mut touched = BTreeSet::new();
        if self.cands.len() > 1 {
            for (turn, &j) in inner.iter().enumerate() {
                let train_folds: Vec<usize> = inner.iter().copied().filter(|&f| f != j).collect();
                let (tr, dv) = (self.index_of(&train_folds), self.index_of(&[j]));
                let mut best: Option<(f64, &str)> = None;
                for (ci, cand) in self.cands.iter().enumerate() {
                    let seed = derive_seed(self.opts.seed, "crossval.inner", (t * k + turn) as u64);
                    let det = self.fit(cand, &tr, &dv, seed)?;
                    touched.extend(det.fitted_on.iter().cloned());
                    let loss = det.dev_loss(&self.items(cand, &dv))?;
                    log::debug!("outer {t} inner {j} {}: dev loss {loss:.6}", cand.id);
                    losses[ci].push(loss);
                    if best.is_none_or(|(b, id)| loss < b || (loss == b && cand.id.as_str() < id)) {
                        best = Some((loss, &cand.id));
                    }
                }
                inner_choices.push(best.map(|b| b.1.to_string()).unwrap_or_default());
            }
        }
        let chosen_id = if self.cands.len() == 1 {
            self.cands[0].id.clone()
        } else {
            modal(&inner_choices)
        };
        let cand = self
            .cands
            .iter()
            .find(|c| c.id == chosen_id)
            .expect("chosen id comes from the candidates");

        let (train_folds, dev_folds): (Vec<usize>, Vec<usize>) = if needs_dev(&cand.model) {
            (inner[1..].to_vec(), vec![inner[0]])
        } else {
            (inner.clone(), Vec::new())
        };
        let seed = derive_seed(self.opts.seed, "crossval.outer", t as u64);
        let det = self.fit(
            cand,
            &self.index_of(&train_folds),
            &self.index_of(&dev_folds),
            seed,
        )?;
        touched.extend(det.fitted_on.iter().cloned());

        let outer_idx = self.index_of(&[t]);
        let feats = &self.feats[&cand.features.hash()];
        let mut tracks = Vec::with_capacity(outer_idx.len());
        let mut eval = Vec::with_capacity(outer_idx.len());
        for &i in &outer_idx {
            let track = det.detect(
                &self.data.ids[i],
                &feats[i],
                self.data.durations[i],
                &self.opts.detection,
            )?;
            let targets = track.aligned_targets(&self.data.labels[i].to_matrix())?;
            eval.push(EvalTrack {
                recording_id: track.recording_id.clone(),
                targets,
                probs: track.probs.clone(),
            });
            tracks.push(track);
        }
        let report = evaluate(&eval, &self.classes, &self.opts.eval)?;

        let outer: Vec<String> = outer_idx
            .iter()
            .map(|&i| self.data.ids[i].clone())
            .collect();
        let clean = outer.iter().all(|id| !touched.contains(id));
        let audit = LeakageAudit {
            outer_fold: t,
            outer,
            touched: touched.into_iter().collect(),
            clean,
        };
        if !clean {
            return Err(Error::InvalidInput(format!(
                "outer fold {t} data entered model fitting"
            )));
        }
        let rows = self
            .cands
            .iter()
            .zip(&losses)
            .map(|(c, l)| SearchRow {
                outer_fold: t,
                config_id: c.id.clone(),
                mean_inner_dev_loss: (!l.is_empty())
                    .then(|| l.iter().sum::<f64>() / l.len() as f64),
                chosen: c.id == chosen_id,
            })
            .collect();
        Ok((
            OuterFold {
                fold: t,
                chosen: chosen_id,
                inner_choices,
                report,
                audit,
                tracks,
            },
            rows,
        ))
    }
}

/// For each outer fold: pick the best candidate on every inner turn by development loss,
/// take the modal pick (smallest id on ties), retrain it on the inner folds and score it
/// once on the outer fold.
///
/// `features` extracts the corpus for a feature configuration, aligned with `data.ids`;
/// it runs once per distinct configuration.
pub fn nested_cv(
    plan: &FoldPlan,
    space: &SearchSpace,
    data: CvData,
    features: &dyn Fn(&FeatureConfig) -> Result<Vec<FeatureMatrix>>,
    opts: &CvOptions,
) -> Result<CvResult> {
    plan.validate()?;
    if plan.k < 3 {
        return Err(Error::Config(format!(
            "nested cross-validation needs at least 3 folds, got {}",
            plan.k
        )));
    }
    if data.ids.len() != data.labels.len() || data.ids.len() != data.durations.len() {
        return Err(Error::Shape(
            "ids, labels and durations differ in length".into(),
        ));
    }
    if let Some(id) = data.ids.iter().find(|id| plan.fold_of(id).is_none()) {
        return Err(Error::InvalidInput(format!(
            "recording {id} is not in the fold plan"
        )));
    }
    let classes = data
        .labels
        .first()
        .map(|l| l.classes.clone())
        .ok_or_else(|| Error::InvalidInput("empty corpus".into()))?;
    let cands = space.candidates()?;
    let mut feats = BTreeMap::new();
    for c in &cands {
        if let std::collections::btree_map::Entry::Vacant(e) = feats.entry(c.features.hash()) {
            let f = features(&c.features)?;
            if f.len() != data.ids.len() {
                return Err(Error::Shape(format!(
                    "{} feature matrices for {} recordings",
                    f.len(),
                    data.ids.len()
                )));
            }
            e.insert(f);
        }
    }
    let ctx = Ctx {
        plan,
        data,
        cands: &cands,
        feats: &feats,
        opts,
        classes,
    };
    let folds: Vec<usize> = (0..plan.k).collect();
    let results = par_map(&folds, |&t| ctx.outer(t));
    let mut out = Vec::with_capacity(plan.k);
    let mut search = Vec::new();
    for r in results {
        let (f, rows) = r?;
        out.push(f);
        search.extend(rows);
    }
    let reports: Vec<MetricsReport> = out.iter().map(|f| f.report.clone()).collect();
    Ok(CvResult {
        aggregate: aggregate(&reports)?,
        folds: out,
        search,
    })
}

/// Mean and sample standard deviation over per-fold reports; pooled confusion counts.
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidInput("no fold reports to aggregate".into()))?;
    let summary = MetricsReport::summarize(reports);
    let mut counts: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
    for r in reports {
        for (k, c) in &r.counts {
            counts.entry(k.clone()).or_default().add(c);
        }
    }
    let mut excluded: Vec<String> = first
        .classes
        .iter()
        .filter(|c| reports.iter().all(|r| r.excluded.contains(c)))
        .cloned()
        .collect();
    excluded.sort();
    let per_class: BTreeMap<String, ClassMetrics> = summary.per_class_mean.clone();
    Ok(MetricsReport {
        classes: first.classes.clone(),
        scheme: first.scheme,
        threshold: first.threshold,
        per_class,
        counts,
        macro_avg: summary.macro_mean,
        excluded,
        folds: Some(summary),
        curves: BTreeMap::new(),
    })
}

pub fn write_search_csv(path: &Path, rows: &[SearchRow]) -> Result<()> {
    crate::io::write_csv_atomic(path, |w| {
        w.write_record(["outer_fold", "config_id", "mean_inner_dev_loss", "chosen"])?;
        for r in rows {
            w.write_record([
                r.outer_fold.to_string(),
                r.config_id.clone(),
                r.mean_inner_dev_loss
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                r.chosen.to_string(),
            ])?;
        }
        Ok(())
    })
}
