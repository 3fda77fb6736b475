//! Browser demo: a synthetic clip, its spectrogram, a logistic-regression detector trained
//! on four sibling clips, and threshold-driven endpointing with its metrics.

use serde::Serialize;
use serde_json::json;
use trunkline::corpus::{synthesize_corpus, AnnotationTrack, SynthSpec};
use trunkline::features::{extract, FeatureConfig, PcaTarget, Representation};
use trunkline::labels::{rasterize, LabelTarget, LabelWindow};
use trunkline::metrics::{boundaries, boundary_pr, pr_ap, roc_auc, seg_metrics, Curve};
use trunkline::pipeline::{
    endpoint, DetectionConfig, Detector, FramewiseProbabilities, ModelSpec, ShallowInput, TrainItem,
};
use trunkline::shallow::LogRegConfig;
use wasm_bindgen::prelude::*;

const CLIP_S: f64 = 30.0;
const TRAIN_CLIPS: usize = 4;
const BOUNDARY_TOLERANCE_S: f64 = 0.2;

#[wasm_bindgen]
pub struct Demo {
    spectrogram: Vec<f32>,
    spec_rows: usize,
    spec_bins: usize,
    duration: f64,
    truth: AnnotationTrack,
    target: Vec<bool>,
    track: FramewiseProbabilities,
}

#[derive(Serialize)]
struct Span {
    start: f64,
    end: f64,
    label: String,
}

fn points(c: &Curve) -> Vec<[f64; 2]> {
    c.points.iter().map(|p| [p.x, p.y]).collect()
}

impl Demo {
    /// Synthesizes `TRAIN_CLIPS + 1` clips, trains on all but the last and scores the last.
    pub fn build(seed: u32, snr_db: f64) -> trunkline::Result<Demo> {
        let spec = SynthSpec {
            seed: seed as u64,
            n_recordings: TRAIN_CLIPS + 1,
            duration_s: (CLIP_S, CLIP_S),
            snr_db,
            ..SynthSpec::default()
        };
        let (recs, anns) = synthesize_corpus(&spec)?;

        let view = FeatureConfig {
            representation: Representation::LogMel,
            n_mel: 64,
            f_max: 2000.0,
            ..FeatureConfig::default()
        };
        let spec_m = extract(&recs[TRAIN_CLIPS], &view)?;

        let features = FeatureConfig {
            n_cep: 13,
            cmvn: true,
            ..FeatureConfig::default()
        };
        let feats = recs
            .iter()
            .map(|r| extract(r, &features))
            .collect::<trunkline::Result<Vec<_>>>()?;
        let labels: Vec<_> = recs
            .iter()
            .zip(&anns)
            .map(|(r, a)| rasterize(a, r.duration(), &LabelTarget::AnyCall, LabelWindow::Grid100))
            .collect();
        let items: Vec<TrainItem> = (0..TRAIN_CLIPS)
            .map(|i| TrainItem {
                features: &feats[i],
                labels: &labels[i],
                duration: recs[i].duration(),
            })
            .collect();
        let model = ModelSpec::Logreg {
            input: ShallowInput {
                context: 51,
                pca: Some(PcaTarget::Components(40)),
                whiten: true,
            },
            logreg: LogRegConfig::default(),
        };
        let (det, _) = Detector::train(
            &model,
            &features,
            &LabelTarget::AnyCall.classes(),
            &items,
            &[],
            seed as u64,
        )?;
        let track = det.detect(
            &recs[TRAIN_CLIPS].id,
            &feats[TRAIN_CLIPS],
            recs[TRAIN_CLIPS].duration(),
            &DetectionConfig::default(),
        )?;
        let target = track
            .aligned_targets(&labels[TRAIN_CLIPS].to_matrix())?
            .column(0)
            .iter()
            .map(|&v| v > 0.5)
            .collect();
        Ok(Demo {
            spectrogram: spec_m.values.data().iter().map(|&v| v as f32).collect(),
            spec_rows: spec_m.rows(),
            spec_bins: spec_m.cols(),
            duration: recs[TRAIN_CLIPS].duration(),
            truth: anns[TRAIN_CLIPS].clone(),
            target,
            track,
        })
    }

    fn truth_spans(&self) -> Vec<Span> {
        self.truth
            .events
            .iter()
            .map(|e| Span {
                start: e.start,
                end: e.end,
                label: e.call_type.clone(),
            })
            .collect()
    }

    /// Segments and framewise metrics at threshold `theta`, as JSON.
    pub fn endpoint_report(&self, theta: f64) -> trunkline::Result<String> {
        let theta = theta.clamp(1e-6, 1.0 - 1e-6);
        let segs = endpoint(&self.track, "call", theta, None)?;
        let pred: Vec<bool> = (0..self.track.n_frames())
            .map(|k| self.track.probs.get(k, 0) >= theta)
            .collect();
        let m = seg_metrics(&self.target, &pred)?;
        let pred_b = boundaries(&segs.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>());
        let lo = self.track.t_s(0);
        let hi = self.track.t_s(self.track.n_frames());
        // true boundaries in the region the track covers
        let truth_b: Vec<f64> = boundaries(
            &self
                .truth
                .events
                .iter()
                .map(|e| (e.start, e.end))
                .collect::<Vec<_>>(),
        )
        .into_iter()
        .filter(|&b| b >= lo && b <= hi)
        .collect();
        let b = boundary_pr(&truth_b, &pred_b, BOUNDARY_TOLERANCE_S);
        let spans: Vec<Span> = segs
            .iter()
            .map(|s| Span {
                start: s.start,
                end: s.end,
                label: format!("{:.2}", s.probs[0].1),
            })
            .collect();
        Ok(json!({
            "theta": theta,
            "segments": spans,
            "purity": m.purity,
            "coverage": m.coverage,
            "jaccard": m.jaccard,
            "boundary_precision": b.precision,
            "boundary_recall": b.recall,
        })
        .to_string())
    }

    /// ROC and precision-recall curves of the framewise track, as JSON.
    pub fn curves_report(&self) -> trunkline::Result<String> {
        let scores = self.track.probs.column(0);
        let roc = roc_auc(&self.target, &scores)?;
        let pr = pr_ap(&self.target, &scores)?;
        Ok(json!({
            "roc": roc.as_ref().map(|r| points(&r.0)),
            "auc": roc.as_ref().map(|r| r.1),
            "pr": pr.as_ref().map(|r| points(&r.0)),
            "ap": pr.as_ref().map(|r| r.1),
        })
        .to_string())
    }
}

fn js(e: trunkline::Error) -> JsError {
    JsError::new(&format!("{}: {e}", e.code()))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, snr_db: f64) -> Result<Demo, JsError> {
        Demo::build(seed, snr_db).map_err(js)
    }

    /// Log-mel frames (10 ms hop), row-major `frames x bins`.
    pub fn spectrogram(&self) -> Vec<f32> {
        self.spectrogram.clone()
    }

    pub fn spectrogram_frames(&self) -> usize {
        self.spec_rows
    }

    pub fn spectrogram_bins(&self) -> usize {
        self.spec_bins
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Start time of the first probability; one value per 100 ms after that.
    pub fn track_start(&self) -> f64 {
        self.track.t_s(0)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.track.probs.column(0)
    }

    /// Annotated calls as JSON `[{start, end, label}]`.
    pub fn annotations(&self) -> String {
        serde_json::to_string(&self.truth_spans()).unwrap_or_default()
    }

    pub fn endpoint(&self, theta: f64) -> Result<String, JsError> {
        self.endpoint_report(theta).map_err(js)
    }

    pub fn curves(&self) -> Result<String, JsError> {
        self.curves_report().map_err(js)
    }
}
