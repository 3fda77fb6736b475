//! Detection on the classification grid, endpointing and segment classification.

mod detect;
mod model;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use detect::{
    detect_frames, detect_sequence, grid_centre, resample_track, window_rows, SequenceClassifier,
    WindowClassifier,
};
pub use model::{Detector, ModelSpec, ShallowInput, TrainItem, TrainReport, DETECTOR_KIND};

use crate::corpus::{AnnotationEvent, AnnotationTrack};
use crate::error::{Error, Result};
use crate::labels::{binary_runs, grid_start, LabelTarget};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackFlag {
    /// The recording is shorter than one model context; the track is empty.
    TooShort,
    /// A sequence track had one point and was extended as a constant.
    SinglePoint,
    /// The feature matrix was padded by repeating its last frame.
    Padded,
}

/// Per-class probabilities on the 100 ms grid. Row `k` is grid frame `first_frame + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramewiseProbabilities {
    pub recording_id: String,
    pub classes: Vec<String>,
    pub first_frame: usize,
    pub probs: Matrix,
    #[serde(default)]
    pub flags: Vec<TrackFlag>,
}

impl FramewiseProbabilities {
    pub fn n_frames(&self) -> usize {
        self.probs.rows()
    }

    pub fn grid_frame(&self, k: usize) -> usize {
        self.first_frame + k
    }

    /// Grid time stamp (frame start) of row `k`.
    pub fn t_s(&self, k: usize) -> f64 {
        grid_start(self.first_frame + k)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_frames()).map(|k| self.t_s(k)).collect()
    }

    pub fn class_index(&self, class: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::InvalidInput(format!("track has no class `{class}`")))
    }

    /// Restricts the track to grid frames `[lo, hi)`.
    pub fn restrict(&self, lo: usize, hi: usize) -> FramewiseProbabilities {
        let a = lo.max(self.first_frame);
        let b = hi.min(self.first_frame + self.n_frames()).max(a);
        let rows: Vec<usize> = (a - self.first_frame..b - self.first_frame).collect();
        FramewiseProbabilities {
            recording_id: self.recording_id.clone(),
            classes: self.classes.clone(),
            first_frame: a,
            probs: self.probs.select_rows(&rows),
            flags: self.flags.clone(),
        }
    }

    /// Grid-aligned target rows for this track out of a full-recording label matrix.
    pub fn aligned_targets(&self, targets: &Matrix) -> Result<Matrix> {
        let end = self.first_frame + self.n_frames();
        if end > targets.rows() {
            return Err(Error::Shape(format!(
                "track `{}` ends at grid frame {end}, labels have {}",
                self.recording_id,
                targets.rows()
            )));
        }
        Ok(targets.select_rows(&(self.first_frame..end).collect::<Vec<_>>()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentSource {
    Predicted,
    Oracle,
}

impl SegmentSource {
    fn as_str(self) -> &'static str {
        match self {
            SegmentSource::Predicted => "predicted",
            SegmentSource::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub recording_id: String,
    pub start: f64,
    pub end: f64,
    /// The class whose track (or annotation) produced the segment.
    pub class: String,
    /// Mean probability per class over the segment's frames.
    pub probs: Vec<(String, f64)>,
    pub source: SegmentSource,
    /// The segment covered no frame center and the nearest frame was used.
    #[serde(default)]
    pub short: bool,
}

/// Optional clean-up of the binarized track before endpointing. Off by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Smoothing {
    /// Negative runs of at most this many frames between positives are filled.
    pub close_gaps: usize,
    /// Positive runs shorter than this many frames are dropped.
    pub min_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    PerFrame,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub threshold: f64,
    /// Must match the model when set; `None` uses the model's own strategy.
    pub strategy: Option<Strategy>,
    /// Grid frames whose centers lie within this many seconds of either recording edge
    /// are dropped, so tracks from models with different contexts share one grid.
    pub truncate_s: f64,
    pub smoothing: Option<Smoothing>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            strategy: None,
            truncate_s: 0.0,
            smoothing: None,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if !(self.truncate_s >= 0.0) {
            return Err(Error::Config("truncate_s must be non-negative".into()));
        }
        Ok(())
    }
}

/// `p >= theta` per frame of class `c`.
pub fn binarize(track: &FramewiseProbabilities, c: usize, theta: f64) -> Vec<bool> {
    (0..track.n_frames())
        .map(|k| track.probs.get(k, c) >= theta)
        .collect()
}

fn smooth(bits: &mut [bool], s: Smoothing) {
    if s.close_gaps > 0 {
        let runs = binary_runs(bits);
        for w in runs.windows(2) {
            if w[1].0 - w[0].1 <= s.close_gaps {
                bits[w[0].1..w[1].0].iter_mut().for_each(|b| *b = true);
            }
        }
    }
    if s.min_len > 1 {
        for (a, b) in binary_runs(bits) {
            if b - a < s.min_len {
                bits[a..b].iter_mut().for_each(|v| *v = false);
            }
        }
    }
}

/// Segments of class `class`: a segment opens at each rising edge and closes at the
/// next falling edge or the end of the track. Frames `i..=j` span `[0.1 i, 0.1 (j + 1))`.
pub fn endpoint(
    track: &FramewiseProbabilities,
    class: &str,
    theta: f64,
    smoothing: Option<Smoothing>,
) -> Result<Vec<Segment>> {
    let c = track.class_index(class)?;
    let mut bits = binarize(track, c, theta);
    if let Some(s) = smoothing {
        smooth(&mut bits, s);
    }
    Ok(binary_runs(&bits)
        .into_iter()
        .map(|(a, b)| {
            let mean = (a..b).map(|k| track.probs.get(k, c)).sum::<f64>() / (b - a) as f64;
            Segment {
                recording_id: track.recording_id.clone(),
                start: track.t_s(a),
                end: grid_start(track.first_frame + b),
                class: class.to_string(),
                probs: vec![(class.to_string(), mean)],
                source: SegmentSource::Predicted,
                short: false,
            }
        })
        .collect())
}

/// Rows of `track` whose grid frame centers fall inside `[start, end)`; the nearest
/// frame when there are none (second value `true`).
pub fn segment_rows(track: &FramewiseProbabilities, start: f64, end: f64) -> (Vec<usize>, bool) {
    let rows: Vec<usize> = (0..track.n_frames())
        .filter(|&k| {
            let c = grid_centre(track.grid_frame(k));
            c >= start && c < end
        })
        .collect();
    if !rows.is_empty() || track.n_frames() == 0 {
        return (rows, false);
    }
    let mid = 0.5 * (start + end);
    let k = (0..track.n_frames())
        .min_by(|&a, &b| {
            (grid_centre(track.grid_frame(a)) - mid)
                .abs()
                .total_cmp(&(grid_centre(track.grid_frame(b)) - mid).abs())
        })
        .expect("non-empty track");
    (vec![k], true)
}

/// Mean per-class probability over the segment's frames.
pub fn classify_segment(track: &FramewiseProbabilities, seg: &Segment) -> Result<Segment> {
    if seg.recording_id != track.recording_id {
        return Err(Error::InvalidInput(format!(
            "segment from `{}` scored against track `{}`",
            seg.recording_id, track.recording_id
        )));
    }
    let (rows, short) = segment_rows(track, seg.start, seg.end);
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "track `{}` is empty",
            track.recording_id
        )));
    }
    let probs = track
        .classes
        .iter()
        .enumerate()
        .map(|(c, name)| {
            (
                name.clone(),
                rows.iter().map(|&k| track.probs.get(k, c)).sum::<f64>() / rows.len() as f64,
            )
        })
        .collect();
    Ok(Segment {
        probs,
        short,
        ..seg.clone()
    })
}

/// Segments taken from the annotations themselves, one per event of a target class.
pub fn oracle_segments(ann: &AnnotationTrack, target: &LabelTarget) -> Vec<(usize, Segment)> {
    let classes = target.classes();
    ann.events
        .iter()
        .enumerate()
        .filter_map(|(k, e)| {
            let c = target.class_of(e)?;
            Some((
                k,
                Segment {
                    recording_id: ann.recording_id.clone(),
                    start: e.start,
                    end: e.end,
                    class: classes[c].clone(),
                    probs: Vec::new(),
                    source: SegmentSource::Oracle,
                    short: false,
                },
            ))
        })
        .collect()
}

/// Segments as annotation events, e.g. for re-rasterizing predictions.
pub fn segments_to_track(recording_id: &str, segments: &[Segment]) -> AnnotationTrack {
    AnnotationTrack {
        recording_id: recording_id.to_string(),
        events: segments
            .iter()
            .map(|s| AnnotationEvent::new(s.start, s.end, s.class.clone()))
            .collect(),
    }
}

/// Track CSV `recording_id,t_s,class,prob`.
pub fn write_tracks(path: &Path, tracks: &[FramewiseProbabilities]) -> Result<()> {
    crate::io::write_csv_atomic(path, |w| {
        w.write_record(["recording_id", "t_s", "class", "prob"])?;
        for t in tracks {
            for k in 0..t.n_frames() {
                let ts = format!("{:.1}", t.t_s(k));
                for (c, name) in t.classes.iter().enumerate() {
                    w.write_record([
                        t.recording_id.as_str(),
                        &ts,
                        name,
                        &t.probs.get(k, c).to_string(),
                    ])?;
                }
            }
        }
        Ok(())
    })
}

/// Reads a track CSV back; rows must be grid-contiguous per recording.
pub fn read_tracks(path: &Path) -> Result<Vec<FramewiseProbabilities>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out: Vec<FramewiseProbabilities> = Vec::new();
    // (recording, frame) -> per class value, in file order
    let mut rows: Vec<(String, usize, String, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::Format(format!(
                "track row has {} fields, expected 4",
                rec.len()
            )));
        }
        let t: f64 = rec[1]
            .parse()
            .map_err(|_| Error::Format(format!("bad time `{}`", &rec[1])))?;
        let p: f64 = rec[3]
            .parse()
            .map_err(|_| Error::Format(format!("bad probability `{}`", &rec[3])))?;
        rows.push((
            rec[0].to_string(),
            (t * 10.0).round() as usize,
            rec[2].to_string(),
            p,
        ));
    }
    let mut i = 0;
    while i < rows.len() {
        let id = rows[i].0.clone();
        let first = rows[i].1;
        let mut classes: Vec<String> = Vec::new();
        let mut j = i;
        while j < rows.len() && rows[j].0 == id && rows[j].1 == first {
            classes.push(rows[j].2.clone());
            j += 1;
        }
        let c = classes.len();
        let mut data = Vec::new();
        let mut k = i;
        while k < rows.len() && rows[k].0 == id {
            let frame = first + (k - i) / c;
            let r = &rows[k];
            if r.1 != frame || r.2 != classes[(k - i) % c] {
                return Err(Error::Format(format!(
                    "track `{id}` is not grid-contiguous at t = {}",
                    r.1 as f64 / 10.0
                )));
            }
            data.push(r.3);
            k += 1;
        }
        let n = data.len() / c;
        out.push(FramewiseProbabilities {
            recording_id: id,
            classes,
            first_frame: first,
            probs: Matrix::from_vec(n, c, data)?,
            flags: Vec::new(),
        });
        i = k;
    }
    Ok(out)
}

/// Segment CSV `recording_id,start_s,end_s,class,prob,source`, one row per scored class.
pub fn write_segments(path: &Path, segments: &[Segment]) -> Result<()> {
    crate::io::write_csv_atomic(path, |w| {
        w.write_record([
            "recording_id",
            "start_s",
            "end_s",
            "class",
            "prob",
            "source",
        ])?;
        for s in segments {
            let (a, b) = (
                crate::corpus::format_seconds(s.start),
                crate::corpus::format_seconds(s.end),
            );
            for (name, p) in &s.probs {
                w.write_record([
                    s.recording_id.as_str(),
                    &a,
                    &b,
                    name,
                    &p.to_string(),
                    s.source.as_str(),
                ])?;
            }
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{rasterize, LabelWindow};
    use proptest::prelude::*;

    fn track(values: &[f64]) -> FramewiseProbabilities {
        FramewiseProbabilities {
            recording_id: "r".into(),
            classes: vec!["call".into()],
            first_frame: 0,
            probs: Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap(),
            flags: Vec::new(),
        }
    }

    #[test]
    fn endpoint_fixture() {
        let s = endpoint(&track(&[0.1, 0.8, 0.9, 0.2]), "call", 0.5, None).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].start, s[0].end), (0.1, 0.3));
        assert!(endpoint(&track(&[0.1, 0.2]), "call", 0.5, None)
            .unwrap()
            .is_empty());
        let all = endpoint(&track(&[0.6, 0.7, 0.5]), "call", 0.5, None).unwrap();
        assert_eq!((all.len(), all[0].start, all[0].end), (1, 0.0, 0.3));
    }

    #[test]
    fn offset_tracks_keep_grid_times() {
        let mut t = track(&[0.9, 0.1]);
        t.first_frame = 12;
        let s = endpoint(&t, "call", 0.5, None).unwrap();
        assert_eq!((s[0].start, s[0].end), (1.2, 1.3));
    }

    #[test]
    fn smoothing_is_opt_in() {
        let t = track(&[0.9, 0.1, 0.9, 0.9, 0.1, 0.1, 0.1, 0.9]);
        assert_eq!(endpoint(&t, "call", 0.5, None).unwrap().len(), 3);
        let s = Smoothing {
            close_gaps: 1,
            min_len: 2,
        };
        let segs = endpoint(&t, "call", 0.5, Some(s)).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start, segs[0].end), (0.0, 0.4));
    }

    #[test]
    fn classify_is_mean() {
        let t = track(&[0.2, 0.4, 0.9, 0.0]);
        let seg = Segment {
            recording_id: "r".into(),
            start: 0.0,
            end: 0.3,
            class: "call".into(),
            probs: vec![],
            source: SegmentSource::Oracle,
            short: false,
        };
        let out = classify_segment(&t, &seg).unwrap();
        assert!((out.probs[0].1 - 0.5).abs() < 1e-15);
        let predicted = Segment {
            source: SegmentSource::Predicted,
            ..seg.clone()
        };
        assert_eq!(classify_segment(&t, &predicted).unwrap().probs, out.probs);
        // shorter than a frame: nearest center
        let tiny = Segment {
            start: 0.21,
            end: 0.22,
            ..seg
        };
        let out = classify_segment(&t, &tiny).unwrap();
        assert!(out.short);
        assert_eq!(out.probs[0].1, 0.9);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = FramewiseProbabilities {
            recording_id: "a".into(),
            classes: vec!["x".into(), "y".into()],
            first_frame: 3,
            probs: Matrix::from_rows(&[[0.25, 0.5], [0.125, 1.0]]).unwrap(),
            flags: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_tracks(
            &p,
            &[t.clone(), {
                t.recording_id = "b".into();
                t.clone()
            }],
        )
        .unwrap();
        let back = read_tracks(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1], t);
        let segs = endpoint(&t, "y", 0.5, None).unwrap();
        write_segments(&dir.path().join("s.csv"), &segs).unwrap();
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert_eq!(text.lines().nth(1), Some("b,0.3,0.5,y,0.75,predicted"));
    }

    proptest! {
        #[test]
        fn endpoint_round_trip(bits in prop::collection::vec(prop::bool::ANY, 1..500)) {
            let values: Vec<f64> = bits.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect();
            let t = track(&values);
            let segs = endpoint(&t, "call", 0.5, None).unwrap();
            let ann = segments_to_track("r", &segs);
            let fl = rasterize(&ann, bits.len() as f64 / 10.0, &LabelTarget::Calls(vec!["call".into()]), LabelWindow::Grid100);
            prop_assert_eq!(fl.n_frames(), bits.len());
            for (k, &b) in bits.iter().enumerate() {
                prop_assert_eq!(fl.get(k, 0) == 1, b);
            }
        }

        #[test]
        fn higher_threshold_never_adds_duration(v in prop::collection::vec(0.0f64..1.0, 1..200), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let (lo, hi) = (a.min(b), a.max(b));
            let t = track(&v);
            let dur = |th| endpoint(&t, "call", th, None).unwrap().iter().map(|s| s.end - s.start).sum::<f64>();
            prop_assert!(dur(hi) <= dur(lo) + 1e-9);
        }

        #[test]
        fn classify_within_bounds(v in prop::collection::vec(0.0f64..1.0, 1..50), a in 0usize..50, len in 1usize..50) {
            let t = track(&v);
            let a = a.min(v.len() - 1);
            let b = (a + len).min(v.len());
            let seg = Segment { recording_id: "r".into(), start: a as f64 / 10.0, end: b as f64 / 10.0, class: "call".into(), probs: vec![], source: SegmentSource::Predicted, short: false };
            let m = classify_segment(&t, &seg).unwrap().probs[0].1;
            let slice = &v[a..b];
            prop_assert!(m >= slice.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-12);
            prop_assert!(m <= slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12);
        }
    }
}
