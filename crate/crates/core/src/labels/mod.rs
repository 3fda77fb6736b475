//! Frame-grid and segment targets.

mod taxonomy;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use taxonomy::{map_taxonomy, LabelMapping, Taxonomy, UnifiedLabel, NO_CALL};

use crate::corpus::{AnnotationEvent, AnnotationTrack};
use crate::error::Result;

/// Classification grid stride in seconds.
pub const GRID_STRIDE_S: f64 = 0.1;
/// Fraction of a label window an event must cover to mark it positive.
pub const FRAME_COVERAGE: f64 = 0.2;
/// Fraction of a segment a neighbouring call must cover to be a segment target.
pub const SEGMENT_COVERAGE: f64 = 0.5;

const EPS: f64 = 1e-9;

/// Grid time of frame `i`, computed from the stride alone.
pub fn grid_start(i: usize) -> f64 {
    i as f64 / 10.0
}

/// Number of complete grid frames in `duration` seconds.
pub fn grid_len(duration: f64) -> usize {
    (duration * 10.0 + EPS).floor().max(0.0) as usize
}

/// Maximal runs of `true` as half-open index ranges `[start, end)`.
pub fn binary_runs(track: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in track.iter().enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, track.len()));
    }
    out
}

/// Label window evaluated at each grid position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelWindow {
    /// 100 ms windows on the 100 ms grid.
    #[default]
    Grid100,
    /// 200 ms windows with 100 ms hop, centered on each grid frame.
    Overlap200,
}

impl LabelWindow {
    /// Window interval for grid frame `i`.
    pub fn span(self, i: usize) -> (f64, f64) {
        let s = grid_start(i);
        match self {
            LabelWindow::Grid100 => (s, grid_start(i + 1)),
            LabelWindow::Overlap200 => (s - 0.05, s + 0.15),
        }
    }

    pub fn len_s(self) -> f64 {
        match self {
            LabelWindow::Grid100 => 0.1,
            LabelWindow::Overlap200 => 0.2,
        }
    }

    /// Minimum overlap in seconds for a positive label.
    pub fn threshold_s(self) -> f64 {
        FRAME_COVERAGE * self.len_s()
    }
}

/// Which label column of the annotation the target classes are drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "classes")]
pub enum LabelTarget {
    /// One class, `call`, positive for any annotated call.
    AnyCall,
    Calls(Vec<String>),
    Subcalls(Vec<String>),
}

impl LabelTarget {
    pub fn classes(&self) -> Vec<String> {
        match self {
            LabelTarget::AnyCall => vec!["call".to_string()],
            LabelTarget::Calls(c) | LabelTarget::Subcalls(c) => c.clone(),
        }
    }

    /// Class index of an event, if it belongs to one of the target classes.
    pub fn class_of(&self, e: &AnnotationEvent) -> Option<usize> {
        match self {
            LabelTarget::AnyCall => Some(0),
            LabelTarget::Calls(c) => c.iter().position(|x| *x == e.call_type),
            LabelTarget::Subcalls(c) => {
                let s = e.subcall_type.as_deref()?;
                c.iter().position(|x| x == s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabels {
    pub recording_id: String,
    pub classes: Vec<String>,
    pub window: LabelWindow,
    n_frames: usize,
    /// `n_frames x classes.len()`, row-major.
    labels: Vec<u8>,
}

impl FrameLabels {
    pub fn new(
        recording_id: impl Into<String>,
        classes: Vec<String>,
        window: LabelWindow,
        n_frames: usize,
    ) -> Self {
        let c = classes.len();
        Self {
            recording_id: recording_id.into(),
            classes,
            window,
            n_frames,
            labels: vec![0; n_frames * c],
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, i: usize, c: usize) -> u8 {
        self.labels[i * self.n_classes() + c]
    }

    pub fn set(&mut self, i: usize, c: usize, v: u8) {
        let k = self.n_classes();
        self.labels[i * k + c] = v;
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let k = self.n_classes();
        &self.labels[i * k..(i + 1) * k]
    }

    pub fn is_no_call(&self, i: usize) -> bool {
        self.row(i).iter().all(|&v| v == 0)
    }

    pub fn t_start(&self, i: usize) -> f64 {
        grid_start(i)
    }

    /// Targets of class `c` as 0/1 floats.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_frames).map(|i| self.get(i, c) as f64).collect()
    }

    /// Binary "any call" targets.
    pub fn any(&self) -> Vec<f64> {
        (0..self.n_frames)
            .map(|i| if self.is_no_call(i) { 0.0 } else { 1.0 })
            .collect()
    }

    /// Targets as an `n_frames x classes` 0/1 matrix.
    pub fn to_matrix(&self) -> crate::matrix::Matrix {
        let data = self.labels.iter().map(|&v| v as f64).collect();
        crate::matrix::Matrix::from_vec(self.n_frames, self.classes.len(), data)
            .expect("sized by construction")
    }

    /// Keeps the first `n` frames.
    pub fn truncate(&mut self, n: usize) {
        if n < self.n_frames {
            self.n_frames = n;
            self.labels.truncate(n * self.classes.len());
        }
    }
}

/// Rasterizes an annotation track onto the classification grid: class `c` is positive
/// at frame `i` when its events cover at least 20% of the label window.
pub fn rasterize(
    ann: &AnnotationTrack,
    duration: f64,
    target: &LabelTarget,
    window: LabelWindow,
) -> FrameLabels {
    let n = grid_len(duration);
    let mut out = FrameLabels::new(ann.recording_id.clone(), target.classes(), window, n);
    let threshold = window.threshold_s() - EPS;
    for e in &ann.events {
        let Some(c) = target.class_of(e) else {
            continue;
        };
        // frames whose window can touch the event
        let lo = ((e.start - window.len_s()) * 10.0).floor().max(0.0) as usize;
        let hi = (((e.end + window.len_s()) * 10.0).ceil().max(0.0) as usize).min(n);
        for i in lo..hi {
            let (s, t) = window.span(i);
            if e.overlap(s, t) >= threshold {
                out.set(i, c, 1);
            }
        }
    }
    out
}

/// Rasterizes every track against its recording duration, in parallel.
pub fn rasterize_all(
    tracks: &[(AnnotationTrack, f64)],
    target: &LabelTarget,
    window: LabelWindow,
) -> Vec<FrameLabels> {
    crate::parallel::par_map(tracks, |(t, d)| rasterize(t, *d, target, window))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentLabels {
    pub start: f64,
    pub end: f64,
    pub classes: Vec<String>,
    pub labels: Vec<u8>,
}

impl SegmentLabels {
    pub fn present(&self) -> Vec<&str> {
        self.classes
            .iter()
            .zip(&self.labels)
            .filter(|(_, &v)| v == 1)
            .map(|(c, _)| c.as_str())
            .collect()
    }
}

/// Multi-label target for a segment. The generating event `primary` (an index into
/// `ann.events`) is always present; other calls count when they cover at least half of
/// the segment.
pub fn segment_targets(
    ann: &AnnotationTrack,
    seg: (f64, f64),
    primary: Option<usize>,
    target: &LabelTarget,
) -> SegmentLabels {
    let classes = target.classes();
    let mut labels = vec![0u8; classes.len()];
    let len = seg.1 - seg.0;
    for (k, e) in ann.events.iter().enumerate() {
        let Some(c) = target.class_of(e) else {
            continue;
        };
        if Some(k) == primary
            || (len > 0.0 && e.overlap(seg.0, seg.1) >= SEGMENT_COVERAGE * len - EPS)
        {
            labels[c] = 1;
        }
    }
    SegmentLabels {
        start: seg.0,
        end: seg.1,
        classes,
        labels,
    }
}

/// Writes frame labels as `recording_id,frame_idx,t_start_s,class,label`, one row per
/// frame and class.
pub fn write_frame_labels(path: &Path, labels: &[FrameLabels]) -> Result<()> {
    crate::io::write_csv_atomic(path, |w| {
        w.write_record(["recording_id", "frame_idx", "t_start_s", "class", "label"])?;
        for fl in labels {
            for i in 0..fl.n_frames() {
                let t = format!("{:.1}", fl.t_start(i));
                let idx = i.to_string();
                for (c, name) in fl.classes.iter().enumerate() {
                    let v = fl.get(i, c).to_string();
                    w.write_record([fl.recording_id.as_str(), &idx, &t, name, &v])?;
                }
            }
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track(events: &[(f64, f64, &str)]) -> AnnotationTrack {
        let mut t = AnnotationTrack::new("r");
        t.events = events
            .iter()
            .map(|&(s, e, c)| AnnotationEvent::new(s, e, c))
            .collect();
        t
    }

    fn calls(c: &[&str]) -> LabelTarget {
        LabelTarget::Calls(c.iter().map(|s| s.to_string()).collect())
    }

    // independent oracle: interval intersection against the grid frame
    fn oracle(s: f64, e: f64, i: usize) -> bool {
        let (a, b) = (i as f64 * 0.1, (i + 1) as f64 * 0.1);
        (e.min(b) - s.max(a)).max(0.0) >= 0.02 - 1e-9
    }

    #[test]
    fn runs() {
        assert_eq!(
            binary_runs(&[false, true, true, false, true]),
            vec![(1, 3), (4, 5)]
        );
        assert!(binary_runs(&[]).is_empty());
    }

    #[test]
    fn fixture_frames() {
        let fl = rasterize(
            &track(&[(0.85, 2.0, "rumble")]),
            3.0,
            &calls(&["rumble"]),
            LabelWindow::Grid100,
        );
        assert_eq!(fl.n_frames(), 30);
        assert_eq!(fl.get(8, 0), 1);
        let fl = rasterize(
            &track(&[(0.885, 2.0, "rumble")]),
            3.0,
            &calls(&["rumble"]),
            LabelWindow::Grid100,
        );
        assert_eq!(fl.get(8, 0), 0);
        assert_eq!(fl.get(9, 0), 1);
        assert_eq!(fl.get(19, 0), 1);
        assert_eq!(fl.get(20, 0), 0);
    }

    #[test]
    fn exactly_twenty_ms_is_positive() {
        let fl = rasterize(
            &track(&[(0.88, 0.9, "rumble")]),
            2.0,
            &calls(&["rumble"]),
            LabelWindow::Grid100,
        );
        assert_eq!(fl.get(8, 0), 1);
        assert_eq!((0..20).filter(|&i| fl.get(i, 0) == 1).count(), 1);
    }

    #[test]
    fn empty_annotations_are_negative() {
        let fl = rasterize(
            &track(&[]),
            5.0,
            &calls(&["rumble", "roar"]),
            LabelWindow::Grid100,
        );
        assert!((0..fl.n_frames()).all(|i| fl.is_no_call(i)));
    }

    #[test]
    fn other_classes_and_any_call() {
        let t = track(&[(0.0, 0.5, "rumble"), (1.0, 1.5, "roar")]);
        let fl = rasterize(&t, 2.0, &calls(&["rumble", "roar"]), LabelWindow::Grid100);
        assert_eq!(fl.row(2), &[1, 0]);
        assert_eq!(fl.row(12), &[0, 1]);
        assert!(fl.is_no_call(7));
        let any = rasterize(&t, 2.0, &LabelTarget::AnyCall, LabelWindow::Grid100);
        assert_eq!(any.column(0), fl.any());
        let only_roar = rasterize(&t, 2.0, &calls(&["roar"]), LabelWindow::Grid100);
        assert_eq!(only_roar.get(2, 0), 0);
    }

    #[test]
    fn wide_window_needs_forty_ms() {
        // window of frame 8 is [0.75, 0.95)
        let t = track(&[(0.92, 1.5, "rumble")]);
        let fl = rasterize(&t, 2.0, &calls(&["rumble"]), LabelWindow::Overlap200);
        assert_eq!(fl.get(8, 0), 0);
        let t = track(&[(0.91, 1.5, "rumble")]);
        let fl = rasterize(&t, 2.0, &calls(&["rumble"]), LabelWindow::Overlap200);
        assert_eq!(fl.get(8, 0), 1);
    }

    #[test]
    fn subcall_targets() {
        let mut t = track(&[(0.0, 1.0, "rumble")]);
        t.events[0].subcall_type = Some("greeting-rumble".into());
        t.events.push(AnnotationEvent::new(1.0, 2.0, "rumble"));
        let target = LabelTarget::Subcalls(vec!["greeting-rumble".into()]);
        let fl = rasterize(&t, 2.0, &target, LabelWindow::Grid100);
        assert_eq!(fl.get(5, 0), 1);
        assert_eq!(fl.get(15, 0), 0);
    }

    #[test]
    fn segment_fixtures() {
        let target = calls(&["rumble", "roar"]);
        let t = track(&[(10.0, 12.0, "rumble"), (9.0, 11.3, "roar")]);
        let s = segment_targets(&t, (10.0, 12.0), Some(0), &target);
        assert_eq!(s.labels, vec![1, 1]);
        let t = track(&[(10.0, 12.0, "rumble"), (9.0, 10.7, "roar")]);
        let s = segment_targets(&t, (10.0, 12.0), Some(0), &target);
        assert_eq!(s.labels, vec![1, 0]);
        assert_eq!(s.present(), vec!["rumble"]);
    }

    #[test]
    fn primary_present_even_if_short() {
        let target = calls(&["rumble", "roar"]);
        let t = track(&[(10.0, 10.5, "roar")]);
        let s = segment_targets(&t, (9.0, 13.0), Some(0), &target);
        assert_eq!(s.labels, vec![0, 1]);
    }

    #[test]
    fn csv_export() {
        let fl = rasterize(
            &track(&[(0.0, 0.1, "rumble")]),
            0.2,
            &calls(&["rumble", "roar"]),
            LabelWindow::Grid100,
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_frame_labels(&p, &[fl]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(
            text,
            "recording_id,frame_idx,t_start_s,class,label\nr,0,0.0,rumble,1\nr,0,0.0,roar,0\nr,1,0.1,rumble,0\nr,1,0.1,roar,0\n"
        );
    }

    proptest! {
        #[test]
        fn matches_interval_oracle(s in 0.0f64..4.0, len in 0.0f64..1.0) {
            let e = (s + len).min(5.0);
            let fl = rasterize(&track(&[(s, e, "x")]), 5.0, &calls(&["x"]), LabelWindow::Grid100);
            for i in 0..fl.n_frames() {
                prop_assert_eq!(fl.get(i, 0) == 1, oracle(s, e, i), "frame {}", i);
            }
        }

        #[test]
        fn enlarging_is_monotone(s in 0.5f64..4.0, len in 0.0f64..0.5, grow_l in 0.0f64..0.5, grow_r in 0.0f64..0.5) {
            let target = calls(&["x"]);
            let small = rasterize(&track(&[(s, s + len, "x")]), 5.0, &target, LabelWindow::Grid100);
            let big = rasterize(&track(&[(s - grow_l, s + len + grow_r, "x")]), 5.0, &target, LabelWindow::Grid100);
            for i in 0..small.n_frames() {
                prop_assert!(small.get(i, 0) <= big.get(i, 0));
            }
        }

        // A 20 ms event straddling a frame boundary can split 10/10 and mark nothing;
        // 40 ms is the shortest length that always leaves 20 ms in one frame.
        #[test]
        fn long_enough_event_hits_a_frame(s in 0.0f64..4.5, len in 0.04f64..0.3) {
            let fl = rasterize(&track(&[(s, s + len, "x")]), 5.0, &calls(&["x"]), LabelWindow::Grid100);
            prop_assert!((0..fl.n_frames()).any(|i| fl.get(i, 0) == 1));
        }

        #[test]
        fn twenty_ms_inside_one_frame_hits(i in 0usize..49, off in 0.0f64..0.08) {
            let s = i as f64 * 0.1 + off;
            let fl = rasterize(&track(&[(s, s + 0.02, "x")]), 5.0, &calls(&["x"]), LabelWindow::Grid100);
            prop_assert_eq!(fl.get(i, 0), 1);
        }

        #[test]
        fn exact_event_segment_is_one_hot(s in 0.0f64..10.0, len in 0.05f64..3.0, class in 0usize..3) {
            let names = ["a", "b", "c"];
            let t = track(&[(s, s + len, names[class])]);
            let seg = segment_targets(&t, (s, s + len), Some(0), &calls(&names));
            let mut expect = vec![0u8; 3];
            expect[class] = 1;
            prop_assert_eq!(seg.labels, expect);
        }
    }
}
