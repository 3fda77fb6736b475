use super::{DetectionConfig, FramewiseProbabilities, TrackFlag};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::labels::{grid_len, grid_start};
use crate::matrix::Matrix;

/// A model that maps a window of `context()` feature frames to one probability vector
/// for the window's center frame.
pub trait WindowClassifier {
    fn context(&self) -> usize;
    fn classes(&self) -> &[String];
    /// Rows are flattened windows (`context() * D`, frame-major); returns `N x C`.
    fn predict_windows(&self, windows: &Matrix) -> Result<Matrix>;
}

/// A model that maps a window of `window_tokens() * token_frames()` feature frames to
/// one probability vector per token column.
pub trait SequenceClassifier {
    fn classes(&self) -> &[String];
    fn token_frames(&self) -> usize;
    fn window_tokens(&self) -> usize;
    /// `window` is `(window_tokens * token_frames) x D`; returns `window_tokens x C`.
    fn predict_window(&self, window: &Matrix) -> Result<Matrix>;
}

/// Center time of grid frame `i`.
pub fn grid_centre(i: usize) -> f64 {
    grid_start(i) + 0.05
}

fn grid_range(duration: f64, truncate_s: f64) -> std::ops::Range<usize> {
    let n = grid_len(duration);
    let lo = (0..n)
        .find(|&i| grid_centre(i) >= truncate_s - 1e-9)
        .unwrap_or(n);
    let hi = (lo..n)
        .rev()
        .find(|&i| grid_centre(i) <= duration - truncate_s + 1e-9)
        .map_or(lo, |i| i + 1);
    lo..hi
}

/// First grid frame and, for each subsequent grid frame, the first feature row of its
/// `w`-frame window centered on the frame nearest the grid center.
pub fn window_rows(
    f: &FeatureMatrix,
    duration: f64,
    w: usize,
    truncate_s: f64,
) -> (usize, Vec<usize>) {
    let t = f.rows() as i64;
    let half = ((w.max(1) - 1) / 2) as i64;
    let mut first = None;
    let mut starts = Vec::new();
    for i in grid_range(duration, truncate_s) {
        let start = f.config.nearest_frame(grid_centre(i)) - half;
        let fits = w > 0 && start >= 0 && start + w as i64 <= t;
        match (fits, first) {
            (true, None) => {
                first = Some(i);
                starts.push(start as usize);
            }
            (true, Some(_)) => starts.push(start as usize),
            (false, Some(_)) => break,
            (false, None) => {}
        }
    }
    (first.unwrap_or(0), starts)
}

const BATCH: usize = 256;

/// Per-frame strategy: one context window per grid frame.
pub fn detect_frames<M: WindowClassifier + ?Sized>(
    model: &M,
    f: &FeatureMatrix,
    duration: f64,
    cfg: &DetectionConfig,
) -> Result<FramewiseProbabilities> {
    let w = model.context();
    let d = f.cols();
    let c = model.classes().len();
    let (first, starts) = window_rows(f, duration, w, cfg.truncate_s);
    let mut out = FramewiseProbabilities {
        recording_id: String::new(),
        classes: model.classes().to_vec(),
        first_frame: first,
        probs: Matrix::zeros(starts.len(), c),
        flags: Vec::new(),
    };
    if starts.is_empty() {
        log::warn!("recording shorter than one {w}-frame context; empty track");
        out.flags.push(TrackFlag::TooShort);
        return Ok(out);
    }
    let data = f.values.data();
    for (b, chunk) in starts.chunks(BATCH).enumerate() {
        let mut win = Vec::with_capacity(chunk.len() * w * d);
        for &s in chunk {
            win.extend_from_slice(&data[s * d..(s + w) * d]);
        }
        let p = model.predict_windows(&Matrix::from_vec(chunk.len(), w * d, win)?)?;
        if p.rows() != chunk.len() || p.cols() != c {
            return Err(Error::Shape(format!(
                "model returned {}x{}, expected {}x{c}",
                p.rows(),
                p.cols(),
                chunk.len()
            )));
        }
        for k in 0..chunk.len() {
            out.probs.row_mut(b * BATCH + k).copy_from_slice(p.row(k));
        }
    }
    Ok(out)
}

/// Sequence strategy: sliding windows with 50% token overlap, overlapping token
/// predictions averaged, then linearly interpolated onto the grid.
pub fn detect_sequence<M: SequenceClassifier + ?Sized>(
    model: &M,
    f: &FeatureMatrix,
    duration: f64,
    cfg: &DetectionConfig,
) -> Result<FramewiseProbabilities> {
    let tf = model.token_frames();
    let l = model.window_tokens();
    let c = model.classes().len();
    let d = f.cols();
    let mut flags = Vec::new();
    let range = grid_range(duration, cfg.truncate_s);
    if f.rows() == 0 || range.is_empty() {
        flags.push(TrackFlag::TooShort);
        return Ok(FramewiseProbabilities {
            recording_id: String::new(),
            classes: model.classes().to_vec(),
            first_frame: 0,
            probs: Matrix::zeros(0, c),
            flags,
        });
    }
    let real_tokens = f.rows().div_ceil(tf);
    let n_tok = real_tokens.max(l);
    let padded_rows = n_tok * tf;
    if padded_rows != f.rows() {
        flags.push(TrackFlag::Padded);
    }
    let data = f.values.data();
    let frame = |r: usize| &data[r.min(f.rows() - 1) * d..(r.min(f.rows() - 1) + 1) * d];
    let hop = (l / 2).max(1);
    let mut starts: Vec<usize> = (0..)
        .map(|k| k * hop)
        .take_while(|&s| s + l <= n_tok)
        .collect();
    if starts.last().is_none_or(|&s| s + l < n_tok) {
        starts.push(n_tok - l);
    }
    let mut sum = Matrix::zeros(n_tok, c);
    let mut count = vec![0usize; n_tok];
    for s in starts {
        let mut win = Vec::with_capacity(l * tf * d);
        for r in s * tf..(s + l) * tf {
            win.extend_from_slice(frame(r));
        }
        let p = model.predict_window(&Matrix::from_vec(l * tf, d, win)?)?;
        if p.rows() != l || p.cols() != c {
            return Err(Error::Shape(format!(
                "sequence model returned {}x{}, expected {l}x{c}",
                p.rows(),
                p.cols()
            )));
        }
        for j in 0..l {
            for (a, v) in sum.row_mut(s + j).iter_mut().zip(p.row(j)) {
                *a += v;
            }
            count[s + j] += 1;
        }
    }
    for (j, &n) in count.iter().enumerate().take(real_tokens) {
        sum.row_mut(j).iter_mut().for_each(|v| *v /= n as f64);
    }
    let src = sum.select_rows(&(0..real_tokens).collect::<Vec<_>>());
    // token centers, shifted onto the grid's frame-start stamps
    let src_t: Vec<f64> = (0..real_tokens)
        .map(|j| 0.5 * (f.config.frame_time(j * tf) + f.config.frame_time(j * tf + tf - 1)) - 0.05)
        .collect();
    let targets: Vec<f64> = range.clone().map(grid_start).collect();
    if real_tokens == 1 {
        flags.push(TrackFlag::SinglePoint);
    }
    let probs = resample_track(&src_t, &src, &targets)?;
    Ok(FramewiseProbabilities {
        recording_id: String::new(),
        classes: model.classes().to_vec(),
        first_frame: range.start,
        probs,
        flags,
    })
}

/// Linear interpolation of a track sampled at increasing times `src_t` onto `dst_t`,
/// holding the end values outside the sampled range.
pub fn resample_track(src_t: &[f64], src: &Matrix, dst_t: &[f64]) -> Result<Matrix> {
    if src_t.len() != src.rows() {
        return Err(Error::Shape(format!(
            "{} times for {} track rows",
            src_t.len(),
            src.rows()
        )));
    }
    if src_t.is_empty() {
        return Err(Error::InvalidInput("cannot resample an empty track".into()));
    }
    if src_t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "track times must be strictly increasing".into(),
        ));
    }
    let c = src.cols();
    let last = src_t.len() - 1;
    let mut out = Matrix::zeros(dst_t.len(), c);
    let mut k = 0;
    for (i, &t) in dst_t.iter().enumerate() {
        let row = out.row_mut(i);
        if t <= src_t[0] {
            row.copy_from_slice(src.row(0));
        } else if t >= src_t[last] {
            row.copy_from_slice(src.row(last));
        } else {
            while src_t[k + 1] < t {
                k += 1;
            }
            while k > 0 && src_t[k] > t {
                k -= 1;
            }
            let a = (t - src_t[k]) / (src_t[k + 1] - src_t[k]);
            for (j, v) in row.iter_mut().enumerate() {
                let (p, q) = (src.get(k, j), src.get(k + 1, j));
                *v = p + a * (q - p);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;

    #[test]
    fn interpolation_fixture() {
        let src = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let out = resample_track(&[0.0, 0.16], &src, &[0.0, 0.1, 0.2]).unwrap();
        assert_eq!(out.column(0), vec![0.0, 0.625, 1.0]);
        let constant = Matrix::from_rows(&[[0.3], [0.3], [0.3]]).unwrap();
        let out =
            resample_track(&[0.0, 0.16, 0.32], &constant, &[0.0, 0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.3));
        let single =
            resample_track(&[0.5], &Matrix::from_rows(&[[0.7]]).unwrap(), &[0.0, 1.0]).unwrap();
        assert_eq!(single.data(), &[0.7, 0.7]);
    }

    struct Mean {
        classes: Vec<String>,
        w: usize,
    }

    impl WindowClassifier for Mean {
        fn context(&self) -> usize {
            self.w
        }
        fn classes(&self) -> &[String] {
            &self.classes
        }
        fn predict_windows(&self, x: &Matrix) -> Result<Matrix> {
            let v = x
                .iter_rows()
                .map(|r| r.iter().sum::<f64>() / r.len() as f64)
                .collect();
            Matrix::from_vec(x.rows(), 1, v)
        }
    }

    impl SequenceClassifier for Mean {
        fn classes(&self) -> &[String] {
            &self.classes
        }
        fn token_frames(&self) -> usize {
            16
        }
        fn window_tokens(&self) -> usize {
            self.w
        }
        fn predict_window(&self, x: &Matrix) -> Result<Matrix> {
            let v = x
                .data()
                .chunks(16 * x.cols())
                .map(|r| r.iter().sum::<f64>() / r.len() as f64)
                .collect();
            Matrix::from_vec(self.w, 1, v)
        }
    }

    fn features(frames: usize, f: impl Fn(usize) -> f64) -> FeatureMatrix {
        let cfg = FeatureConfig::default();
        FeatureMatrix {
            values: Matrix::from_vec(frames, 1, (0..frames).map(f).collect()).unwrap(),
            frame_times: (0..frames).map(|i| cfg.frame_time(i)).collect(),
            config: cfg,
        }
    }

    #[test]
    fn ten_seconds_gives_at_most_100_frames() {
        // 10 s at 16 kHz with 25 ms / 10 ms frames
        let f = features(998, |i| (i % 7) as f64);
        let m = Mean {
            classes: vec!["call".into()],
            w: 51,
        };
        let t = detect_frames(&m, &f, 10.0, &DetectionConfig::default()).unwrap();
        assert!(t.n_frames() <= 100);
        assert!(t.times().windows(2).all(|w| w[1] > w[0]));
        // windows are centered on frame 10 i + 4
        let (first, starts) = window_rows(&f, 10.0, 51, 0.0);
        assert_eq!(starts[0] + 25, 10 * first + 4);
    }

    #[test]
    fn constant_input_constant_track_on_shared_grid() {
        let f = features(2998, |_| 0.25);
        let per_frame = Mean {
            classes: vec!["call".into()],
            w: 251,
        };
        let seq = Mean {
            classes: vec!["call".into()],
            w: 16,
        };
        let cfg = DetectionConfig {
            truncate_s: 1.3,
            ..Default::default()
        };
        let a = detect_frames(&per_frame, &f, 30.0, &cfg).unwrap();
        let b = detect_sequence(&seq, &f, 30.0, &cfg).unwrap();
        assert!(a.probs.data().iter().all(|&v| v == 0.25));
        assert!(b.probs.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!((a.first_frame, a.n_frames()), (b.first_frame, b.n_frames()));
        assert_eq!(a.first_frame, 13);
    }

    #[test]
    fn too_short_is_flagged() {
        let f = features(40, |_| 0.0);
        let m = Mean {
            classes: vec!["call".into()],
            w: 51,
        };
        let t = detect_frames(&m, &f, 0.5, &DetectionConfig::default()).unwrap();
        assert_eq!(t.n_frames(), 0);
        assert_eq!(t.flags, vec![TrackFlag::TooShort]);
    }

    #[test]
    fn sequence_follows_a_ramp() {
        // feature value = frame time, so each token predicts its own center time
        let f = features(998, |i| FeatureConfig::default().frame_time(i));
        let m = Mean {
            classes: vec!["call".into()],
            w: 8,
        };
        let t = detect_sequence(&m, &f, 10.0, &DetectionConfig::default()).unwrap();
        assert!(t.flags.contains(&TrackFlag::Padded));
        for k in 5..90 {
            // grid frame k is stamped 0.1 k and centered 0.1 k + 0.05
            assert!(
                (t.probs.get(k, 0) - grid_centre(k)).abs() < 1e-9,
                "frame {k}"
            );
        }
    }
}
