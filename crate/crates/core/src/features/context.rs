use super::FeatureMatrix;
use crate::matrix::Matrix;

/// Concatenates `w` consecutive frames per row. Row `i` covers frames `i .. i + w`, so it
/// is centered on frame `i + (w - 1) / 2`; windows that would cross an edge are dropped.
pub fn context_windows(f: &FeatureMatrix, w: usize) -> FeatureMatrix {
    let t = f.rows();
    let d = f.cols();
    if w == 0 || w > t {
        return FeatureMatrix {
            values: Matrix::zeros(0, d * w),
            config: f.config.clone(),
            frame_times: Vec::new(),
        };
    }
    let rows = t - w + 1;
    // rows are contiguous in memory, so each window is one slice
    let data = f.values.data();
    let mut out = Vec::with_capacity(rows * d * w);
    for i in 0..rows {
        out.extend_from_slice(&data[i * d..(i + w) * d]);
    }
    let half = (w - 1) / 2;
    FeatureMatrix {
        values: Matrix::from_vec(rows, d * w, out).expect("sized above"),
        config: f.config.clone(),
        frame_times: f.frame_times[half..half + rows].to_vec(),
    }
}
