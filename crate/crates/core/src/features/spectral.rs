use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureConfig, FeatureMatrix, Representation};
use crate::corpus::Recording;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor applied before taking logarithms of energies.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Periodic Hamming window `0.54 - 0.46 cos(2 pi n / N)`.
pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Squared-magnitude STFT: Hamming-windowed frames zero-padded to `dft_size`.
pub fn stft_power(rec: &Recording, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if rec.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "recording at {} Hz, features configured for {} Hz",
            rec.sample_rate, cfg.sample_rate
        )));
    }
    let len = cfg.frame_len_samples();
    let stride = cfg.stride_samples();
    let n_frames = cfg.n_frames(rec.samples.len());
    let n_bins = cfg.n_bins();
    let window = hamming(len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.dft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.dft_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Matrix::zeros(n_frames, n_bins);
    for f in 0..n_frames {
        let frame = &rec.samples[f * stride..f * stride + len];
        for (b, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *b = Complex::new(x as f64 * w, 0.0);
        }
        for b in &mut buf[len..] {
            *b = Complex::new(0.0, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (o, c) in values.row_mut(f).iter_mut().zip(&buf[..n_bins]) {
            *o = c.norm_sqr();
        }
    }
    let config = FeatureConfig {
        representation: Representation::Power,
        ..cfg.clone()
    };
    let frame_times = (0..n_frames).map(|i| cfg.frame_time(i)).collect();
    Ok(FeatureMatrix {
        values,
        config,
        frame_times,
    })
}

/// Triangular filters equally spaced on the mel scale, unit peak height.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mel x n_bins` filter weights.
    pub weights: Matrix,
    pub centers_hz: Vec<f64>,
    // transposed copy for frame-major application
    weights_t: Matrix,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let n_bins = cfg.n_bins();
        let bin_hz = cfg.sample_rate as f64 / cfg.dft_size as f64;
        let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let edges: Vec<f64> = (0..cfg.n_mel + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mel + 1) as f64))
            .collect();
        let centers: Vec<f64> = edges[1..=cfg.n_mel].to_vec();
        let center_bins: Vec<i64> = centers
            .iter()
            .map(|c| (c / bin_hz).round() as i64)
            .collect();
        if let Some(w) = center_bins.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "{} mel filters too many for a {}-point DFT: filters {w} and {} share bin {}",
                cfg.n_mel,
                cfg.dft_size,
                w + 1,
                center_bins[w]
            )));
        }
        let mut weights = Matrix::zeros(cfg.n_mel, n_bins);
        for j in 0..cfg.n_mel {
            let (l, c, r) = (edges[j], edges[j + 1], edges[j + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                weights.set(j, k, w);
            }
        }
        let weights_t = weights.transpose();
        Ok(Self {
            weights,
            centers_hz: centers,
            weights_t,
        })
    }

    pub fn apply(&self, power: &Matrix) -> Result<Matrix> {
        power.matmul(&self.weights_t)
    }
}

pub fn mel_spectrogram(power: &FeatureMatrix, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    if power.config.representation != Representation::Power || power.cols() != cfg.n_bins() {
        return Err(Error::Shape(format!(
            "mel filterbank expects {} power bins, got {}",
            cfg.n_bins(),
            power.cols()
        )));
    }
    let bank = MelFilterbank::new(cfg)?;
    let values = bank.apply(&power.values)?;
    Ok(FeatureMatrix {
        values,
        config: FeatureConfig {
            representation: Representation::Mel,
            ..cfg.clone()
        },
        frame_times: power.frame_times.clone(),
    })
}

pub fn log_mel(mel: &FeatureMatrix) -> FeatureMatrix {
    let mut out = mel.clone();
    for v in out.values.data_mut() {
        *v = (*v + LOG_FLOOR).ln();
    }
    out.config.representation = Representation::LogMel;
    out
}

/// Orthonormal DCT-II basis, `n_out x n_in`.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Matrix {
    let mut m = Matrix::zeros(n_out, n_in);
    let n = n_in as f64;
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        };
        for i in 0..n_in {
            m.set(
                k,
                i,
                scale
                    * (std::f64::consts::PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos(),
            );
        }
    }
    m
}

pub fn dct(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = dct_matrix(n_out, x.len());
    m.iter_rows().map(|r| crate::matrix::dot(r, x)).collect()
}

/// Inverse of the full orthonormal DCT-II (its transpose).
pub fn idct(c: &[f64]) -> Vec<f64> {
    let m = dct_matrix(c.len(), c.len());
    (0..c.len())
        .map(|i| (0..c.len()).map(|k| m.get(k, i) * c[k]).sum())
        .collect()
}

pub fn mfcc(mel: &FeatureMatrix, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    if mel.config.representation != Representation::Mel || mel.cols() != cfg.n_mel {
        return Err(Error::Shape(format!(
            "MFCC expects {} mel energies, got {}",
            cfg.n_mel,
            mel.cols()
        )));
    }
    let mut logs = mel.values.clone();
    for v in logs.data_mut() {
        *v = v.max(LOG_FLOOR).ln();
    }
    let basis_t = dct_matrix(cfg.n_cep, cfg.n_mel).transpose();
    let values = logs.matmul(&basis_t)?;
    Ok(FeatureMatrix {
        values,
        config: FeatureConfig {
            representation: Representation::Mfcc,
            ..cfg.clone()
        },
        frame_times: mel.frame_times.clone(),
    })
}

/// Runs the extraction chain up to `cfg.representation`.
pub fn extract(rec: &Recording, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    let power = stft_power(rec, cfg)?;
    match cfg.representation {
        Representation::Power => Ok(power),
        Representation::Mel => mel_spectrogram(&power, cfg),
        Representation::LogMel => Ok(log_mel(&mel_spectrogram(&power, cfg)?)),
        Representation::Mfcc => mfcc(&mel_spectrogram(&power, cfg)?, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(samples: Vec<f32>) -> Recording {
        Recording {
            id: "t".into(),
            samples,
            sample_rate: 16_000,
            source_channels: 1,
            flags: vec![],
        }
    }

    fn tone(freq: f64, secs: f64) -> Recording {
        let n = (16_000.0 * secs) as usize;
        recording(
            (0..n)
                .map(|i| (std::f64::consts::TAU * freq * i as f64 / 16_000.0).sin() as f32 * 0.5)
                .collect(),
        )
    }

    fn argmax(r: &[f64]) -> usize {
        r.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    }

    #[test]
    fn framing_and_bins() {
        let p = stft_power(&tone(1000.0, 1.0), &FeatureConfig::default()).unwrap();
        assert_eq!((p.rows(), p.cols()), (98, 513));
        for r in p.values.iter_rows() {
            assert_eq!(argmax(r), 64);
        }
    }

    #[test]
    fn silence_and_short_input() {
        let cfg = FeatureConfig::default();
        let p = stft_power(&recording(vec![0.0; 2000]), &cfg).unwrap();
        assert!(p.values.data().iter().all(|&v| v == 0.0));
        let m = mel_spectrogram(&p, &cfg).unwrap();
        assert!(m.values.data().iter().all(|&v| v == 0.0));
        let short = stft_power(&recording(vec![0.1; 399]), &cfg).unwrap();
        assert_eq!(short.rows(), 0);
    }

    #[test]
    fn tone_at_filter_center_peaks_there() {
        let cfg = FeatureConfig::default();
        let bank = MelFilterbank::new(&cfg).unwrap();
        for j in [20, 40, 64, 90, 120] {
            let rec = tone(bank.centers_hz[j], 0.5);
            let mel = mel_spectrogram(&stft_power(&rec, &cfg).unwrap(), &cfg).unwrap();
            for r in mel.values.iter_rows() {
                assert_eq!(argmax(r), j, "filter {j} at {} Hz", bank.centers_hz[j]);
            }
        }
    }

    #[test]
    fn filterbank_covers_every_interior_bin() {
        let cfg = FeatureConfig::default();
        let bank = MelFilterbank::new(&cfg).unwrap();
        for j in 0..cfg.n_mel {
            assert!(
                bank.weights.row(j).iter().sum::<f64>() > 0.0,
                "filter {j} empty"
            );
        }
        for k in 1..cfg.n_bins() - 1 {
            let col: f64 = (0..cfg.n_mel).map(|j| bank.weights.get(j, k)).sum();
            assert!(col > 0.0, "bin {k} uncovered");
        }
    }

    #[test]
    fn too_many_filters_rejected() {
        let cfg = FeatureConfig {
            n_mel: 400,
            n_cep: 13,
            ..FeatureConfig::default()
        };
        assert!(matches!(MelFilterbank::new(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn dct_of_constant() {
        let n = 128;
        let c = dct(&vec![-3.5; n], n);
        assert!((c[0] - (-3.5) * (n as f64).sqrt()).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn dct_inverts() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 - 4.2).collect();
        let back = idct(&dct(&x, 64));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_frames_identical_mfcc() {
        let cfg = FeatureConfig::default();
        let m = extract(&tone(440.0, 0.5), &cfg).unwrap();
        assert_eq!(m.cols(), 31);
        // a pattern repeating every hop gives identical frames
        let period: Vec<f32> = tone(100.0, 0.01).samples;
        let rec = recording(period.iter().cycle().take(8000).copied().collect());
        let m2 = extract(&rec, &cfg).unwrap();
        for k in 1..m2.rows() {
            assert_eq!(m2.values.row(0), m2.values.row(k));
        }
    }
}
