use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// Squared DFT magnitude, `dft_size / 2 + 1` bins.
    Power,
    /// Mel filterbank energies.
    Mel,
    /// `ln(mel + 1e-10)`, the input for neural models.
    LogMel,
    /// Leading cepstral coefficients of the log mel spectrum.
    Mfcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PcaTarget {
    Components(usize),
    VarianceFraction(f64),
}

impl PcaTarget {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PcaTarget::Components(0) => {
                Err(Error::Config("PCA needs at least one component".into()))
            }
            PcaTarget::VarianceFraction(f) if !(f > 0.0 && f <= 1.0) => Err(Error::Config(
                format!("explained variance fraction {f} outside (0, 1]"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub representation: Representation,
    pub sample_rate: u32,
    pub frame_len_ms: f64,
    pub stride_ms: f64,
    pub dft_size: usize,
    pub n_mel: usize,
    pub n_cep: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub cmvn: bool,
    pub pca: Option<PcaTarget>,
    pub whiten: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            representation: Representation::Mfcc,
            sample_rate: 16_000,
            frame_len_ms: 25.0,
            stride_ms: 10.0,
            dft_size: 1024,
            n_mel: 128,
            n_cep: 31,
            f_min: 0.0,
            f_max: 8000.0,
            cmvn: false,
            pca: None,
            whiten: true,
        }
    }
}

impl FeatureConfig {
    pub fn log_mel(n_mel: usize) -> Self {
        Self {
            representation: Representation::LogMel,
            n_mel,
            ..Self::default()
        }
    }

    pub fn frame_len_samples(&self) -> usize {
        (self.frame_len_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn stride_samples(&self) -> usize {
        (self.stride_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn n_bins(&self) -> usize {
        self.dft_size / 2 + 1
    }

    /// Number of frames for a signal of `n_samples`.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        let len = self.frame_len_samples();
        if n_samples < len {
            0
        } else {
            (n_samples - len) / self.stride_samples() + 1
        }
    }

    /// Center of frame `i`, in seconds.
    pub fn frame_time(&self, i: usize) -> f64 {
        (i * self.stride_samples()) as f64 / self.sample_rate as f64
            + self.frame_len_samples() as f64 / (2.0 * self.sample_rate as f64)
    }

    pub fn stride_s(&self) -> f64 {
        self.stride_samples() as f64 / self.sample_rate as f64
    }

    /// Index of the frame whose center is nearest to time `t` (may be out of range).
    pub fn nearest_frame(&self, t: f64) -> i64 {
        let half = self.frame_len_samples() as f64 / (2.0 * self.sample_rate as f64);
        ((t - half) / self.stride_s()).round() as i64
    }

    pub fn dim(&self) -> usize {
        match self.representation {
            Representation::Power => self.n_bins(),
            Representation::Mel | Representation::LogMel => self.n_mel,
            Representation::Mfcc => self.n_cep,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.frame_len_samples();
        if len == 0 || self.stride_samples() == 0 {
            return Err(Error::Config(
                "frame length and stride must be positive".into(),
            ));
        }
        if len > self.dft_size {
            return Err(Error::Config(format!(
                "frame of {len} samples does not fit a {}-point DFT",
                self.dft_size
            )));
        }
        if self.n_mel == 0 || self.n_cep == 0 || self.n_cep > self.n_mel {
            return Err(Error::Config(format!(
                "need 1 <= n_cep ({}) <= n_mel ({})",
                self.n_cep, self.n_mel
            )));
        }
        if !(self.f_min >= 0.0
            && self.f_min < self.f_max
            && self.f_max <= self.sample_rate as f64 / 2.0)
        {
            return Err(Error::Config(format!(
                "bad mel range [{}, {}] Hz",
                self.f_min, self.f_max
            )));
        }
        if let Some(p) = &self.pca {
            p.validate()?;
        }
        Ok(())
    }

    /// 32-bit digest of the extraction-relevant fields, stored in feature caches.
    pub fn hash(&self) -> u32 {
        let key = serde_json::json!({
            "representation": self.representation,
            "sample_rate": self.sample_rate,
            "frame_len_ms": self.frame_len_ms,
            "stride_ms": self.stride_ms,
            "dft_size": self.dft_size,
            "n_mel": self.n_mel,
            "n_cep": self.n_cep,
            "f_min": self.f_min,
            "f_max": self.f_max,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_arithmetic() {
        let c = FeatureConfig::default();
        assert_eq!(c.frame_len_samples(), 400);
        assert_eq!(c.stride_samples(), 160);
        assert_eq!(c.n_frames(16_000), 98);
        assert_eq!(c.n_frames(399), 0);
        assert_eq!(c.n_frames(400), 1);
        assert!((c.frame_time(0) - 0.0125).abs() < 1e-12);
        assert_eq!(c.nearest_frame(0.05 + 0.1 * 3.0), 34);
    }

    #[test]
    fn validation() {
        let mut c = FeatureConfig::default();
        c.validate().unwrap();
        c.frame_len_ms = 100.0;
        assert!(c.validate().is_err());
        c.dft_size = 2048;
        c.validate().unwrap();
        c.n_cep = 200;
        assert!(c.validate().is_err());
        let c = FeatureConfig {
            pca: Some(PcaTarget::VarianceFraction(1.5)),
            ..FeatureConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_training_knobs() {
        let a = FeatureConfig::default();
        let b = FeatureConfig {
            cmvn: true,
            pca: Some(PcaTarget::Components(5)),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(
            a.hash(),
            FeatureConfig {
                n_mel: 64,
                ..a.clone()
            }
            .hash()
        );
    }
}
