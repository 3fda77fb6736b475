//! Spectral features: STFT power, mel spectra, MFCCs, CMVN, PCA and context windows.

pub mod cache;
mod config;
mod context;
mod normalize;
mod pca;
mod spectral;

pub use cache::{read_cache, read_cache_unchecked, write_cache, CACHE_MAGIC};
pub use config::{FeatureConfig, PcaTarget, Representation};
pub use context::context_windows;
pub use normalize::{cmvn, CmvnStats, StatsSource};
pub use pca::{components_for_fraction, fit_pca, PcaModel};
pub use spectral::{
    dct, dct_matrix, extract, hamming, hz_to_mel, idct, log_mel, mel_spectrogram, mel_to_hz, mfcc,
    stft_power, MelFilterbank, LOG_FLOOR,
};

use crate::matrix::Matrix;

/// Time-major feature matrix with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub config: FeatureConfig,
    /// Center time of each row, in seconds.
    pub frame_times: Vec<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn with_values(&self, values: Matrix) -> FeatureMatrix {
        FeatureMatrix {
            values,
            config: self.config.clone(),
            frame_times: self.frame_times.clone(),
        }
    }
}
