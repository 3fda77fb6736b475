//! Audio ingestion, preprocessing, long-recording splitting and synthetic corpora.

mod annotations;
mod dataset;
pub mod resample;
mod split;
pub mod synth;
mod wav;

use serde::{Deserialize, Serialize};

pub use annotations::{
    format_seconds, read_annotations, write_annotations, AnnotationEvent, AnnotationTrack,
};
pub use dataset::{load_corpus, write_corpus, Manifest, ManifestEntry, MANIFEST};
pub use split::{split_recording, Piece};
pub use synth::{synthesize_corpus, CallShape, SynthClass, SynthSpec};
pub use wav::{decode_wav, encode_wav_f32, encode_wav_pcm16, load_wav};

/// Sample rate every recording is brought to before feature extraction.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// Linear peak after normalization: -1 dBFS.
pub fn peak_target() -> f32 {
    10f64.powf(-1.0 / 20.0) as f32
}

/// Decoded audio before preprocessing, one vector per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub id: String,
    pub channels: Vec<Vec<f32>>,
    pub sample_rate: u32,
}

impl RawRecording {
    pub fn mono(id: impl Into<String>, samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            id: id.into(),
            channels: vec![samples],
            sample_rate,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordingFlag {
    /// Signal was silent; peak scaling was skipped.
    AllZero,
    /// A piece had to exceed the requested maximum length to keep a call whole.
    OversizedPiece,
}

/// A preprocessed (or partially preprocessed) mono recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_channels: usize,
    pub flags: Vec<RecordingFlag>,
}

impl Recording {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelPolicy {
    /// Average all channels (stereo field recordings).
    #[default]
    Average,
    /// Keep only the first channel (the second carries spoken field notes).
    FirstChannel,
}

/// Downmix, resample to 16 kHz, remove the mean, then scale the peak to -1 dBFS.
pub fn preprocess(raw: &RawRecording, policy: ChannelPolicy) -> crate::Result<Recording> {
    if raw.channels.is_empty() {
        return Err(crate::Error::InvalidInput(format!(
            "recording `{}` has no channels",
            raw.id
        )));
    }
    let n = raw.n_frames();
    if raw.channels.iter().any(|c| c.len() != n) {
        return Err(crate::Error::Shape(format!(
            "recording `{}` has ragged channels",
            raw.id
        )));
    }
    let mono: Vec<f32> = match policy {
        ChannelPolicy::FirstChannel => raw.channels[0].clone(),
        ChannelPolicy::Average => {
            let k = raw.channels.len() as f64;
            (0..n)
                .map(|i| (raw.channels.iter().map(|c| c[i] as f64).sum::<f64>() / k) as f32)
                .collect()
        }
    };
    let resampled = resample::resample(&mono, raw.sample_rate, TARGET_SAMPLE_RATE);
    let (samples, all_zero) = normalize(&resampled);
    let mut flags = Vec::new();
    if all_zero {
        log::warn!(
            "recording `{}` is silent; peak normalization skipped",
            raw.id
        );
        flags.push(RecordingFlag::AllZero);
    }
    Ok(Recording {
        id: raw.id.clone(),
        samples,
        sample_rate: TARGET_SAMPLE_RATE,
        source_channels: raw.channels.len(),
        flags,
    })
}

/// Mean removal followed by peak scaling. Returns the signal and whether it was silent.
pub fn normalize(x: &[f32]) -> (Vec<f32>, bool) {
    if x.is_empty() {
        return (Vec::new(), true);
    }
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
    let centered: Vec<f64> = x.iter().map(|&v| v as f64 - mean).collect();
    let peak = centered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return (centered.into_iter().map(|v| v as f32).collect(), true);
    }
    let gain = peak_target() as f64 / peak;
    (
        centered.into_iter().map(|v| (v * gain) as f32).collect(),
        false,
    )
}

impl Recording {
    /// Applies preprocessing to an already-mono recording (used for idempotence checks).
    pub fn reprocess(&self) -> crate::Result<Recording> {
        let raw = RawRecording {
            id: self.id.clone(),
            channels: vec![self.samples.clone()],
            sample_rate: self.sample_rate,
        };
        let mut r = preprocess(&raw, ChannelPolicy::FirstChannel)?;
        r.source_channels = self.source_channels;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64, amp: f32) -> Vec<f32> {
        let n = (rate as f64 * secs) as usize;
        (0..n)
            .map(|i| {
                amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32
            })
            .collect()
    }

    fn mean(x: &[f32]) -> f64 {
        x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64
    }

    fn peak(x: &[f32]) -> f32 {
        x.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    #[test]
    fn resampled_sine_is_normalized() {
        let raw = RawRecording::mono("s", sine(440.0, 44_100, 1.0, 0.3), 44_100);
        let rec = preprocess(&raw, ChannelPolicy::Average).unwrap();
        assert!((rec.samples.len() as i64 - 16_000).abs() <= 1);
        assert_eq!(rec.sample_rate, 16_000);
        assert!((peak(&rec.samples) - 0.891_250_9).abs() < 1e-4);
        assert!(mean(&rec.samples).abs() < 1e-6);
    }

    #[test]
    fn dc_offset_removed() {
        let x: Vec<f32> = sine(50.0, 16_000, 0.5, 0.2)
            .into_iter()
            .map(|v| v + 0.3)
            .collect();
        let rec = preprocess(&RawRecording::mono("dc", x, 16_000), ChannelPolicy::Average).unwrap();
        assert!(mean(&rec.samples).abs() < 1e-6);
    }

    #[test]
    fn identical_stereo_matches_mono() {
        let x = sine(200.0, 22_050, 0.5, 0.5);
        let stereo = RawRecording {
            id: "a".into(),
            channels: vec![x.clone(), x.clone()],
            sample_rate: 22_050,
        };
        let mono = RawRecording::mono("a", x, 22_050);
        let a = preprocess(&stereo, ChannelPolicy::Average).unwrap();
        let b = preprocess(&mono, ChannelPolicy::Average).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.source_channels, 2);
    }

    #[test]
    fn first_channel_policy_ignores_notes() {
        let animal = sine(30.0, 16_000, 0.5, 0.5);
        let voice = sine(300.0, 16_000, 0.5, 0.9);
        let raw = RawRecording {
            id: "l".into(),
            channels: vec![animal.clone(), voice],
            sample_rate: 16_000,
        };
        let a = preprocess(&raw, ChannelPolicy::FirstChannel).unwrap();
        let b = preprocess(
            &RawRecording::mono("l", animal, 16_000),
            ChannelPolicy::FirstChannel,
        )
        .unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn silence_is_flagged_not_scaled() {
        let rec = preprocess(
            &RawRecording::mono("z", vec![0.0; 1000], 16_000),
            ChannelPolicy::Average,
        )
        .unwrap();
        assert!(rec.flags.contains(&RecordingFlag::AllZero));
        assert!(rec.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preprocessing_is_idempotent() {
        let raw = RawRecording::mono("i", sine(123.0, 48_000, 0.7, 0.4), 48_000);
        let once = preprocess(&raw, ChannelPolicy::Average).unwrap();
        let twice = once.reprocess().unwrap();
        let err = once
            .samples
            .iter()
            .zip(&twice.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 1e-6, "max diff {err}");
    }
}
