use std::io::{Cursor, Read};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::RawRecording;
use crate::error::{Error, Result};

/// Decodes a PCM16 or IEEE-float32 WAV file, keeping every channel.
pub fn load_wav(path: &Path) -> Result<RawRecording> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".into());
    let file = std::fs::File::open(path)?;
    decode_wav(id, std::io::BufReader::new(file))
}

pub fn decode_wav<R: Read>(id: impl Into<String>, reader: R) -> Result<RawRecording> {
    let mut reader = WavReader::new(reader).map_err(map_hound)?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec(format!(
                "{bits}-bit {} samples (only PCM16 and float32 are supported)",
                if fmt == SampleFormat::Int {
                    "integer"
                } else {
                    "float"
                }
            )))
        }
    };
    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (c, &v) in frame.iter().enumerate() {
            channels[c].push(v);
        }
    }
    Ok(RawRecording {
        id: id.into(),
        channels,
        sample_rate: spec.sample_rate,
    })
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Format(format!("io while decoding wav: {io}")),
        hound::Error::FormatError(msg) => Error::Format(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedCodec("unsupported wav encoding".into()),
        other => Error::Format(other.to_string()),
    }
}

/// Encodes mono or multi-channel audio as 16-bit PCM with round-to-nearest quantization.
pub fn encode_wav_pcm16(channels: &[Vec<f32>], sample_rate: u32) -> Result<Vec<u8>> {
    let n_channels = channels.len();
    if n_channels == 0 {
        return Err(Error::InvalidInput("no channels to encode".into()));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::Shape("channels differ in length".into()));
    }
    let spec = WavSpec {
        channels: n_channels as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut buf, spec).map_err(map_hound)?;
        for i in 0..len {
            for c in channels {
                let v = (c[i].clamp(-1.0, 1.0) * 32767.0).round() as i16;
                w.write_sample(v).map_err(map_hound)?;
            }
        }
        w.finalize().map_err(map_hound)?;
    }
    Ok(buf.into_inner())
}

pub fn encode_wav_f32(channels: &[Vec<f32>], sample_rate: u32) -> Result<Vec<u8>> {
    let n_channels = channels.len();
    if n_channels == 0 {
        return Err(Error::InvalidInput("no channels to encode".into()));
    }
    let len = channels[0].len();
    let spec = WavSpec {
        channels: n_channels as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut buf, spec).map_err(map_hound)?;
        for i in 0..len {
            for c in channels {
                w.write_sample(c[i]).map_err(map_hound)?;
            }
        }
        w.finalize().map_err(map_hound)?;
    }
    Ok(buf.into_inner())
}
