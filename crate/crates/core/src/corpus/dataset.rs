//! On-disk corpus layout: `<id>.wav` with an optional `<id>.csv` of annotations per
//! recording, plus `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    encode_wav_f32, load_wav, preprocess, read_annotations, write_annotations, AnnotationTrack,
    ChannelPolicy, Recording, SynthSpec,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub duration_s: f64,
    /// Seed of the recording's random stream, for synthesized corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    pub recordings: Vec<ManifestEntry>,
}

/// Writes float32 WAVs, per-recording annotation CSVs and the manifest.
pub fn write_corpus(
    dir: &Path,
    recs: &[Recording],
    tracks: &[AnnotationTrack],
    synth: Option<&SynthSpec>,
) -> Result<Vec<PathBuf>> {
    if recs.len() != tracks.len() {
        return Err(Error::Shape(format!(
            "{} recordings with {} annotation tracks",
            recs.len(),
            tracks.len()
        )));
    }
    let mut written = Vec::new();
    for (r, t) in recs.iter().zip(tracks) {
        let wav = dir.join(format!("{}.wav", r.id));
        crate::io::write_atomic(
            &wav,
            &encode_wav_f32(std::slice::from_ref(&r.samples), r.sample_rate)?,
        )?;
        let csv = dir.join(format!("{}.csv", r.id));
        write_annotations(&csv, [t])?;
        written.extend([wav, csv]);
    }
    let manifest = Manifest {
        synth: synth.cloned(),
        recordings: recs
            .iter()
            .enumerate()
            .map(|(i, r)| ManifestEntry {
                id: r.id.clone(),
                duration_s: r.duration(),
                seed: synth.map(|s| derive_seed(s.seed, "synth-recording", i as u64)),
            })
            .collect(),
    };
    let path = dir.join(MANIFEST);
    crate::io::write_json_atomic(&path, &manifest)?;
    written.push(path);
    Ok(written)
}

/// Loads every `*.wav` in `dir` (sorted by name) with its annotations; a recording without
/// a CSV gets an empty track.
pub fn load_corpus(
    dir: &Path,
    policy: ChannelPolicy,
) -> Result<(Vec<Recording>, Vec<AnnotationTrack>)> {
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no WAV files in {}",
            dir.display()
        )));
    }
    let mut recs = Vec::with_capacity(wavs.len());
    let mut tracks = Vec::with_capacity(wavs.len());
    for w in wavs {
        let rec = preprocess(&load_wav(&w)?, policy)?;
        let csv = w.with_extension("csv");
        let track = if csv.exists() {
            let mut all: BTreeMap<String, AnnotationTrack> = read_annotations(&csv)?;
            if let Some(other) = all.keys().find(|k| **k != rec.id) {
                return Err(Error::InvalidInput(format!(
                    "{} annotates recording `{other}`",
                    csv.display()
                )));
            }
            all.remove(&rec.id)
                .unwrap_or_else(|| AnnotationTrack::new(rec.id.clone()))
        } else {
            AnnotationTrack::new(rec.id.clone())
        };
        track.validate(rec.duration())?;
        recs.push(rec);
        tracks.push(track);
    }
    Ok((recs, tracks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthesize_corpus;

    #[test]
    fn corpus_round_trips_through_disk() {
        let spec = SynthSpec {
            n_recordings: 2,
            duration_s: (10.0, 10.0),
            ..SynthSpec::default()
        };
        let (recs, tracks) = synthesize_corpus(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_corpus(dir.path(), &recs, &tracks, Some(&spec)).unwrap();
        assert_eq!(files.len(), 5);
        let m: Manifest =
            serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(m.recordings[1].id, recs[1].id);
        assert!(m.recordings[0].seed.is_some());

        let (back, back_tracks) = load_corpus(dir.path(), ChannelPolicy::Average).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].id, recs[0].id);
        assert_eq!(back[0].samples.len(), recs[0].samples.len());
        let err = back[0]
            .samples
            .iter()
            .zip(&recs[0].samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0f32, f32::max);
        assert!(err < 1e-5);
        assert_eq!(back_tracks[0].events.len(), tracks[0].events.len());
    }

    #[test]
    fn empty_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_corpus(dir.path(), ChannelPolicy::Average),
            Err(Error::InvalidInput(_))
        ));
    }
}
