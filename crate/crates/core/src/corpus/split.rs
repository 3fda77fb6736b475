use super::{AnnotationEvent, AnnotationTrack, Recording, RecordingFlag};

/// One piece of a split recording with its re-based annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub recording: Recording,
    pub annotations: AnnotationTrack,
    /// Offset of the piece within the parent, in seconds.
    pub offset: f64,
}

/// Cuts `rec` into pieces of at most `max_len` seconds without splitting any call.
///
/// A cut is placed at the latest sample boundary not inside an annotated event. When a
/// call (or chain of overlapping calls) is longer than `max_len`, the piece is extended
/// to the end of that call and flagged [`RecordingFlag::OversizedPiece`].
pub fn split_recording(rec: &Recording, ann: &AnnotationTrack, max_len: f64) -> Vec<Piece> {
    let sr = rec.sample_rate as f64;
    let n = rec.samples.len();
    let max_samples = ((max_len * sr).floor() as usize).max(1);

    // merged busy intervals in samples; a cut c is forbidden when s < c < e
    let mut busy: Vec<(usize, usize)> = ann
        .events
        .iter()
        .map(|e| {
            (
                (e.start * sr).floor() as usize,
                ((e.end * sr).ceil() as usize).min(n),
            )
        })
        .collect();
    busy.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in busy {
        match merged.last_mut() {
            Some(last) if s < last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }

    let mut cuts = vec![0usize];
    let mut oversized = Vec::new();
    let mut start = 0usize;
    while n - start > max_samples {
        let candidate = start + max_samples;
        let blocking = merged
            .iter()
            .find(|&&(s, e)| s < candidate && candidate < e);
        let cut = match blocking {
            None => candidate,
            Some(&(s, _)) if s > start => s,
            Some(&(_, e)) => {
                log::warn!(
                    "call in `{}` longer than {max_len} s; piece extended to keep it whole",
                    rec.id
                );
                oversized.push(cuts.len() - 1);
                e
            }
        };
        if cut >= n {
            break;
        }
        cuts.push(cut);
        start = cut;
    }
    cuts.push(n);

    let single = cuts.len() == 2;
    cuts.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (a, b) = (w[0], w[1]);
            let offset = a as f64 / sr;
            let end = b as f64 / sr;
            let id = if single {
                rec.id.clone()
            } else {
                format!("{}_p{i:03}", rec.id)
            };
            let mut flags = rec.flags.clone();
            if oversized.contains(&i) {
                flags.push(RecordingFlag::OversizedPiece);
            }
            let events = ann
                .events
                .iter()
                .filter(|e| e.start >= offset - 1e-9 && e.end <= end + 1e-9)
                .map(|e| AnnotationEvent {
                    start: (e.start - offset).max(0.0),
                    end: (e.end - offset).min(end - offset),
                    transition: e.transition.map(|t| t - offset),
                    ..e.clone()
                })
                .collect();
            Piece {
                recording: Recording {
                    id: id.clone(),
                    samples: rec.samples[a..b].to_vec(),
                    sample_rate: rec.sample_rate,
                    source_channels: rec.source_channels,
                    flags,
                },
                annotations: AnnotationTrack {
                    recording_id: id,
                    events,
                },
                offset,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(secs: f64) -> Recording {
        let n = (secs * 100.0) as usize;
        Recording {
            id: "long".into(),
            samples: (0..n).map(|i| (i as f32 * 0.01).sin()).collect(),
            sample_rate: 100,
            source_channels: 1,
            flags: vec![],
        }
    }

    fn track(events: &[(f64, f64)]) -> AnnotationTrack {
        AnnotationTrack {
            recording_id: "long".into(),
            events: events
                .iter()
                .map(|&(s, e)| AnnotationEvent::new(s, e, "rumble"))
                .collect(),
        }
    }

    fn check_invariants(r: &Recording, ann: &AnnotationTrack, pieces: &[Piece]) {
        let joined: Vec<f32> = pieces
            .iter()
            .flat_map(|p| p.recording.samples.clone())
            .collect();
        assert_eq!(joined, r.samples);
        let total: usize = pieces.iter().map(|p| p.annotations.events.len()).sum();
        assert_eq!(total, ann.events.len());
        for e in &ann.events {
            let holders = pieces
                .iter()
                .filter(|p| {
                    e.start >= p.offset - 1e-9 && e.end <= p.offset + p.recording.duration() + 1e-9
                })
                .count();
            assert_eq!(holders, 1, "event {:?}", (e.start, e.end));
        }
    }

    #[test]
    fn cuts_avoid_calls() {
        let r = rec(300.0);
        let ann = track(&[(10.0, 12.0), (150.0, 155.0)]);
        let pieces = split_recording(&r, &ann, 120.0);
        assert_eq!(pieces.len(), 3);
        check_invariants(&r, &ann, &pieces);
        for p in &pieces[1..] {
            assert!(!ann
                .events
                .iter()
                .any(|e| e.start < p.offset && p.offset < e.end));
        }
    }

    #[test]
    fn cut_moves_before_a_straddling_call() {
        let r = rec(300.0);
        let ann = track(&[(118.0, 125.0)]);
        let pieces = split_recording(&r, &ann, 120.0);
        check_invariants(&r, &ann, &pieces);
        assert!((pieces[1].offset - 118.0).abs() < 1e-9);
        assert!((pieces[1].annotations.events[0].start).abs() < 1e-9);
    }

    #[test]
    fn short_recording_is_unchanged() {
        let r = rec(30.0);
        let ann = track(&[(1.0, 2.0)]);
        let pieces = split_recording(&r, &ann, 60.0);
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].recording, r);
        assert_eq!(pieces[0].annotations, ann);
    }

    #[test]
    fn overlong_call_makes_oversized_piece() {
        let r = rec(200.0);
        let ann = track(&[(0.0, 65.0)]);
        let pieces = split_recording(&r, &ann, 60.0);
        check_invariants(&r, &ann, &pieces);
        assert!(pieces[0].recording.duration() > 60.0);
        assert!(pieces[0]
            .recording
            .flags
            .contains(&RecordingFlag::OversizedPiece));
    }
}
