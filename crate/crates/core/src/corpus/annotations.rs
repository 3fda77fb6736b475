use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One strongly labelled call interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub start: f64,
    pub end: f64,
    pub call_type: String,
    pub subcall_type: Option<String>,
    /// Annotator-supplied switch point for composite calls (e.g. roar-rumble).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<f64>,
}

impl AnnotationEvent {
    pub fn new(start: f64, end: f64, call_type: impl Into<String>) -> Self {
        Self {
            start,
            end,
            call_type: call_type.into(),
            subcall_type: None,
            transition: None,
        }
    }

    pub fn with_subcall(mut self, subcall: impl Into<String>) -> Self {
        self.subcall_type = Some(subcall.into());
        self
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn overlap(&self, start: f64, end: f64) -> f64 {
        (self.end.min(end) - self.start.max(start)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationTrack {
    pub recording_id: String,
    pub events: Vec<AnnotationEvent>,
}

impl AnnotationTrack {
    pub fn new(recording_id: impl Into<String>) -> Self {
        Self {
            recording_id: recording_id.into(),
            events: Vec::new(),
        }
    }

    /// Checks `0 <= start < end <= duration` for every event.
    pub fn validate(&self, duration: f64) -> Result<()> {
        for e in &self.events {
            if !(e.start >= 0.0 && e.start < e.end && e.end <= duration + 1e-9) {
                return Err(Error::InvalidInput(format!(
                    "event [{}, {}] `{}` in `{}` lies outside [0, {duration}]",
                    e.start, e.end, e.call_type, self.recording_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    recording_id: String,
    start_s: f64,
    end_s: f64,
    call_type: String,
    subcall_type: Option<String>,
    #[serde(default)]
    transition_s: Option<f64>,
}

/// Reads the annotation CSV (`recording_id,start_s,end_s,call_type,subcall_type`, with an
/// optional trailing `transition_s` column), grouped by recording.
pub fn read_annotations(path: &Path) -> Result<BTreeMap<String, AnnotationTrack>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected = [
        "recording_id",
        "start_s",
        "end_s",
        "call_type",
        "subcall_type",
    ];
    if headers.len() < expected.len() || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::Format(format!(
            "annotation header must start with `{}`, found `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: BTreeMap<String, AnnotationTrack> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        let subcall = row.subcall_type.filter(|s| !s.trim().is_empty());
        out.entry(row.recording_id.clone())
            .or_insert_with(|| AnnotationTrack::new(row.recording_id.clone()))
            .events
            .push(AnnotationEvent {
                start: row.start_s,
                end: row.end_s,
                call_type: row.call_type,
                subcall_type: subcall,
                transition: row.transition_s,
            });
    }
    Ok(out)
}

pub fn write_annotations<'a>(
    path: &Path,
    tracks: impl IntoIterator<Item = &'a AnnotationTrack>,
) -> Result<()> {
    crate::io::write_csv_atomic(path, |w| {
        w.write_record([
            "recording_id",
            "start_s",
            "end_s",
            "call_type",
            "subcall_type",
        ])?;
        for t in tracks {
            for e in &t.events {
                w.write_record([
                    t.recording_id.as_str(),
                    &format_seconds(e.start),
                    &format_seconds(e.end),
                    &e.call_type,
                    e.subcall_type.as_deref().unwrap_or(""),
                ])?;
            }
        }
        Ok(())
    })
}

/// Shortest decimal representation that parses back to the same `f64`.
pub fn format_seconds(v: f64) -> String {
    format!("{v}")
}
