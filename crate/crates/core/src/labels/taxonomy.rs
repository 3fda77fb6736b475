use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationEvent, AnnotationTrack};
use crate::error::{Error, Result};

pub const NO_CALL: &str = "no-call";

/// A unified (call, optional subcall) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedLabel {
    pub call: String,
    pub subcall: Option<String>,
}

impl UnifiedLabel {
    pub fn call(call: &str) -> Self {
        Self {
            call: call.into(),
            subcall: None,
        }
    }

    pub fn sub(call: &str, subcall: &str) -> Self {
        Self {
            call: call.into(),
            subcall: Some(subcall.into()),
        }
    }
}

/// How one source label maps onto the unified convention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMapping {
    Single(UnifiedLabel),
    /// A composite vocalization annotated as abutting parts, in temporal order.
    Composite(Vec<UnifiedLabel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    /// Class list; index 0 is always `no-call`.
    pub classes: Vec<String>,
    pub subcalls: Vec<String>,
    /// Keyed by lower-cased source label.
    pub mapping: BTreeMap<String, LabelMapping>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::unified()
    }
}

impl Taxonomy {
    /// Builds a taxonomy from a class list, prepending `no-call` when absent. Every class
    /// maps to itself.
    pub fn from_classes(classes: &[&str]) -> Self {
        let mut list = vec![NO_CALL.to_string()];
        list.extend(
            classes
                .iter()
                .filter(|c| **c != NO_CALL)
                .map(|c| c.to_string()),
        );
        let mapping = list[1..]
            .iter()
            .map(|c| {
                (
                    c.to_lowercase(),
                    LabelMapping::Single(UnifiedLabel::call(c)),
                )
            })
            .collect();
        Self {
            classes: list,
            subcalls: Vec::new(),
            mapping,
        }
    }

    /// The unified call-type convention covering both field corpora.
    pub fn unified() -> Self {
        use LabelMapping::{Composite, Single};
        let classes = [
            NO_CALL,
            "rumble",
            "roar",
            "trumpet",
            "cry",
            "squeak",
            "squelch",
            "bark",
            "snort",
            "croak",
            "chirp",
            "woosh",
            "trunk-call",
            "ceremony",
            "chorus",
            "pandemonium",
        ];
        let subcalls = [
            "estrous-rumble",
            "musth-rumble",
            "contact-rumble",
            "greeting-rumble",
            "lets-go-rumble",
            "long-roar",
            "play-trumpet",
            "social-trumpet",
            "trumpet-blast",
        ];
        let c = UnifiedLabel::call;
        let s = UnifiedLabel::sub;
        let mut mapping = BTreeMap::new();
        let mut add = |k: &str, m: LabelMapping| {
            mapping.insert(k.to_string(), m);
        };
        for class in &classes[1..] {
            add(class, Single(c(class)));
        }
        add("trunk call", Single(c("trunk-call")));
        add("female chorus", Single(c("chorus")));
        add("mating pandemonium", Single(c("pandemonium")));
        add("croaking", Single(c("croak")));
        // growls are acoustically equivalent to rumbles
        add("growl", Single(c("rumble")));
        add("estrous rumble", Single(s("rumble", "estrous-rumble")));
        add("musth rumble", Single(s("rumble", "musth-rumble")));
        add("contact rumble", Single(s("rumble", "contact-rumble")));
        add("greeting rumble", Single(s("rumble", "greeting-rumble")));
        add("let's go rumble", Single(s("rumble", "lets-go-rumble")));
        add("long roar", Single(s("roar", "long-roar")));
        add("play trumpet", Single(s("trumpet", "play-trumpet")));
        add("social trumpet", Single(s("trumpet", "social-trumpet")));
        add("trumpet blast", Single(s("trumpet", "trumpet-blast")));
        add("roar-rumble", Composite(vec![c("roar"), c("rumble")]));
        add(
            "long roar-rumble",
            Composite(vec![s("roar", "long-roar"), c("rumble")]),
        );
        add("bark-rumble", Composite(vec![c("bark"), c("rumble")]));
        add("rumble-cry", Composite(vec![c("rumble"), c("cry")]));
        add("chirp-rumble", Composite(vec![c("chirp"), c("rumble")]));
        add("croak-rumble", Composite(vec![c("croak"), c("rumble")]));
        Self {
            classes: classes.iter().map(|s| s.to_string()).collect(),
            subcalls: subcalls.iter().map(|s| s.to_string()).collect(),
            mapping,
        }
    }

    pub fn call_classes(&self) -> &[String] {
        &self.classes[1..]
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// Call classes (or subcalls) with fewer than `k` segments or fewer than `k`
    /// recordings, which cannot be present in every fold.
    pub fn excluded(&self, tracks: &[AnnotationTrack], k: usize, subcalls: bool) -> Vec<String> {
        let mut segs: BTreeMap<&str, usize> = BTreeMap::new();
        let mut recs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for t in tracks {
            for e in &t.events {
                let key = if subcalls {
                    e.subcall_type.as_deref()
                } else {
                    Some(e.call_type.as_str())
                };
                if let Some(key) = key {
                    *segs.entry(key).or_default() += 1;
                    recs.entry(key).or_default().insert(t.recording_id.as_str());
                }
            }
        }
        let names: &[String] = if subcalls {
            &self.subcalls
        } else {
            self.call_classes()
        };
        names
            .iter()
            .filter(|n| {
                segs.get(n.as_str()).copied().unwrap_or(0) < k
                    || recs.get(n.as_str()).map_or(0, BTreeSet::len) < k
            })
            .cloned()
            .collect()
    }
}

/// Rewrites source events into the unified convention, splitting composite calls into
/// abutting parts at the annotated transition (midpoint when absent).
pub fn map_taxonomy(events: &[AnnotationEvent], tax: &Taxonomy) -> Result<Vec<AnnotationEvent>> {
    let mut unmapped = BTreeSet::new();
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        let key = e.call_type.trim().to_lowercase();
        let Some(m) = tax.mapping.get(&key) else {
            unmapped.insert(e.call_type.clone());
            continue;
        };
        match m {
            LabelMapping::Single(u) => out.push(AnnotationEvent {
                call_type: u.call.clone(),
                subcall_type: e.subcall_type.clone().or_else(|| u.subcall.clone()),
                transition: None,
                ..e.clone()
            }),
            LabelMapping::Composite(parts) => {
                let n = parts.len();
                let mut cuts = vec![e.start];
                if n == 2 {
                    let t = match e.transition {
                        Some(t) if t > e.start && t < e.end => t,
                        Some(t) => {
                            return Err(Error::InvalidInput(format!(
                                "transition {t} outside composite call [{}, {}]",
                                e.start, e.end
                            )))
                        }
                        None => {
                            log::warn!(
                                "composite `{}` without transition; splitting at midpoint",
                                e.call_type
                            );
                            0.5 * (e.start + e.end)
                        }
                    };
                    cuts.push(t);
                } else {
                    cuts.extend((1..n).map(|k| e.start + e.duration() * k as f64 / n as f64));
                }
                cuts.push(e.end);
                for (u, w) in parts.iter().zip(cuts.windows(2)) {
                    out.push(AnnotationEvent {
                        start: w[0],
                        end: w[1],
                        call_type: u.call.clone(),
                        subcall_type: u.subcall.clone(),
                        transition: None,
                    });
                }
            }
        }
    }
    if !unmapped.is_empty() {
        return Err(Error::UnmappedLabel(unmapped.into_iter().collect()));
    }
    Ok(out)
}
