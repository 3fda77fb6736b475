use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use trunkline::config::{parse_override, set_path};
use trunkline::corpus::{AnnotationTrack, ChannelPolicy, SynthSpec};
use trunkline::features::{FeatureConfig, PcaTarget};
use trunkline::labels::{LabelTarget, LabelWindow};
use trunkline::metrics::EvalOptions;
use trunkline::pipeline::{DetectionConfig, ModelSpec, ShallowInput};
use trunkline::shallow::LogRegConfig;
use trunkline::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthSpec),
    /// Directory of `<id>.wav` files with `<id>.csv` annotations.
    Corpus(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    DetectBinary,
    DetectMultilabel,
    ClassifyCall,
    ClassifySubcall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub k: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// Folds of the `cv.k` plan held out by `train`: the test fold is never touched, the
/// development fold only calibrates or early-stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub test_fold: usize,
    pub dev_fold: usize,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            test_fold: 0,
            dev_fold: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub channel_policy: ChannelPolicy,
    pub features: FeatureConfig,
    pub model: ModelSpec,
    /// Dotted paths into `features` / `model` with candidate values for `crossval`.
    pub search: BTreeMap<String, Vec<Value>>,
    pub task: Task,
    pub label_window: LabelWindow,
    pub cv: CvSettings,
    pub split: SplitSettings,
    pub detection: DetectionConfig,
    pub eval: EvalOptions,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthSpec::default();
        Self {
            seed: synth.seed,
            data: DataSource::Synth(synth),
            channel_policy: ChannelPolicy::default(),
            // 13 cepstra and 40 window components keep a 20-minute corpus at desk speed
            features: FeatureConfig {
                n_cep: 13,
                cmvn: true,
                ..FeatureConfig::default()
            },
            model: ModelSpec::Logreg {
                input: ShallowInput {
                    context: 51,
                    pca: Some(PcaTarget::Components(40)),
                    whiten: true,
                },
                logreg: LogRegConfig::default(),
            },
            search: BTreeMap::new(),
            task: Task::default(),
            label_window: LabelWindow::default(),
            cv: CvSettings::default(),
            split: SplitSettings::default(),
            detection: DetectionConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

/// Keys whose value replaces the default wholesale instead of merging into it: their
/// variants carry different fields.
const REPLACED: [&str; 2] = ["data", "model"];

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Defaults, then the config file, then `--set` overrides, then `--seed`.
pub fn resolve(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut root = serde_json::to_value(RunConfig::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidInput(format!("cannot read config {}: {e}", path.display()))
        })?;
        let Value::Object(user) = serde_json::from_str::<Value>(&text)? else {
            return Err(Error::Config("config file must hold a JSON object".into()));
        };
        for (k, v) in user {
            if REPLACED.contains(&k.as_str()) {
                root[&k] = v;
            } else {
                let mut one = serde_json::Map::new();
                one.insert(k, v);
                merge(&mut root, Value::Object(one));
            }
        }
    }
    for s in sets {
        let (k, v) = parse_override(s)?;
        set_path(&mut root, &k, v)?;
    }
    if let Some(s) = seed {
        root["seed"] = s.into();
    }
    let mut cfg: RunConfig = serde_json::from_value(root)
        .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    if let DataSource::Synth(spec) = &mut cfg.data {
        spec.seed = cfg.seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synth(s) = &self.data {
            s.validate()?;
        }
        self.features.validate()?;
        // with a variance-fraction frame PCA the width is only known after fitting
        let bins = match self.features.pca {
            None => Some(self.features.dim()),
            Some(PcaTarget::Components(n)) => Some(n),
            Some(PcaTarget::VarianceFraction(_)) => None,
        };
        if let Some(b) = bins {
            self.model.validate(b)?;
        }
        self.detection.validate()?;
        if let Some(s) = self.detection.strategy {
            if s != self.model.strategy() {
                return Err(Error::Config(format!(
                    "detection strategy {s:?} does not fit a {} model with a {:?} head",
                    self.model.family(),
                    self.model.strategy()
                )));
            }
        }
        if self.cv.k < 2 {
            return Err(Error::Config("cv.k must be at least 2".into()));
        }
        let s = &self.split;
        if s.test_fold >= self.cv.k || s.dev_fold >= self.cv.k || s.test_fold == s.dev_fold {
            return Err(Error::Config(format!(
                "split folds {}/{} must be distinct and below cv.k = {}",
                s.test_fold, s.dev_fold, self.cv.k
            )));
        }
        Ok(())
    }

    /// Target classes for the task, drawn from the annotations of the whole corpus.
    pub fn target(&self, tracks: &[AnnotationTrack]) -> Result<LabelTarget> {
        let events = tracks.iter().flat_map(|t| &t.events);
        let target = match self.task {
            Task::DetectBinary => LabelTarget::AnyCall,
            Task::DetectMultilabel | Task::ClassifyCall => {
                let mut c: Vec<String> = events.map(|e| e.call_type.clone()).collect();
                c.sort();
                c.dedup();
                LabelTarget::Calls(c)
            }
            Task::ClassifySubcall => {
                let mut c: Vec<String> = events.filter_map(|e| e.subcall_type.clone()).collect();
                c.sort();
                c.dedup();
                LabelTarget::Subcalls(c)
            }
        };
        if target.classes().is_empty() {
            return Err(Error::InvalidInput(format!(
                "the corpus has no annotations for task {:?}",
                self.task
            )));
        }
        Ok(target)
    }
}
