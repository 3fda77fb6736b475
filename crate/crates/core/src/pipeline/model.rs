use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    detect_frames, detect_sequence, window_rows, DetectionConfig, FramewiseProbabilities,
    SequenceClassifier, Strategy, WindowClassifier,
};
use crate::container::{Block, Container};
use crate::error::{Error, Result};
use crate::features::{fit_pca, CmvnStats, FeatureConfig, FeatureMatrix, PcaModel, PcaTarget};
use crate::labels::FrameLabels;
use crate::matrix::{bce_with_logit, Matrix};
use crate::neural::{
    self, eval_loss, token_targets, Dataset, EpochRecord, NetConfig, Network, StopReason,
    TrainSchedule, PATCH,
};
use crate::rng::derive_seed;
use crate::shallow::{
    fit_calibrator, fit_kernel_approx, predict_gbdt, predict_linear, train_gbdt, train_linear_svm,
    train_logreg, CalibrationKind, Calibrator, GbdtConfig, GbdtModel, KernelApproximator,
    KernelConfig, LinearModel, LogRegConfig, SvmConfig,
};

pub const DETECTOR_KIND: &str = "detector";

/// Window stacking and projection in front of a shallow model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShallowInput {
    /// Feature frames per stacked window.
    pub context: usize,
    /// PCA on the stacked windows, fitted on training rows.
    pub pca: Option<PcaTarget>,
    pub whiten: bool,
}

impl Default for ShallowInput {
    fn default() -> Self {
        Self {
            context: 51,
            pca: Some(PcaTarget::VarianceFraction(0.95)),
            whiten: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelSpec {
    Logreg {
        #[serde(default)]
        input: ShallowInput,
        #[serde(default)]
        logreg: LogRegConfig,
    },
    Svm {
        #[serde(default)]
        input: ShallowInput,
        #[serde(default)]
        kernel: KernelConfig,
        #[serde(default)]
        svm: SvmConfig,
        #[serde(default)]
        calibration: CalibrationKind,
    },
    Gbdt {
        #[serde(default)]
        input: ShallowInput,
        #[serde(default)]
        gbdt: GbdtConfig,
    },
    Neural {
        net: NetConfig,
        #[serde(default)]
        schedule: TrainSchedule,
    },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Logreg {
            input: ShallowInput::default(),
            logreg: LogRegConfig::default(),
        }
    }
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Logreg { .. } => "logreg",
            ModelSpec::Svm { .. } => "svm",
            ModelSpec::Gbdt { .. } => "gbdt",
            ModelSpec::Neural { .. } => "neural",
        }
    }

    /// Feature frames consumed per decision (per window for sequence models).
    pub fn context(&self) -> usize {
        match self {
            ModelSpec::Logreg { input, .. }
            | ModelSpec::Svm { input, .. }
            | ModelSpec::Gbdt { input, .. } => input.context,
            ModelSpec::Neural { net, .. } => net.context(),
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self {
            ModelSpec::Neural {
                net: NetConfig::Ast(a),
                ..
            } if a.head == neural::AstHead::Seq => Strategy::Sequence,
            _ => Strategy::PerFrame,
        }
    }

    /// Seconds of audio on either side of a decision that the model needs.
    pub fn margin_s(&self, features: &FeatureConfig) -> f64 {
        0.5 * self.context() as f64 * features.stride_s()
    }

    pub fn validate(&self, bins: usize) -> Result<()> {
        match self {
            ModelSpec::Logreg { input, .. }
            | ModelSpec::Svm { input, .. }
            | ModelSpec::Gbdt { input, .. } => {
                if input.context == 0 {
                    return Err(Error::Config("context must be at least one frame".into()));
                }
                if let Some(t) = input.pca {
                    t.validate()?;
                }
                Ok(())
            }
            ModelSpec::Neural { net, schedule } => {
                net.validate(bins)?;
                schedule.validate()
            }
        }
    }
}

/// One recording's features with its grid labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub features: &'a FeatureMatrix,
    pub labels: &'a FrameLabels,
    pub duration: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_rows: usize,
    pub dev_rows: usize,
    /// Neural models only.
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone)]
enum Fitted {
    Linear {
        pca: Option<PcaModel>,
        model: LinearModel,
    },
    Svm {
        pca: Option<PcaModel>,
        kernel: KernelApproximator,
        model: LinearModel,
        calibrators: Vec<Calibrator>,
    },
    Gbdt {
        pca: Option<PcaModel>,
        model: GbdtModel,
    },
    Neural(Box<Network>),
}

/// A trained detection model together with the frame normalization it was fitted with.
#[derive(Debug, Clone)]
pub struct Detector {
    pub spec: ModelSpec,
    pub features: FeatureConfig,
    pub classes: Vec<String>,
    /// Recordings whose data entered any fitting step, including calibration and early stopping.
    pub fitted_on: Vec<String>,
    cmvn: Option<CmvnStats>,
    frame_pca: Option<PcaModel>,
    fitted: Fitted,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    features: FeatureConfig,
    classes: Vec<String>,
    fitted_on: Vec<String>,
    frame_dim: usize,
    model_dim: usize,
}

/// Grid-frame training windows addressed lazily over normalized recordings.
struct FrameSet {
    values: Vec<Matrix>,
    labels: Vec<Matrix>,
    /// (item, first feature row, grid frame)
    index: Vec<(usize, usize, usize)>,
    w: usize,
}

impl Dataset for FrameSet {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Matrix, Matrix)> {
        let d = self.values.first().map_or(0, |m| m.cols());
        let c = self.labels.first().map_or(0, |m| m.cols());
        let mut x = Vec::with_capacity(idx.len() * self.w * d);
        let mut y = Vec::with_capacity(idx.len() * c);
        for &k in idx {
            let (item, start, frame) = self.index[k];
            x.extend_from_slice(&self.values[item].data()[start * d..(start + self.w) * d]);
            y.extend_from_slice(self.labels[item].row(frame));
        }
        Ok((
            Matrix::from_vec(idx.len(), self.w * d, x)?,
            Matrix::from_vec(idx.len(), c, y)?,
        ))
    }
}

/// Token windows for sequence models; windows shorter than the recording are padded by
/// repeating the last frame, and targets are max-pooled onto tokens.
struct TokenSet {
    values: Vec<Matrix>,
    labels: Vec<Matrix>,
    /// (item, first token)
    index: Vec<(usize, usize)>,
    tokens: usize,
    token_s: f64,
}

impl Dataset for TokenSet {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Matrix, Matrix)> {
        let d = self.values.first().map_or(0, |m| m.cols());
        let c = self.labels.first().map_or(0, |m| m.cols());
        let frames = self.tokens * PATCH;
        let mut x = Vec::with_capacity(idx.len() * frames * d);
        let mut y = Vec::with_capacity(idx.len() * self.tokens * c);
        for &k in idx {
            let (item, s) = self.index[k];
            let m = &self.values[item];
            for r in s * PATCH..s * PATCH + frames {
                x.extend_from_slice(m.row(r.min(m.rows() - 1)));
            }
            let t = token_targets(
                &self.labels[item],
                0.0,
                s as f64 * self.token_s,
                self.tokens,
                self.token_s,
            );
            y.extend_from_slice(t.data());
        }
        Ok((
            Matrix::from_vec(idx.len(), frames * d, x)?,
            Matrix::from_vec(idx.len() * self.tokens, c, y)?,
        ))
    }
}

fn label_matrix(item: &TrainItem, classes: &[String]) -> Result<Matrix> {
    if item.labels.classes != classes {
        return Err(Error::Shape(format!(
            "labels for {} carry classes {:?}, model expects {:?}",
            item.labels.recording_id, item.labels.classes, classes
        )));
    }
    Ok(item.labels.to_matrix())
}

fn frame_set(
    items: &[TrainItem],
    values: Vec<Matrix>,
    classes: &[String],
    w: usize,
) -> Result<FrameSet> {
    let mut labels = Vec::with_capacity(items.len());
    let mut index = Vec::new();
    for (k, it) in items.iter().enumerate() {
        let y = label_matrix(it, classes)?;
        let (first, starts) = window_rows(it.features, it.duration, w, 0.0);
        for (j, s) in starts.into_iter().enumerate() {
            if first + j < y.rows() {
                index.push((k, s, first + j));
            }
        }
        labels.push(y);
    }
    Ok(FrameSet {
        values,
        labels,
        index,
        w,
    })
}

fn token_set(
    items: &[TrainItem],
    values: Vec<Matrix>,
    classes: &[String],
    tokens: usize,
    stride_s: f64,
) -> Result<TokenSet> {
    let mut labels = Vec::with_capacity(items.len());
    let mut index = Vec::new();
    let hop = (tokens / 2).max(1);
    for (k, it) in items.iter().enumerate() {
        labels.push(label_matrix(it, classes)?);
        let n_tok = values[k].rows() / PATCH;
        if values[k].rows() == 0 {
            continue;
        }
        if n_tok <= tokens {
            index.push((k, 0));
            continue;
        }
        let mut s = 0;
        while s + tokens <= n_tok {
            index.push((k, s));
            s += hop;
        }
        if s - hop + tokens < n_tok {
            index.push((k, n_tok - tokens));
        }
    }
    Ok(TokenSet {
        values,
        labels,
        index,
        tokens,
        token_s: PATCH as f64 * stride_s,
    })
}

fn all_rows(set: &dyn Dataset) -> Result<(Matrix, Matrix)> {
    set.batch(&(0..set.len()).collect::<Vec<_>>())
}

fn project(pca: &Option<PcaModel>, x: Matrix) -> Result<Matrix> {
    match pca {
        Some(p) => p.transform(&x),
        None => Ok(x),
    }
}

fn ids(items: &[TrainItem]) -> Vec<String> {
    items
        .iter()
        .map(|i| i.labels.recording_id.clone())
        .collect()
}

impl Detector {
    /// Fits frame normalization on `train` and the model on `train`; `dev` drives early
    /// stopping (neural) and probability calibration (SVM) and is never used for fitting
    /// normalization or the model itself.
    pub fn train(
        spec: &ModelSpec,
        features: &FeatureConfig,
        classes: &[String],
        train: &[TrainItem],
        dev: &[TrainItem],
        seed: u64,
    ) -> Result<(Detector, TrainReport)> {
        if train.is_empty() {
            return Err(Error::InvalidInput("no training recordings".into()));
        }
        if let Some(it) = train
            .iter()
            .chain(dev)
            .find(|it| it.features.config.hash() != features.hash())
        {
            return Err(Error::Config(format!(
                "features of {} were extracted with a different configuration",
                it.labels.recording_id
            )));
        }
        let raw: Vec<&Matrix> = train.iter().map(|it| &it.features.values).collect();
        let cmvn = if features.cmvn {
            Some(CmvnStats::fit_matrices(&raw)?)
        } else {
            None
        };
        let mut det = Detector {
            spec: spec.clone(),
            features: features.clone(),
            classes: classes.to_vec(),
            fitted_on: ids(train),
            cmvn,
            frame_pca: None,
            fitted: Fitted::Linear {
                pca: None,
                model: LinearModel::untrained(classes.len(), 0),
            },
        };
        let normed = train
            .iter()
            .map(|it| det.normalize_cmvn(&it.features.values))
            .collect::<Result<Vec<_>>>()?;
        if let Some(target) = features.pca {
            let refs: Vec<&Matrix> = normed.iter().collect();
            det.frame_pca = Some(fit_pca(&refs, target, features.whiten)?);
        }
        let tr: Vec<Matrix> = normed
            .into_iter()
            .map(|m| project(&det.frame_pca, m))
            .collect::<Result<_>>()?;
        let dv: Vec<Matrix> = dev
            .iter()
            .map(|it| det.prepare(&it.features.values))
            .collect::<Result<_>>()?;
        let bins = tr[0].cols();
        spec.validate(bins)?;
        let mut report = TrainReport::default();

        det.fitted = match spec {
            ModelSpec::Logreg { input, logreg } => {
                let (x, y) = all_rows(&frame_set(train, tr, classes, input.context)?)?;
                report.train_rows = x.rows();
                let pca = input
                    .pca
                    .map(|t| fit_pca(&[&x], t, input.whiten))
                    .transpose()?;
                let z = project(&pca, x)?;
                let cfg = LogRegConfig {
                    seed: derive_seed(seed, "detector.logreg", logreg.seed),
                    ..logreg.clone()
                };
                Fitted::Linear {
                    pca,
                    model: train_logreg(&z, &y, &cfg)?,
                }
            }
            ModelSpec::Gbdt { input, gbdt } => {
                let (x, y) = all_rows(&frame_set(train, tr, classes, input.context)?)?;
                report.train_rows = x.rows();
                let pca = input
                    .pca
                    .map(|t| fit_pca(&[&x], t, input.whiten))
                    .transpose()?;
                let z = project(&pca, x)?;
                let cfg = GbdtConfig {
                    seed: derive_seed(seed, "detector.gbdt", gbdt.seed),
                    ..gbdt.clone()
                };
                Fitted::Gbdt {
                    pca,
                    model: train_gbdt(&z, &y, &cfg)?,
                }
            }
            ModelSpec::Svm {
                input,
                kernel,
                svm,
                calibration,
            } => {
                if dev.is_empty() {
                    return Err(Error::InvalidInput(
                        "SVM calibration needs development recordings".into(),
                    ));
                }
                let (x, y) = all_rows(&frame_set(train, tr, classes, input.context)?)?;
                report.train_rows = x.rows();
                let pca = input
                    .pca
                    .map(|t| fit_pca(&[&x], t, input.whiten))
                    .transpose()?;
                let z = project(&pca, x)?;
                let kcfg = KernelConfig {
                    seed: derive_seed(seed, "detector.kernel", kernel.seed),
                    ..kernel.clone()
                };
                let approx = fit_kernel_approx(&z, &kcfg)?;
                let phi = approx.transform(&z)?;
                let scfg = SvmConfig {
                    seed: derive_seed(seed, "detector.svm", svm.seed),
                    ..svm.clone()
                };
                let model = train_linear_svm(&phi, &y, &scfg)?;
                let (dx, dy) = all_rows(&frame_set(dev, dv, classes, input.context)?)?;
                report.dev_rows = dx.rows();
                let scores = model.decision_function(&approx.transform(&project(&pca, dx)?)?)?;
                let mut calibrators = Vec::with_capacity(classes.len());
                for (c, name) in classes.iter().enumerate() {
                    let cal = match fit_calibrator(&scores.column(c), &dy.column(c), *calibration) {
                        Err(Error::DegenerateCalibration(msg)) => {
                            log::warn!(
                                "class {name}: {msg}; falling back to the logistic of the margin"
                            );
                            Calibrator::Platt { a: 1.0, b: 0.0 }
                        }
                        other => other?,
                    };
                    calibrators.push(cal);
                }
                det.fitted_on.extend(ids(dev));
                Fitted::Svm {
                    pca,
                    kernel: approx,
                    model,
                    calibrators,
                }
            }
            ModelSpec::Neural { net, schedule } => {
                if dev.is_empty() {
                    return Err(Error::InvalidInput(
                        "neural training needs development recordings".into(),
                    ));
                }
                let mut network = Network::new(
                    net.clone(),
                    bins,
                    classes.to_vec(),
                    derive_seed(seed, "detector.init", 0),
                )?;
                let sched = TrainSchedule {
                    seed: derive_seed(seed, "detector.train", schedule.seed),
                    ..schedule.clone()
                };
                let (tset, dset): (Box<dyn Dataset>, Box<dyn Dataset>) = if network.is_sequence() {
                    let l = SequenceClassifier::window_tokens(&network);
                    let s = features.stride_s();
                    (
                        Box::new(token_set(train, tr, classes, l, s)?),
                        Box::new(token_set(dev, dv, classes, l, s)?),
                    )
                } else {
                    let w = network.context();
                    (
                        Box::new(frame_set(train, tr, classes, w)?),
                        Box::new(frame_set(dev, dv, classes, w)?),
                    )
                };
                report.train_rows = tset.len();
                report.dev_rows = dset.len();
                let out = neural::train(&mut network, tset.as_ref(), dset.as_ref(), &sched)?;
                report.history = out.history;
                report.best_epoch = Some(out.best_epoch);
                report.stop = Some(out.stop);
                det.fitted_on.extend(ids(dev));
                Fitted::Neural(Box::new(network))
            }
        };
        Ok((det, report))
    }

    fn normalize_cmvn(&self, m: &Matrix) -> Result<Matrix> {
        match &self.cmvn {
            Some(s) => s.apply(m),
            None => Ok(m.clone()),
        }
    }

    /// Applies the fitted frame normalization (CMVN, then frame PCA).
    fn prepare(&self, m: &Matrix) -> Result<Matrix> {
        project(&self.frame_pca, self.normalize_cmvn(m)?)
    }

    pub fn strategy(&self) -> Strategy {
        self.spec.strategy()
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.fitted {
            Fitted::Neural(n) => Some(n),
            _ => None,
        }
    }

    /// Probabilities for flattened windows of prepared frames.
    fn predict_prepared(&self, windows: &Matrix) -> Result<Matrix> {
        match &self.fitted {
            Fitted::Linear { pca, model } => predict_linear(model, &project(pca, windows.clone())?),
            Fitted::Gbdt { pca, model } => predict_gbdt(model, &project(pca, windows.clone())?),
            Fitted::Svm {
                pca,
                kernel,
                model,
                calibrators,
            } => {
                let mut s =
                    model.decision_function(&kernel.transform(&project(pca, windows.clone())?)?)?;
                for i in 0..s.rows() {
                    for (v, cal) in s.row_mut(i).iter_mut().zip(calibrators) {
                        *v = cal.apply(*v);
                    }
                }
                Ok(s)
            }
            Fitted::Neural(n) => n.predict(windows),
        }
    }

    fn check_features(&self, f: &FeatureMatrix) -> Result<()> {
        if f.config.hash() != self.features.hash() {
            return Err(Error::Config(
                "features were extracted with a different configuration than the model".into(),
            ));
        }
        Ok(())
    }

    pub fn detect(
        &self,
        recording_id: &str,
        f: &FeatureMatrix,
        duration: f64,
        cfg: &DetectionConfig,
    ) -> Result<FramewiseProbabilities> {
        cfg.validate()?;
        self.check_features(f)?;
        let own = self.strategy();
        if let Some(s) = cfg.strategy.filter(|&s| s != own) {
            return Err(Error::Config(format!(
                "{s:?} strategy requested for a {own:?} model"
            )));
        }
        let prepared = f.with_values(self.prepare(&f.values)?);
        let mut track = match &self.fitted {
            Fitted::Neural(n) if n.is_sequence() => {
                detect_sequence(n.as_ref(), &prepared, duration, cfg)?
            }
            _ => detect_frames(&Windows(self), &prepared, duration, cfg)?,
        };
        track.recording_id = recording_id.to_string();
        Ok(track)
    }

    /// Mean development loss: BCE for probabilistic outputs, hinge on the raw margins for SVMs.
    pub fn dev_loss(&self, items: &[TrainItem]) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::InvalidInput("no development recordings".into()));
        }
        let values: Vec<Matrix> = items
            .iter()
            .map(|it| self.prepare(&it.features.values))
            .collect::<Result<_>>()?;
        if let Fitted::Neural(n) = &self.fitted {
            let set: Box<dyn Dataset> = if n.is_sequence() {
                Box::new(token_set(
                    items,
                    values,
                    &self.classes,
                    SequenceClassifier::window_tokens(n.as_ref()),
                    self.features.stride_s(),
                )?)
            } else {
                Box::new(frame_set(items, values, &self.classes, n.context())?)
            };
            return eval_loss(n, set.as_ref());
        }
        let (x, y) = all_rows(&frame_set(
            items,
            values,
            &self.classes,
            self.spec.context(),
        )?)?;
        if x.rows() == 0 {
            return Err(Error::InvalidInput(
                "development recordings shorter than one context".into(),
            ));
        }
        let n = y.data().len() as f64;
        let total: f64 = match &self.fitted {
            Fitted::Svm {
                pca, kernel, model, ..
            } => {
                let s = model.decision_function(&kernel.transform(&project(pca, x)?)?)?;
                s.data()
                    .iter()
                    .zip(y.data())
                    .map(|(&s, &t)| (1.0 - (2.0 * t - 1.0) * s).max(0.0))
                    .sum()
            }
            _ => {
                let p = self.predict_prepared(&x)?;
                p.data()
                    .iter()
                    .zip(y.data())
                    .map(|(&p, &t)| bce_with_logit(logit(p), t))
                    .sum()
            }
        };
        Ok(total / n)
    }

    pub fn to_container(&self) -> Result<Container> {
        let frame_dim = self
            .frame_pca
            .as_ref()
            .map_or(self.features.dim(), |p| p.n_components());
        let model_dim = match &self.fitted {
            Fitted::Gbdt { model, .. } => model.dim,
            _ => 0,
        };
        let header = Header {
            spec: self.spec.clone(),
            features: self.features.clone(),
            classes: self.classes.clone(),
            fitted_on: self.fitted_on.clone(),
            frame_dim,
            model_dim,
        };
        let mut c = Container::new(DETECTOR_KIND, &header)?;
        if let Some(s) = &self.cmvn {
            c.push(Block::vector("cmvn.mean", s.mean.clone()));
            c.push(Block::vector("cmvn.std", s.std.clone()));
        }
        if let Some(p) = &self.frame_pca {
            p.to_blocks("frame_pca", &mut c);
        }
        let push_pca = |pca: &Option<PcaModel>, c: &mut Container| {
            if let Some(p) = pca {
                p.to_blocks("pca", c);
            }
        };
        match &self.fitted {
            Fitted::Linear { pca, model } => {
                push_pca(pca, &mut c);
                model.to_blocks("linear", &mut c);
            }
            Fitted::Gbdt { pca, model } => {
                push_pca(pca, &mut c);
                model.to_blocks("gbdt", &mut c);
            }
            Fitted::Svm {
                pca,
                kernel,
                model,
                calibrators,
            } => {
                push_pca(pca, &mut c);
                kernel.to_blocks("kernel", &mut c);
                model.to_blocks("linear", &mut c);
                for (k, cal) in calibrators.iter().enumerate() {
                    cal.to_blocks(&format!("calib.{k}"), &mut c);
                }
            }
            Fitted::Neural(n) => {
                for p in &n.params.items {
                    c.push(Block::matrix(format!("net.{}", p.name), &p.value));
                }
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(DETECTOR_KIND)?;
        let h: Header = c.hyper()?;
        let has = |name: &str| c.blocks.iter().any(|b| b.name == name);
        let cmvn = if has("cmvn.mean") {
            Some(CmvnStats {
                mean: c.vector("cmvn.mean")?,
                std: c.vector("cmvn.std")?,
            })
        } else {
            None
        };
        let frame_pca = if has("frame_pca.components") {
            Some(PcaModel::from_blocks("frame_pca", c)?)
        } else {
            None
        };
        let pca = if has("pca.components") {
            Some(PcaModel::from_blocks("pca", c)?)
        } else {
            None
        };
        let fitted = match &h.spec {
            ModelSpec::Logreg { .. } => Fitted::Linear {
                pca,
                model: LinearModel::from_blocks("linear", c)?,
            },
            ModelSpec::Gbdt { gbdt, .. } => Fitted::Gbdt {
                pca,
                model: GbdtModel::from_blocks("gbdt", gbdt.clone(), h.model_dim, c)?,
            },
            ModelSpec::Svm { .. } => {
                let calibrators = (0..h.classes.len())
                    .map(|k| Calibrator::from_blocks(&format!("calib.{k}"), c))
                    .collect::<Result<_>>()?;
                Fitted::Svm {
                    pca,
                    kernel: KernelApproximator::from_blocks("kernel", c)?,
                    model: LinearModel::from_blocks("linear", c)?,
                    calibrators,
                }
            }
            ModelSpec::Neural { net, .. } => {
                let mut n = Network::new(net.clone(), h.frame_dim, h.classes.clone(), 0)?;
                let mut inner = Container::new(neural::CONTAINER_KIND, &())?;
                for b in &c.blocks {
                    if let Some(name) = b.name.strip_prefix("net.") {
                        inner.push(Block {
                            name: name.to_string(),
                            ..b.clone()
                        });
                    }
                }
                n.import_weights(&inner, neural::ImportScope::All)?;
                Fitted::Neural(Box::new(n))
            }
        };
        Ok(Detector {
            spec: h.spec,
            features: h.features,
            classes: h.classes,
            fitted_on: h.fitted_on,
            cmvn,
            frame_pca,
            fitted,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

struct Windows<'a>(&'a Detector);

impl WindowClassifier for Windows<'_> {
    fn context(&self) -> usize {
        self.0.spec.context()
    }

    fn classes(&self) -> &[String] {
        &self.0.classes
    }

    fn predict_windows(&self, windows: &Matrix) -> Result<Matrix> {
        self.0.predict_prepared(windows)
    }
}
