use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use trunkline::corpus::{load_corpus, synthesize_corpus, write_corpus, AnnotationTrack, Recording};
use trunkline::crossval::{
    make_folds, nested_cv, write_search_csv, CvData, CvOptions, FoldPlan, SearchSpace,
};
use trunkline::features::{extract, read_cache, write_cache, FeatureConfig, FeatureMatrix};
use trunkline::io::write_json_atomic;
use trunkline::labels::{rasterize, segment_targets, write_frame_labels, FrameLabels, LabelTarget};
use trunkline::matrix::Matrix;
use trunkline::metrics::{evaluate, EvalTrack, MetricsReport};
use trunkline::neural::write_loss_history;
use trunkline::parallel::par_map;
use trunkline::pipeline::{
    classify_segment, endpoint, oracle_segments, read_tracks, write_segments, write_tracks,
    Detector, FramewiseProbabilities, Segment, TrainItem, TrainReport,
};
use trunkline::rng::derive_seed;
use trunkline::{Error, Result};

use crate::config::{DataSource, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SegmentChoice {
    /// Segments taken from the annotations.
    Oracle,
    /// Segments endpointed from the detection tracks.
    Predicted,
}

/// Everything a command reads from the configuration and writes under the output directory.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    outputs: Vec<PathBuf>,
}

struct Corpus {
    recs: Vec<Recording>,
    tracks: Vec<AnnotationTrack>,
    target: LabelTarget,
    labels: Vec<FrameLabels>,
}

impl Corpus {
    fn index(&self, id: &str) -> Result<usize> {
        self.recs
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("recording `{id}` is not in the corpus")))
    }
}

#[derive(Serialize, Deserialize)]
struct Split {
    train: Vec<String>,
    dev: Vec<String>,
    test: Vec<String>,
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "missing file {}",
            path.display()
        )))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Self {
        Self {
            cfg,
            out,
            outputs: Vec::new(),
        }
    }

    fn dir(&self, rel: &str) -> Result<PathBuf> {
        let d = self.out.join(rel);
        std::fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn corpus_dir(&self) -> PathBuf {
        match &self.cfg.data {
            DataSource::Synth(_) => self.out.join("corpus"),
            DataSource::Corpus(dir) => dir.clone(),
        }
    }

    fn load(&self) -> Result<Corpus> {
        let dir = self.corpus_dir();
        if !dir.is_dir() {
            return Err(Error::InvalidInput(format!(
                "missing corpus directory {}{}",
                dir.display(),
                match self.cfg.data {
                    DataSource::Synth(_) => " (run `synth` first)",
                    DataSource::Corpus(_) => "",
                }
            )));
        }
        let (recs, tracks) = load_corpus(&dir, self.cfg.channel_policy)?;
        let target = self.cfg.target(&tracks)?;
        let labels = recs
            .iter()
            .zip(&tracks)
            .map(|(r, t)| rasterize(t, r.duration(), &target, self.cfg.label_window))
            .collect();
        Ok(Corpus {
            recs,
            tracks,
            target,
            labels,
        })
    }

    fn cached_features(&self, ids: &[&str]) -> Result<Vec<FeatureMatrix>> {
        ids.iter()
            .map(|id| {
                let p = self.out.join("features").join(format!("{id}.efm"));
                require(&p)?;
                read_cache(&p, &self.cfg.features)
            })
            .collect()
    }

    fn wrote(&mut self, p: PathBuf) {
        self.outputs.push(p);
    }

    fn wrote_dir(&mut self, dir: &Path) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                self.wrote_dir(&p)?;
            } else {
                self.outputs.push(p);
            }
        }
        Ok(())
    }

    /// Writes `manifests/<command>.json`: the resolved configuration and a digest of every
    /// output. Nothing in it depends on the clock.
    pub fn finish(mut self, command: &str) -> Result<PathBuf> {
        self.outputs.sort();
        self.outputs.dedup();
        let mut files = BTreeMap::new();
        for p in &self.outputs {
            let rel = p.strip_prefix(&self.out).unwrap_or(p);
            files.insert(
                rel.to_string_lossy().replace('\\', "/"),
                sha256_hex(&std::fs::read(p)?),
            );
        }
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.cfg.seed,
            "config": self.cfg,
            "outputs": files,
        });
        let path = self.dir("manifests")?.join(format!("{command}.json"));
        write_json_atomic(&path, &manifest)?;
        Ok(path)
    }
}

fn folds(ctx: &Ctx, tracks: &[AnnotationTrack]) -> Result<FoldPlan> {
    make_folds(tracks, ctx.cfg.cv.k, derive_seed(ctx.cfg.seed, "folds", 0))
}

fn extract_all(recs: &[Recording], cfg: &FeatureConfig) -> Result<Vec<FeatureMatrix>> {
    par_map(recs, |r| extract(r, cfg)).into_iter().collect()
}

pub fn synth(ctx: &mut Ctx) -> Result<()> {
    let DataSource::Synth(spec) = &ctx.cfg.data else {
        return Err(Error::Config(
            "`synth` needs a synthetic data source (`data.synth`)".into(),
        ));
    };
    let spec = spec.clone();
    let (recs, tracks) = synthesize_corpus(&spec)?;
    let dir = ctx.dir("corpus")?;
    for p in write_corpus(&dir, &recs, &tracks, Some(&spec))? {
        ctx.wrote(p);
    }
    log::info!(
        "synthesized {} recordings into {}",
        recs.len(),
        dir.display()
    );
    Ok(())
}

pub fn featurize(ctx: &mut Ctx) -> Result<()> {
    let corpus = ctx.load()?;
    let feats = extract_all(&corpus.recs, &ctx.cfg.features)?;
    let dir = ctx.dir("features")?;
    for (r, f) in corpus.recs.iter().zip(&feats) {
        let p = dir.join(format!("{}.efm", r.id));
        write_cache(&p, f)?;
        ctx.wrote(p);
    }
    let p = dir.join("labels.csv");
    write_frame_labels(&p, &corpus.labels)?;
    ctx.wrote(p);
    log::info!(
        "{} feature caches ({} columns), config hash {:08x}",
        feats.len(),
        ctx.cfg.features.dim(),
        ctx.cfg.features.hash()
    );
    Ok(())
}

pub fn train(ctx: &mut Ctx) -> Result<()> {
    let corpus = ctx.load()?;
    let plan = folds(ctx, &corpus.tracks)?;
    let s = &ctx.cfg.split;
    let (test, dev) = (plan.members(s.test_fold), plan.members(s.dev_fold));
    let train: Vec<String> = corpus
        .recs
        .iter()
        .map(|r| r.id.clone())
        .filter(|id| !test.contains(id) && !dev.contains(id))
        .collect();
    let ids: Vec<&str> = train.iter().chain(&dev).map(String::as_str).collect();
    let feats = ctx.cached_features(&ids)?;
    let items = ids
        .iter()
        .zip(&feats)
        .map(|(id, f)| {
            let i = corpus.index(id)?;
            Ok(TrainItem {
                features: f,
                labels: &corpus.labels[i],
                duration: corpus.recs[i].duration(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (tr, dv) = items.split_at(train.len());
    let (det, report) = Detector::train(
        &ctx.cfg.model,
        &ctx.cfg.features,
        &corpus.target.classes(),
        tr,
        dv,
        derive_seed(ctx.cfg.seed, "train", 0),
    )?;
    let dev_loss = if dv.is_empty() {
        None
    } else {
        Some(det.dev_loss(dv)?)
    };
    log::info!(
        "trained {} on {} rows, dev loss {dev_loss:?}",
        ctx.cfg.model.family(),
        report.train_rows
    );

    let p = ctx.out.join("model.emd");
    det.save(&p)?;
    ctx.wrote(p);
    let p = ctx.out.join("plan.json");
    plan.write_json(&p)?;
    ctx.wrote(p);
    let p = ctx.out.join("split.json");
    write_json_atomic(&p, &Split { train, dev, test })?;
    ctx.wrote(p);
    write_report(ctx, &report, dev_loss)
}

fn write_report(ctx: &mut Ctx, report: &TrainReport, dev_loss: Option<f64>) -> Result<()> {
    let mut v = serde_json::to_value(report)?;
    v["dev_loss"] = dev_loss.map_or(Value::Null, Value::from);
    let p = ctx.out.join("train_report.json");
    write_json_atomic(&p, &v)?;
    ctx.wrote(p);
    if !report.history.is_empty() {
        let p = ctx.out.join("loss_history.csv");
        write_loss_history(&p, &report.history)?;
        ctx.wrote(p);
    }
    Ok(())
}

pub fn detect(ctx: &mut Ctx, all: bool) -> Result<()> {
    let model = ctx.out.join("model.emd");
    require(&model)?;
    let det = Detector::load(&model)?;
    let corpus = ctx.load()?;
    let ids: Vec<String> = if all {
        corpus.recs.iter().map(|r| r.id.clone()).collect()
    } else {
        let p = ctx.out.join("split.json");
        require(&p)?;
        let split: Split = serde_json::from_slice(&std::fs::read(&p)?)?;
        split.test
    };
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let feats = ctx.cached_features(&refs)?;
    let tracks = ids
        .iter()
        .zip(&feats)
        .map(|(id, f)| {
            let i = corpus.index(id)?;
            det.detect(id, f, corpus.recs[i].duration(), &ctx.cfg.detection)
        })
        .collect::<Result<Vec<_>>>()?;
    let p = ctx.out.join("tracks.csv");
    write_tracks(&p, &tracks)?;
    ctx.wrote(p);
    log::info!("{} tracks", tracks.len());
    Ok(())
}

fn load_tracks(ctx: &Ctx, path: Option<&Path>) -> Result<Vec<FramewiseProbabilities>> {
    let p = path.map_or_else(|| ctx.out.join("tracks.csv"), Path::to_path_buf);
    require(&p)?;
    read_tracks(&p)
}

fn endpoint_track(ctx: &Ctx, t: &FramewiseProbabilities) -> Result<Vec<Segment>> {
    let mut segs = Vec::new();
    for c in &t.classes {
        segs.extend(endpoint(
            t,
            c,
            ctx.cfg.detection.threshold,
            ctx.cfg.detection.smoothing,
        )?);
    }
    segs.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.class.cmp(&b.class)));
    Ok(segs)
}

pub fn endpoint_cmd(ctx: &mut Ctx) -> Result<()> {
    let tracks = load_tracks(ctx, None)?;
    let mut segs = Vec::new();
    for t in &tracks {
        segs.extend(endpoint_track(ctx, t)?);
    }
    let p = ctx.out.join("segments.csv");
    write_segments(&p, &segs)?;
    ctx.wrote(p);
    log::info!("{} segments", segs.len());
    Ok(())
}

fn check_classes(t: &FramewiseProbabilities, target: &LabelTarget) -> Result<()> {
    let classes = target.classes();
    if t.classes != classes {
        return Err(Error::Config(format!(
            "track `{}` has classes [{}], the task has [{}]",
            t.recording_id,
            t.classes.join(", "),
            classes.join(", ")
        )));
    }
    Ok(())
}

pub fn classify(ctx: &mut Ctx, which: SegmentChoice) -> Result<()> {
    let tracks = load_tracks(ctx, None)?;
    let corpus = ctx.load()?;
    let classes = corpus.target.classes();
    let mut scored = Vec::new();
    let (mut targets, mut probs) = (Vec::new(), Vec::new());
    for t in &tracks {
        check_classes(t, &corpus.target)?;
        let ann = &corpus.tracks[corpus.index(&t.recording_id)?];
        let segs: Vec<(Option<usize>, Segment)> = match which {
            SegmentChoice::Oracle => oracle_segments(ann, &corpus.target)
                .into_iter()
                .map(|(k, s)| (Some(k), s))
                .collect(),
            SegmentChoice::Predicted => endpoint_track(ctx, t)?
                .into_iter()
                .map(|s| (None, s))
                .collect(),
        };
        for (primary, seg) in segs {
            let s = classify_segment(t, &seg)?;
            let y = segment_targets(ann, (s.start, s.end), primary, &corpus.target);
            targets.extend(y.labels.iter().map(|&v| v as f64));
            probs.extend(s.probs.iter().map(|(_, p)| *p));
            scored.push(s);
        }
    }
    let p = ctx.out.join("classified.csv");
    write_segments(&p, &scored)?;
    ctx.wrote(p);
    if scored.is_empty() {
        return Err(Error::InvalidInput("no segments to classify".into()));
    }
    let n = scored.len();
    let track = EvalTrack {
        recording_id: "segments".into(),
        targets: Matrix::from_vec(n, classes.len(), targets)?,
        probs: Matrix::from_vec(n, classes.len(), probs)?,
    };
    let mut report = evaluate(&[track], &classes, &ctx.cfg.eval)?;
    // rows are segments, not grid frames, so boundary matching has no meaning here
    for m in report.per_class.values_mut().chain([&mut report.macro_avg]) {
        m.boundary_precision = None;
        m.boundary_recall = None;
    }
    let p = ctx.out.join("classify_metrics.json");
    report.write_json(&p)?;
    ctx.wrote(p);
    log::info!("{n} segments, macro AUC {:?}", report.macro_avg.auc);
    Ok(())
}

pub fn evaluate_cmd(ctx: &mut Ctx, tracks_path: Option<&Path>) -> Result<()> {
    let tracks = load_tracks(ctx, tracks_path)?;
    let corpus = ctx.load()?;
    let ev = tracks
        .iter()
        .map(|t| {
            check_classes(t, &corpus.target)?;
            let i = corpus.index(&t.recording_id)?;
            Ok(EvalTrack {
                recording_id: t.recording_id.clone(),
                targets: t.aligned_targets(&corpus.labels[i].to_matrix())?,
                probs: t.probs.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&ev, &corpus.target.classes(), &ctx.cfg.eval)?;
    write_metrics(ctx, &report, "")?;
    log::info!(
        "macro AUC {:?}, AP {:?}, Jaccard {:?}",
        report.macro_avg.auc,
        report.macro_avg.ap,
        report.macro_avg.jaccard
    );
    Ok(())
}

fn write_metrics(ctx: &mut Ctx, report: &MetricsReport, rel: &str) -> Result<()> {
    let dir = ctx.dir(rel)?;
    let p = dir.join("metrics.json");
    report.write_json(&p)?;
    ctx.wrote(p);
    let curves = dir.join("curves");
    report.write_curves(&curves)?;
    ctx.wrote_dir(&curves)
}

pub fn crossval(ctx: &mut Ctx) -> Result<()> {
    let corpus = ctx.load()?;
    let plan = folds(ctx, &corpus.tracks)?;
    let space = SearchSpace {
        features: ctx.cfg.features.clone(),
        model: ctx.cfg.model.clone(),
        grid: ctx.cfg.search.clone(),
    };
    let ids: Vec<String> = corpus.recs.iter().map(|r| r.id.clone()).collect();
    let durations: Vec<f64> = corpus.recs.iter().map(Recording::duration).collect();
    let recs = &corpus.recs;
    let result = nested_cv(
        &plan,
        &space,
        CvData {
            ids: &ids,
            labels: &corpus.labels,
            durations: &durations,
        },
        &|f: &FeatureConfig| extract_all(recs, f),
        &CvOptions {
            detection: ctx.cfg.detection.clone(),
            eval: ctx.cfg.eval.clone(),
            seed: derive_seed(ctx.cfg.seed, "train", 0),
        },
    )?;

    let dir = ctx.dir("crossval")?;
    let p = dir.join("plan.json");
    plan.write_json(&p)?;
    ctx.wrote(p);
    let p = dir.join("search.csv");
    write_search_csv(&p, &result.search)?;
    ctx.wrote(p);
    for f in &result.folds {
        let rel = format!("crossval/fold{}", f.fold);
        write_metrics(ctx, &f.report, &rel)?;
        let p = ctx.out.join(&rel).join("tracks.csv");
        write_tracks(&p, &f.tracks)?;
        ctx.wrote(p);
        log::info!(
            "fold {}: chose {}, macro AUC {:?}",
            f.fold,
            f.chosen,
            f.report.macro_avg.auc
        );
    }
    let p = dir.join("aggregate.json");
    result.aggregate.write_json(&p)?;
    ctx.wrote(p);
    let audits: Vec<_> = result.folds.iter().map(|f| &f.audit).collect();
    let p = dir.join("audit.json");
    write_json_atomic(&p, &audits)?;
    ctx.wrote(p);
    Ok(())
}
