//! Desk-scale neural detectors: MLP, CNN and a patch-based spectrogram transformer with
//! either a class-token head or a per-time-column sequence head.

mod ast;
mod cnn;
mod layers;
mod mlp;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ast::{patchify, AstConfig, AstHead, PatchPadding, PATCH};
pub use cnn::{CnnConfig, ConvSpec};
pub use layers::{Activation, Grads, Param, Params};
pub use mlp::MlpConfig;
pub use train::{
    eval_loss, train, train_observed, write_loss_history, Dataset, EarlyStopper, EpochRecord,
    FineTune, Optimizer, StopReason, TrainOutcome, TrainSchedule,
};

use crate::container::{Block, Container};
use crate::error::{Error, Result};
use crate::matrix::{bce_with_logit, sigmoid, Matrix};
use crate::pipeline::{SequenceClassifier, WindowClassifier};
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum NetConfig {
    Mlp(MlpConfig),
    Cnn(CnnConfig),
    Ast(AstConfig),
}

impl NetConfig {
    /// Feature frames per input window.
    pub fn context(&self) -> usize {
        match self {
            NetConfig::Mlp(c) => c.context,
            NetConfig::Cnn(c) => c.context,
            NetConfig::Ast(c) => c.context(),
        }
    }

    pub fn validate(&self, bins: usize) -> Result<()> {
        match self {
            NetConfig::Mlp(c) => c.validate(),
            NetConfig::Cnn(c) => c.validate(bins),
            NetConfig::Ast(c) => c.validate(bins),
        }
    }
}

#[derive(Debug, Clone)]
enum Arch {
    Mlp(mlp::Mlp),
    Cnn(cnn::Cnn),
    Ast(ast::Ast),
}

enum Tape {
    Mlp(mlp::MlpTape),
    Cnn(cnn::CnnTape),
    Ast(ast::AstTape),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    bins: usize,
    classes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportScope {
    #[default]
    All,
    Backbone,
}

pub const CONTAINER_KIND: &str = "neural";

/// A network with its parameters. Input rows are flattened `context x bins` windows,
/// frame-major. Output rows are one per window, or one per temporal patch column for
/// the transformer sequence head.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetConfig,
    bins: usize,
    classes: Vec<String>,
    pub params: Params,
    arch: Arch,
}

impl Network {
    pub fn new(config: NetConfig, bins: usize, classes: Vec<String>, seed: u64) -> Result<Self> {
        config.validate(bins)?;
        if classes.is_empty() {
            return Err(Error::Config(
                "network needs at least one output class".into(),
            ));
        }
        let mut rng = rng_for(seed, "neural.init", 0);
        let mut params = Params::default();
        let c = classes.len();
        let arch = match &config {
            NetConfig::Mlp(m) => Arch::Mlp(mlp::Mlp::build(
                m,
                m.context * bins,
                c,
                &mut params,
                &mut rng,
            )),
            NetConfig::Cnn(m) => Arch::Cnn(cnn::Cnn::build(
                m,
                m.context,
                bins,
                c,
                &mut params,
                &mut rng,
            )),
            NetConfig::Ast(m) => Arch::Ast(ast::Ast::build(m, bins, c, &mut params, &mut rng)),
        };
        Ok(Self {
            config,
            bins,
            classes,
            params,
            arch,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn context(&self) -> usize {
        self.config.context()
    }

    pub fn input_dim(&self) -> usize {
        self.context() * self.bins
    }

    pub fn outputs_per_window(&self) -> usize {
        match &self.arch {
            Arch::Ast(a) => a.outputs_per_window(),
            _ => 1,
        }
    }

    pub fn is_sequence(&self) -> bool {
        matches!(&self.config, NetConfig::Ast(a) if a.head == AstHead::Seq)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs ({} frames x {} bins), got {}",
                self.input_dim(),
                self.context(),
                self.bins,
                x.cols()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &Matrix, rng: Option<&mut Rng>) -> (Matrix, Tape) {
        match &self.arch {
            Arch::Mlp(m) => {
                let (y, t) = m.forward(&self.params, x, rng);
                (y, Tape::Mlp(t))
            }
            Arch::Cnn(m) => {
                let (y, t) = m.forward(&self.params, x, rng);
                (y, Tape::Cnn(t))
            }
            Arch::Ast(m) => {
                let (y, t) = m.forward(&self.params, x);
                (y, Tape::Ast(t))
            }
        }
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.forward(x, None).0)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.logits(x)?;
        z.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(z)
    }

    fn check_targets(&self, x: &Matrix, y: &Matrix) -> Result<()> {
        self.check_input(x)?;
        if y.rows() != x.rows() * self.outputs_per_window() || y.cols() != self.classes.len() {
            return Err(Error::Shape(format!(
                "targets are {}x{}, expected {}x{}",
                y.rows(),
                y.cols(),
                x.rows() * self.outputs_per_window(),
                self.classes.len()
            )));
        }
        Ok(())
    }

    /// Mean binary cross-entropy over every output entry.
    pub fn loss(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        self.check_targets(x, y)?;
        let z = self.forward(x, None).0;
        Ok(mean_bce(&z, y))
    }

    /// Loss and its gradient; `rng` enables dropout.
    pub fn loss_and_grad(
        &self,
        x: &Matrix,
        y: &Matrix,
        rng: Option<&mut Rng>,
    ) -> Result<(f64, Grads)> {
        self.check_targets(x, y)?;
        let (z, tape) = self.forward(x, rng);
        let loss = mean_bce(&z, y);
        let scale = 1.0 / z.data().len() as f64;
        let dz: Vec<f64> = z
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &t)| (sigmoid(a) - t) * scale)
            .collect();
        let dz = Matrix::from_vec(z.rows(), z.cols(), dz)?;
        let mut g = self.params.zero_grads();
        match (&self.arch, &tape) {
            (Arch::Mlp(m), Tape::Mlp(t)) => m.backward(&self.params, &mut g, t, &dz),
            (Arch::Cnn(m), Tape::Cnn(t)) => m.backward(&self.params, &mut g, t, &dz),
            (Arch::Ast(m), Tape::Ast(t)) => m.backward(&self.params, &mut g, t, &dz),
            _ => unreachable!("tape matches architecture"),
        }
        Ok((loss, g))
    }

    pub fn backbone_values(&self) -> Vec<f64> {
        self.params
            .items
            .iter()
            .filter(|p| p.backbone)
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn head_values(&self) -> Vec<f64> {
        self.params
            .items
            .iter()
            .filter(|p| !p.backbone)
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    fn ast(&self) -> Result<&ast::Ast> {
        match &self.arch {
            Arch::Ast(a) => Ok(a),
            _ => Err(Error::Unsupported(
                "only transformer models expose tokens and attention".into(),
            )),
        }
    }

    /// Patch projections before positional embedding, `(windows * patches) x embed`.
    pub fn patch_embeddings(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.ast()?.patch_embeddings(&self.params, x))
    }

    /// Final-layer token representations, one `tokens x embed` matrix per window.
    pub fn representations(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        Ok(self.ast()?.representations(&self.params, x))
    }

    /// Row-stochastic attention matrices for the first window, indexed `[layer][head]`.
    pub fn attention(&self, x: &Matrix) -> Result<Vec<Vec<Matrix>>> {
        self.check_input(x)?;
        if x.rows() == 0 {
            return Err(Error::InvalidInput("no input window".into()));
        }
        Ok(self.ast()?.attention(&self.params, x))
    }

    pub fn to_container(&self) -> Result<Container> {
        let header = Header {
            config: self.config.clone(),
            bins: self.bins,
            classes: self.classes.clone(),
        };
        let mut c = Container::new(CONTAINER_KIND, &header)?;
        for p in &self.params.items {
            c.push(Block::matrix(&p.name, &p.value));
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(CONTAINER_KIND)?;
        let h: Header = c.hyper()?;
        let mut net = Network::new(h.config, h.bins, h.classes, 0)?;
        net.import_weights(c, ImportScope::All)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// Copies parameters from `c` after checking every block in scope; on any mismatch
    /// nothing is loaded and the error lists each offending block.
    pub fn import_weights(&mut self, c: &Container, scope: ImportScope) -> Result<Vec<String>> {
        let mut problems = Vec::new();
        let mut staged = Vec::new();
        for (i, p) in self.params.items.iter().enumerate() {
            if scope == ImportScope::Backbone && !p.backbone {
                continue;
            }
            let want = [p.value.rows(), p.value.cols()];
            match c.blocks.iter().find(|b| b.name == p.name) {
                None => problems.push(format!(
                    "{}: missing (expected {}x{})",
                    p.name, want[0], want[1]
                )),
                Some(b)
                    if b.dims.iter().product::<usize>() != want[0] * want[1]
                        || !shape_matches(&b.dims, &want) =>
                {
                    problems.push(format!(
                        "{}: expected {}x{}, found {:?}",
                        p.name, want[0], want[1], b.dims
                    ))
                }
                Some(b) => staged.push((i, b.values.clone())),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Topology(problems));
        }
        let mut loaded = Vec::with_capacity(staged.len());
        for (i, v) in staged {
            self.params.items[i].value.data_mut().copy_from_slice(&v);
            loaded.push(self.params.items[i].name.clone());
        }
        Ok(loaded)
    }

    pub fn import_weights_from(&mut self, path: &Path, scope: ImportScope) -> Result<Vec<String>> {
        let c = Container::load(path)?;
        self.import_weights(&c, scope)
    }
}

fn shape_matches(dims: &[usize], want: &[usize; 2]) -> bool {
    match dims {
        [r, c] => [*r, *c] == *want,
        [n] => want[0] == 1 && *n == want[1],
        _ => false,
    }
}

fn mean_bce(z: &Matrix, y: &Matrix) -> f64 {
    let s: f64 = z
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &t)| bce_with_logit(a, t))
        .sum();
    s / z.data().len().max(1) as f64
}

/// Writes attention maps as `layer,head,query,key,weight`.
pub fn write_attention_csv(path: &Path, maps: &[Vec<Matrix>]) -> Result<()> {
    crate::io::write_csv_atomic(path, |w| {
        w.write_record(["layer", "head", "query", "key", "weight"])?;
        for (l, heads) in maps.iter().enumerate() {
            for (h, m) in heads.iter().enumerate() {
                for q in 0..m.rows() {
                    for k in 0..m.cols() {
                        w.write_record([
                            l.to_string(),
                            h.to_string(),
                            q.to_string(),
                            k.to_string(),
                            m.get(q, k).to_string(),
                        ])?;
                    }
                }
            }
        }
        Ok(())
    })
}

/// Max-pools 100 ms grid labels onto the 16-frame token grid: token `j` covers
/// `[0.16 j, 0.16 (j + 1))` seconds past `t0` and is positive for a class when any
/// overlapping grid frame is.
pub fn token_targets(grid: &Matrix, grid_t0: f64, t0: f64, tokens: usize, token_s: f64) -> Matrix {
    let c = grid.cols();
    let mut out = Matrix::zeros(tokens, c);
    for j in 0..tokens {
        let (s, e) = (t0 + token_s * j as f64, t0 + token_s * (j + 1) as f64);
        let lo = (((s - grid_t0) / crate::labels::GRID_STRIDE_S) + 1e-9)
            .floor()
            .max(0.0) as usize;
        let hi = (((e - grid_t0) / crate::labels::GRID_STRIDE_S) - 1e-9)
            .ceil()
            .max(0.0) as usize;
        for i in lo..hi.min(grid.rows()) {
            for (o, &v) in out.row_mut(j).iter_mut().zip(grid.row(i)) {
                *o = o.max(v);
            }
        }
    }
    out
}

impl WindowClassifier for Network {
    fn context(&self) -> usize {
        Network::context(self)
    }

    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn predict_windows(&self, windows: &Matrix) -> Result<Matrix> {
        if self.is_sequence() {
            return Err(Error::Unsupported(
                "sequence-head models run with the sequence strategy".into(),
            ));
        }
        self.predict(windows)
    }
}

impl SequenceClassifier for Network {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn token_frames(&self) -> usize {
        PATCH
    }

    fn window_tokens(&self) -> usize {
        match &self.config {
            NetConfig::Ast(a) => a.window_tokens,
            _ => 1,
        }
    }

    fn predict_window(&self, window: &Matrix) -> Result<Matrix> {
        if !self.is_sequence() {
            return Err(Error::Unsupported(
                "per-window models run with the per-frame strategy".into(),
            ));
        }
        let row = Matrix::from_vec(1, window.data().len(), window.data().to_vec())?;
        self.predict(&row)
    }
}

#[cfg(test)]
mod tests;
