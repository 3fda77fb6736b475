use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Adam {
        beta1: f64,
        beta2: f64,
    },
    AdamW {
        beta1: f64,
        beta2: f64,
        weight_decay: f64,
    },
    Sgd,
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
        }
    }

    pub fn adamw() -> Self {
        Optimizer::AdamW {
            beta1: 0.9,
            beta2: 0.98,
            weight_decay: 0.01,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam()
    }
}

/// Backbone schedule for fine-tuning a pretrained model: frozen for `freeze_epochs`, then
/// trained at `start_factor` of the head rate, rising linearly to the full rate over
/// `ramp_epochs` further epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTune {
    pub freeze_epochs: usize,
    pub ramp_epochs: usize,
    pub start_factor: f64,
}

impl Default for FineTune {
    fn default() -> Self {
        Self {
            freeze_epochs: 10,
            ramp_epochs: 2,
            start_factor: 0.01,
        }
    }
}

impl FineTune {
    /// Backbone learning-rate multiplier for 1-based `epoch`.
    pub fn backbone_factor(&self, epoch: usize) -> f64 {
        if epoch <= self.freeze_epochs {
            return 0.0;
        }
        if self.ramp_epochs == 0 {
            return 1.0;
        }
        let k = (epoch - self.freeze_epochs - 1) as f64 / self.ramp_epochs as f64;
        self.start_factor + (1.0 - self.start_factor) * k.min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping and rewinding.
    pub patience: usize,
    pub convergence_tol: f64,
    pub convergence_epochs: usize,
    pub fine_tune: Option<FineTune>,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::default(),
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 3,
            convergence_tol: 1e-5,
            convergence_epochs: 3,
            fine_tune: None,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size and epoch budget must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum StopReason {
    Diverged { best_epoch: usize },
    Converged,
    MaxEpochs,
}

/// Dev-loss monitor. Epochs are 1-based.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    tol: f64,
    flat_needed: usize,
    epoch: usize,
    best: f64,
    best_epoch: usize,
    last: Option<f64>,
    flat: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, tol: f64, flat_needed: usize) -> Self {
        Self {
            patience,
            tol,
            flat_needed,
            epoch: 0,
            best: f64::INFINITY,
            best_epoch: 0,
            last: None,
            flat: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Records one epoch's loss; returns why training should stop, if it should.
    pub fn observe(&mut self, loss: f64) -> Option<StopReason> {
        self.epoch += 1;
        if let Some(prev) = self.last {
            self.flat = if (loss - prev).abs() < self.tol {
                self.flat + 1
            } else {
                0
            };
        }
        self.last = Some(loss);
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.epoch;
        }
        if self.flat_needed > 0 && self.flat >= self.flat_needed {
            return Some(StopReason::Converged);
        }
        (self.epoch - self.best_epoch >= self.patience).then_some(StopReason::Diverged {
            best_epoch: self.best_epoch,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub backbone_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

struct OptState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<u64>,
}

const EPS: f64 = 1e-8;

fn step(
    net: &mut Network,
    st: &mut OptState,
    opt: Optimizer,
    g: &super::Grads,
    lr: f64,
    factor: f64,
) {
    for (i, p) in net.params.items.iter_mut().enumerate() {
        let lr = if p.backbone { lr * factor } else { lr };
        if lr == 0.0 {
            continue;
        }
        let w = p.value.data_mut();
        let gi = g.0[i].data();
        match opt {
            Optimizer::Sgd => w.iter_mut().zip(gi).for_each(|(w, g)| *w -= lr * g),
            Optimizer::Adam { beta1, beta2 } | Optimizer::AdamW { beta1, beta2, .. } => {
                let wd = match opt {
                    Optimizer::AdamW { weight_decay, .. } => weight_decay,
                    _ => 0.0,
                };
                st.t[i] += 1;
                let c1 = 1.0 - beta1.powi(st.t[i] as i32);
                let c2 = 1.0 - beta2.powi(st.t[i] as i32);
                let (m, v) = (&mut st.m[i], &mut st.v[i]);
                for k in 0..w.len() {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * gi[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * gi[k] * gi[k];
                    let upd = (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
                    w[k] -= lr * (upd + wd * w[k]);
                }
            }
        }
    }
}

/// Training examples addressed by index; batches are assembled on demand.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inputs for `idx` and their targets (one or more target rows per input, in order).
    fn batch(&self, idx: &[usize]) -> Result<(Matrix, Matrix)>;
}

/// In-memory inputs with `y.rows() / x.rows()` target rows per input.
impl Dataset for (&Matrix, &Matrix) {
    fn len(&self) -> usize {
        self.0.rows()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Matrix, Matrix)> {
        let per = self.1.rows() / self.0.rows().max(1);
        let rows: Vec<usize> = idx.iter().flat_map(|&i| i * per..(i + 1) * per).collect();
        Ok((self.0.select_rows(idx), self.1.select_rows(&rows)))
    }
}

const EVAL_BATCH: usize = 256;

/// Mean loss per input over the whole dataset.
pub fn eval_loss(net: &Network, data: &dyn Dataset) -> Result<f64> {
    let n = data.len();
    let mut total = 0.0;
    for start in (0..n).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
        let (x, y) = data.batch(&idx)?;
        total += net.loss(&x, &y)? * idx.len() as f64;
    }
    Ok(total / n as f64)
}

pub fn train(
    net: &mut Network,
    train: &dyn Dataset,
    dev: &dyn Dataset,
    sched: &TrainSchedule,
) -> Result<TrainOutcome> {
    train_observed(net, train, dev, sched, &mut |_, _| {})
}

/// Trains with minibatch BCE. Stops when the dev loss (or the train loss) fails to
/// improve for `patience` epochs, when the dev loss stays within `convergence_tol` for
/// `convergence_epochs` epochs, or at the epoch budget; the returned network always
/// carries the parameters of the best dev epoch. `observer` sees each finished epoch.
pub fn train_observed(
    net: &mut Network,
    data: &dyn Dataset,
    dev: &dyn Dataset,
    sched: &TrainSchedule,
    observer: &mut dyn FnMut(&EpochRecord, &Network),
) -> Result<TrainOutcome> {
    sched.validate()?;
    if data.is_empty() || dev.is_empty() {
        return Err(Error::InvalidInput(
            "training and development sets must be non-empty".into(),
        ));
    }
    let n = data.len();
    let mut st = OptState {
        m: net
            .params
            .items
            .iter()
            .map(|p| vec![0.0; p.value.data().len()])
            .collect(),
        v: net
            .params
            .items
            .iter()
            .map(|p| vec![0.0; p.value.data().len()])
            .collect(),
        t: vec![0; net.params.items.len()],
    };
    let mut dev_stop = EarlyStopper::new(
        sched.patience,
        sched.convergence_tol,
        sched.convergence_epochs,
    );
    let mut train_stop = EarlyStopper::new(sched.patience, 0.0, 0);
    let mut best = net.params.clone();
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=sched.max_epochs {
        let factor = sched.fine_tune.map_or(1.0, |f| f.backbone_factor(epoch));
        let mut order: Vec<usize> = (0..n).collect();
        if sched.batch_size < n {
            order.shuffle(&mut rng_for(sched.seed, "neural.shuffle", epoch as u64));
        }
        let mut drop_rng = rng_for(sched.seed, "neural.dropout", epoch as u64);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(sched.batch_size).enumerate() {
            let (xb, yb) = data.batch(idx)?;
            let (loss, g) = net.loss_and_grad(&xb, &yb, Some(&mut drop_rng))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, batch {b} (lr {}, backbone factor {factor})",
                    sched.lr
                )));
            }
            sum += loss * idx.len() as f64;
            step(net, &mut st, sched.optimizer, &g, sched.lr, factor);
        }
        let train_loss = sum / n as f64;
        let dev_loss = eval_loss(net, dev)?;
        if !dev_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite development loss at epoch {epoch}"
            )));
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            backbone_factor: factor,
        };
        log::debug!("epoch {epoch}: train {train_loss:.6} dev {dev_loss:.6}");
        observer(&rec, net);
        history.push(rec);
        let dev_verdict = dev_stop.observe(dev_loss);
        if dev_stop.best_epoch() == epoch {
            best = net.params.clone();
        }
        let verdict = dev_verdict.or_else(|| {
            train_stop
                .observe(train_loss)
                .map(|_| StopReason::Diverged {
                    best_epoch: dev_stop.best_epoch(),
                })
        });
        if let Some(v) = verdict {
            stop = v;
            break;
        }
    }
    net.params = best;
    Ok(TrainOutcome {
        history,
        best_epoch: dev_stop.best_epoch(),
        stop,
    })
}

pub fn write_loss_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    crate::io::write_csv_atomic(path, |w| {
        w.write_record(["epoch", "train_loss", "dev_loss"])?;
        for r in history {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.dev_loss.to_string(),
            ])?;
        }
        Ok(())
    })
}
