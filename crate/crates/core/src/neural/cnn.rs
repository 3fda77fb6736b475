use serde::{Deserialize, Serialize};

use super::layers::{
    dropout, dropout_backward, Activation, Conv2d, Grads, Linear, MaxPool, Params,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Max-pool window after the convolution; 0 or 1 disables pooling.
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    /// Feature frames per input window.
    pub context: usize,
    pub convs: Vec<ConvSpec>,
    pub fc: Vec<usize>,
    pub dropout: f64,
}

impl Default for CnnConfig {
    /// Five-convolution AlexNet-style stack, about 1M parameters on a 64-bin 2.5 s window.
    fn default() -> Self {
        let c = |channels, kernel, stride, pool| ConvSpec {
            channels,
            kernel,
            stride,
            pool,
        };
        Self {
            context: 251,
            convs: vec![
                c(32, 5, 2, 2),
                c(64, 3, 1, 2),
                c(96, 3, 1, 0),
                c(96, 3, 1, 0),
                c(64, 3, 1, 2),
            ],
            fc: vec![192, 192],
            dropout: 0.1,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self, bins: usize) -> Result<()> {
        if self.context == 0 || self.fc.contains(&0) {
            return Err(Error::Config(
                "CNN widths and context must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        let (mut h, mut w) = (self.context, bins);
        for (i, c) in self.convs.iter().enumerate() {
            if c.channels == 0 || c.kernel == 0 || c.stride == 0 {
                return Err(Error::Config(format!(
                    "conv {i}: channels, kernel and stride must be at least 1"
                )));
            }
            let pad = c.kernel / 2;
            if h + 2 * pad < c.kernel || w + 2 * pad < c.kernel {
                return Err(Error::Config(format!(
                    "conv {i}: kernel {} larger than input {h}x{w}",
                    c.kernel
                )));
            }
            h = (h + 2 * pad - c.kernel) / c.stride + 1;
            w = (w + 2 * pad - c.kernel) / c.stride + 1;
            if c.pool > 1 {
                h /= c.pool;
                w /= c.pool;
            }
            if h == 0 || w == 0 {
                return Err(Error::Config(format!(
                    "conv {i}: spatial size collapses to {h}x{w}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Cnn {
    convs: Vec<(Conv2d, Option<MaxPool>)>,
    fc: Vec<Linear>,
    p: f64,
}

pub(crate) struct CnnTape {
    conv_in: Vec<Matrix>,
    conv_pre: Vec<Matrix>,
    pool_arg: Vec<Option<Vec<u32>>>,
    fc_in: Vec<Matrix>,
    fc_pre: Vec<Matrix>,
    masks: Vec<Option<Vec<f64>>>,
}

const ACT: Activation = Activation::Relu;

impl Cnn {
    pub fn build(
        cfg: &CnnConfig,
        frames: usize,
        bins: usize,
        classes: usize,
        ps: &mut Params,
        rng: &mut Rng,
    ) -> Self {
        let mut shape = (1, frames, bins);
        let mut convs = Vec::new();
        for (i, c) in cfg.convs.iter().enumerate() {
            let conv = Conv2d::new(
                ps,
                &format!("conv.{i}"),
                shape,
                c.channels,
                c.kernel,
                c.stride,
                true,
                rng,
            );
            shape = (c.channels, conv.ho, conv.wo);
            let pool = (c.pool > 1).then(|| MaxPool::new(shape, c.pool));
            if let Some(p) = &pool {
                shape = (c.channels, p.ho, p.wo);
            }
            convs.push((conv, pool));
        }
        let mut dims = vec![shape.0 * shape.1 * shape.2];
        dims.extend(&cfg.fc);
        let n = dims.len();
        let mut fc: Vec<Linear> = (0..n - 1)
            .map(|i| Linear::new(ps, &format!("fc.{i}"), dims[i], dims[i + 1], true, rng))
            .collect();
        fc.push(Linear::new(ps, "head", dims[n - 1], classes, false, rng));
        Self {
            convs,
            fc,
            p: cfg.dropout,
        }
    }

    pub fn forward(&self, ps: &Params, x: &Matrix, mut rng: Option<&mut Rng>) -> (Matrix, CnnTape) {
        let mut t = CnnTape {
            conv_in: Vec::new(),
            conv_pre: Vec::new(),
            pool_arg: Vec::new(),
            fc_in: Vec::new(),
            fc_pre: Vec::new(),
            masks: Vec::new(),
        };
        let mut h = x.clone();
        for (conv, pool) in &self.convs {
            let z = conv.forward(ps, &h);
            t.conv_in.push(h);
            let a = ACT.forward(&z);
            t.conv_pre.push(z);
            h = match pool {
                Some(p) => {
                    let (y, arg) = p.forward(&a);
                    t.pool_arg.push(Some(arg));
                    y
                }
                None => {
                    t.pool_arg.push(None);
                    a
                }
            };
        }
        let last = self.fc.len() - 1;
        for (i, l) in self.fc.iter().enumerate() {
            let z = l.forward(ps, &h);
            t.fc_in.push(h);
            if i == last {
                return (z, t);
            }
            let a = ACT.forward(&z);
            t.fc_pre.push(z);
            h = match rng.as_deref_mut() {
                Some(r) if self.p > 0.0 => {
                    let (a, m) = dropout(&a, self.p, r);
                    t.masks.push(Some(m));
                    a
                }
                _ => {
                    t.masks.push(None);
                    a
                }
            };
        }
        unreachable!("a CNN always has an output layer")
    }

    pub fn backward(&self, ps: &Params, g: &mut Grads, t: &CnnTape, dy: &Matrix) {
        let mut d = dy.clone();
        for i in (0..self.fc.len()).rev() {
            d = self.fc[i].backward(ps, g, &t.fc_in[i], &d);
            if i > 0 {
                let da = match &t.masks[i - 1] {
                    Some(m) => dropout_backward(&d, m),
                    None => d,
                };
                d = ACT.backward(&t.fc_pre[i - 1], &da);
            }
        }
        for i in (0..self.convs.len()).rev() {
            let (conv, pool) = &self.convs[i];
            let da = match (pool, &t.pool_arg[i]) {
                (Some(p), Some(arg)) => p.backward(arg, &d),
                _ => d,
            };
            let dz = ACT.backward(&t.conv_pre[i], &da);
            d = conv.backward(ps, g, &t.conv_in[i], &dz);
        }
    }
}
