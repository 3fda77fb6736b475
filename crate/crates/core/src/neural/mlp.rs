use serde::{Deserialize, Serialize};

use super::layers::{dropout, dropout_backward, Activation, Grads, Linear, Params};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    /// Feature frames per input window.
    pub context: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            context: 51,
            hidden: vec![256, 256],
            dropout: 0.1,
            activation: Activation::Relu,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "MLP widths and context must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    layers: Vec<Linear>,
    act: Activation,
    p: f64,
}

pub(crate) struct MlpTape {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Mlp {
    pub fn build(
        cfg: &MlpConfig,
        input: usize,
        classes: usize,
        ps: &mut Params,
        rng: &mut Rng,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend(&cfg.hidden);
        let n = dims.len();
        let mut layers: Vec<Linear> = (0..n - 1)
            .map(|i| Linear::new(ps, &format!("mlp.{i}"), dims[i], dims[i + 1], true, rng))
            .collect();
        layers.push(Linear::new(ps, "head", dims[n - 1], classes, false, rng));
        Self {
            layers,
            act: cfg.activation,
            p: cfg.dropout,
        }
    }

    pub fn forward(&self, ps: &Params, x: &Matrix, mut rng: Option<&mut Rng>) -> (Matrix, MlpTape) {
        let mut tape = MlpTape {
            inputs: Vec::new(),
            pre: Vec::new(),
            masks: Vec::new(),
        };
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.forward(ps, &h);
            tape.inputs.push(h);
            if i == last {
                return (z, tape);
            }
            let a = self.act.forward(&z);
            tape.pre.push(z);
            h = match rng.as_deref_mut() {
                Some(r) if self.p > 0.0 => {
                    let (a, m) = dropout(&a, self.p, r);
                    tape.masks.push(Some(m));
                    a
                }
                _ => {
                    tape.masks.push(None);
                    a
                }
            };
        }
        unreachable!("an MLP always has an output layer")
    }

    pub fn backward(&self, ps: &Params, g: &mut Grads, tape: &MlpTape, dy: &Matrix) {
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let dx = self.layers[i].backward(ps, g, &tape.inputs[i], &d);
            if i == 0 {
                break;
            }
            let da = match &tape.masks[i - 1] {
                Some(m) => dropout_backward(&dx, m),
                None => dx,
            };
            d = self.act.backward(&tape.pre[i - 1], &da);
        }
    }
}
