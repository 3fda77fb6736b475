use serde::{Deserialize, Serialize};

use super::layers::{
    add, normal, Activation, Attention, AttentionTape, Grads, LayerNorm, Linear, Params,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Patch edge, in mel bins and in frames.
pub const PATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AstHead {
    /// One output per window from a prepended learned token.
    #[default]
    Cls,
    /// One output per temporal patch column.
    Seq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchPadding {
    /// Repeat the last frame up to a multiple of the patch length.
    #[default]
    Repeat,
    /// Drop trailing frames.
    Truncate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AstConfig {
    /// Temporal patch columns per window; the window spans `16 * window_tokens` frames.
    pub window_tokens: usize,
    pub embed: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub head: AstHead,
    pub positional: bool,
    pub padding: PatchPadding,
}

impl Default for AstConfig {
    fn default() -> Self {
        Self {
            window_tokens: 16,
            embed: 192,
            layers: 3,
            heads: 3,
            mlp_ratio: 4,
            head: AstHead::Cls,
            positional: true,
            padding: PatchPadding::Repeat,
        }
    }
}

impl AstConfig {
    pub fn validate(&self, bins: usize) -> Result<()> {
        if bins == 0 || bins % PATCH != 0 {
            return Err(Error::Config(format!(
                "{bins} mel bins is not a multiple of {PATCH}"
            )));
        }
        if self.heads == 0 || self.embed % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed {} not divisible by {} heads",
                self.embed, self.heads
            )));
        }
        if self.window_tokens == 0 || self.embed == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("AST sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn context(&self) -> usize {
        self.window_tokens * PATCH
    }
}

/// Splits a `frames x bins` spectrogram into non-overlapping 16x16 patches, one row per
/// patch (256 values, frame-major), ordered by time column then mel band. Returns the
/// patch matrix and whether the input had to be padded.
pub fn patchify(spec: &Matrix, padding: PatchPadding) -> Result<(Matrix, bool)> {
    let (t, bins) = (spec.rows(), spec.cols());
    if bins == 0 || bins % PATCH != 0 {
        return Err(Error::Config(format!(
            "{bins} mel bins is not a multiple of {PATCH}"
        )));
    }
    if t == 0 {
        return Err(Error::InvalidInput("empty spectrogram".into()));
    }
    let padded = t % PATCH != 0;
    let cols = match padding {
        PatchPadding::Repeat => t.div_ceil(PATCH),
        PatchPadding::Truncate => t / PATCH,
    };
    if cols == 0 {
        return Err(Error::InvalidInput(format!(
            "{t} frames is shorter than one patch"
        )));
    }
    let bands = bins / PATCH;
    let mut out = Matrix::zeros(cols * bands, PATCH * PATCH);
    fill_patches(spec.data(), t, bins, cols, out.data_mut());
    Ok((out, padded))
}

fn fill_patches(frames: &[f64], t: usize, bins: usize, cols: usize, out: &mut [f64]) {
    let bands = bins / PATCH;
    for c in 0..cols {
        for b in 0..bands {
            let dst = &mut out[(c * bands + b) * PATCH * PATCH..][..PATCH * PATCH];
            for dt in 0..PATCH {
                let r = (c * PATCH + dt).min(t - 1);
                dst[dt * PATCH..(dt + 1) * PATCH]
                    .copy_from_slice(&frames[r * bins + b * PATCH..][..PATCH]);
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

struct BlockTape {
    x: Matrix,
    h1: Matrix,
    at: AttentionTape,
    x2: Matrix,
    h2: Matrix,
    z1: Matrix,
    a1: Matrix,
}

const ACT: Activation = Activation::Gelu;

impl Block {
    fn forward(&self, ps: &Params, x: Matrix, tokens: usize) -> (Matrix, BlockTape) {
        let h1 = self.ln1.forward(ps, &x);
        let (a, at) = self.attn.forward(ps, &h1, tokens);
        let x2 = add(&x, &a);
        let h2 = self.ln2.forward(ps, &x2);
        let z1 = self.fc1.forward(ps, &h2);
        let a1 = ACT.forward(&z1);
        let out = add(&x2, &self.fc2.forward(ps, &a1));
        (
            out,
            BlockTape {
                x,
                h1,
                at,
                x2,
                h2,
                z1,
                a1,
            },
        )
    }

    fn backward(
        &self,
        ps: &Params,
        g: &mut Grads,
        t: &BlockTape,
        dout: &Matrix,
        tokens: usize,
    ) -> Matrix {
        let da1 = self.fc2.backward(ps, g, &t.a1, dout);
        let dz1 = ACT.backward(&t.z1, &da1);
        let dh2 = self.fc1.backward(ps, g, &t.h2, &dz1);
        let dx2 = add(dout, &self.ln2.backward(ps, g, &t.x2, &dh2));
        let dh1 = self.attn.backward(ps, g, &t.h1, &t.at, &dx2, tokens);
        add(&dx2, &self.ln1.backward(ps, g, &t.x, &dh1))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Ast {
    bins: usize,
    bands: usize,
    cols: usize,
    embed: usize,
    proj: Linear,
    pos: Option<usize>,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    cls: Option<usize>,
    head: Linear,
}

struct Encoded {
    patches: Matrix,
    pre_norm: Matrix,
    last: Matrix,
    blocks: Vec<BlockTape>,
}

pub(crate) struct AstTape {
    enc: Encoded,
    pooled: Matrix,
}

impl Ast {
    pub fn build(
        cfg: &AstConfig,
        bins: usize,
        classes: usize,
        ps: &mut Params,
        rng: &mut Rng,
    ) -> Self {
        let e = cfg.embed;
        let bands = bins / PATCH;
        let cols = cfg.window_tokens;
        let proj = Linear::new(ps, "patch_embed", PATCH * PATCH, e, true, rng);
        let pos = cfg
            .positional
            .then(|| ps.add("pos_embed".into(), normal(rng, bands * cols, e, 0.02), true));
        let blocks = (0..cfg.layers)
            .map(|i| {
                let n = format!("block.{i}");
                Block {
                    ln1: LayerNorm::new(ps, &format!("{n}.ln1"), e, true),
                    attn: Attention::new(ps, &format!("{n}.attn"), e, cfg.heads, true, rng),
                    ln2: LayerNorm::new(ps, &format!("{n}.ln2"), e, true),
                    fc1: Linear::new(ps, &format!("{n}.fc1"), e, cfg.mlp_ratio * e, true, rng),
                    fc2: Linear::new(ps, &format!("{n}.fc2"), cfg.mlp_ratio * e, e, true, rng),
                }
            })
            .collect();
        let ln_f = LayerNorm::new(ps, "norm", e, true);
        let cls = (cfg.head == AstHead::Cls)
            .then(|| ps.add("cls_token".into(), normal(rng, 1, e, 0.02), false));
        let head = Linear::new(ps, "head", e, classes, false, rng);
        Self {
            bins,
            bands,
            cols,
            embed: e,
            proj,
            pos,
            blocks,
            ln_f,
            cls,
            head,
        }
    }

    fn patch_tokens(&self) -> usize {
        self.bands * self.cols
    }

    pub fn tokens(&self) -> usize {
        self.patch_tokens() + usize::from(self.cls.is_some())
    }

    pub fn outputs_per_window(&self) -> usize {
        if self.cls.is_some() {
            1
        } else {
            self.cols
        }
    }

    fn patches(&self, x: &Matrix) -> Matrix {
        let frames = self.cols * PATCH;
        let n = self.patch_tokens();
        let mut out = Matrix::zeros(x.rows() * n, PATCH * PATCH);
        for s in 0..x.rows() {
            fill_patches(
                x.row(s),
                frames,
                self.bins,
                self.cols,
                &mut out.data_mut()[s * n * PATCH * PATCH..][..n * PATCH * PATCH],
            );
        }
        out
    }

    /// Patch embeddings (projection only) for each sample, `(samples * patches) x embed`.
    pub fn patch_embeddings(&self, ps: &Params, x: &Matrix) -> Matrix {
        self.proj.forward(ps, &self.patches(x))
    }

    fn embed(&self, ps: &Params, patches: &Matrix, samples: usize) -> Matrix {
        let emb = self.proj.forward(ps, patches);
        let n = self.patch_tokens();
        let t = self.tokens();
        let off = t - n;
        let mut x = Matrix::zeros(samples * t, self.embed);
        for s in 0..samples {
            if let Some(c) = self.cls {
                x.row_mut(s * t).copy_from_slice(ps.get(c).data());
            }
            for k in 0..n {
                let dst = x.row_mut(s * t + off + k);
                dst.copy_from_slice(emb.row(s * n + k));
                if let Some(p) = self.pos {
                    for (d, v) in dst.iter_mut().zip(ps.get(p).row(k)) {
                        *d += v;
                    }
                }
            }
        }
        x
    }

    fn pool(&self, last: &Matrix, samples: usize) -> Matrix {
        let t = self.tokens();
        match self.cls {
            Some(_) => last.select_rows(&(0..samples).map(|s| s * t).collect::<Vec<_>>()),
            None => {
                let mut out = Matrix::zeros(samples * self.cols, self.embed);
                let w = 1.0 / self.bands as f64;
                for s in 0..samples {
                    for c in 0..self.cols {
                        let dst = out.row_mut(s * self.cols + c);
                        for b in 0..self.bands {
                            for (d, v) in dst.iter_mut().zip(last.row(s * t + c * self.bands + b)) {
                                *d += w * v;
                            }
                        }
                    }
                }
                out
            }
        }
    }

    fn encode(&self, ps: &Params, x: &Matrix) -> Encoded {
        let patches = self.patches(x);
        let mut h = self.embed(ps, &patches, x.rows());
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, t) = b.forward(ps, h, self.tokens());
            tapes.push(t);
            h = y;
        }
        let last = self.ln_f.forward(ps, &h);
        Encoded {
            patches,
            pre_norm: h,
            last,
            blocks: tapes,
        }
    }

    pub fn forward(&self, ps: &Params, x: &Matrix) -> (Matrix, AstTape) {
        let enc = self.encode(ps, x);
        let pooled = self.pool(&enc.last, x.rows());
        let logits = self.head.forward(ps, &pooled);
        (logits, AstTape { enc, pooled })
    }

    pub fn backward(&self, ps: &Params, g: &mut Grads, t: &AstTape, dy: &Matrix) {
        let samples = t.enc.patches.rows() / self.patch_tokens();
        let tokens = self.tokens();
        let dpooled = self.head.backward(ps, g, &t.pooled, dy);
        let mut dlast = Matrix::zeros(t.enc.last.rows(), self.embed);
        match self.cls {
            Some(_) => {
                for s in 0..samples {
                    dlast.row_mut(s * tokens).copy_from_slice(dpooled.row(s));
                }
            }
            None => {
                let w = 1.0 / self.bands as f64;
                for s in 0..samples {
                    for c in 0..self.cols {
                        let src = dpooled.row(s * self.cols + c);
                        for b in 0..self.bands {
                            for (d, v) in dlast
                                .row_mut(s * tokens + c * self.bands + b)
                                .iter_mut()
                                .zip(src)
                            {
                                *d = w * v;
                            }
                        }
                    }
                }
            }
        }
        let mut d = self.ln_f.backward(ps, g, &t.enc.pre_norm, &dlast);
        for (b, bt) in self.blocks.iter().zip(&t.enc.blocks).rev() {
            d = b.backward(ps, g, bt, &d, tokens);
        }
        let n = self.patch_tokens();
        let off = tokens - n;
        let mut demb = Matrix::zeros(samples * n, self.embed);
        for s in 0..samples {
            if let Some(c) = self.cls {
                for (a, v) in g.0[c].data_mut().iter_mut().zip(d.row(s * tokens)) {
                    *a += v;
                }
            }
            for k in 0..n {
                let src = d.row(s * tokens + off + k);
                demb.row_mut(s * n + k).copy_from_slice(src);
                if let Some(p) = self.pos {
                    for (a, v) in g.0[p].row_mut(k).iter_mut().zip(src) {
                        *a += v;
                    }
                }
            }
        }
        self.proj.backward(ps, g, &t.enc.patches, &demb);
    }

    /// Final token representations, one `tokens x embed` matrix per sample.
    pub fn representations(&self, ps: &Params, x: &Matrix) -> Vec<Matrix> {
        let last = self.encode(ps, x).last;
        let t = self.tokens();
        (0..x.rows())
            .map(|s| last.select_rows(&(s * t..(s + 1) * t).collect::<Vec<_>>()))
            .collect()
    }

    /// Attention matrices for the first sample, `[layer][head]`.
    pub fn attention(&self, ps: &Params, x: &Matrix) -> Vec<Vec<Matrix>> {
        self.encode(ps, &x.select_rows(&[0]))
            .blocks
            .into_iter()
            .map(|t| t.at.probs)
            .collect()
    }
}
