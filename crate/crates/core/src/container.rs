//! `EMD1` model container shared by shallow and neural models.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "EMD1"
//! kind_len  kind (utf-8)
//! hyper_len hyperparameters (utf-8 JSON)
//! n_blocks
//! repeated n_blocks times:
//!     name_len name (utf-8)
//!     n_dims dims[n_dims]
//!     prod(dims) little-endian f64 values
//! ```
//!
//! Decoding is all-or-nothing: a truncated or trailing-garbage file is rejected before
//! any block is handed to a model.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMD1";

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Block {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Self {
        let b = Self {
            name: name.into(),
            dims,
            values,
        };
        debug_assert_eq!(b.dims.iter().product::<usize>(), b.values.len());
        b
    }

    pub fn vector(name: impl Into<String>, values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(name, vec![n], values)
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, vec![1], vec![value])
    }

    pub fn matrix(name: impl Into<String>, m: &crate::matrix::Matrix) -> Self {
        Self::new(name, vec![m.rows(), m.cols()], m.data().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub hyper: String,
    pub blocks: Vec<Block>,
}

impl Container {
    pub fn new<H: Serialize>(kind: impl Into<String>, hyper: &H) -> Result<Self> {
        Ok(Self {
            kind: kind.into(),
            hyper: serde_json::to_string(hyper)?,
            blocks: Vec::new(),
        })
    }

    pub fn push(&mut self, block: Block) {
        self.blocks.push(block);
    }

    pub fn hyper<H: DeserializeOwned>(&self) -> Result<H> {
        Ok(serde_json::from_str(&self.hyper)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a `{kind}` container, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("missing block `{name}`")))
    }

    /// Like [`Container::block`] but also checks the stored shape.
    pub fn block_shaped(&self, name: &str, dims: &[usize]) -> Result<&Block> {
        let b = self.block(name)?;
        if b.dims != dims {
            return Err(Error::Topology(vec![format!(
                "block `{name}`: stored shape {:?}, expected {:?}",
                b.dims, dims
            )]));
        }
        Ok(b)
    }

    pub fn matrix(&self, name: &str) -> Result<crate::matrix::Matrix> {
        let b = self.block(name)?;
        if b.dims.len() != 2 {
            return Err(Error::Format(format!("block `{name}` is not a matrix")));
        }
        crate::matrix::Matrix::from_vec(b.dims[0], b.dims[1], b.values.clone())
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.block(name)?.values.clone())
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let b = self.block(name)?;
        b.values
            .first()
            .copied()
            .ok_or_else(|| Error::Format(format!("block `{name}` is empty")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.hyper);
        put_u32(&mut out, self.blocks.len());
        for b in &self.blocks {
            put_str(&mut out, &b.name);
            put_u32(&mut out, b.dims.len());
            for &d in &b.dims {
                put_u32(&mut out, d);
            }
            for v in &b.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not an EMD1 container".into()));
        }
        let kind = cur.string()?;
        let hyper = cur.string()?;
        let n_blocks = cur.u32()?;
        let mut blocks = Vec::with_capacity(n_blocks.min(1 << 16));
        for _ in 0..n_blocks {
            let name = cur.string()?;
            let n_dims = cur.u32()?;
            if n_dims > 8 {
                return Err(Error::Format(format!(
                    "block `{name}` claims {n_dims} dimensions"
                )));
            }
            let mut dims = Vec::with_capacity(n_dims);
            for _ in 0..n_dims {
                dims.push(cur.u32()?);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("block `{name}` size overflows")))?;
            let raw = cur.take(
                count
                    .checked_mul(8)
                    .ok_or_else(|| Error::Format("block too large".into()))?,
            )?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            blocks.push(Block { name, dims, values });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last block",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self {
            kind,
            hyper,
            blocks,
        })
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated container at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format("non utf-8 string".into()))
    }
}
