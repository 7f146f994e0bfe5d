//! Binary model checkpoints.
//!
//! Layout (all integers little-endian u64, all floats little-endian f64):
//!
//! ```text
//! magic "BGCKPT01" | d_in | trunk_len | trunk widths... | main slots (N+1)
//! | aux classes (0 = none) | clamp flag u8 | clamp b0 f64
//! | trunk layers (weights row-major, then biases) | main w, b | aux w, b
//! ```
//!
//! Save -> load -> save reproduces the bytes exactly.

use std::fs;
use std::path::Path;

use bgsplit_core::model::{Affine, ModelParams};

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"BGCKPT01";

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_affine(buf: &mut Vec<u8>, layer: &Affine) {
    for &w in &layer.weight {
        push_f64(buf, w);
    }
    for &b in &layer.bias {
        push_f64(buf, b);
    }
}

/// Encode a model to its checkpoint bytes.
pub fn checkpoint_to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u64(&mut buf, params.d_in as u64);
    push_u64(&mut buf, params.trunk.len() as u64);
    for layer in &params.trunk {
        push_u64(&mut buf, layer.out_dim as u64);
    }
    push_u64(&mut buf, params.main.out_dim as u64);
    push_u64(&mut buf, params.aux.as_ref().map(|a| a.out_dim).unwrap_or(0) as u64);
    buf.push(params.background_clamp.is_some() as u8);
    push_f64(&mut buf, params.background_clamp.unwrap_or(0.0));
    for layer in &params.trunk {
        push_affine(&mut buf, layer);
    }
    push_affine(&mut buf, &params.main);
    if let Some(aux) = &params.aux {
        push_affine(&mut buf, aux);
    }
    buf
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        if v > u32::MAX as u64 {
            return Err(Error::Format(format!("{what} is implausibly large: {v}")));
        }
        Ok(v as usize)
    }

    fn affine(&mut self, in_dim: usize, out_dim: usize) -> Result<Affine> {
        let mut weight = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            weight.push(self.f64()?);
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            bias.push(self.f64()?);
        }
        Ok(Affine {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }
}

/// Decode checkpoint bytes. Fails on a bad magic, truncation, or trailing
/// bytes.
pub fn checkpoint_from_bytes(data: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let d_in = r.dim("d_in")?;
    let trunk_len = r.dim("trunk length")?;
    let mut widths = Vec::with_capacity(trunk_len);
    for _ in 0..trunk_len {
        widths.push(r.dim("trunk width")?);
    }
    let main_slots = r.dim("main slots")?;
    if main_slots < 2 {
        return Err(Error::Format(format!(
            "main head needs background + foreground slots, got {main_slots}"
        )));
    }
    let aux_classes = r.dim("aux classes")?;
    let clamp_flag = r.take(1)?[0];
    let b0 = r.f64()?;

    let mut trunk = Vec::with_capacity(trunk_len);
    let mut prev = d_in;
    for &w in &widths {
        trunk.push(r.affine(prev, w)?);
        prev = w;
    }
    let main = r.affine(prev, main_slots)?;
    let aux = if aux_classes > 0 {
        Some(r.affine(prev, aux_classes)?)
    } else {
        None
    };
    if r.pos != data.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            data.len() - r.pos
        )));
    }
    Ok(ModelParams {
        d_in,
        trunk,
        main,
        aux,
        background_clamp: (clamp_flag != 0).then_some(b0),
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_bytes(params)).map_err(Error::io(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(Error::io(path))?;
    checkpoint_from_bytes(&data)
}
