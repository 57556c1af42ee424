//! Binary checkpoint format.
//!
//! ```text
//! "ORPK" | version: u32 | vocab_size, embed_dim, hidden_dim, context_window, seed: u32
//!        | embedding | hidden_weights | hidden_bias | output_weights | output_bias
//! ```
//! All integers little-endian u32, all tensors little-endian f64, row-major.

use std::io::{Read, Write};
use std::path::Path;

use super::model::{LMConfig, TinyLM};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ORPK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::BadCheckpoint(format!("{what} does not fit in u32")))
}

pub fn write_checkpoint<W: Write>(model: &TinyLM, mut w: W) -> std::io::Result<()> {
    let c = &model.config;
    let mut buf = Vec::with_capacity(28 + 8 * c.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for field in [c.vocab_size, c.embed_dim, c.hidden_dim, c.context_window] {
        let v = to_u32(field, "config field").map_err(std::io::Error::other)?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&c.seed.to_le_bytes());
    for (_, t) in model.tensors() {
        for x in t {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<TinyLM> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    let (model, used) = decode(&bytes)?;
    if used != bytes.len() {
        return Err(Error::BadCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - used
        )));
    }
    Ok(model)
}

/// Decode a checkpoint from the front of `bytes`; returns the model and the
/// number of bytes consumed so the format can be embedded in larger files.
pub(crate) fn decode(bytes: &[u8]) -> Result<(TinyLM, usize)> {
    if bytes.get(..4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::BadCheckpoint("bad magic".into()));
    }
    let header = bytes
        .get(4..28)
        .ok_or_else(|| Error::BadCheckpoint("truncated header".into()))?;
    let field = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap());
    let version = field(0);
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let config = LMConfig {
        vocab_size: field(1) as usize,
        embed_dim: field(2) as usize,
        hidden_dim: field(3) as usize,
        context_window: field(4) as usize,
        seed: field(5),
    };
    config
        .validate()
        .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    let mut model = TinyLM::new(config)?;
    let mut pos = 28usize;
    for t in model.tensors_mut() {
        let n = t.len() * 8;
        let chunk = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::BadCheckpoint("truncated tensor data".into()))?;
        for (x, b) in t.iter_mut().zip(chunk.chunks_exact(8)) {
            *x = f64::from_le_bytes(b.try_into().unwrap());
        }
        pos += n;
    }
    Ok((model, pos))
}

pub fn save_checkpoint(model: &TinyLM, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TinyLM> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
