//! Binary adapter files.
//!
//! Layout, all little-endian: the 4-byte magic `ECC3`, `u32` format version,
//! `u32` input mode (0 probabilities, 1 log-probabilities), `u32` number of
//! layer dims, the dims as `u32`, then for each layer its row-major
//! `out x in` weights followed by its biases as `f64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{AdapterParams, InputMode, Layer};

pub const MAGIC: &[u8; 4] = b"ECC3";
pub const FORMAT_VERSION: u32 = 1;

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

pub fn write_adapter(params: &AdapterParams, mut w: impl Write) -> Result<()> {
    params.validate()?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let mode: u32 = match params.input {
        InputMode::Probs => 0,
        InputMode::LogProbs => 1,
    };
    w.write_all(&mode.to_le_bytes())?;
    let dims = params.layer_dims();
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in &dims {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for l in &params.layers {
        for v in l.weights.iter().chain(&l.biases) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).or_else(|_| fmt_err("truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_adapter(mut r: impl Read) -> Result<AdapterParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).or_else(|_| fmt_err("file shorter than the magic"))?;
    if &magic != MAGIC {
        return fmt_err(format!("bad magic {magic:?}"));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return fmt_err(format!("unsupported format version {version}"));
    }
    let input = match read_u32(&mut r)? {
        0 => InputMode::Probs,
        1 => InputMode::LogProbs,
        m => return fmt_err(format!("unknown input mode {m}")),
    };
    let n_dims = read_u32(&mut r)? as usize;
    if !(2..=64).contains(&n_dims) {
        return fmt_err(format!("implausible layer count {n_dims}"));
    }
    let dims = (0..n_dims).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in dims.windows(2) {
        let mut layer = Layer::zeros(w[0], w[1]);
        for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).or_else(|_| fmt_err("truncated parameters"))?;
            *v = f64::from_le_bytes(b);
        }
        layers.push(layer);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return fmt_err("trailing bytes after parameters");
    }
    AdapterParams::from_layers(input, layers).map_err(|e| Error::Format(e.to_string()))
}
