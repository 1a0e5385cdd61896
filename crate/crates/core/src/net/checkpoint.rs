//! Binary checkpoint format.
//!
//! ```text
//! DCAN-CKPT v1\n
//! <name> <n> <c> <h> <w>\n   followed by n*c*h*w little-endian f64 values
//! ...                        one record per parameter tensor, to end of file
//! ```

use std::io::{BufRead, Write};

use super::model::DcanModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "DCAN-CKPT v1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        format: "checkpoint",
        msg: msg.into(),
    }
}

pub fn write_params<W: Write>(out: &mut W, params: &[(String, Tensor)]) -> Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    for (name, t) in params {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(bad(format!("parameter name {name:?} must be non-empty without whitespace")));
        }
        let [n, c, h, w] = t.shape();
        writeln!(out, "{name} {n} {c} {h} {w}")?;
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_params<R: BufRead>(input: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.strip_suffix('\n') != Some(CHECKPOINT_MAGIC) {
        return Err(bad(format!("missing magic line {CHECKPOINT_MAGIC:?}")));
    }
    let mut params = Vec::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let header = line
            .strip_suffix('\n')
            .ok_or_else(|| bad("truncated record header"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 5 {
            return Err(bad(format!("record header {header:?} needs a name and 4 dimensions")));
        }
        let mut shape = [0usize; 4];
        for (d, f) in shape.iter_mut().zip(&fields[1..]) {
            *d = f.parse().map_err(|_| bad(format!("bad dimension {f:?} in {header:?}")))?;
        }
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 8];
        input
            .read_exact(&mut bytes)
            .map_err(|_| bad(format!("payload of {} truncated", fields[0])))?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        params.push((fields[0].to_string(), Tensor::from_vec(shape, data)?));
    }
    Ok(params)
}

pub fn model_params(model: &DcanModel) -> Vec<(String, Tensor)> {
    model
        .params()
        .into_iter()
        .map(|p| (p.name, Tensor::from_vec(p.shape, p.values.to_vec()).expect("consistent shape")))
        .collect()
}

pub fn save_model<W: Write>(out: &mut W, model: &DcanModel) -> Result<()> {
    write_params(out, &model_params(model))
}

/// Loads a checkpoint, inferring the architecture from parameter names.
pub fn load_model<R: BufRead>(input: &mut R, input_size: usize) -> Result<DcanModel> {
    DcanModel::from_named_params(read_params(input)?, input_size)
}
