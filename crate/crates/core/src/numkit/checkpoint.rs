//! Binary parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! b"DAGCOMM1"  u32 version  u32 n_networks
//! per network:  u32 n_layers
//!   per layer:  u32 rows  u32 cols  u8 activation
//!               rows*cols f64 weights (row-major)  rows f64 biases
//! u32 metadata_len  metadata_len bytes of UTF-8 (JSON by convention)
//! ```

use std::io::{Read, Write};

use super::mat::Mat;
use super::mlp::{Activation, Layer, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DAGCOMM1";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, nets: &[&Mlp], metadata: &str) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, nets.len() as u32)?;
    for net in nets {
        put_u32(&mut w, net.layers().len() as u32)?;
        for layer in net.layers() {
            put_u32(&mut w, layer.weight.rows() as u32)?;
            put_u32(&mut w, layer.weight.cols() as u32)?;
            w.write_all(&[layer.activation.tag()])?;
            for v in layer.weight.as_slice().iter().chain(&layer.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    put_u32(&mut w, metadata.len() as u32)?;
    w.write_all(metadata.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Vec<Mlp>, String)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n_nets = get_u32(&mut r)? as usize;
    let mut nets = Vec::with_capacity(n_nets.min(64));
    for _ in 0..n_nets {
        let n_layers = get_u32(&mut r)? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let rows = get_u32(&mut r)? as usize;
            let cols = get_u32(&mut r)? as usize;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(truncated)?;
            let activation = Activation::from_tag(tag[0])
                .ok_or_else(|| Error::Format(format!("unknown activation tag {}", tag[0])))?;
            let weights = get_f64s(&mut r, rows * cols)?;
            let bias = get_f64s(&mut r, rows)?;
            layers.push(Layer {
                weight: Mat::from_vec(rows, cols, weights)?,
                bias,
                activation,
            });
        }
        nets.push(Mlp::from_layers(layers).map_err(|e| Error::Format(e.to_string()))?);
    }
    let meta_len = get_u32(&mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta).map_err(truncated)?;
    let meta = String::from_utf8(meta).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    Ok((nets, meta))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint truncated".into())
    } else {
        Error::Io(e)
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(truncated)?;
        let v = f64::from_le_bytes(b);
        if !v.is_finite() {
            return Err(Error::Format("non-finite parameter in checkpoint".into()));
        }
        out.push(v);
    }
    Ok(out)
}
