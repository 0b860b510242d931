//! Network checkpoints.
//!
//! ```text
//! magic   "C2CK"
//! u32     header length in bytes
//! header  UTF-8 `[network]` section
//! records one C2C1 tensor per array: for each conv its weight [out, in, k, k]
//!         and bias [out] if present; for each BN layer gamma, beta,
//!         running_mean, running_var, all [features]
//! ```
//!
//! Values are stored as f32, so a reloaded network matches the saved one to
//! single precision, and a second save of a reloaded network is byte-identical.

use std::fs;
use std::path::Path;

use super::config::{network_text, parse_network};
use super::container::{Reader, StoredTensor, TensorData};
use crate::error::{Error, Result};
use crate::neural::{BatchNormLayer, ConvLayer, NetworkParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"C2CK";

pub fn checkpoint_bytes(params: &NetworkParams) -> Vec<u8> {
    let header = network_text(params.config());
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let mut push = |dims: Vec<usize>, values: &[f64]| {
        StoredTensor::from_reals(dims, values)
            .expect("layer shapes are consistent")
            .encode(&mut out)
    };
    for conv in params.convs() {
        let k = conv.kernel;
        push(
            vec![conv.out_channels, conv.in_channels, k, k],
            &conv.weight,
        );
        if let Some(b) = &conv.bias {
            push(vec![conv.out_channels], b);
        }
    }
    for bn in params.norms() {
        for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
            push(vec![bn.channels()], v);
        }
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<NetworkParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let len = u32::from_le_bytes(r.array()?) as usize;
    let header = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    let config = parse_network(header)?;
    config.validate()?;

    let mut next = |want: &[usize]| -> Result<Vec<f64>> {
        let (t, used) = StoredTensor::decode(&bytes[r.pos..])?;
        r.pos += used;
        if t.dims() != want {
            return Err(Error::dims(want, t.dims()));
        }
        if !matches!(t.data(), TensorData::Real(_)) {
            return Err(Error::Format("checkpoint tensors must be real".into()));
        }
        t.reals()
    };

    let (d, f, k) = (config.depth, config.features, config.kernel);
    let mut convs = Vec::with_capacity(d);
    for l in 0..d {
        let cin = if l == 0 { 1 } else { f };
        let cout = if l == d - 1 { 1 } else { f };
        let weight = next(&[cout, cin, k, k])?;
        let bias = if l == 0 || l == d - 1 {
            Some(next(&[cout])?)
        } else {
            None
        };
        convs.push(ConvLayer {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            weight,
            bias,
        });
    }
    let mut norms = Vec::with_capacity(d - 2);
    for _ in 1..d - 1 {
        norms.push(BatchNormLayer {
            gamma: next(&[f])?,
            beta: next(&[f])?,
            running_mean: next(&[f])?,
            running_var: next(&[f])?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes in checkpoint",
            bytes.len() - r.pos
        )));
    }
    NetworkParams::from_parts(config, convs, norms)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &NetworkParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
