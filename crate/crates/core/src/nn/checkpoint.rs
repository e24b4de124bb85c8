//! `BGNN` checkpoints: magic, `u16` version, input shape, layer table,
//! then each parameterized layer's weight and bias as `BGT1` tensors.

use super::layers::{LayerSpec, Shape};
use super::network::Network;
use crate::error::{Error, Result};
use crate::format::{self, expect_magic, RawTensor};
use std::io::{Read, Write};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BGNN";
pub const CHECKPOINT_VERSION: u16 = 1;

fn bad(detail: String) -> Error {
    Error::Format { what: "BGNN checkpoint", detail }
}

pub fn write_checkpoint<W: Write>(w: &mut W, net: &Network) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    format::write_u16(w, CHECKPOINT_VERSION)?;
    match net.input {
        Shape::Volume { channels, dims } => {
            format::write_u8(w, 0)?;
            for v in [channels, dims[0], dims[1], dims[2]] {
                format::write_u32(w, v as u32)?;
            }
        }
        Shape::Flat(n) => {
            format::write_u8(w, 1)?;
            format::write_u32(w, n as u32)?;
        }
    }
    format::write_u32(w, net.layers.len() as u32)?;
    for l in &net.layers {
        let (tag, fields): (u8, Vec<usize>) = match *l {
            LayerSpec::Conv3d { in_channels, out_channels, kernel } => {
                (0, vec![in_channels, out_channels, kernel[0], kernel[1], kernel[2]])
            }
            LayerSpec::Fc { in_width, out_width } => (1, vec![in_width, out_width]),
            LayerSpec::Relu => (2, vec![]),
            LayerSpec::Flatten => (3, vec![]),
            LayerSpec::ConcatAux { width } => (4, vec![width]),
            LayerSpec::SoftmaxCe => (5, vec![]),
        };
        format::write_u8(w, tag)?;
        for f in fields {
            format::write_u32(w, f as u32)?;
        }
    }
    for (l, p) in net.layers.iter().zip(&net.params) {
        if let Some(p) = p {
            let wdims = match *l {
                LayerSpec::Conv3d { in_channels, out_channels, kernel } => {
                    vec![out_channels, in_channels, kernel[0], kernel[1], kernel[2]]
                }
                LayerSpec::Fc { in_width, out_width } => vec![out_width, in_width],
                _ => unreachable!(),
            };
            RawTensor::from_f64(wdims, &p.weight).write_to(w)?;
            RawTensor::from_f64(vec![p.bias.len()], &p.bias).write_to(w)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Network> {
    expect_magic(r, CHECKPOINT_MAGIC, "BGNN checkpoint")?;
    let version = format::read_u16(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let u = |r: &mut R| -> Result<usize> { Ok(format::read_u32(r)? as usize) };
    let input = match format::read_u8(r)? {
        0 => Shape::Volume { channels: u(r)?, dims: [u(r)?, u(r)?, u(r)?] },
        1 => Shape::Flat(u(r)?),
        t => return Err(bad(format!("unknown input shape tag {t}"))),
    };
    let count = u(r)?;
    let mut layers = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let layer = match format::read_u8(r)? {
            0 => LayerSpec::Conv3d { in_channels: u(r)?, out_channels: u(r)?, kernel: [u(r)?, u(r)?, u(r)?] },
            1 => LayerSpec::Fc { in_width: u(r)?, out_width: u(r)? },
            2 => LayerSpec::Relu,
            3 => LayerSpec::Flatten,
            4 => LayerSpec::ConcatAux { width: u(r)? },
            5 => LayerSpec::SoftmaxCe,
            t => return Err(bad(format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    let mut net = Network::new(input, layers, 0)?;
    for p in net.params.iter_mut().flatten() {
        let w = RawTensor::read_from(r)?;
        let b = RawTensor::read_from(r)?;
        if w.data.len() != p.weight.len() || b.data.len() != p.bias.len() {
            return Err(bad(format!(
                "parameter sizes {}/{} do not match layer {}/{}",
                w.data.len(),
                b.data.len(),
                p.weight.len(),
                p.bias.len()
            )));
        }
        p.weight = w.to_f64();
        p.bias = b.to_f64();
    }
    Ok(net)
}
