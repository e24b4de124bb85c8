//! Little-endian binary containers shared by every on-disk artifact.
//!
//! `BGT1` tensor layout: magic, `u8` rank, `rank` x `u32` dims, then the
//! elements as `f32`, row-major with the last axis fastest.

use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const TENSOR_MAGIC: &[u8; 4] = b"BGT1";

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            dims,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let expected: usize = self.dims.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor dims {:?} hold {} elements, data has {}",
                self.dims,
                expected,
                self.data.len()
            )));
        }
        w.write_all(TENSOR_MAGIC)?;
        let rank = u8::try_from(self.dims.len())
            .map_err(|_| Error::ShapeMismatch(format!("rank {} too large", self.dims.len())))?;
        write_u8(w, rank)?;
        for &d in &self.dims {
            write_u32(w, d as u32)?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, TENSOR_MAGIC, "BGT1 tensor")?;
        let rank = read_u8(r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(r)? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format {
                what: "BGT1 tensor",
                detail: format!("dims {dims:?} overflow"),
            })?;
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

pub fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4], what: &'static str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format {
            what,
            detail: format!("bad magic {:?}", String::from_utf8_lossy(&m)),
        });
    }
    Ok(())
}

pub fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    Ok(read_array::<_, 1>(r)?[0])
}

pub fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    Ok(f32::from_le_bytes(read_array(r)?))
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

/// Reads the 4-byte magic at the start of a file without consuming the reader.
pub fn sniff_magic(bytes: &[u8]) -> Option<[u8; 4]> {
    bytes.get(..4).map(|m| [m[0], m[1], m[2], m[3]])
}
