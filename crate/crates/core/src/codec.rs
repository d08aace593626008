//! Little-endian primitives shared by the wire framing and the tensor archive.

use crate::error::{Error, Result};
use crate::nn::{Precision, Scalar, Tensor};

pub const MAX_RANK: usize = 8;

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_shape(out: &mut Vec<u8>, shape: &[usize]) -> Result<()> {
    if shape.len() > MAX_RANK {
        return Err(Error::Frame(format!("rank {} exceeds {MAX_RANK}", shape.len())));
    }
    out.push(shape.len() as u8);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::Frame(format!("dimension {d} does not fit in u32")))?;
        put_u32(out, d);
    }
    Ok(())
}

/// Values as little-endian fp32, or fp64 when `wide`.
pub(crate) fn put_values<T: Scalar>(out: &mut Vec<u8>, values: &[T], wide: bool) {
    if wide {
        for v in values {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    } else {
        for v in values {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
}

pub(crate) fn is_wide<T: Scalar>() -> bool {
    T::PRECISION == Precision::Fp64
}

/// Bounds-checked cursor over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated { needed: self.pos + n, have: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()? as usize;
        if rank > MAX_RANK {
            return Err(Error::Frame(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims.contains(&0) {
            return Err(Error::Frame(format!("zero dimension in shape {dims:?}")));
        }
        Ok(dims)
    }

    pub fn tensor<T: Scalar>(&mut self, shape: &[usize], wide: bool) -> Result<Tensor<T>> {
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Frame(format!("shape {shape:?} overflows")))?;
        let width = if wide { 8 } else { 4 };
        let bytes = self.take(n.checked_mul(width).ok_or_else(|| Error::Frame("payload size overflows".into()))?)?;
        let data: Vec<T> = if wide {
            bytes.chunks_exact(8).map(|c| T::from_f64(f64::from_le_bytes(c.try_into().expect("8")))).collect()
        } else {
            bytes.chunks_exact(4).map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4")) as f64)).collect()
        };
        Tensor::new(shape, data)
    }
}
