//! Token views over pair activations and the raw tensor dump format.
//!
//! A dump is a 16-byte header (`b"AAQT"`, `u32` Ns, `u32` Hz, `u32` reserved)
//! followed by `Ns * Ns * Hz` little-endian `f64` values in row-major
//! `(i, j, channel)` order.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fixed::{from_fixed, to_fixed, FixedPointFormat, DEFAULT_FRAC_BITS};

/// Default hidden dimension of the pair representation.
pub const DEFAULT_HZ: usize = 128;

pub const TENSOR_MAGIC: [u8; 4] = *b"AAQT";
pub const TENSOR_HEADER_BYTES: usize = 16;

/// One `(1, 1, Hz)` slice of the pair tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVector(Vec<f64>);

impl TokenVector {
    /// Rejects NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(hz: usize) -> Self {
        Self(vec![0.0; hz])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for TokenVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Which dataflow edge a tensor stands for. Free-form, carried for reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoleTag(pub String);

/// Dense `(Ns, Ns, Hz)` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    ns: usize,
    hz: usize,
    data: Vec<f64>,
    pub role: RoleTag,
}

impl ActivationTensor {
    pub fn new(ns: usize, hz: usize, data: Vec<f64>) -> Result<Self> {
        if ns == 0 || hz == 0 {
            return Err(Error::contract("tensor dimensions must be positive"));
        }
        if data.len() != ns * ns * hz {
            return Err(Error::contract(format!(
                "expected {} elements for ({ns},{ns},{hz}), got {}",
                ns * ns * hz,
                data.len()
            )));
        }
        Ok(Self {
            ns,
            hz,
            data,
            role: RoleTag::default(),
        })
    }

    pub fn zeros(ns: usize, hz: usize) -> Self {
        Self::new(ns, hz, vec![0.0; ns * ns * hz]).expect("valid dims")
    }

    pub fn with_role(mut self, role: &str) -> Self {
        self.role = RoleTag(role.to_string());
        self
    }

    pub fn ns(&self) -> usize {
        self.ns
    }

    pub fn hz(&self) -> usize {
        self.hz
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn token(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * self.ns + j) * self.hz;
        &self.data[off..off + self.hz]
    }

    pub fn token_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let off = (i * self.ns + j) * self.hz;
        &mut self.data[off..off + self.hz]
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.ns + j) * self.hz + c]
    }

    /// Tokens in row-major `(i, j)` order.
    pub fn token_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.hz)
    }

    /// Reassembles a tensor from `Ns^2` tokens in row-major order.
    pub fn from_tokens<I>(ns: usize, hz: usize, tokens: I) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: AsRef<[f64]>,
    {
        let mut data = Vec::with_capacity(ns * ns * hz);
        for t in tokens {
            let t = t.as_ref();
            if t.len() != hz {
                return Err(Error::contract(format!("token length {} != Hz {hz}", t.len())));
            }
            data.extend_from_slice(t);
        }
        Self::new(ns, hz, data)
    }

    /// Swaps the two sequence axes: `out[i, j] = self[j, i]`.
    pub fn transposed(&self) -> Self {
        let mut out = Self::zeros(self.ns, self.hz);
        for i in 0..self.ns {
            for j in 0..self.ns {
                out.token_mut(i, j).copy_from_slice(self.token(j, i));
            }
        }
        out.role = self.role.clone();
        out
    }

    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = [0u8; TENSOR_HEADER_BYTES];
        header[..4].copy_from_slice(&TENSOR_MAGIC);
        header[4..8].copy_from_slice(&(self.ns as u32).to_le_bytes());
        header[8..12].copy_from_slice(&(self.hz as u32).to_le_bytes());
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_dump_bytes(&bytes)
    }

    pub fn from_dump_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < TENSOR_HEADER_BYTES {
            return Err(Error::corrupt(bytes.len(), "truncated tensor header"));
        }
        if bytes[..4] != TENSOR_MAGIC {
            return Err(Error::corrupt(0, "bad tensor magic"));
        }
        let ns = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let hz = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if ns == 0 || hz == 0 {
            return Err(Error::corrupt(4, "zero dimension in tensor header"));
        }
        let expected = ns
            .checked_mul(ns)
            .and_then(|n| n.checked_mul(hz))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::corrupt(4, "tensor dimensions overflow"))?;
        let payload = &bytes[TENSOR_HEADER_BYTES..];
        if payload.len() != expected {
            return Err(Error::corrupt(
                TENSOR_HEADER_BYTES + payload.len().min(expected),
                format!("payload is {} bytes, header implies {expected}", payload.len()),
            ));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(ns, hz, data)
    }
}

/// Row-major `(in, out)` weights stored as 16-bit fixed point with a shared
/// number of fractional bits.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    frac_bits: u32,
    data: Vec<i16>,
}

impl WeightMatrix {
    pub fn from_f64(rows: usize, cols: usize, values: &[f64], frac_bits: u32) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::contract("weight element count mismatch"));
        }
        let data = values
            .iter()
            .map(|&v| to_fixed(v, FixedPointFormat::INT16, frac_bits) as i16)
            .collect();
        Ok(Self {
            rows,
            cols,
            frac_bits,
            data,
        })
    }

    pub fn q8_8(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::from_f64(rows, cols, values, DEFAULT_FRAC_BITS)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn raw(&self, r: usize, c: usize) -> i16 {
        self.data[r * self.cols + c]
    }

    pub fn value(&self, r: usize, c: usize) -> f64 {
        from_fixed(self.raw(r, c) as i32, self.frac_bits)
    }

    /// Real-valued column `c`, length `rows`.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.value(r, c)).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|&v| from_fixed(v as i32, self.frac_bits))
            .collect()
    }
}
