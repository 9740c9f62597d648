//! Bit-exact storage layout of quantized tokens.
//!
//! A token is laid out as inlier codes (two's complement, packed low nibble
//! first for 4-bit codes), then `k` little-endian Q8.8 outliers, then the
//! binary16 scale, then `k` one-byte outlier indices. Each token is padded to a
//! whole byte.
//!
//! A block groups tokens that share one scheme:
//!
//! ```text
//! 0      magic 0xA9
//! 1      scheme id: bit 7 set for 8-bit inliers, bits 0..7 hold k
//! 2..4   token count, u16 LE
//! 4      number of zero pad bytes at the end of the block
//! 5..7   Hz, u16 LE
//! 7      reserved, 0
//! 8..    token payloads, then zero padding up to the transaction width
//! ```

use half::f16;

use super::scheme::{QuantScheme, OUTLIER_BITS};
use super::token::QuantizedToken;
use crate::error::{Error, Result};

pub const BLOCK_MAGIC: u8 = 0xA9;
pub const BLOCK_HEADER_BYTES: usize = 8;
pub const DEFAULT_TXN_BYTES: usize = 64;

const SCALE_BITS: usize = 16;
const INDEX_BITS: usize = 8;

/// Unpadded bit size of one token.
pub fn token_bits(scheme: &QuantScheme, hz: usize) -> usize {
    let k = scheme.outlier_count;
    (hz - k) * scheme.inlier_bits as usize + k * OUTLIER_BITS as usize + SCALE_BITS + k * INDEX_BITS
}

/// Byte-aligned size of one token.
pub fn token_bytes(scheme: &QuantScheme, hz: usize) -> usize {
    token_bits(scheme, hz).div_ceil(8)
}

/// Size of an encoded block holding `tokens` tokens, header and padding included.
pub fn block_bytes(tokens: usize, scheme: &QuantScheme, hz: usize, txn_width: usize) -> usize {
    (BLOCK_HEADER_BYTES + tokens * token_bytes(scheme, hz)).next_multiple_of(txn_width.max(1))
}

fn scheme_id(scheme: &QuantScheme) -> Result<u8> {
    if scheme.outlier_count > 0x7f {
        return Err(Error::contract(format!(
            "outlier count {} does not fit the 7-bit scheme id",
            scheme.outlier_count
        )));
    }
    let wide = if scheme.inlier_bits == 8 { 0x80 } else { 0 };
    Ok(wide | scheme.outlier_count as u8)
}

fn scheme_from_id(id: u8) -> QuantScheme {
    let bits = if id & 0x80 != 0 { 8 } else { 4 };
    QuantScheme::new_unchecked(bits, (id & 0x7f) as usize)
}

/// Appends the byte image of one token to `out`.
pub fn encode_token(q: &QuantizedToken, scheme: &QuantScheme, out: &mut Vec<u8>) -> Result<()> {
    let hz = q.hidden_dim();
    q.check(scheme, hz)?;
    let start = out.len();
    match scheme.inlier_bits {
        4 => {
            for pair in q.inliers.chunks(2) {
                let lo = (pair[0] as u8) & 0x0f;
                let hi = pair.get(1).map_or(0, |&c| (c as u8) & 0x0f);
                out.push(lo | (hi << 4));
            }
        }
        _ => out.extend(q.inliers.iter().map(|&c| c as u8)),
    }
    for v in &q.outliers {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&q.scale.to_bits().to_le_bytes());
    out.extend_from_slice(&q.outlier_indices);
    debug_assert_eq!(out.len() - start, token_bytes(scheme, hz));
    Ok(())
}

fn decode_token(bytes: &[u8], scheme: &QuantScheme, hz: usize) -> QuantizedToken {
    let k = scheme.outlier_count;
    let n_in = hz - k;
    let mut pos = 0;
    let inliers: Vec<i8> = match scheme.inlier_bits {
        4 => {
            let packed = n_in.div_ceil(2);
            let v = (0..n_in)
                .map(|i| {
                    let b = bytes[i / 2];
                    let nib = if i % 2 == 0 { b & 0x0f } else { b >> 4 };
                    ((nib << 4) as i8) >> 4
                })
                .collect();
            pos += packed;
            v
        }
        _ => {
            let v = bytes[..n_in].iter().map(|&b| b as i8).collect();
            pos += n_in;
            v
        }
    };
    let outliers = (0..k)
        .map(|n| i16::from_le_bytes([bytes[pos + 2 * n], bytes[pos + 2 * n + 1]]))
        .collect();
    pos += 2 * k;
    let scale = f16::from_bits(u16::from_le_bytes([bytes[pos], bytes[pos + 1]]));
    pos += 2;
    let outlier_indices = bytes[pos..pos + k].to_vec();
    QuantizedToken {
        inliers,
        outliers,
        scale,
        outlier_indices,
    }
}

/// An encoded block. Its length is always a multiple of the transaction width
/// it was encoded with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBlock {
    bytes: Vec<u8>,
}

impl TokenBlock {
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn scheme(&self) -> QuantScheme {
        scheme_from_id(self.bytes[1])
    }

    pub fn token_count(&self) -> usize {
        u16::from_le_bytes([self.bytes[2], self.bytes[3]]) as usize
    }

    pub fn hidden_dim(&self) -> usize {
        u16::from_le_bytes([self.bytes[5], self.bytes[6]]) as usize
    }

    /// Parses and validates a block at the start of `bytes`. Returns the block
    /// and the number of bytes consumed, so blocks can be read back to back.
    pub fn parse(bytes: &[u8]) -> Result<(TokenBlock, usize)> {
        if bytes.len() < BLOCK_HEADER_BYTES {
            return Err(Error::corrupt(bytes.len(), "truncated block header"));
        }
        if bytes[0] != BLOCK_MAGIC {
            return Err(Error::corrupt(0, format!("bad block magic {:#04x}", bytes[0])));
        }
        if bytes[7] != 0 {
            return Err(Error::corrupt(7, "reserved header byte is not zero"));
        }
        let scheme = scheme_from_id(bytes[1]);
        let count = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
        let pad = bytes[4] as usize;
        let hz = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        if scheme.validate(hz).is_err() || (count > 0 && hz == 0) {
            return Err(Error::corrupt(1, format!("scheme {scheme} invalid for Hz {hz}")));
        }
        let total = BLOCK_HEADER_BYTES + count * token_bytes(&scheme, hz) + pad;
        if bytes.len() < total {
            return Err(Error::corrupt(
                bytes.len(),
                format!("block truncated: header implies {total} bytes"),
            ));
        }
        let payload_end = total - pad;
        if let Some(off) = bytes[payload_end..total].iter().position(|&b| b != 0) {
            return Err(Error::corrupt(payload_end + off, "nonzero padding byte"));
        }
        Ok((
            TokenBlock {
                bytes: bytes[..total].to_vec(),
            },
            total,
        ))
    }

    /// Parses a block that must span `bytes` exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<TokenBlock> {
        let (block, used) = Self::parse(bytes)?;
        if used != bytes.len() {
            return Err(Error::corrupt(
                used,
                format!("{} trailing bytes after block", bytes.len() - used),
            ));
        }
        Ok(block)
    }
}

/// Packs tokens sharing `scheme` into one block, padded to `txn_width` bytes.
pub fn encode_block(
    tokens: &[QuantizedToken],
    scheme: &QuantScheme,
    hz: usize,
    txn_width: usize,
) -> Result<TokenBlock> {
    if txn_width == 0 || txn_width > 256 {
        return Err(Error::contract(format!("transaction width {txn_width} not in 1..=256")));
    }
    if tokens.len() > u16::MAX as usize {
        return Err(Error::contract(format!("{} tokens exceed a u16 count", tokens.len())));
    }
    if hz > u16::MAX as usize {
        return Err(Error::contract("Hz does not fit the block header"));
    }
    scheme.validate(hz)?;
    let id = scheme_id(scheme)?;
    let mut bytes = Vec::with_capacity(BLOCK_HEADER_BYTES + tokens.len() * token_bytes(scheme, hz) + txn_width);
    bytes.extend_from_slice(&[BLOCK_MAGIC, id, 0, 0, 0, 0, 0, 0]);
    bytes[2..4].copy_from_slice(&(tokens.len() as u16).to_le_bytes());
    bytes[5..7].copy_from_slice(&(hz as u16).to_le_bytes());
    for (n, t) in tokens.iter().enumerate() {
        if t.hidden_dim() != hz {
            return Err(Error::contract(format!("token {n} has Hz {}", t.hidden_dim())));
        }
        encode_token(t, scheme, &mut bytes)
            .map_err(|e| Error::contract(format!("token {n} does not match block scheme: {e}")))?;
    }
    let pad = (txn_width - bytes.len() % txn_width) % txn_width;
    bytes[4] = pad as u8;
    bytes.resize(bytes.len() + pad, 0);
    debug_assert_eq!(bytes.len(), block_bytes(tokens.len(), scheme, hz, txn_width));
    Ok(TokenBlock { bytes })
}

/// Decodes every token in a block.
pub fn decode_block(block: &TokenBlock) -> Result<Vec<QuantizedToken>> {
    // Re-validate: the bytes may have been mutated through `from_bytes` paths.
    let (block, _) = TokenBlock::parse(block.as_bytes())?;
    let scheme = block.scheme();
    let hz = block.hidden_dim();
    let tb = token_bytes(&scheme, hz);
    let mut out = Vec::with_capacity(block.token_count());
    for n in 0..block.token_count() {
        let off = BLOCK_HEADER_BYTES + n * tb;
        let q = decode_token(&block.bytes[off..off + tb], &scheme, hz);
        let mut prev = None;
        for (m, &idx) in q.outlier_indices.iter().enumerate() {
            let idx = idx as usize;
            if idx >= hz || prev.is_some_and(|p| idx <= p) {
                let at = off + tb - scheme.outlier_count + m;
                return Err(Error::corrupt(at, format!("outlier index {idx} invalid")));
            }
            prev = Some(idx);
        }
        out.push(q);
    }
    Ok(out)
}
