//! Wire format for transfer messages.
//!
//! ```text
//! header   version:u8 kind:u8 K:u32 P:u64 wordlength:u8   (little-endian, 15 bytes)
//! centers  K floats, IEEE-754 little-endian, wordlength bits each (32 or 64)
//! indices  kind=1 only: P indices, index_bits(K) bits each, packed LSB-first
//!          within bytes; the final byte is zero-padded
//! ```

use crate::clustering::{Codebook, CompressedWeights};
use crate::error::{Error, Result};
use crate::protocol::{MessageKind, TransferMsg};

use super::index_bits;

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 15;

/// A decoded message with the header fields that are not part of the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub msg: TransferMsg,
    pub param_count: u64,
    pub wordlength: u8,
}

pub fn encode(msg: &TransferMsg, param_count: usize, wordlength: u8) -> Result<Vec<u8>> {
    if wordlength != 32 && wordlength != 64 {
        return Err(Error::Argument(format!(
            "wire format supports 32- or 64-bit centers, not {wordlength}"
        )));
    }
    msg.validate(Some(param_count))?;
    let cb = msg.codebook();
    let k = u32::try_from(cb.len())
        .map_err(|_| Error::Argument("codebook too large for the wire format".into()))?;

    let payload_bits = super::message_bits(msg, param_count as u64, wordlength as u32);
    let mut out = Vec::with_capacity(HEADER_BYTES + payload_bits.div_ceil(8) as usize);
    out.push(WIRE_VERSION);
    out.push(msg.kind().wire_tag());
    out.extend_from_slice(&k.to_le_bytes());
    out.extend_from_slice(&(param_count as u64).to_le_bytes());
    out.push(wordlength);

    for &c in cb.centers() {
        if wordlength == 32 {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    if let Some(weights) = msg.weights() {
        let width = index_bits(cb.len() as u64);
        let mut writer = BitWriter::new(&mut out);
        for &i in weights.indices() {
            writer.put(i, width);
        }
        writer.finish();
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < HEADER_BYTES {
        return Err(corrupt("truncated header"));
    }
    if bytes[0] != WIRE_VERSION {
        return Err(corrupt(format!("unsupported wire version {}", bytes[0])));
    }
    let kind = MessageKind::from_wire_tag(bytes[1])
        .ok_or_else(|| corrupt(format!("unknown message kind {}", bytes[1])))?;
    let k = u32::from_le_bytes(bytes[2..6].try_into().unwrap()) as usize;
    let p = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let wordlength = bytes[14];
    let word_bytes = match wordlength {
        32 => 4,
        64 => 8,
        w => return Err(corrupt(format!("unsupported wordlength {w}"))),
    };
    if k == 0 {
        return Err(corrupt("empty codebook"));
    }

    let centers_end = HEADER_BYTES
        .checked_add(
            k.checked_mul(word_bytes)
                .ok_or_else(|| corrupt("K overflows"))?,
        )
        .ok_or_else(|| corrupt("K overflows"))?;
    if bytes.len() < centers_end {
        return Err(corrupt("truncated codebook"));
    }
    let centers: Vec<f64> = bytes[HEADER_BYTES..centers_end]
        .chunks_exact(word_bytes)
        .map(|w| {
            if word_bytes == 4 {
                f32::from_le_bytes(w.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(w.try_into().unwrap())
            }
        })
        .collect();
    let codebook = Codebook::new(centers)?;

    let rest = &bytes[centers_end..];
    let msg = match kind {
        MessageKind::CodebookOnly => {
            if !rest.is_empty() {
                return Err(corrupt("trailing bytes after codebook"));
            }
            TransferMsg::CodebookOnly { codebook }
        }
        MessageKind::CodebookPlusWeights => {
            let width = index_bits(k as u64);
            let total_bits = p
                .checked_mul(width as u64)
                .ok_or_else(|| corrupt("P overflows"))?;
            if rest.len() as u64 != total_bits.div_ceil(8) {
                return Err(corrupt(format!(
                    "expected {} index bytes, found {}",
                    total_bits.div_ceil(8),
                    rest.len()
                )));
            }
            let mut reader = BitReader::new(rest);
            let indices: Vec<u32> = (0..p).map(|_| reader.take(width)).collect();
            if !reader.remaining_is_zero() {
                return Err(corrupt("non-zero padding bits"));
            }
            TransferMsg::with_weights(codebook, CompressedWeights::new(indices))?
        }
    };
    Ok(Decoded {
        msg,
        param_count: p,
        wordlength,
    })
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptMessage(msg.into())
}

/// Appends fixed-width values LSB-first.
pub struct BitWriter<'a> {
    out: &'a mut Vec<u8>,
    acc: u64,
    filled: u32,
}

impl<'a> BitWriter<'a> {
    pub fn new(out: &'a mut Vec<u8>) -> Self {
        BitWriter {
            out,
            acc: 0,
            filled: 0,
        }
    }

    pub fn put(&mut self, value: u32, width: u32) {
        debug_assert!(width <= 32);
        let masked = if width == 32 {
            value as u64
        } else {
            (value as u64) & ((1u64 << width) - 1)
        };
        self.acc |= masked << self.filled;
        self.filled += width;
        while self.filled >= 8 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    /// Flushes the partial byte, zero-padded.
    pub fn finish(self) {
        if self.filled > 0 {
            self.out.push(self.acc as u8);
        }
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    /// Reads the next `width` bits. Past the end of input reads zeros.
    pub fn take(&mut self, width: u32) -> u32 {
        let mut value = 0u32;
        for b in 0..width {
            let bit = self.pos + b as u64;
            let byte = self.bytes.get((bit / 8) as usize).copied().unwrap_or(0);
            value |= (((byte >> (bit % 8)) & 1) as u32) << b;
        }
        self.pos += width as u64;
        value
    }

    fn remaining_is_zero(&self) -> bool {
        let total = self.bytes.len() as u64 * 8;
        (self.pos..total).all(|bit| (self.bytes[(bit / 8) as usize] >> (bit % 8)) & 1 == 0)
    }
}
