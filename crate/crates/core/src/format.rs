//! Binary `.qbr` container for quantized datasets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "QBR1"            4 bytes   magic
//! n                 u32       sample count
//! d                 u32       predictor count
//! R                 f64       predictor range bound (X^2 range is [0, R^2])
//! L                 f64       response range bound
//! masterSeed        u64       0 if unknown
//! payload           ceil(n (2d+1) / 8) bytes
//! crc32(payload)    u32
//! ```
//!
//! The payload is one continuous bit stream: for each sample, the `d`
//! predictor bits (LSB-first within each byte), then the `d` squared-value
//! bits, then the response bit. Padding to the byte boundary happens only at
//! the very end of the stream.

use std::path::Path;

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::quantize::{QuantizedDataset, ResolvedRanges};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"QBR1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8 + 8;

const fn build_crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 == 1 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = build_crc_table();

/// CRC-32 (IEEE 802.3, reflected).
pub fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &byte in data {
        let idx = ((crc ^ byte as u32) & 0xFF) as usize;
        crc = (crc >> 8) ^ CRC_TABLE[idx];
    }
    !crc
}

/// Exact payload size in bytes for `n` samples of dimension `d`.
pub fn payload_len(n: usize, d: usize) -> usize {
    (n * (2 * d + 1)).div_ceil(8)
}

/// Serialize a dataset into the container format.
pub fn encode_dataset<T: Scalar>(ds: &QuantizedDataset<T>) -> Vec<u8> {
    let n = ds.n();
    let d = ds.d();
    let bits_per_sample = 2 * d + 1;
    let payload_bytes = payload_len(n, d);
    let mut out = Vec::with_capacity(HEADER_LEN + payload_bytes + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&ds.ranges().r().to_f64_lossy().to_le_bytes());
    out.extend_from_slice(&ds.ranges().l().to_f64_lossy().to_le_bytes());
    out.extend_from_slice(&ds.master_seed().to_le_bytes());

    let mut payload = vec![0u8; payload_bytes];
    let mut set_bit = |index: usize, value: bool| {
        if value {
            payload[index >> 3] |= 1 << (index & 7);
        }
    };
    for i in 0..n {
        let base = i * bits_per_sample;
        for j in 0..d {
            set_bit(base + j, ds.x_bit(i, j));
            set_bit(base + d + j, ds.xsq_bit(i, j));
        }
        set_bit(base + 2 * d, ds.y_bit(i));
    }
    let crc = crc32(&payload);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Deserialize a dataset from the container format.
pub fn decode_dataset<T: Scalar>(bytes: &[u8]) -> Result<QuantizedDataset<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let r = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let l = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let master_seed = u64::from_le_bytes(bytes[28..36].try_into().unwrap());
    if n == 0 || d == 0 {
        return Err(Error::EmptyDataset);
    }
    let payload_bytes = payload_len(n, d);
    let expected = HEADER_LEN + payload_bytes + 4;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            got: bytes.len(),
        });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_bytes];
    let stored =
        u32::from_le_bytes(bytes[HEADER_LEN + payload_bytes..expected].try_into().unwrap());
    let computed = crc32(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let ranges = ResolvedRanges::from_rl(crate::scalar::s::<T>(r), crate::scalar::s::<T>(l))?;
    let bits_per_sample = 2 * d + 1;
    let get_bit = |index: usize| -> bool { (payload[index >> 3] >> (index & 7)) & 1 == 1 };
    let mut x_bits = BitMatrix::zeros(n, d);
    let mut xsq_bits = BitMatrix::zeros(n, d);
    let mut y_bits = BitMatrix::zeros(n, 1);
    for i in 0..n {
        let base = i * bits_per_sample;
        for j in 0..d {
            x_bits.set(i, j, get_bit(base + j));
            xsq_bits.set(i, j, get_bit(base + d + j));
        }
        y_bits.set(i, 0, get_bit(base + 2 * d));
    }
    Ok(QuantizedDataset::from_parts(
        n,
        d,
        ranges,
        x_bits,
        xsq_bits,
        y_bits,
        master_seed,
    ))
}

/// Write a dataset to a file.
pub fn write_dataset<T: Scalar>(path: &Path, ds: &QuantizedDataset<T>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds))?;
    Ok(())
}

/// Read a dataset from a file.
pub fn read_dataset<T: Scalar>(path: &Path) -> Result<QuantizedDataset<T>> {
    let bytes = std::fs::read(path)?;
    decode_dataset(&bytes)
}
