//! `.bgc` container: a fixed little-endian header followed by code indices
//! packed MSB-first at `log2(K)` bits each.
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `BGC1`                       |
//! | 4      | 1    | version (1)                        |
//! | 5      | 4    | sample rate, Hz                    |
//! | 9      | 2    | samples per frame `R`              |
//! | 11     | 1    | `log2(K)`                          |
//! | 12     | 4    | frame count                        |
//! | 16     | 4    | original signal length in samples  |
//! | 20     | ..   | payload, zero-padded to a byte     |

use crate::error::{bail, Error, Result};

pub const MAGIC: &[u8; 4] = b"BGC1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;
/// Largest supported `log2(K)`.
pub const MAX_CODE_BITS: u8 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub sample_rate: u32,
    pub downsample: u16,
    pub log2_k: u8,
    pub n_frames: u32,
    /// Signal length before zero-padding to whole frames.
    pub original_len: u32,
}

impl StreamHeader {
    pub fn new(sample_rate: u32, downsample: usize, codebook_size: usize, n_frames: usize, original_len: usize) -> Result<Self> {
        if !codebook_size.is_power_of_two() || codebook_size < 2 || codebook_size > 1 << MAX_CODE_BITS {
            bail!(Config, "codebook size {codebook_size} is not a power of two in 2..=65536");
        }
        let (Ok(downsample), Ok(n_frames), Ok(original_len)) =
            (u16::try_from(downsample), u32::try_from(n_frames), u32::try_from(original_len))
        else {
            bail!(Config, "stream dimensions exceed the header field widths");
        };
        if downsample == 0 || sample_rate == 0 {
            bail!(Config, "sample rate and frame size must be positive");
        }
        let h = Self { sample_rate, downsample, log2_k: codebook_size.trailing_zeros() as u8, n_frames, original_len };
        if original_len as usize > h.padded_len() {
            bail!(Config, "original length {original_len} exceeds {} frames of {downsample} samples", n_frames);
        }
        Ok(h)
    }

    pub fn codebook_size(&self) -> usize {
        1 << self.log2_k
    }

    pub fn bits_per_code(&self) -> usize {
        self.log2_k as usize
    }

    pub fn payload_bits(&self) -> usize {
        self.n_frames as usize * self.bits_per_code()
    }

    pub fn payload_len(&self) -> usize {
        self.payload_bits().div_ceil(8)
    }

    /// Samples covered by the frames, including padding.
    pub fn padded_len(&self) -> usize {
        self.n_frames as usize * self.downsample as usize
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(MAGIC);
        b[4] = VERSION;
        b[5..9].copy_from_slice(&self.sample_rate.to_le_bytes());
        b[9..11].copy_from_slice(&self.downsample.to_le_bytes());
        b[11] = self.log2_k;
        b[12..16].copy_from_slice(&self.n_frames.to_le_bytes());
        b[16..20].copy_from_slice(&self.original_len.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 5 || &b[..4] != MAGIC {
            bail!(Format, "not a .bgc stream (bad magic)");
        }
        if b[4] != VERSION {
            return Err(Error::Version(b[4]));
        }
        if b.len() < HEADER_LEN {
            return Err(Error::Length { expected: HEADER_LEN, found: b.len() });
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let h = Self {
            sample_rate: u32_at(5),
            downsample: u16::from_le_bytes([b[9], b[10]]),
            log2_k: b[11],
            n_frames: u32_at(12),
            original_len: u32_at(16),
        };
        if h.log2_k == 0 || h.log2_k > MAX_CODE_BITS {
            bail!(Format, "unsupported code width of {} bits", h.log2_k);
        }
        if h.downsample == 0 || h.sample_rate == 0 || h.original_len as usize > h.padded_len() {
            bail!(Format, "inconsistent stream header {h:?}");
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedStream {
    pub header: StreamHeader,
    pub indices: Vec<usize>,
}

/// Header bytes followed by the packed indices.
pub fn pack(indices: &[usize], header: &StreamHeader) -> Result<Vec<u8>> {
    if indices.len() != header.n_frames as usize {
        bail!(Contract, "header announces {} frames but {} indices were given", header.n_frames, indices.len());
    }
    let k = header.codebook_size();
    let bits = header.bits_per_code();
    let mut out = Vec::with_capacity(HEADER_LEN + header.payload_len());
    out.extend_from_slice(&header.to_bytes());
    let (mut acc, mut filled) = (0u64, 0usize);
    for &i in indices {
        if i >= k {
            bail!(Contract, "code index {i} does not fit a codebook of {k}");
        }
        acc = (acc << bits) | i as u64;
        filled += bits;
        while filled >= 8 {
            filled -= 8;
            out.push((acc >> filled) as u8);
        }
        acc &= (1 << filled) - 1;
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
    Ok(out)
}

pub fn unpack(bytes: &[u8]) -> Result<EncodedStream> {
    let header = StreamHeader::from_bytes(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != header.payload_len() {
        return Err(Error::Length { expected: header.payload_len(), found: payload.len() });
    }
    let bits = header.bits_per_code();
    let mask = (1u64 << bits) - 1;
    let mut indices = Vec::with_capacity(header.n_frames as usize);
    let (mut acc, mut filled) = (0u64, 0usize);
    let mut bytes = payload.iter();
    while indices.len() < header.n_frames as usize {
        while filled < bits {
            acc = (acc << 8) | *bytes.next().expect("length checked") as u64;
            filled += 8;
        }
        filled -= bits;
        indices.push(((acc >> filled) & mask) as usize);
        acc &= (1 << filled) - 1;
    }
    Ok(EncodedStream { header, indices })
}

/// Payload kbps over `duration_seconds`, header excluded.
pub fn measured_bitrate(stream: &EncodedStream, duration_seconds: f64) -> Result<f64> {
    if !(duration_seconds > 0.0) {
        bail!(Domain, "duration must be positive, got {duration_seconds}");
    }
    Ok(stream.header.payload_bits() as f64 / duration_seconds / 1000.0)
}

/// `sample_rate / R * log2(K)` in kbps.
pub fn theoretical_bitrate(sample_rate: u32, downsample: usize, codebook_size: usize) -> f64 {
    let bits = (codebook_size as f64).log2();
    sample_rate as f64 / downsample as f64 * bits / 1000.0
}
