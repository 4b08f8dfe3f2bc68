//! Waveform file format "FSH1": magic bytes, little-endian u32 header
//! length, a UTF-8 JSON header, then channel-planar f32 little-endian
//! samples in Z, N, E order. Flat, seekable, dependency-free.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::training::WaveformRecord;

pub const MAGIC: &[u8; 4] = b"FSH1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WaveHeader {
    sample_rate_hz: f64,
    n_samples: u64,
    channels: u32,
    #[serde(default)]
    p_index: Option<u64>,
    #[serde(default)]
    s_index: Option<u64>,
    #[serde(default)]
    magnitude: Option<f64>,
    #[serde(default)]
    x_km: Option<f64>,
    #[serde(default)]
    y_km: Option<f64>,
    is_noise: bool,
}

/// Parse failure, with the byte offset where parsing stopped making sense.
#[derive(Debug, Clone, PartialEq)]
pub struct Fsh1Error {
    pub offset: usize,
    pub detail: String,
}

impl fmt::Display for Fsh1Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FSH1 parse error at byte {}: {}", self.offset, self.detail)
    }
}

impl core::error::Error for Fsh1Error {}

fn err(offset: usize, detail: impl fmt::Display) -> Fsh1Error {
    Fsh1Error {
        offset,
        detail: detail.to_string(),
    }
}

pub fn encode_record(rec: &WaveformRecord) -> Vec<u8> {
    let l = rec.len();
    let header = WaveHeader {
        sample_rate_hz: rec.sample_rate_hz,
        n_samples: l as u64,
        channels: 3,
        p_index: rec.p_index.map(|v| v as u64),
        s_index: rec.s_index.map(|v| v as u64),
        magnitude: rec.magnitude,
        x_km: rec.x_km,
        y_km: rec.y_km,
        is_noise: rec.is_noise,
    };
    let hjson = serde_json::to_vec(&header).expect("header serializable");
    let mut out = Vec::with_capacity(8 + hjson.len() + 3 * l * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&hjson);
    for &v in rec.samples.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_record(bytes: &[u8]) -> Result<WaveformRecord, Fsh1Error> {
    if bytes.len() < 8 {
        return Err(err(bytes.len(), "file shorter than magic + header length"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(err(0, "bad magic, expected FSH1"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + hlen {
        return Err(err(8, alloc::format!("header length {hlen} exceeds file")));
    }
    let header: WaveHeader = serde_json::from_slice(&bytes[8..8 + hlen])
        .map_err(|e| err(8, alloc::format!("header JSON: {e}")))?;
    if header.channels != 3 {
        return Err(err(8, alloc::format!("expected 3 channels, got {}", header.channels)));
    }
    if header.sample_rate_hz <= 0.0 {
        return Err(err(8, "sample rate must be positive"));
    }
    let l = header.n_samples as usize;
    let body = &bytes[8 + hlen..];
    let want = 3 * l * 4;
    if body.len() != want {
        return Err(err(
            8 + hlen,
            alloc::format!("sample payload is {} bytes, expected {want}", body.len()),
        ));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let samples = Tensor::from_vec(&[3, l], data).map_err(|e| err(8 + hlen, e))?;
    let rec = WaveformRecord {
        samples,
        sample_rate_hz: header.sample_rate_hz,
        p_index: header.p_index.map(|v| v as usize),
        s_index: header.s_index.map(|v| v as usize),
        magnitude: header.magnitude,
        x_km: header.x_km,
        y_km: header.y_km,
        is_noise: header.is_noise,
    };
    rec.validate().map_err(|e| err(8, e))?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synthetic, SyntheticParams};

    #[test]
    fn roundtrip_preserves_record_and_bytes() {
        let recs = gen_synthetic(&SyntheticParams::default(), 2, 3);
        for rec in &recs {
            let bytes = encode_record(rec);
            let back = decode_record(&bytes).unwrap();
            assert_eq!(&back, rec);
            assert_eq!(encode_record(&back), bytes);
        }
    }

    #[test]
    fn parse_errors_carry_byte_offsets() {
        let rec = &gen_synthetic(&SyntheticParams::default(), 1, 3)[0];
        let bytes = encode_record(rec);

        let e = decode_record(&bytes[..6]).unwrap_err();
        assert_eq!(e.offset, 6);

        let mut bad_magic = bytes.clone();
        bad_magic[1] = b'X';
        assert_eq!(decode_record(&bad_magic).unwrap_err().offset, 0);

        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 5);
        let e = decode_record(&truncated).unwrap_err();
        assert!(e.detail.contains("payload"));
    }
}
