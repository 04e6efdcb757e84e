//! Base64 encoding of `f64` arrays as little-endian IEEE-754 bytes.
//!
//! Every numeric tensor that crosses a file boundary goes through here so
//! values round-trip bit-for-bit.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| format!("invalid base64: {e}"))?;
    if bytes.len() % 8 != 0 {
        return Err(format!("decoded {} bytes, not a multiple of 8", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
