//! Versioned binary container for trained models.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "HFMODEL\0"
//! 8       4     container version (u32 LE)
//! 12      4     model kind (u32 LE): 1 random forest, 2 recurrent network
//! 16      8     feature schema hash (u64 LE)
//! 24      8     payload length (u64 LE)
//! 32      n     bincode payload
//! ```

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HFMODEL\0";
pub const VERSION: u32 = 1;
const HEADER: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ModelKind {
    Forest = 1,
    Rnn = 2,
}

impl ModelKind {
    fn from_u32(v: u32) -> Option<ModelKind> {
        match v {
            1 => Some(ModelKind::Forest),
            2 => Some(ModelKind::Rnn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub kind: ModelKind,
    pub schema: u64,
}

pub fn encode<T: Serialize>(kind: ModelKind, schema: u64, value: &T) -> Result<Vec<u8>> {
    let payload = bincode::serialize(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&schema.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a model container".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let kind = ModelKind::from_u32(u32_at(12)).ok_or_else(|| Error::Format(format!("unknown model kind {}", u32_at(12))))?;
    let len = u64_at(24) as usize;
    if bytes.len() != HEADER + len {
        return Err(Error::Format(format!(
            "payload length {len} does not match container size {}",
            bytes.len()
        )));
    }
    Ok(Header {
        version,
        kind,
        schema: u64_at(16),
    })
}

pub fn decode<T: DeserializeOwned>(expected: ModelKind, bytes: &[u8]) -> Result<(Header, T)> {
    let header = read_header(bytes)?;
    if header.kind != expected {
        return Err(Error::Format(format!(
            "container holds a {:?} model, expected {:?}",
            header.kind, expected
        )));
    }
    let value = bincode::deserialize(&bytes[HEADER..]).map_err(|e| Error::Format(e.to_string()))?;
    Ok((header, value))
}

/// Hex SHA-256 of a byte string, used as a model fingerprint.
pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        let value = vec![1.5f64, -2.0, 3.25];
        let bytes = encode(ModelKind::Forest, 42, &value).unwrap();
        let (h, back): (Header, Vec<f64>) = decode(ModelKind::Forest, &bytes).unwrap();
        assert_eq!(back, value);
        assert_eq!(h.schema, 42);
        assert!(decode::<Vec<f64>>(ModelKind::Rnn, &bytes).is_err());
        assert!(decode::<Vec<f64>>(ModelKind::Forest, &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(read_header(&bad).is_err());
        assert!(read_header(b"short").is_err());
    }
}
