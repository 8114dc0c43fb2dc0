//! Lossless text encoding of float arrays: little-endian IEEE-754 bytes, hex encoded.

use serde::{Deserialize, Deserializer, Serializer};

pub fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    hex::encode(bytes)
}

pub fn decode_f32(text: &str) -> Option<Vec<f32>> {
    let bytes = hex::decode(text).ok()?;
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn encode_f64(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    hex::encode(bytes)
}

pub fn decode_f64(text: &str) -> Option<Vec<f64>> {
    let bytes = hex::decode(text).ok()?;
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    )
}

/// `#[serde(with = "hex_f32")]`
pub mod hex_f32 {
    use super::*;

    pub fn serialize<S: Serializer>(values: &[f32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode_f32(values))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f32>, D::Error> {
        let text = String::deserialize(d)?;
        decode_f32(&text).ok_or_else(|| serde::de::Error::custom("malformed f32 hex array"))
    }
}

/// `#[serde(with = "hex_f64")]`
pub mod hex_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode_f64(values))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        decode_f64(&text).ok_or_else(|| serde::de::Error::custom("malformed f64 hex array"))
    }
}

/// Single f64 stored as its hex bit pattern.
pub mod hex_f64_scalar {
    use super::*;

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode_f64(std::slice::from_ref(value)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let text = String::deserialize(d)?;
        match decode_f64(&text).as_deref() {
            Some([v]) => Ok(*v),
            _ => Err(serde::de::Error::custom("malformed f64 hex scalar")),
        }
    }
}
