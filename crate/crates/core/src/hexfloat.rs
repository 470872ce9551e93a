//! Exact text encoding of `f64` values.
//!
//! Each value is written as the 16 lowercase hex digits of its IEEE-754 bit
//! pattern (big-endian digit order), e.g. `0.1` is `3fb999999999999a`.
//! Arrays are packed as the concatenation of those 16-digit words.

use crate::error::{Error, Result};

pub fn encode(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

pub fn decode(s: &str) -> Result<f64> {
    if s.len() != 16 {
        return Err(Error::Format(format!("hex float must have 16 digits, got {:?}", s)));
    }
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| Error::Format(format!("bad hex float {s:?}: {e}")))
}

pub fn encode_slice(xs: &[f64]) -> String {
    let mut out = String::with_capacity(xs.len() * 16);
    for x in xs {
        out.push_str(&format!("{:016x}", x.to_bits()));
    }
    out
}

pub fn decode_slice(s: &str) -> Result<Vec<f64>> {
    if !s.len().is_multiple_of(16) {
        return Err(Error::Format(format!(
            "packed hex float array length {} is not a multiple of 16",
            s.len()
        )));
    }
    (0..s.len() / 16)
        .map(|i| {
            s.get(16 * i..16 * (i + 1))
                .ok_or_else(|| Error::Format("non-ascii hex array".into()))
                .and_then(decode)
        })
        .collect()
}

/// `#[serde(with = "hexfloat::scalar")]`
pub mod scalar {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        super::decode(&s).map_err(de::Error::custom)
    }
}

/// `#[serde(with = "hexfloat::packed")]` for `Vec<f64>`.
pub mod packed {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode_slice(xs))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let s = String::deserialize(d)?;
        super::decode_slice(&s).map_err(de::Error::custom)
    }
}
