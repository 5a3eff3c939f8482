//! Hex encodings shared by every JSON surface: quantities are `0x`-prefixed
//! minimal lowercase hex, byte strings are `0x`-prefixed lowercase hex.

use primitive_types::U256;
use serde::{Deserialize, Deserializer, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HexError {
    #[error("missing 0x prefix in `{0}`")]
    Prefix(String),
    #[error("invalid hex digits in `{0}`")]
    Digits(String),
    #[error("value `{0}` exceeds {1} bits")]
    Overflow(String, u32),
    #[error("expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
}

fn strip(s: &str) -> Result<&str, HexError> {
    s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).ok_or_else(|| HexError::Prefix(s.to_string()))
}

pub fn parse_u256(s: &str) -> Result<U256, HexError> {
    let raw = strip(s)?;
    if raw.is_empty() || !raw.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(HexError::Digits(s.to_string()));
    }
    let trimmed = raw.trim_start_matches('0');
    if trimmed.len() > 64 {
        return Err(HexError::Overflow(s.to_string(), 256));
    }
    if trimmed.is_empty() {
        return Ok(U256::zero());
    }
    U256::from_str_radix(trimmed, 16).map_err(|_| HexError::Digits(s.to_string()))
}

pub fn parse_u64(s: &str) -> Result<u64, HexError> {
    let v = parse_u256(s)?;
    if v.bits() > 64 {
        return Err(HexError::Overflow(s.to_string(), 64));
    }
    Ok(v.low_u64())
}

pub fn parse_bytes(s: &str) -> Result<Vec<u8>, HexError> {
    let raw = strip(s)?;
    hex::decode(raw).map_err(|_| HexError::Digits(s.to_string()))
}

/// Parses an exactly-32-byte hex string (storage keys and values).
pub fn parse_word32(s: &str) -> Result<U256, HexError> {
    let b = parse_bytes(s)?;
    if b.len() != 32 {
        return Err(HexError::Length { expected: 32, got: b.len() });
    }
    Ok(U256::from_big_endian(&b))
}

pub fn fmt_u256(v: &U256) -> String {
    format!("{v:#x}")
}

pub fn fmt_bytes(b: &[u8]) -> String {
    format!("0x{}", hex::encode(b))
}

pub fn fmt_word32(v: &U256) -> String {
    let mut buf = [0u8; 32];
    v.to_big_endian(&mut buf);
    fmt_bytes(&buf)
}

/// Quantities are written as hex strings; small JSON numbers are accepted on
/// input for hand-written files.
#[derive(Deserialize)]
#[serde(untagged)]
enum Quantity {
    Str(String),
    Num(u64),
}

pub mod u256 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &U256, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_u256(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<U256, D::Error> {
        match Quantity::deserialize(d)? {
            Quantity::Str(s) => parse_u256(&s).map_err(serde::de::Error::custom),
            Quantity::Num(n) => Ok(U256::from(n)),
        }
    }
}

pub mod u64q {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:#x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Quantity::deserialize(d)? {
            Quantity::Str(s) => parse_u64(&s).map_err(serde::de::Error::custom),
            Quantity::Num(n) => Ok(n),
        }
    }
}

pub mod bytes {
    use super::*;

    pub fn serialize<S: Serializer, B: AsRef<[u8]>>(v: &B, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_bytes(v.as_ref()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, B: From<Vec<u8>>>(d: D) -> Result<B, D::Error> {
        let s = String::deserialize(d)?;
        parse_bytes(&s).map(B::from).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantities() {
        assert_eq!(parse_u256("0x0").unwrap(), U256::zero());
        assert_eq!(parse_u256("0x00ff").unwrap(), U256::from(255));
        assert_eq!(fmt_u256(&U256::from(255)), "0xff");
        assert_eq!(fmt_u256(&U256::zero()), "0x0");
        assert!(parse_u256("ff").is_err());
        assert!(parse_u256("0x").is_err());
        assert!(parse_u64("0x10000000000000000").is_err());
    }

    #[test]
    fn word32_requires_full_width() {
        assert!(parse_word32("0x01").is_err());
        let w = parse_word32(&fmt_word32(&U256::from(7))).unwrap();
        assert_eq!(w, U256::from(7));
    }
}
