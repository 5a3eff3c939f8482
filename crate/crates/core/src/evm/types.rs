use std::fmt;
use std::str::FromStr;

use primitive_types::U256;
use tiny_keccak::{Hasher, Keccak};

/// 256-bit machine word. All arithmetic on it wraps modulo 2^256.
pub type Word = U256;

/// 20-byte account identifier.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    pub fn from_low_u64(v: u64) -> Self {
        let mut out = [0u8; 20];
        out[12..].copy_from_slice(&v.to_be_bytes());
        Address(out)
    }

    /// Interprets the low 160 bits of a word as an address.
    pub fn from_word(w: Word) -> Self {
        let mut buf = [0u8; 32];
        w.to_big_endian(&mut buf);
        let mut out = [0u8; 20];
        out.copy_from_slice(&buf[12..]);
        Address(out)
    }

    pub fn to_word(self) -> Word {
        Word::from_big_endian(&self.0)
    }

    /// True when the word holds exactly this address with zero upper bytes.
    pub fn matches_word(self, w: Word) -> bool {
        w.bits() <= 160 && Address::from_word(w) == self
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 20]
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseAddressError {
    #[error("address must be 20 bytes, got {0}")]
    Length(usize),
    #[error("invalid hex: {0}")]
    Hex(String),
}

impl FromStr for Address {
    type Err = ParseAddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(raw).map_err(|e| ParseAddressError::Hex(e.to_string()))?;
        if bytes.len() != 20 {
            return Err(ParseAddressError::Length(bytes.len()));
        }
        let mut out = [0u8; 20];
        out.copy_from_slice(&bytes);
        Ok(Address(out))
    }
}

impl serde::Serialize for Address {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Address {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn keccak256(data: &[u8]) -> [u8; 32] {
    let mut k = Keccak::v256();
    k.update(data);
    let mut out = [0u8; 32];
    k.finalize(&mut out);
    out
}

pub fn word_to_bytes(w: Word) -> [u8; 32] {
    let mut buf = [0u8; 32];
    w.to_big_endian(&mut buf);
    buf
}

/// Two's-complement sign of a word.
pub fn is_negative(w: Word) -> bool {
    w.bit(255)
}

pub fn twos_negate(w: Word) -> Word {
    (!w).overflowing_add(Word::one()).0
}

/// Address of a contract created by `creator` at account nonce `nonce`:
/// the low 20 bytes of keccak(rlp([creator, nonce])).
pub fn create_address(creator: Address, nonce: u64) -> Address {
    let mut payload = Vec::with_capacity(32);
    payload.push(0x80 + 20);
    payload.extend_from_slice(&creator.0);
    rlp_append_u64(&mut payload, nonce);
    let mut out = Vec::with_capacity(payload.len() + 1);
    // payload is always < 56 bytes
    out.push(0xc0 + payload.len() as u8);
    out.extend_from_slice(&payload);
    let h = keccak256(&out);
    let mut a = [0u8; 20];
    a.copy_from_slice(&h[12..]);
    Address(a)
}

fn rlp_append_u64(out: &mut Vec<u8>, v: u64) {
    if v == 0 {
        out.push(0x80);
    } else if v < 0x80 {
        out.push(v as u8);
    } else {
        let bytes = v.to_be_bytes();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        out.push(0x80 + (8 - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
}

/// Storage slot of `mapping(address => _)[key]` declared at `base_slot`.
pub fn mapping_slot(key: Address, base_slot: Word) -> Word {
    let mut buf = [0u8; 64];
    buf[12..32].copy_from_slice(&key.0);
    base_slot.to_big_endian(&mut buf[32..]);
    Word::from_big_endian(&keccak256(&buf))
}

/// Four-byte function selector.
pub fn selector(signature: &str) -> [u8; 4] {
    let h = keccak256(signature.as_bytes());
    [h[0], h[1], h[2], h[3]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keccak_of_empty_input() {
        assert_eq!(hex::encode(keccak256(b"")), "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470");
    }

    #[test]
    fn create_address_known_vector() {
        // Widely published vector: sender 0x6ac7ea33f8831ea9dcc53393aaa88b25a785dbf0
        let sender: Address = "0x6ac7ea33f8831ea9dcc53393aaa88b25a785dbf0".parse().unwrap();
        assert_eq!(create_address(sender, 0).to_string(), "0xcd234a471b72ba2f1ccf0a70fcaba648a5eecd8d");
        assert_eq!(create_address(sender, 1).to_string(), "0x343c43a37d37dff08ae8c4a11544c718abb4fcf8");
    }

    #[test]
    fn create_address_injective_in_nonce() {
        let a = Address::from_low_u64(0xabcd);
        let addrs: std::collections::BTreeSet<_> = (0..300u64).map(|n| create_address(a, n)).collect();
        assert_eq!(addrs.len(), 300);
    }

    #[test]
    fn transfer_selector() {
        assert_eq!(selector("transfer(address,uint256)"), [0xa9, 0x05, 0x9c, 0xbb]);
        assert_eq!(selector("balanceOf(address)"), [0x70, 0xa0, 0x82, 0x31]);
    }

    #[test]
    fn address_word_roundtrip() {
        let a: Address = "0x00000000000000000000000000000000deadbeef".parse().unwrap();
        assert!(a.matches_word(a.to_word()));
        assert!(!a.matches_word(a.to_word() | (Word::one() << 200)));
        assert!("0x1234".parse::<Address>().is_err());
    }
}
