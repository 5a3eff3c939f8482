//! Conversions between machine words and arbitrary-precision integers used
//! for signed E accounting.

use num_bigint::{BigInt, BigUint, Sign};

use crate::evm::Word;

pub fn to_biguint(w: Word) -> BigUint {
    let mut buf = [0u8; 32];
    w.to_big_endian(&mut buf);
    BigUint::from_bytes_be(&buf)
}

pub fn to_bigint(w: Word) -> BigInt {
    BigInt::from_biguint(Sign::Plus, to_biguint(w))
}

/// Converts back to a word; `None` when negative or wider than 256 bits.
pub fn to_word(v: &BigInt) -> Option<Word> {
    if v.sign() == Sign::Minus {
        return None;
    }
    let (_, bytes) = v.to_bytes_be();
    if bytes.len() > 32 {
        return None;
    }
    Some(Word::from_big_endian(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        for w in [Word::zero(), Word::one(), Word::MAX, Word::from(123456789u64)] {
            assert_eq!(to_word(&to_bigint(w)), Some(w));
        }
        assert_eq!(to_word(&BigInt::from(-1)), None);
    }
}
