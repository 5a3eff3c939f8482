//! Word arithmetic with EVM semantics (wrapping, two's-complement signed ops).

use primitive_types::U512;

use super::types::{is_negative, twos_negate, Word};

pub fn add(a: Word, b: Word) -> Word {
    a.overflowing_add(b).0
}

pub fn sub(a: Word, b: Word) -> Word {
    a.overflowing_sub(b).0
}

pub fn mul(a: Word, b: Word) -> Word {
    a.overflowing_mul(b).0
}

pub fn div(a: Word, b: Word) -> Word {
    if b.is_zero() {
        Word::zero()
    } else {
        a / b
    }
}

pub fn rem(a: Word, b: Word) -> Word {
    if b.is_zero() {
        Word::zero()
    } else {
        a % b
    }
}

fn abs(a: Word) -> Word {
    if is_negative(a) {
        twos_negate(a)
    } else {
        a
    }
}

pub fn sdiv(a: Word, b: Word) -> Word {
    if b.is_zero() {
        return Word::zero();
    }
    let q = abs(a) / abs(b);
    if is_negative(a) != is_negative(b) {
        twos_negate(q)
    } else {
        q
    }
}

pub fn smod(a: Word, b: Word) -> Word {
    if b.is_zero() {
        return Word::zero();
    }
    let r = abs(a) % abs(b);
    if is_negative(a) {
        twos_negate(r)
    } else {
        r
    }
}

pub fn addmod(a: Word, b: Word, n: Word) -> Word {
    if n.is_zero() {
        return Word::zero();
    }
    let s = U512::from(a) + U512::from(b);
    Word::try_from(s % U512::from(n)).expect("remainder fits")
}

pub fn mulmod(a: Word, b: Word, n: Word) -> Word {
    if n.is_zero() {
        return Word::zero();
    }
    let p = a.full_mul(b);
    Word::try_from(p % U512::from(n)).expect("remainder fits")
}

pub fn exp(base: Word, e: Word) -> Word {
    base.overflowing_pow(e).0
}

pub fn signextend(k: Word, x: Word) -> Word {
    if k >= Word::from(31) {
        return x;
    }
    let bit = (k.low_u64() as usize) * 8 + 7;
    let mask = (Word::one() << bit) - 1;
    if x.bit(bit) {
        x | !mask
    } else {
        x & mask
    }
}

pub fn slt(a: Word, b: Word) -> bool {
    match (is_negative(a), is_negative(b)) {
        (true, false) => true,
        (false, true) => false,
        _ => a < b,
    }
}

pub fn byte(i: Word, x: Word) -> Word {
    if i >= Word::from(32) {
        return Word::zero();
    }
    Word::from(x.byte(31 - i.low_u64() as usize))
}

pub fn shl(shift: Word, x: Word) -> Word {
    if shift >= Word::from(256) {
        Word::zero()
    } else {
        x << shift.low_u64() as usize
    }
}

pub fn shr(shift: Word, x: Word) -> Word {
    if shift >= Word::from(256) {
        Word::zero()
    } else {
        x >> shift.low_u64() as usize
    }
}

pub fn sar(shift: Word, x: Word) -> Word {
    let neg = is_negative(x);
    if shift >= Word::from(256) {
        return if neg { Word::MAX } else { Word::zero() };
    }
    let s = shift.low_u64() as usize;
    if !neg || s == 0 {
        return x >> s;
    }
    (x >> s) | (Word::MAX << (256 - s))
}

pub fn bool_word(b: bool) -> Word {
    if b {
        Word::one()
    } else {
        Word::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neg(v: u64) -> Word {
        twos_negate(Word::from(v))
    }

    #[test]
    fn wrapping() {
        assert_eq!(add(Word::MAX, Word::one()), Word::zero());
        assert_eq!(sub(Word::zero(), Word::one()), Word::MAX);
        assert_eq!(div(Word::from(7), Word::zero()), Word::zero());
    }

    #[test]
    fn signed() {
        assert_eq!(sdiv(neg(7), Word::from(2)), neg(3));
        assert_eq!(smod(neg(7), Word::from(2)), neg(1));
        assert!(slt(neg(1), Word::zero()));
        assert!(!slt(Word::one(), neg(5)));
        assert_eq!(sar(Word::from(1), neg(4)), neg(2));
        assert_eq!(sar(Word::from(300), neg(4)), Word::MAX);
        assert_eq!(signextend(Word::zero(), Word::from(0xff)), Word::MAX);
        assert_eq!(signextend(Word::zero(), Word::from(0x7f)), Word::from(0x7f));
    }

    #[test]
    fn modular() {
        assert_eq!(addmod(Word::MAX, Word::from(2), Word::from(10)), Word::from(7));
        assert_eq!(mulmod(Word::MAX, Word::MAX, Word::from(12)), Word::from(9));
    }

    #[test]
    fn bytes_and_shifts() {
        assert_eq!(byte(Word::from(31), Word::from(0xab)), Word::from(0xab));
        assert_eq!(byte(Word::zero(), Word::from(0xab)), Word::zero());
        assert_eq!(shl(Word::from(4), Word::one()), Word::from(16));
        assert_eq!(shr(Word::from(256), Word::MAX), Word::zero());
    }
}
