//! Small two-pass assembler used to build the reference contracts and test
//! programs. Label references are always encoded as `PUSH2`.

use std::collections::BTreeMap;

use crate::evm::opcode::{self, JUMPDEST, PUSH2, PUSH20, PUSH4};
use crate::evm::{Address, Word};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("label `{0}` defined twice")]
    DuplicateLabel(String),
    #[error("cannot move origin back from {at:#x} to {to:#x}")]
    OriginBackwards { at: usize, to: usize },
    #[error("label `{0}` is beyond the PUSH2 range")]
    LabelTooFar(String),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("bad immediate `{0}`")]
    BadImmediate(String),
}

#[derive(Debug, Clone)]
enum Item {
    Bytes(Vec<u8>),
    PushLabel(String),
    Label(String),
    Org(usize, u8),
}

#[derive(Debug, Clone, Default)]
pub struct Assembler {
    items: Vec<Item>,
}

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn op(&mut self, op: u8) -> &mut Self {
        self.items.push(Item::Bytes(vec![op]));
        self
    }

    pub fn ops(&mut self, ops: &[u8]) -> &mut Self {
        self.items.push(Item::Bytes(ops.to_vec()));
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.ops(bytes)
    }

    /// Pushes `v` with the narrowest PUSH that holds it (PUSH1 for zero).
    pub fn push(&mut self, v: impl Into<Word>) -> &mut Self {
        let v = v.into();
        let width = (v.bits().div_ceil(8)).max(1);
        self.push_n(width, v)
    }

    pub fn push_n(&mut self, width: usize, v: Word) -> &mut Self {
        let mut buf = [0u8; 32];
        v.to_big_endian(&mut buf);
        let mut bytes = vec![opcode::push_for_width(width)];
        bytes.extend_from_slice(&buf[32 - width..]);
        self.items.push(Item::Bytes(bytes));
        self
    }

    pub fn push_addr(&mut self, a: Address) -> &mut Self {
        let mut bytes = vec![PUSH20];
        bytes.extend_from_slice(a.as_bytes());
        self.items.push(Item::Bytes(bytes));
        self
    }

    pub fn push_selector(&mut self, signature: &str) -> &mut Self {
        let mut bytes = vec![PUSH4];
        bytes.extend_from_slice(&crate::evm::types::selector(signature));
        self.items.push(Item::Bytes(bytes));
        self
    }

    pub fn push_label(&mut self, name: &str) -> &mut Self {
        self.items.push(Item::PushLabel(name.to_string()));
        self
    }

    /// Marks the current offset without emitting a byte.
    pub fn label(&mut self, name: &str) -> &mut Self {
        self.items.push(Item::Label(name.to_string()));
        self
    }

    /// Defines `name` here and emits a JUMPDEST.
    pub fn jumpdest(&mut self, name: &str) -> &mut Self {
        self.label(name).op(JUMPDEST)
    }

    /// Pads with `fill` up to absolute offset `offset`.
    pub fn org(&mut self, offset: usize, fill: u8) -> &mut Self {
        self.items.push(Item::Org(offset, fill));
        self
    }

    /// Appends another fragment.
    pub fn extend(&mut self, other: &Assembler) -> &mut Self {
        self.items.extend(other.items.iter().cloned());
        self
    }

    pub fn assemble(&self) -> Result<Vec<u8>, AsmError> {
        let mut labels = BTreeMap::new();
        let mut at = 0usize;
        for item in &self.items {
            match item {
                Item::Bytes(b) => at += b.len(),
                Item::PushLabel(_) => at += 3,
                Item::Label(name) => {
                    if labels.insert(name.clone(), at).is_some() {
                        return Err(AsmError::DuplicateLabel(name.clone()));
                    }
                }
                Item::Org(to, _) => {
                    if *to < at {
                        return Err(AsmError::OriginBackwards { at, to: *to });
                    }
                    at = *to;
                }
            }
        }
        let mut out = Vec::with_capacity(at);
        for item in &self.items {
            match item {
                Item::Bytes(b) => out.extend_from_slice(b),
                Item::PushLabel(name) => {
                    let dest = *labels.get(name).ok_or_else(|| AsmError::UndefinedLabel(name.clone()))?;
                    let dest = u16::try_from(dest).map_err(|_| AsmError::LabelTooFar(name.clone()))?;
                    out.push(PUSH2);
                    out.extend_from_slice(&dest.to_be_bytes());
                }
                Item::Label(_) => {}
                Item::Org(to, fill) => out.resize(*to, *fill),
            }
        }
        Ok(out)
    }

    /// Byte length of the fragment once laid out.
    pub fn len(&self) -> usize {
        self.items.iter().fold(0, |at, item| match item {
            Item::Bytes(b) => at + b.len(),
            Item::PushLabel(_) => at + 3,
            Item::Label(_) => at,
            Item::Org(to, _) => (*to).max(at),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label offsets after layout.
    pub fn labels(&self) -> Result<BTreeMap<String, usize>, AsmError> {
        let mut labels = BTreeMap::new();
        let mut at = 0usize;
        for item in &self.items {
            match item {
                Item::Bytes(b) => at += b.len(),
                Item::PushLabel(_) => at += 3,
                Item::Label(name) => {
                    labels.insert(name.clone(), at);
                }
                Item::Org(to, _) => at = (*to).max(at),
            }
        }
        Ok(labels)
    }
}

/// Assembles whitespace-separated mnemonic text. `name:` defines a label,
/// `@name` pushes a label, and PUSHn takes one `0x` immediate.
///
/// ```
/// let code = ape_core::asm::assemble_text("PUSH1 0x01 PUSH1 0x02 ADD STOP").unwrap();
/// assert_eq!(code, vec![0x60, 0x01, 0x60, 0x02, 0x01, 0x00]);
/// ```
pub fn assemble_text(src: &str) -> Result<Vec<u8>, AsmError> {
    let mut a = Assembler::new();
    let mut tokens = src.split_whitespace();
    while let Some(tok) = tokens.next() {
        if let Some(name) = tok.strip_suffix(':') {
            a.label(name);
        } else if let Some(name) = tok.strip_prefix('@') {
            a.push_label(name);
        } else {
            let op = opcode::from_name(tok).ok_or_else(|| AsmError::UnknownMnemonic(tok.to_string()))?;
            if opcode::is_push(op) {
                let imm = tokens.next().ok_or_else(|| AsmError::BadImmediate(tok.to_string()))?;
                let v = crate::hexfmt::parse_u256(imm).map_err(|_| AsmError::BadImmediate(imm.to_string()))?;
                let width = opcode::immediate_len(op);
                if v.bits() > width * 8 {
                    return Err(AsmError::BadImmediate(imm.to_string()));
                }
                a.push_n(width, v);
            } else {
                a.op(op);
            }
        }
    }
    a.assemble()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evm::opcode::*;

    #[test]
    fn labels_resolve_forward_and_back() {
        let mut a = Assembler::new();
        a.jumpdest("top").push_label("end").op(JUMP).push_label("top").op(JUMP).jumpdest("end").op(STOP);
        let code = a.assemble().unwrap();
        assert_eq!(code, vec![JUMPDEST, PUSH2, 0, 9, JUMP, PUSH2, 0, 0, JUMP, JUMPDEST, STOP]);
    }

    #[test]
    fn org_pads() {
        let mut a = Assembler::new();
        a.op(STOP).org(4, INVALID).op(JUMPDEST);
        assert_eq!(a.assemble().unwrap(), vec![STOP, INVALID, INVALID, INVALID, JUMPDEST]);
        let mut b = Assembler::new();
        b.ops(&[0; 5]).org(2, 0);
        assert!(matches!(b.assemble(), Err(AsmError::OriginBackwards { .. })));
    }

    #[test]
    fn minimal_push_width() {
        let mut a = Assembler::new();
        a.push(0u64).push(0x1234u64);
        assert_eq!(a.assemble().unwrap(), vec![PUSH1, 0, PUSH2, 0x12, 0x34]);
    }

    #[test]
    fn text_form() {
        let code = assemble_text("x: PUSH1 0x00 @x JUMP").unwrap();
        assert_eq!(code, vec![PUSH1, 0, PUSH2, 0, 0, JUMP]);
        assert!(assemble_text("FROB").is_err());
        assert!(assemble_text("PUSH1 0x100").is_err());
        assert!(matches!(assemble_text("@nowhere"), Err(AsmError::UndefinedLabel(_))));
    }
}
