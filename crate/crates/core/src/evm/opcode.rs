//! Opcode constants, stack effects, and a linear disassembler.

pub const STOP: u8 = 0x00;
pub const ADD: u8 = 0x01;
pub const MUL: u8 = 0x02;
pub const SUB: u8 = 0x03;
pub const DIV: u8 = 0x04;
pub const SDIV: u8 = 0x05;
pub const MOD: u8 = 0x06;
pub const SMOD: u8 = 0x07;
pub const ADDMOD: u8 = 0x08;
pub const MULMOD: u8 = 0x09;
pub const EXP: u8 = 0x0a;
pub const SIGNEXTEND: u8 = 0x0b;
pub const LT: u8 = 0x10;
pub const GT: u8 = 0x11;
pub const SLT: u8 = 0x12;
pub const SGT: u8 = 0x13;
pub const EQ: u8 = 0x14;
pub const ISZERO: u8 = 0x15;
pub const AND: u8 = 0x16;
pub const OR: u8 = 0x17;
pub const XOR: u8 = 0x18;
pub const NOT: u8 = 0x19;
pub const BYTE: u8 = 0x1a;
pub const SHL: u8 = 0x1b;
pub const SHR: u8 = 0x1c;
pub const SAR: u8 = 0x1d;
pub const KECCAK256: u8 = 0x20;
pub const ADDRESS: u8 = 0x30;
pub const BALANCE: u8 = 0x31;
pub const ORIGIN: u8 = 0x32;
pub const CALLER: u8 = 0x33;
pub const CALLVALUE: u8 = 0x34;
pub const CALLDATALOAD: u8 = 0x35;
pub const CALLDATASIZE: u8 = 0x36;
pub const CALLDATACOPY: u8 = 0x37;
pub const CODESIZE: u8 = 0x38;
pub const CODECOPY: u8 = 0x39;
pub const GASPRICE: u8 = 0x3a;
pub const EXTCODESIZE: u8 = 0x3b;
pub const EXTCODECOPY: u8 = 0x3c;
pub const RETURNDATASIZE: u8 = 0x3d;
pub const RETURNDATACOPY: u8 = 0x3e;
pub const EXTCODEHASH: u8 = 0x3f;
pub const BLOCKHASH: u8 = 0x40;
pub const COINBASE: u8 = 0x41;
pub const TIMESTAMP: u8 = 0x42;
pub const NUMBER: u8 = 0x43;
pub const DIFFICULTY: u8 = 0x44;
pub const GASLIMIT: u8 = 0x45;
pub const CHAINID: u8 = 0x46;
pub const SELFBALANCE: u8 = 0x47;
pub const POP: u8 = 0x50;
pub const MLOAD: u8 = 0x51;
pub const MSTORE: u8 = 0x52;
pub const MSTORE8: u8 = 0x53;
pub const SLOAD: u8 = 0x54;
pub const SSTORE: u8 = 0x55;
pub const JUMP: u8 = 0x56;
pub const JUMPI: u8 = 0x57;
pub const PC: u8 = 0x58;
pub const MSIZE: u8 = 0x59;
pub const GAS: u8 = 0x5a;
pub const JUMPDEST: u8 = 0x5b;
pub const PUSH1: u8 = 0x60;
pub const PUSH2: u8 = 0x61;
pub const PUSH4: u8 = 0x63;
pub const PUSH20: u8 = 0x73;
pub const PUSH32: u8 = 0x7f;
pub const DUP1: u8 = 0x80;
pub const DUP2: u8 = 0x81;
pub const DUP3: u8 = 0x82;
pub const DUP4: u8 = 0x83;
pub const DUP5: u8 = 0x84;
pub const DUP6: u8 = 0x85;
pub const DUP7: u8 = 0x86;
pub const DUP8: u8 = 0x87;
pub const DUP9: u8 = 0x88;
pub const DUP10: u8 = 0x89;
pub const DUP11: u8 = 0x8a;
pub const DUP12: u8 = 0x8b;
pub const DUP13: u8 = 0x8c;
pub const DUP14: u8 = 0x8d;
pub const DUP15: u8 = 0x8e;
pub const DUP16: u8 = 0x8f;
pub const SWAP1: u8 = 0x90;
pub const SWAP2: u8 = 0x91;
pub const SWAP3: u8 = 0x92;
pub const SWAP4: u8 = 0x93;
pub const SWAP5: u8 = 0x94;
pub const SWAP6: u8 = 0x95;
pub const SWAP7: u8 = 0x96;
pub const SWAP8: u8 = 0x97;
pub const SWAP9: u8 = 0x98;
pub const SWAP10: u8 = 0x99;
pub const SWAP11: u8 = 0x9a;
pub const SWAP12: u8 = 0x9b;
pub const SWAP13: u8 = 0x9c;
pub const SWAP14: u8 = 0x9d;
pub const SWAP15: u8 = 0x9e;
pub const SWAP16: u8 = 0x9f;
pub const LOG0: u8 = 0xa0;
pub const LOG1: u8 = 0xa1;
pub const LOG2: u8 = 0xa2;
pub const LOG3: u8 = 0xa3;
pub const LOG4: u8 = 0xa4;
pub const CREATE: u8 = 0xf0;
pub const CALL: u8 = 0xf1;
pub const CALLCODE: u8 = 0xf2;
pub const RETURN: u8 = 0xf3;
pub const DELEGATECALL: u8 = 0xf4;
pub const CREATE2: u8 = 0xf5;
pub const STATICCALL: u8 = 0xfa;
pub const REVERT: u8 = 0xfd;
pub const INVALID: u8 = 0xfe;
pub const SELFDESTRUCT: u8 = 0xff;

#[derive(Debug, Clone, Copy)]
pub struct OpInfo {
    pub name: &'static str,
    pub pops: u8,
    pub pushes: u8,
}

const fn op(name: &'static str, pops: u8, pushes: u8) -> Option<OpInfo> {
    Some(OpInfo { name, pops, pushes })
}

static PUSH_NAMES: [&str; 32] = [
    "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9", "PUSH10", "PUSH11", "PUSH12",
    "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17", "PUSH18", "PUSH19", "PUSH20", "PUSH21", "PUSH22", "PUSH23",
    "PUSH24", "PUSH25", "PUSH26", "PUSH27", "PUSH28", "PUSH29", "PUSH30", "PUSH31", "PUSH32",
];
static DUP_NAMES: [&str; 16] = [
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10", "DUP11", "DUP12", "DUP13",
    "DUP14", "DUP15", "DUP16",
];
static SWAP_NAMES: [&str; 16] = [
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9", "SWAP10", "SWAP11", "SWAP12",
    "SWAP13", "SWAP14", "SWAP15", "SWAP16",
];
static LOG_NAMES: [&str; 5] = ["LOG0", "LOG1", "LOG2", "LOG3", "LOG4"];

/// Stack effect and mnemonic of a defined opcode; `None` for undefined bytes.
pub fn info(opcode: u8) -> Option<OpInfo> {
    match opcode {
        STOP => op("STOP", 0, 0),
        ADD => op("ADD", 2, 1),
        MUL => op("MUL", 2, 1),
        SUB => op("SUB", 2, 1),
        DIV => op("DIV", 2, 1),
        SDIV => op("SDIV", 2, 1),
        MOD => op("MOD", 2, 1),
        SMOD => op("SMOD", 2, 1),
        ADDMOD => op("ADDMOD", 3, 1),
        MULMOD => op("MULMOD", 3, 1),
        EXP => op("EXP", 2, 1),
        SIGNEXTEND => op("SIGNEXTEND", 2, 1),
        LT => op("LT", 2, 1),
        GT => op("GT", 2, 1),
        SLT => op("SLT", 2, 1),
        SGT => op("SGT", 2, 1),
        EQ => op("EQ", 2, 1),
        ISZERO => op("ISZERO", 1, 1),
        AND => op("AND", 2, 1),
        OR => op("OR", 2, 1),
        XOR => op("XOR", 2, 1),
        NOT => op("NOT", 1, 1),
        BYTE => op("BYTE", 2, 1),
        SHL => op("SHL", 2, 1),
        SHR => op("SHR", 2, 1),
        SAR => op("SAR", 2, 1),
        KECCAK256 => op("KECCAK256", 2, 1),
        ADDRESS => op("ADDRESS", 0, 1),
        BALANCE => op("BALANCE", 1, 1),
        ORIGIN => op("ORIGIN", 0, 1),
        CALLER => op("CALLER", 0, 1),
        CALLVALUE => op("CALLVALUE", 0, 1),
        CALLDATALOAD => op("CALLDATALOAD", 1, 1),
        CALLDATASIZE => op("CALLDATASIZE", 0, 1),
        CALLDATACOPY => op("CALLDATACOPY", 3, 0),
        CODESIZE => op("CODESIZE", 0, 1),
        CODECOPY => op("CODECOPY", 3, 0),
        GASPRICE => op("GASPRICE", 0, 1),
        EXTCODESIZE => op("EXTCODESIZE", 1, 1),
        EXTCODECOPY => op("EXTCODECOPY", 4, 0),
        RETURNDATASIZE => op("RETURNDATASIZE", 0, 1),
        RETURNDATACOPY => op("RETURNDATACOPY", 3, 0),
        EXTCODEHASH => op("EXTCODEHASH", 1, 1),
        BLOCKHASH => op("BLOCKHASH", 1, 1),
        COINBASE => op("COINBASE", 0, 1),
        TIMESTAMP => op("TIMESTAMP", 0, 1),
        NUMBER => op("NUMBER", 0, 1),
        DIFFICULTY => op("DIFFICULTY", 0, 1),
        GASLIMIT => op("GASLIMIT", 0, 1),
        CHAINID => op("CHAINID", 0, 1),
        SELFBALANCE => op("SELFBALANCE", 0, 1),
        POP => op("POP", 1, 0),
        MLOAD => op("MLOAD", 1, 1),
        MSTORE => op("MSTORE", 2, 0),
        MSTORE8 => op("MSTORE8", 2, 0),
        SLOAD => op("SLOAD", 1, 1),
        SSTORE => op("SSTORE", 2, 0),
        JUMP => op("JUMP", 1, 0),
        JUMPI => op("JUMPI", 2, 0),
        PC => op("PC", 0, 1),
        MSIZE => op("MSIZE", 0, 1),
        GAS => op("GAS", 0, 1),
        JUMPDEST => op("JUMPDEST", 0, 0),
        0x60..=0x7f => op(PUSH_NAMES[(opcode - PUSH1) as usize], 0, 1),
        0x80..=0x8f => {
            let n = opcode - DUP1 + 1;
            op(DUP_NAMES[(n - 1) as usize], n, n + 1)
        }
        0x90..=0x9f => {
            let n = opcode - SWAP1 + 1;
            op(SWAP_NAMES[(n - 1) as usize], n + 1, n + 1)
        }
        0xa0..=0xa4 => {
            let n = opcode - LOG0;
            op(LOG_NAMES[n as usize], n + 2, 0)
        }
        CREATE => op("CREATE", 3, 1),
        CALL => op("CALL", 7, 1),
        CALLCODE => op("CALLCODE", 7, 1),
        RETURN => op("RETURN", 2, 0),
        DELEGATECALL => op("DELEGATECALL", 6, 1),
        CREATE2 => op("CREATE2", 4, 1),
        STATICCALL => op("STATICCALL", 6, 1),
        REVERT => op("REVERT", 2, 0),
        INVALID => op("INVALID", 0, 0),
        SELFDESTRUCT => op("SELFDESTRUCT", 1, 0),
        _ => None,
    }
}

pub fn name(opcode: u8) -> &'static str {
    info(opcode).map(|i| i.name).unwrap_or("UNKNOWN")
}

/// Looks up an opcode byte by mnemonic.
pub fn from_name(name: &str) -> Option<u8> {
    (0u8..=255).find(|b| info(*b).is_some_and(|i| i.name.eq_ignore_ascii_case(name)))
}

pub fn is_push(opcode: u8) -> bool {
    (PUSH1..=PUSH32).contains(&opcode)
}

/// Number of immediate bytes following the opcode.
pub fn immediate_len(opcode: u8) -> usize {
    if is_push(opcode) {
        (opcode - PUSH1 + 1) as usize
    } else {
        0
    }
}

pub fn push_for_width(width: usize) -> u8 {
    assert!((1..=32).contains(&width));
    PUSH1 + (width as u8 - 1)
}

pub fn is_call_family(opcode: u8) -> bool {
    matches!(opcode, CALL | CALLCODE | DELEGATECALL | STATICCALL)
}

/// Instructions that end a basic block.
pub fn is_terminator(opcode: u8) -> bool {
    matches!(opcode, JUMP | JUMPI | STOP | RETURN | REVERT | SELFDESTRUCT | INVALID)
}

/// Instructions after which execution never falls through to the next pc.
pub fn halts_or_jumps(opcode: u8) -> bool {
    matches!(opcode, JUMP | STOP | RETURN | REVERT | SELFDESTRUCT | INVALID)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub pc: usize,
    pub opcode: u8,
    /// Immediate bytes as they appear in code (zero-padded when truncated at the end).
    pub immediate: Vec<u8>,
}

impl Instruction {
    pub fn len(&self) -> usize {
        1 + immediate_len(self.opcode)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn next_pc(&self) -> usize {
        self.pc + self.len()
    }
}

impl std::fmt::Display for Instruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.immediate.is_empty() {
            write!(f, "{:#06x}: {}", self.pc, name(self.opcode))
        } else {
            write!(f, "{:#06x}: {} 0x{}", self.pc, name(self.opcode), hex::encode(&self.immediate))
        }
    }
}

/// Decodes the instruction at `pc`. Bytes past the end of code read as zero.
pub fn decode_at(code: &[u8], pc: usize) -> Option<Instruction> {
    let opcode = *code.get(pc)?;
    let n = immediate_len(opcode);
    let mut immediate = vec![0u8; n];
    let avail = code.len().saturating_sub(pc + 1).min(n);
    immediate[..avail].copy_from_slice(&code[pc + 1..pc + 1 + avail]);
    Some(Instruction { pc, opcode, immediate })
}

pub fn disassemble(code: &[u8]) -> Vec<Instruction> {
    let mut out = Vec::new();
    let mut pc = 0;
    while let Some(ins) = decode_at(code, pc) {
        pc = ins.next_pc();
        out.push(ins);
    }
    out
}

/// Valid JUMPDEST offsets (skipping PUSH immediates).
pub fn jumpdests(code: &[u8]) -> Vec<bool> {
    let mut out = vec![false; code.len()];
    let mut pc = 0;
    while pc < code.len() {
        let b = code[pc];
        if b == JUMPDEST {
            out[pc] = true;
        }
        pc += 1 + immediate_len(b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_effects() {
        assert_eq!(info(DUP1).map(|i| (i.pops, i.pushes)), Some((1, 2)));
        assert_eq!(info(SWAP16).map(|i| (i.pops, i.pushes)), Some((17, 17)));
        assert_eq!(info(0xa2).map(|i| (i.name, i.pops)), Some(("LOG2", 4)));
        assert!(info(0x0c).is_none());
    }

    #[test]
    fn name_lookup_roundtrip() {
        for b in 0u8..=255 {
            if let Some(i) = info(b) {
                assert_eq!(from_name(i.name), Some(b));
            }
        }
    }

    #[test]
    fn jumpdest_inside_push_is_not_valid() {
        let code = [PUSH2, JUMPDEST, JUMPDEST, JUMPDEST];
        assert_eq!(jumpdests(&code), vec![false, false, false, true]);
    }

    #[test]
    fn truncated_push_reads_zero() {
        let ins = decode_at(&[PUSH4, 0xaa], 0).unwrap();
        assert_eq!(ins.immediate, vec![0xaa, 0, 0, 0]);
    }
}
