//! Configurable gas schedule.
//!
//! The table is a TOML document with an `[opcodes]` section (mnemonic → static
//! cost; `PUSH`, `DUP` and `SWAP` cover their whole families) and a `[dynamic]`
//! section for size-dependent charges. The shipped defaults live in
//! `gas_table.toml` at the crate root.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::opcode;

pub const DEFAULT_GAS_TABLE: &str = include_str!("../../gas_table.toml");

#[derive(Debug, thiserror::Error)]
pub enum GasTableError {
    #[error("gas table parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown opcode `{0}` in gas table")]
    UnknownOpcode(String),
    #[error("unknown dynamic key `{0}` in gas table")]
    UnknownKey(String),
    #[error("io error reading gas table: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicCosts {
    pub memory_word: u64,
    pub memory_quadratic_divisor: u64,
    pub keccak_word: u64,
    pub copy_word: u64,
    pub log_byte: u64,
    pub exp_byte: u64,
    pub sstore_set: u64,
    pub sstore_reset: u64,
    pub call_value: u64,
    pub call_stipend: u64,
    pub new_account: u64,
    pub code_deposit_byte: u64,
    pub identity_base: u64,
    pub identity_word: u64,
    pub tx_base: u64,
    pub tx_create: u64,
    pub tx_data_zero: u64,
    pub tx_data_nonzero: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GasTable {
    static_costs: [u64; 256],
    pub dynamic: DynamicCosts,
}

#[derive(Deserialize)]
struct RawTable {
    #[serde(default)]
    opcodes: BTreeMap<String, u64>,
    #[serde(default)]
    dynamic: BTreeMap<String, u64>,
}

impl GasTable {
    pub fn parse(text: &str) -> Result<Self, GasTableError> {
        let raw: RawTable = toml::from_str(text)?;
        let mut static_costs = [0u64; 256];
        for (name, cost) in &raw.opcodes {
            match name.as_str() {
                "PUSH" => (opcode::PUSH1..=opcode::PUSH32).for_each(|b| static_costs[b as usize] = *cost),
                "DUP" => (opcode::DUP1..=opcode::DUP16).for_each(|b| static_costs[b as usize] = *cost),
                "SWAP" => (opcode::SWAP1..=opcode::SWAP16).for_each(|b| static_costs[b as usize] = *cost),
                other => {
                    let b = opcode::from_name(other).ok_or_else(|| GasTableError::UnknownOpcode(other.to_string()))?;
                    static_costs[b as usize] = *cost;
                }
            }
        }
        let mut d = DynamicCosts {
            memory_word: 3,
            memory_quadratic_divisor: 512,
            keccak_word: 6,
            copy_word: 3,
            log_byte: 8,
            exp_byte: 50,
            sstore_set: 20000,
            sstore_reset: 5000,
            call_value: 9000,
            call_stipend: 2300,
            new_account: 25000,
            code_deposit_byte: 200,
            identity_base: 15,
            identity_word: 3,
            tx_base: 21000,
            tx_create: 32000,
            tx_data_zero: 4,
            tx_data_nonzero: 16,
        };
        for (k, v) in raw.dynamic {
            let slot = match k.as_str() {
                "memory_word" => &mut d.memory_word,
                "memory_quadratic_divisor" => &mut d.memory_quadratic_divisor,
                "keccak_word" => &mut d.keccak_word,
                "copy_word" => &mut d.copy_word,
                "log_byte" => &mut d.log_byte,
                "exp_byte" => &mut d.exp_byte,
                "sstore_set" => &mut d.sstore_set,
                "sstore_reset" => &mut d.sstore_reset,
                "call_value" => &mut d.call_value,
                "call_stipend" => &mut d.call_stipend,
                "new_account" => &mut d.new_account,
                "code_deposit_byte" => &mut d.code_deposit_byte,
                "identity_base" => &mut d.identity_base,
                "identity_word" => &mut d.identity_word,
                "tx_base" => &mut d.tx_base,
                "tx_create" => &mut d.tx_create,
                "tx_data_zero" => &mut d.tx_data_zero,
                "tx_data_nonzero" => &mut d.tx_data_nonzero,
                _ => return Err(GasTableError::UnknownKey(k)),
            };
            *slot = v;
        }
        if d.memory_quadratic_divisor == 0 {
            return Err(GasTableError::UnknownKey("memory_quadratic_divisor = 0".into()));
        }
        Ok(GasTable { static_costs, dynamic: d })
    }

    pub fn load(path: &Path) -> Result<Self, GasTableError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn static_cost(&self, opcode: u8) -> u64 {
        self.static_costs[opcode as usize]
    }

    pub fn set_static_cost(&mut self, opcode: u8, cost: u64) {
        self.static_costs[opcode as usize] = cost;
    }

    /// Total cost of holding `words` 32-byte words of memory.
    pub fn memory_cost(&self, words: u64) -> u64 {
        let d = &self.dynamic;
        words.saturating_mul(d.memory_word).saturating_add(words.saturating_mul(words) / d.memory_quadratic_divisor)
    }

    /// Fixed plus per-byte calldata cost charged before execution starts.
    pub fn intrinsic_gas(&self, data: &[u8], is_create: bool) -> u64 {
        let d = &self.dynamic;
        let zeros = data.iter().filter(|b| **b == 0).count() as u64;
        let nonzeros = data.len() as u64 - zeros;
        d.tx_base + if is_create { d.tx_create } else { 0 } + zeros * d.tx_data_zero + nonzeros * d.tx_data_nonzero
    }
}

impl Default for GasTable {
    fn default() -> Self {
        GasTable::parse(DEFAULT_GAS_TABLE).expect("shipped gas table parses")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let t = GasTable::default();
        assert_eq!(t.static_cost(opcode::ADD), 3);
        assert_eq!(t.static_cost(opcode::PUSH32), 3);
        assert_eq!(t.static_cost(opcode::SLOAD), 800);
        assert_eq!(t.dynamic.tx_base, 21000);
    }

    #[test]
    fn memory_cost_is_quadratic() {
        let t = GasTable::default();
        assert_eq!(t.memory_cost(0), 0);
        assert_eq!(t.memory_cost(1), 3);
        assert_eq!(t.memory_cost(1024), 3 * 1024 + 1024 * 1024 / 512);
    }

    #[test]
    fn intrinsic_counts_bytes() {
        let t = GasTable::default();
        assert_eq!(t.intrinsic_gas(&[0, 1, 2], false), 21000 + 4 + 32);
        assert_eq!(t.intrinsic_gas(&[], true), 53000);
    }

    #[test]
    fn override_and_reject_unknown() {
        let t = GasTable::parse("[opcodes]\nADD = 7\n").unwrap();
        assert_eq!(t.static_cost(opcode::ADD), 7);
        assert_eq!(t.static_cost(opcode::MUL), 0);
        assert!(matches!(GasTable::parse("[opcodes]\nFOO = 1\n"), Err(GasTableError::UnknownOpcode(_))));
        assert!(matches!(GasTable::parse("[dynamic]\nbar = 1\n"), Err(GasTableError::UnknownKey(_))));
    }
}
