use std::collections::BTreeMap;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::types::{Address, Word};
use crate::hexfmt;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Account {
    pub balance: Word,
    pub nonce: u64,
    pub code: Bytes,
    pub storage: BTreeMap<Word, Word>,
}

impl Account {
    pub fn with_balance(balance: Word) -> Self {
        Account { balance, ..Default::default() }
    }

    pub fn with_code(code: impl Into<Bytes>) -> Self {
        Account { code: code.into(), ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.balance.is_zero() && self.nonce == 0 && self.code.is_empty()
    }

    pub fn sload(&self, key: &Word) -> Word {
        self.storage.get(key).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BlockContext {
    #[serde(with = "hexfmt::u64q")]
    pub number: u64,
    #[serde(with = "hexfmt::u64q")]
    pub timestamp: u64,
    pub coinbase: Address,
    #[serde(with = "hexfmt::u64q")]
    pub gas_limit: u64,
    #[serde(with = "hexfmt::u64q")]
    pub chain_id: u64,
    #[serde(with = "hexfmt::u256")]
    pub base_gas_price: Word,
}

impl Default for BlockContext {
    fn default() -> Self {
        BlockContext {
            number: 1,
            timestamp: 1_600_000_000,
            coinbase: Address::from_low_u64(0xc0ffee),
            gas_limit: 30_000_000,
            chain_id: 1,
            base_gas_price: Word::zero(),
        }
    }
}

/// The ledger state: every account plus the context of the block being built.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    pub accounts: BTreeMap<Address, Account>,
    pub block: BlockContext,
}

impl WorldState {
    pub fn new(block: BlockContext) -> Self {
        WorldState { accounts: BTreeMap::new(), block }
    }

    pub fn account(&self, a: &Address) -> Option<&Account> {
        self.accounts.get(a)
    }

    pub fn account_mut(&mut self, a: Address) -> &mut Account {
        self.accounts.entry(a).or_default()
    }

    pub fn balance(&self, a: &Address) -> Word {
        self.accounts.get(a).map(|x| x.balance).unwrap_or_default()
    }

    pub fn nonce(&self, a: &Address) -> u64 {
        self.accounts.get(a).map(|x| x.nonce).unwrap_or(0)
    }

    pub fn code(&self, a: &Address) -> Bytes {
        self.accounts.get(a).map(|x| x.code.clone()).unwrap_or_default()
    }

    pub fn has_code(&self, a: &Address) -> bool {
        self.accounts.get(a).is_some_and(|x| !x.code.is_empty())
    }

    pub fn storage(&self, a: &Address, key: &Word) -> Word {
        self.accounts.get(a).map(|x| x.sload(key)).unwrap_or_default()
    }

    pub fn set_storage(&mut self, a: Address, key: Word, value: Word) {
        let acct = self.account_mut(a);
        if value.is_zero() {
            acct.storage.remove(&key);
        } else {
            acct.storage.insert(key, value);
        }
    }

    /// Sum of native balances over all accounts (wide to avoid overflow).
    pub fn total_native(&self) -> num_bigint::BigUint {
        self.accounts.values().map(|a| crate::valuation::to_biguint(a.balance)).sum()
    }

    /// Exact copy of the state for later rollback.
    pub fn snapshot(&self) -> WorldState {
        self.clone()
    }

    pub fn rollback(&mut self, snapshot: WorldState) {
        *self = snapshot;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transaction {
    pub sender: Address,
    pub to: Option<Address>,
    #[serde(with = "hexfmt::u256")]
    pub value: Word,
    #[serde(with = "hexfmt::bytes")]
    pub data: Vec<u8>,
    #[serde(with = "hexfmt::u64q")]
    pub gas_limit: u64,
    #[serde(with = "hexfmt::u256")]
    pub gas_price: Word,
    #[serde(with = "hexfmt::u64q")]
    pub nonce: u64,
}

impl Transaction {
    pub fn call(sender: Address, to: Address, data: Vec<u8>) -> Self {
        Transaction {
            sender,
            to: Some(to),
            value: Word::zero(),
            data,
            gas_limit: 1_000_000,
            gas_price: Word::from(1_000_000_000u64),
            nonce: 0,
        }
    }

    pub fn create(sender: Address, init_code: Vec<u8>) -> Self {
        Transaction { to: None, ..Transaction::call(sender, Address::ZERO, init_code) }
    }

    pub fn with_nonce(mut self, nonce: u64) -> Self {
        self.nonce = nonce;
        self
    }

    pub fn with_value(mut self, value: Word) -> Self {
        self.value = value;
        self
    }

    pub fn with_gas(mut self, gas_limit: u64, gas_price: Word) -> Self {
        self.gas_limit = gas_limit;
        self.gas_price = gas_price;
        self
    }

    /// Maximum fee the sender must be able to cover upfront.
    pub fn max_fee(&self) -> Word {
        self.gas_price.saturating_mul(Word::from(self.gas_limit))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Log {
    pub emitter: Address,
    #[serde(with = "word_list")]
    pub topics: Vec<Word>,
    #[serde(with = "hexfmt::bytes")]
    pub data: Vec<u8>,
}

mod word_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Word], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(hexfmt::fmt_word32))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Word>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.iter().map(|s| hexfmt::parse_word32(s).map_err(serde::de::Error::custom)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaltReason {
    OutOfGas,
    StackUnderflow,
    StackOverflow,
    InvalidJump,
    InvalidOpcode,
    StaticViolation,
    CallDepth,
    AddressCollision,
    Unsupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "kebab-case")]
pub enum Status {
    Success,
    Revert,
    HaltError(HaltReason),
}

impl Status {
    pub fn is_success(&self) -> bool {
        matches!(self, Status::Success)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub status: Status,
    pub gas_used: u64,
    pub return_data: Vec<u8>,
    pub logs: Vec<Log>,
    pub created: Option<Address>,
    pub state_after: WorldState,
}

impl ExecutionResult {
    pub fn is_success(&self) -> bool {
        self.status.is_success()
    }
}
