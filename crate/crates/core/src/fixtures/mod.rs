//! World-state fixtures: JSON load/save, price tables and AMM quotes, the
//! reference contracts, and the bundled scenarios.

pub mod contracts;
pub mod corpus;
pub mod scenarios;

use std::collections::BTreeMap;
use std::path::Path;

use bytes::Bytes;
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::evm::{execute_transaction, Account, Address, BlockContext, Status, Transaction, Word, WorldState};
use crate::hexfmt::{self, HexError};
use crate::valuation::to_biguint;

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Hex(#[from] HexError),
    #[error("cannot read `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("victim transaction does not succeed on the fixture state: {0:?}")]
    IllFormed(Status),
    #[error("victim transaction rejected: {0}")]
    Rejected(#[from] crate::evm::TxError),
}

/// Price of one smallest token unit in wei, as a nonnegative rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Price {
    #[serde(with = "hexfmt::u256")]
    pub num: Word,
    #[serde(with = "hexfmt::u256")]
    pub den: Word,
}

impl Price {
    pub fn per_unit(wei: u64) -> Self {
        Price { num: Word::from(wei), den: Word::one() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AmmPool {
    pub pool_address: Address,
    pub token_address: Address,
    #[serde(with = "hexfmt::u256")]
    pub reserve_token: Word,
    #[serde(with = "hexfmt::u256")]
    pub reserve_e: Word,
}

impl AmmPool {
    /// Constant-product output with a 0.3% fee, floor division.
    pub fn quote(&self, amount: Word) -> BigUint {
        let a = to_biguint(amount);
        let num = &a * to_biguint(self.reserve_e) * 997u32;
        let den = to_biguint(self.reserve_token) * 1000u32 + &a * 997u32;
        if den == BigUint::default() {
            return BigUint::default();
        }
        num / den
    }
}

/// Where a token keeps its balances: `keccak256(holder . balancesSlot)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TokenLayout {
    #[serde(with = "hexfmt::u256")]
    pub balances_slot: Word,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateFixture {
    pub state: WorldState,
    pub price_table: BTreeMap<Address, Price>,
    pub amm_pools: Vec<AmmPool>,
    pub token_layouts: BTreeMap<Address, TokenLayout>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PricingError {
    #[error("no price or pool for asset {0}")]
    UnknownAsset(Address),
}

impl StateFixture {
    pub fn new(state: WorldState) -> Self {
        StateFixture { state, price_table: BTreeMap::new(), amm_pools: Vec::new(), token_layouts: BTreeMap::new() }
    }

    pub fn pool_for(&self, token: Address) -> Option<&AmmPool> {
        self.amm_pools.iter().find(|p| p.token_address == token)
    }

    /// Values `amount` of `asset` in wei: the price table first, then the
    /// asset's AMM pool.
    pub fn quote_to_native(&self, asset: Address, amount: Word) -> Result<BigUint, PricingError> {
        if let Some(p) = self.price_table.get(&asset) {
            if p.den.is_zero() {
                return Err(PricingError::UnknownAsset(asset));
            }
            return Ok(to_biguint(amount) * to_biguint(p.num) / to_biguint(p.den));
        }
        if let Some(pool) = self.pool_for(asset) {
            return Ok(pool.quote(amount));
        }
        Err(PricingError::UnknownAsset(asset))
    }

    pub fn is_priced(&self, asset: Address) -> bool {
        self.price_table.contains_key(&asset) || self.pool_for(asset).is_some()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&RawFixture::from(self.clone())).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, FixtureError> {
        from_json_with_path(text)
    }
}

fn from_json_with_path<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, FixtureError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        FixtureError::Schema { path, message: e.into_inner().to_string() }
    })
}

pub fn load_fixture(path: impl AsRef<Path>) -> Result<StateFixture, FixtureError> {
    StateFixture::from_json(&read(path.as_ref())?)
}

pub fn save_fixture(fixture: &StateFixture, path: impl AsRef<Path>) -> Result<(), FixtureError> {
    let p = path.as_ref();
    std::fs::write(p, fixture.to_json()).map_err(|source| FixtureError::Io { path: p.display().to_string(), source })
}

fn read(path: &Path) -> Result<String, FixtureError> {
    std::fs::read_to_string(path).map_err(|source| FixtureError::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawAccount {
    #[serde(with = "hexfmt::u256", default)]
    balance: Word,
    #[serde(with = "hexfmt::u64q", default)]
    nonce: u64,
    #[serde(with = "hexfmt::bytes", default)]
    code: Vec<u8>,
    #[serde(default)]
    storage: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawFixture {
    accounts: BTreeMap<String, RawAccount>,
    block_context: BlockContext,
    #[serde(default)]
    price_table: BTreeMap<String, Price>,
    #[serde(default)]
    amm_pools: Vec<AmmPool>,
    #[serde(default)]
    token_layouts: BTreeMap<String, TokenLayout>,
}

fn schema(path: String, message: impl ToString) -> FixtureError {
    FixtureError::Schema { path, message: message.to_string() }
}

fn parse_key(section: &str, key: &str) -> Result<Address, FixtureError> {
    key.parse::<Address>().map_err(|e| schema(format!("{section}.{key}"), e))
}

impl TryFrom<RawFixture> for StateFixture {
    type Error = FixtureError;

    fn try_from(raw: RawFixture) -> Result<Self, FixtureError> {
        let mut state = WorldState::new(raw.block_context);
        for (key, acct) in raw.accounts {
            let addr = parse_key("accounts", &key)?;
            let mut storage = BTreeMap::new();
            for (k, v) in acct.storage {
                let at = format!("accounts.{key}.storage.{k}");
                let k = hexfmt::parse_word32(&k).map_err(|e| schema(at.clone(), e))?;
                let v = hexfmt::parse_word32(&v).map_err(|e| schema(at, e))?;
                if !v.is_zero() {
                    storage.insert(k, v);
                }
            }
            state.accounts.insert(
                addr,
                Account { balance: acct.balance, nonce: acct.nonce, code: Bytes::from(acct.code), storage },
            );
        }
        let mut price_table = BTreeMap::new();
        for (key, p) in raw.price_table {
            let addr = parse_key("priceTable", &key)?;
            if p.den.is_zero() {
                return Err(schema(format!("priceTable.{key}.den"), "denominator must be nonzero"));
            }
            price_table.insert(addr, p);
        }
        let mut token_layouts = BTreeMap::new();
        for (key, l) in raw.token_layouts {
            token_layouts.insert(parse_key("tokenLayouts", &key)?, l);
        }
        Ok(StateFixture { state, price_table, amm_pools: raw.amm_pools, token_layouts })
    }
}

impl From<StateFixture> for RawFixture {
    fn from(f: StateFixture) -> Self {
        let accounts = f
            .state
            .accounts
            .into_iter()
            .map(|(a, acct)| {
                let storage = acct
                    .storage
                    .iter()
                    .filter(|(_, v)| !v.is_zero())
                    .map(|(k, v)| (hexfmt::fmt_word32(k), hexfmt::fmt_word32(v)))
                    .collect();
                (
                    a.to_string(),
                    RawAccount { balance: acct.balance, nonce: acct.nonce, code: acct.code.to_vec(), storage },
                )
            })
            .collect();
        RawFixture {
            accounts,
            block_context: f.state.block,
            price_table: f.price_table.into_iter().map(|(a, p)| (a.to_string(), p)).collect(),
            amm_pools: f.amm_pools,
            token_layouts: f.token_layouts.into_iter().map(|(a, l)| (a.to_string(), l)).collect(),
        }
    }
}

impl Serialize for StateFixture {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawFixture::from(self.clone()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateFixture {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawFixture::deserialize(d)?;
        StateFixture::try_from(raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectedOutcome {
    NaiveSucceeds,
    ApeSucceeds,
    Abort,
}

/// A fixture state plus the victim transaction to imitate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioBundle {
    pub name: String,
    pub state_fixture: StateFixture,
    pub victim_tx: Transaction,
    pub adversary: Address,
    pub expected_outcome: ExpectedOutcome,
    #[serde(default)]
    pub notes: String,
}

impl ScenarioBundle {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    /// Parses and checks that the victim transaction succeeds on the state.
    pub fn from_json(text: &str) -> Result<Self, FixtureError> {
        let b: ScenarioBundle = from_json_with_path(text)?;
        b.check_well_formed()?;
        Ok(b)
    }

    pub fn check_well_formed(&self) -> Result<(), FixtureError> {
        let r = execute_transaction(&self.state_fixture.state, &self.victim_tx, None)?;
        if !r.is_success() {
            return Err(FixtureError::IllFormed(r.status));
        }
        Ok(())
    }
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ScenarioBundle, FixtureError> {
    ScenarioBundle::from_json(&read(path.as_ref())?)
}

pub fn load_transaction(path: impl AsRef<Path>) -> Result<Transaction, FixtureError> {
    from_json_with_path(&read(path.as_ref())?)
}

pub fn load_transactions(path: impl AsRef<Path>) -> Result<Vec<Transaction>, FixtureError> {
    from_json_with_path(&read(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_fixture_is_empty_state() {
        let f = StateFixture::from_json(r#"{"accounts":{},"blockContext":{"number":1,"timestamp":"0x5f5e1000","coinbase":"0x00000000000000000000000000000000000000c0","gasLimit":"0x1c9c380","chainId":"0x1","baseGasPrice":"0x0"}}"#).unwrap();
        assert!(f.state.accounts.is_empty());
        assert_eq!(f.state.block.number, 1);
    }

    #[test]
    fn short_address_key_is_named() {
        let bad = "0x00000000000000000000000000000000000000";
        let text = format!(
            r#"{{"accounts":{{"{bad}":{{}}}},"blockContext":{{"number":"0x1","timestamp":"0x1","coinbase":"0x00000000000000000000000000000000000000c0","gasLimit":"0x1","chainId":"0x1","baseGasPrice":"0x0"}}}}"#
        );
        let err = StateFixture::from_json(&text).unwrap_err().to_string();
        assert!(err.contains(bad), "{err}");
    }

    #[test]
    fn linear_and_amm_quotes() {
        let t = Address::from_low_u64(7);
        let mut f = StateFixture::new(WorldState::default());
        f.price_table.insert(t, Price::per_unit(2));
        assert_eq!(f.quote_to_native(t, Word::from(10)).unwrap(), BigUint::from(20u32));
        assert_eq!(f.quote_to_native(t, Word::zero()).unwrap(), BigUint::default());
        let pool = AmmPool {
            pool_address: Address::from_low_u64(8),
            token_address: Address::from_low_u64(9),
            reserve_token: Word::from(1000),
            reserve_e: Word::from(1000),
        };
        // 100*1000*997 / (1000*1000 + 100*997) = 99_700_000 / 1_099_700
        assert_eq!(pool.quote(Word::from(100)), BigUint::from(90u32));
        assert!(f.quote_to_native(Address::from_low_u64(99), Word::one()).is_err());
    }
}
