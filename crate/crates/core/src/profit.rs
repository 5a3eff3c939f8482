//! Step 2: asset-transfer extraction and the beneficiary / abort decision.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::{BigInt, Sign};
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::evm::types::mapping_slot;
use crate::evm::{
    execute_transaction, Address, CallKind, ExecutionResult, Log, Transaction, TxError, Word, WorldState,
};
use crate::fixtures::contracts::transfer_topic;
use crate::fixtures::StateFixture;
use crate::hexfmt;
use crate::trace::Dcfg;
use crate::valuation::to_bigint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Asset {
    Native,
    Token(Address),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssetTransfer {
    pub asset: Asset,
    pub from: Address,
    pub to: Address,
    #[serde(with = "hexfmt::u256")]
    pub amount: Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Proceed,
    Abort,
}

/// Which non-abort rule applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProceedCase {
    SenderBenefits,
    CollectiveProfit,
}

/// Signed integers are written as decimal strings.
pub mod bigint_dec {
    use num_bigint::BigInt;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigInt, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigInt, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

mod bigint_map {
    use std::collections::BTreeMap;

    use num_bigint::BigInt;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::evm::Address;

    pub fn serialize<S: Serializer>(v: &BTreeMap<Address, BigInt>, s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|(a, n)| (*a, n.to_string())).collect::<BTreeMap<_, _>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Address, BigInt>, D::Error> {
        let raw = BTreeMap::<Address, String>::deserialize(d)?;
        raw.into_iter().map(|(a, s)| s.parse().map(|n| (a, n)).map_err(serde::de::Error::custom)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssetNet {
    pub asset: Asset,
    /// Net raw units per account.
    #[serde(with = "bigint_map")]
    pub per_account: BTreeMap<Address, BigInt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProfitReport {
    pub transfers: Vec<AssetTransfer>,
    pub per_asset: Vec<AssetNet>,
    /// Net value in wei per account.
    #[serde(with = "bigint_map")]
    pub per_account_net: BTreeMap<Address, BigInt>,
    pub beneficiaries: BTreeSet<Address>,
    /// Includes the transaction fee.
    #[serde(with = "bigint_dec")]
    pub sender_net: BigInt,
    /// Fee paid by the sender, derived from its balance change.
    #[serde(with = "bigint_dec")]
    pub sender_fee: BigInt,
    pub decision: Decision,
    pub case: Option<ProceedCase>,
    pub unpriced_assets: BTreeSet<Address>,
    /// Tokens whose Transfer events disagree with their balance storage.
    pub cross_check_failures: BTreeSet<Address>,
}

impl ProfitReport {
    /// Net raw units of `asset` received by `account` during the victim run.
    pub fn asset_net(&self, asset: Asset, account: Address) -> BigInt {
        self.per_asset
            .iter()
            .find(|a| a.asset == asset)
            .and_then(|a| a.per_account.get(&account).cloned())
            .unwrap_or_default()
    }

    /// Assets with a positive net flow into `account`.
    pub fn assets_received(&self, account: Address) -> Vec<Asset> {
        self.per_asset
            .iter()
            .filter(|a| a.per_account.get(&account).is_some_and(|n| n.is_positive()))
            .map(|a| a.asset)
            .collect()
    }
}

/// Decodes a standard ERC-20 Transfer event.
pub fn decode_transfer_log(log: &Log) -> Option<AssetTransfer> {
    if log.topics.len() != 3 || log.topics[0] != transfer_topic() || log.data.len() != 32 {
        return None;
    }
    Some(AssetTransfer {
        asset: Asset::Token(log.emitter),
        from: Address::from_word(log.topics[1]),
        to: Address::from_word(log.topics[2]),
        amount: Word::from_big_endian(&log.data),
    })
}

/// Every asset movement that persisted: native value carried by effective
/// frames, self-destruct payouts, then token Transfer events in log order.
pub fn extract_transfers(dcfg: &Dcfg, result: &ExecutionResult) -> Vec<AssetTransfer> {
    let mut out = Vec::new();
    if !result.is_success() {
        return out;
    }
    for f in &dcfg.frames {
        if !dcfg.frame_effective(f.frame_index) {
            continue;
        }
        if !f.value.is_zero() && matches!(f.kind, CallKind::Call | CallKind::Create) {
            out.push(AssetTransfer { asset: Asset::Native, from: f.caller, to: f.storage_address, amount: f.value });
        }
        if let Some(to) = f.selfdestruct_to {
            if !f.selfdestruct_value.is_zero() && to != f.storage_address {
                out.push(AssetTransfer {
                    asset: Asset::Native,
                    from: f.storage_address,
                    to,
                    amount: f.selfdestruct_value,
                });
            }
        }
    }
    out.extend(result.logs.iter().filter_map(decode_transfer_log));
    out
}

fn signed(w: Word) -> BigInt {
    to_bigint(w)
}

fn value_of(fixture: &StateFixture, asset: Asset, raw: &BigInt, unpriced: &mut BTreeSet<Address>) -> BigInt {
    match asset {
        Asset::Native => raw.clone(),
        Asset::Token(t) => {
            let magnitude = raw.magnitude();
            if magnitude.bits() > 256 {
                unpriced.insert(t);
                return BigInt::zero();
            }
            let amount = Word::from_big_endian(&magnitude.to_bytes_be());
            match fixture.quote_to_native(t, amount) {
                Ok(v) => BigInt::from_biguint(if raw.is_negative() { Sign::Minus } else { Sign::Plus }, v),
                Err(_) => {
                    unpriced.insert(t);
                    BigInt::zero()
                }
            }
        }
    }
}

/// Per-asset nets, in first-appearance order of the asset.
pub fn net_flows(transfers: &[AssetTransfer]) -> Vec<AssetNet> {
    let mut order: Vec<Asset> = Vec::new();
    let mut nets: BTreeMap<Asset, BTreeMap<Address, BigInt>> = BTreeMap::new();
    for t in transfers {
        if !nets.contains_key(&t.asset) {
            order.push(t.asset);
        }
        let m = nets.entry(t.asset).or_default();
        *m.entry(t.from).or_default() -= signed(t.amount);
        *m.entry(t.to).or_default() += signed(t.amount);
    }
    order.into_iter().map(|a| AssetNet { asset: a, per_account: nets.remove(&a).unwrap_or_default() }).collect()
}

/// Decides whether the victim's asset flows are worth imitating: proceed
/// when the sender itself profits, or when the other beneficiaries' combined
/// profit outweighs the sender's net. The sender's net includes its fee; the
/// zero address is the mint/burn counterparty and never a beneficiary.
pub fn analyze_profitability(dcfg: &Dcfg, result: &ExecutionResult, fixture: &StateFixture) -> ProfitReport {
    let transfers = extract_transfers(dcfg, result);
    let per_asset = net_flows(&transfers);
    let mut unpriced = BTreeSet::new();
    let mut per_account_net: BTreeMap<Address, BigInt> = BTreeMap::new();
    for an in &per_asset {
        for (acct, raw) in &an.per_account {
            let v = value_of(fixture, an.asset, raw, &mut unpriced);
            *per_account_net.entry(*acct).or_default() += v;
        }
    }
    let sender = dcfg.sender;
    let native_in = per_asset
        .iter()
        .find(|a| a.asset == Asset::Native)
        .and_then(|a| a.per_account.get(&sender).cloned())
        .unwrap_or_default();
    let balance_change = to_bigint(result.state_after.balance(&sender)) - to_bigint(fixture.state.balance(&sender));
    let sender_fee = native_in - balance_change;
    *per_account_net.entry(sender).or_default() -= &sender_fee;
    let beneficiaries: BTreeSet<Address> =
        per_account_net.iter().filter(|(a, v)| v.is_positive() && !a.is_zero()).map(|(a, _)| *a).collect();
    let sender_net = per_account_net.get(&sender).cloned().unwrap_or_default();
    let others: BigInt = beneficiaries.iter().filter(|b| **b != sender).map(|b| per_account_net[b].clone()).sum();
    let case = if beneficiaries.contains(&sender) {
        Some(ProceedCase::SenderBenefits)
    } else if (&others + &sender_net).is_positive() {
        Some(ProceedCase::CollectiveProfit)
    } else {
        None
    };
    let cross_check_failures = storage_cross_check(&per_asset, fixture, &result.state_after);
    ProfitReport {
        transfers,
        per_asset,
        per_account_net,
        beneficiaries,
        sender_net,
        sender_fee,
        decision: if case.is_some() { Decision::Proceed } else { Decision::Abort },
        case,
        unpriced_assets: unpriced,
        cross_check_failures,
    }
}

fn token_balance(state: &WorldState, token: Address, slot: Word, holder: Address) -> BigInt {
    to_bigint(state.storage(&token, &mapping_slot(holder, slot)))
}

/// Compares event-derived token nets with the balance storage diff for every
/// token with a declared layout. Mint/burn counterparties (the zero address)
/// hold no balance and are skipped.
fn storage_cross_check(per_asset: &[AssetNet], fixture: &StateFixture, after: &WorldState) -> BTreeSet<Address> {
    let mut failures = BTreeSet::new();
    for an in per_asset {
        let Asset::Token(t) = an.asset else { continue };
        let Some(layout) = fixture.token_layouts.get(&t) else { continue };
        for (acct, net) in &an.per_account {
            if acct.is_zero() {
                continue;
            }
            let diff = token_balance(after, t, layout.balances_slot, *acct)
                - token_balance(&fixture.state, t, layout.balances_slot, *acct);
            if &diff != net {
                failures.insert(t);
            }
        }
    }
    failures
}

#[derive(Debug, thiserror::Error)]
pub enum ProfitError {
    #[error("no balance layout declared for token {0}")]
    UnknownAssetLayout(Address),
    #[error(transparent)]
    Rejected(#[from] TxError),
}

/// Balance change of `account` in `asset` caused by executing `tx`.
pub fn balance_delta(
    fixture: &StateFixture,
    tx: &Transaction,
    account: Address,
    asset: Asset,
) -> Result<BigInt, ProfitError> {
    let layout = match asset {
        Asset::Token(t) => Some((t, fixture.token_layouts.get(&t).ok_or(ProfitError::UnknownAssetLayout(t))?)),
        Asset::Native => None,
    };
    let before = &fixture.state;
    let after = execute_transaction(before, tx, None)?.state_after;
    Ok(match layout {
        None => to_bigint(after.balance(&account)) - to_bigint(before.balance(&account)),
        Some((t, l)) => {
            token_balance(&after, t, l.balances_slot, account) - token_balance(before, t, l.balances_slot, account)
        }
    })
}
