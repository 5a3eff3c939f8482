//! Step 4: decides which victim contracts must be replaced and in what order
//! their replacements are deployed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::evm::{Address, ExecutionResult};
use crate::fixtures::contracts::{approval_topic, transfer_topic};
use crate::fixtures::StateFixture;
use crate::profit::{Decision, ProfitReport};
use crate::taint::TaintReport;
use crate::trace::{Dcfg, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplaceReason {
    Tainted,
    Beneficiary,
    HardcodedCaller,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Replacement {
    pub victim_address: Address,
    /// First reason the contract entered the set.
    pub reason: ReplaceReason,
    pub reasons: BTreeSet<ReplaceReason>,
    /// Indices into the DCFG call edges that enter this contract.
    pub caller_edges: Vec<usize>,
}

/// A 32-byte calldata word of the transaction that carries a replaced address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CalldataRewrite {
    pub offset: u64,
    pub victim_address: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortCause {
    AssetContract,
    BiBranch,
    Misalignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PatchAbort {
    pub cause: AbortCause,
    pub contract: Option<Address>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PatchPlan {
    /// Deploy order: callees before the contracts that hard-code them.
    pub replace_set: Vec<Replacement>,
    pub tx_to_redirect: bool,
    pub calldata_rewrites: Vec<CalldataRewrite>,
    pub abort: Option<PatchAbort>,
}

impl PatchPlan {
    /// Nothing to replace or rewrite beyond the sender substitution.
    pub fn is_empty(&self) -> bool {
        self.replace_set.is_empty() && self.calldata_rewrites.is_empty()
    }

    pub fn contains(&self, a: Address) -> bool {
        self.replace_set.iter().any(|r| r.victim_address == a)
    }

    pub fn to_json(&self, pretty: bool) -> String {
        if pretty {
            serde_json::to_string_pretty(self).expect("serializable")
        } else {
            serde_json::to_string(self).expect("serializable")
        }
    }

    fn aborted(cause: AbortCause, contract: Option<Address>, detail: String) -> Self {
        PatchPlan {
            replace_set: Vec::new(),
            tx_to_redirect: false,
            calldata_rewrites: Vec::new(),
            abort: Some(PatchAbort { cause, contract, detail }),
        }
    }
}

/// Contract whose code or storage supplies a hard-coded call target.
fn holder(p: &Provenance) -> Option<Address> {
    match p {
        Provenance::CodeConstant { contract, .. } | Provenance::StorageSlot { contract, .. } => Some(*contract),
        _ => None,
    }
}

/// Seeds the set with tainted contracts and non-sender beneficiary contracts,
/// then adds every contract that hard-codes the address of a member.
pub fn identify_patch_set(
    taint: &TaintReport,
    profit: &ProfitReport,
    dcfg: &Dcfg,
    victim_result: &ExecutionResult,
    fixture: &StateFixture,
) -> PatchPlan {
    if !taint.aligned_ok {
        return PatchPlan::aborted(AbortCause::Misalignment, None, "imitation diverged on an untainted branch".into());
    }
    if profit.decision == Decision::Abort {
        return PatchPlan::aborted(AbortCause::Misalignment, None, "profitability decision is abort".into());
    }
    let state = &fixture.state;
    let mut order: Vec<Address> = Vec::new();
    let mut reasons: BTreeMap<Address, BTreeSet<ReplaceReason>> = BTreeMap::new();
    let mut add = |a: Address, r: ReplaceReason, order: &mut Vec<Address>| {
        let e = reasons.entry(a).or_default();
        if e.is_empty() {
            order.push(a);
        }
        e.insert(r);
    };
    for c in &taint.tainted_contracts {
        add(*c, ReplaceReason::Tainted, &mut order);
    }
    for b in &profit.beneficiaries {
        if *b != dcfg.sender && state.has_code(b) {
            add(*b, ReplaceReason::Beneficiary, &mut order);
        }
    }

    let mut rewrites = BTreeSet::new();
    let mut i = 0;
    while i < order.len() {
        let member = order[i];
        i += 1;
        for e in dcfg.call_edges.iter().filter(|e| e.callee == member && e.callee_frame.is_some()) {
            match &e.target_provenance {
                Provenance::Calldata { frame: 0, offset } => {
                    rewrites.insert(CalldataRewrite { offset: *offset, victim_address: member });
                }
                p => {
                    if let Some(h) = holder(p) {
                        if h != member {
                            add(h, ReplaceReason::HardcodedCaller, &mut order);
                        }
                    }
                }
            }
        }
    }

    for a in &order {
        let emits_asset_events = victim_result.logs.iter().any(|l| {
            l.emitter == *a && l.topics.first().is_some_and(|t| *t == transfer_topic() || *t == approval_topic())
        });
        if emits_asset_events {
            return PatchPlan::aborted(AbortCause::AssetContract, Some(*a), "member emits asset events".into());
        }
    }
    for tb in &taint.tainted_blocks {
        if tb.bi_branch && reasons.contains_key(&tb.block.contract) {
            return PatchPlan::aborted(
                AbortCause::BiBranch,
                Some(tb.block.contract),
                format!("tainted JUMPI at {:#x} took both directions", tb.jumpi_pc),
            );
        }
    }

    // Hard-coded dependencies among members: holder embeds callee.
    let mut deps: BTreeMap<Address, BTreeSet<Address>> = BTreeMap::new();
    for e in &dcfg.call_edges {
        if let Some(h) = holder(&e.target_provenance) {
            if h != e.callee && reasons.contains_key(&h) && reasons.contains_key(&e.callee) {
                deps.entry(h).or_default().insert(e.callee);
            }
        }
    }
    let Some(deploy) = topo_order(&order, &deps) else {
        return PatchPlan::aborted(AbortCause::Misalignment, None, "replaced contracts reference each other".into());
    };

    let replace_set = deploy
        .into_iter()
        .map(|a| {
            let rs = reasons[&a].clone();
            let first = *rs.iter().next().expect("nonempty");
            Replacement {
                victim_address: a,
                reason: first,
                reasons: rs,
                caller_edges: dcfg
                    .call_edges
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.callee == a && e.callee_frame.is_some())
                    .map(|(i, _)| i)
                    .collect(),
            }
        })
        .collect::<Vec<_>>();
    let tx_to_redirect = dcfg.to.is_some_and(|to| replace_set.iter().any(|r| r.victim_address == to));
    PatchPlan { replace_set, tx_to_redirect, calldata_rewrites: rewrites.into_iter().collect(), abort: None }
}

/// Orders `nodes` so every dependency precedes its dependents, keeping
/// discovery order among independent nodes. `None` on a cycle.
fn topo_order(nodes: &[Address], deps: &BTreeMap<Address, BTreeSet<Address>>) -> Option<Vec<Address>> {
    let mut done: BTreeSet<Address> = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < nodes.len() {
        let next = nodes
            .iter()
            .find(|n| !done.contains(*n) && deps.get(*n).is_none_or(|d| d.iter().all(|x| done.contains(x))))?;
        done.insert(*next);
        out.push(*next);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topo_puts_callees_first_and_detects_cycles() {
        let a = Address::from_low_u64(1);
        let b = Address::from_low_u64(2);
        let mut deps = BTreeMap::new();
        deps.insert(b, BTreeSet::from([a]));
        assert_eq!(topo_order(&[b, a], &deps), Some(vec![a, b]));
        deps.insert(a, BTreeSet::from([b]));
        assert_eq!(topo_order(&[a, b], &deps), None);
    }
}
