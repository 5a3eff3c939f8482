//! Step orchestration: the naive baseline, the six-step attack with
//! fork validation, the mempool harness and outcome reporting.

pub mod mempool;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::evm::{execute_transaction, Address, ExecutionResult, Transaction, TxError, Word, WorldState};
use crate::fixtures::contracts::calldata;
use crate::fixtures::StateFixture;
use crate::par;
use crate::patch::{identify_patch_set, PatchPlan};
use crate::profit::{analyze_profitability, bigint_dec, decode_transfer_log, Asset, Decision};
use crate::synth::{init_code, synthesize, SynthesizedContract};
use crate::taint::{taint_replay_with, TaintDomain, TaintReport, DEFAULT_SOURCES};
use crate::trace::{build_dcfg, trace_transaction, Dcfg};
use crate::valuation::to_bigint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    Dcfg,
    Profitability,
    Taint,
    Patch,
    Synthesis,
    Validation,
}

impl Step {
    pub const ALL: [Step; 6] =
        [Step::Dcfg, Step::Profitability, Step::Taint, Step::Patch, Step::Synthesis, Step::Validation];

    pub fn label(self) -> &'static str {
        match self {
            Step::Dcfg => "DCFG",
            Step::Profitability => "Profitability",
            Step::Taint => "Taint",
            Step::Patch => "Patch",
            Step::Synthesis => "Synthesis",
            Step::Validation => "Validation",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    Naive,
    Ape,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AbortInfo {
    /// Step that gave up; `None` for the standalone naive baseline.
    pub step: Option<Step>,
    /// Short kebab-case cause used for grouping.
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineConfig {
    /// Charge the victim's fee as opportunity cost.
    pub opportunity_cost: bool,
    pub taint_sources: Vec<u8>,
    /// Injects a failure right after the given step completes.
    pub fail_at: Option<Step>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { opportunity_cost: true, taint_sources: DEFAULT_SOURCES.to_vec(), fail_at: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AttackOutcome {
    pub kind: OutcomeKind,
    pub abort: Option<AbortInfo>,
    pub tx_c: Option<Transaction>,
    pub deployments: Vec<SynthesizedContract>,
    /// Everything the adversary would broadcast, in order. Empty on abort.
    pub attack_txs: Vec<Transaction>,
    /// Native balance gained before fees.
    #[serde(with = "bigint_dec")]
    pub revenue_e: BigInt,
    #[serde(with = "bigint_dec")]
    pub gas_cost_e: BigInt,
    #[serde(with = "bigint_dec")]
    pub opportunity_cost_e: BigInt,
    #[serde(with = "bigint_dec")]
    pub net_profit_e: BigInt,
    /// Tokens received but not exchangeable; counted as zero.
    pub held_tokens: Vec<Address>,
    /// Seconds per completed step.
    pub timings: BTreeMap<Step, f64>,
    pub path_equivalent: Option<bool>,
    pub plan: Option<PatchPlan>,
    pub taint: Option<TaintReport>,
    /// State after the attack transactions, on success.
    #[serde(skip)]
    pub state_after: Option<WorldState>,
}

impl AttackOutcome {
    fn empty() -> Self {
        AttackOutcome {
            kind: OutcomeKind::Abort,
            abort: None,
            tx_c: None,
            deployments: Vec::new(),
            attack_txs: Vec::new(),
            revenue_e: BigInt::zero(),
            gas_cost_e: BigInt::zero(),
            opportunity_cost_e: BigInt::zero(),
            net_profit_e: BigInt::zero(),
            held_tokens: Vec::new(),
            timings: BTreeMap::new(),
            path_equivalent: None,
            plan: None,
            taint: None,
            state_after: None,
        }
    }

    fn abort(mut self, step: Option<Step>, code: &str, detail: impl Into<String>) -> Self {
        self.kind = OutcomeKind::Abort;
        self.abort = Some(AbortInfo { step, code: code.into(), detail: detail.into() });
        self.attack_txs.clear();
        self.state_after = None;
        self
    }

    pub fn is_success(&self) -> bool {
        self.kind != OutcomeKind::Abort
    }

    /// Attack generation time: the sum of the recorded step timings.
    pub fn total_time(&self) -> f64 {
        self.timings.values().sum()
    }

    pub fn to_json(&self, pretty: bool) -> String {
        if pretty {
            serde_json::to_string_pretty(self).expect("serializable")
        } else {
            serde_json::to_string(self).expect("serializable")
        }
    }
}

/// Replaces every 20-byte occurrence of `from` in `data` with `to`.
pub fn substitute_address(data: &[u8], from: Address, to: Address) -> Vec<u8> {
    let mut out = data.to_vec();
    let needle = from.as_bytes();
    let mut i = 0;
    while i + 20 <= out.len() {
        if &out[i..i + 20] == needle {
            out[i..i + 20].copy_from_slice(to.as_bytes());
            i += 20;
        } else {
            i += 1;
        }
    }
    out
}

/// The victim transaction re-sent by `adversary` with the sender address
/// string-replaced in the calldata.
pub fn imitation_tx(tx_v: &Transaction, adversary: Address, nonce: u64) -> Transaction {
    Transaction {
        sender: adversary,
        data: substitute_address(&tx_v.data, tx_v.sender, adversary),
        nonce,
        ..tx_v.clone()
    }
}

/// Read-only call; returns the first return word.
fn view(state: &WorldState, from: Address, to: Address, data: Vec<u8>) -> Option<Word> {
    let tx = Transaction::call(from, to, data).with_nonce(state.nonce(&from)).with_gas(1_000_000, Word::zero());
    let r = execute_transaction(state, &tx, None).ok()?;
    (r.is_success() && r.return_data.len() >= 32).then(|| Word::from_big_endian(&r.return_data[..32]))
}

/// Adversary transactions applied one after another on a private fork.
struct Fork {
    state: WorldState,
    adversary: Address,
    gas_price: Word,
    fees: BigInt,
    txs: Vec<Transaction>,
}

impl Fork {
    fn new(state: WorldState, adversary: Address, gas_price: Word) -> Self {
        Fork { state, adversary, gas_price, fees: BigInt::zero(), txs: Vec::new() }
    }

    fn run(&self, tx: &Transaction, trace: bool) -> Result<(ExecutionResult, Option<Dcfg>), TxError> {
        if trace {
            let (d, r, _) = trace_transaction(&self.state, tx)?;
            Ok((r, Some(d)))
        } else {
            execute_transaction(&self.state, tx, None).map(|r| (r, None))
        }
    }

    /// Sends `template` with the next nonce and a gas limit sized from a
    /// first run at the block limit.
    fn send(&mut self, template: Transaction, trace: bool) -> Result<(ExecutionResult, Option<Dcfg>), TxError> {
        let block_limit = self.state.block.gas_limit;
        let mut tx = template;
        tx.sender = self.adversary;
        tx.nonce = self.state.nonce(&self.adversary);
        tx.gas_price = self.gas_price;
        tx.gas_limit = block_limit;
        let probe = execute_transaction(&self.state, &tx, None)?;
        tx.gas_limit = (probe.gas_used + probe.gas_used / 4 + 25_000).min(block_limit);
        let mut out = self.run(&tx, trace)?;
        if out.0.status != probe.status {
            tx.gas_limit = block_limit;
            out = self.run(&tx, trace)?;
        }
        self.fees += to_bigint(Word::from(out.0.gas_used)) * to_bigint(tx.gas_price);
        self.state = out.0.state_after.clone();
        self.txs.push(tx);
        Ok(out)
    }

    fn balance(&self) -> BigInt {
        to_bigint(self.state.balance(&self.adversary))
    }

    /// Sells every received token through its fixture pool. Returns tokens
    /// that stay held.
    fn exchange(&mut self, fixture: &StateFixture, received: &BTreeSet<Address>) -> Result<Vec<Address>, String> {
        let mut held = Vec::new();
        for t in received {
            let bal =
                view(&self.state, self.adversary, *t, calldata("balanceOf(address)", &[self.adversary.to_word()]))
                    .unwrap_or_default();
            if bal.is_zero() {
                continue;
            }
            let Some(pool) = fixture.pool_for(*t).map(|p| p.pool_address) else {
                held.push(*t);
                continue;
            };
            let steps = [
                Transaction::call(self.adversary, *t, calldata("transfer(address,uint256)", &[pool.to_word(), bal])),
                Transaction::call(self.adversary, pool, calldata("sell(address)", &[self.adversary.to_word()])),
            ];
            for tx in steps {
                let (r, _) = self.send(tx, false).map_err(|e| e.to_string())?;
                if !r.is_success() {
                    return Err(format!("exchange of {t} failed: {:?}", r.status));
                }
            }
        }
        Ok(held)
    }
}

fn tokens_received(result: &ExecutionResult, adversary: Address) -> BTreeSet<Address> {
    result
        .logs
        .iter()
        .filter_map(decode_transfer_log)
        .filter(|t| t.to == adversary)
        .filter_map(|t| if let Asset::Token(a) = t.asset { Some(a) } else { None })
        .collect()
}

fn opportunity_cost(state: &WorldState, tx_v: &Transaction, cfg: &PipelineConfig) -> BigInt {
    if !cfg.opportunity_cost {
        return BigInt::zero();
    }
    match execute_transaction(state, tx_v, None) {
        Ok(r) => to_bigint(Word::from(r.gas_used)) * to_bigint(tx_v.gas_price),
        Err(_) => BigInt::zero(),
    }
}

/// Sends the imitation, exchanges what it earned, and applies the
/// profitability rule. Shared by the baseline and the attack's shortcut.
fn run_naive(
    fixture: &StateFixture,
    tx_v: &Transaction,
    adversary: Address,
    opp: BigInt,
    step: Option<Step>,
    mut out: AttackOutcome,
) -> AttackOutcome {
    let mut fork = Fork::new(fixture.state.clone(), adversary, tx_v.gas_price);
    let before = fork.balance();
    out.opportunity_cost_e = opp.clone();
    let result = match fork.send(imitation_tx(tx_v, adversary, 0), false) {
        Ok((r, _)) => r,
        Err(e) => return out.abort(step, "imitation-rejected", e.to_string()),
    };
    out.tx_c = fork.txs.last().cloned();
    if !result.is_success() {
        return out.abort(step, "imitation-reverted", format!("{:?}", result.status));
    }
    let held = match fork.exchange(fixture, &tokens_received(&result, adversary)) {
        Ok(h) => h,
        Err(e) => return out.abort(step, "exchange-failed", e),
    };
    settle(&mut out, &fork, before, opp, held);
    if !out.net_profit_e.is_positive() {
        let net = out.net_profit_e.clone();
        return out.abort(step, "unprofitable", format!("net {net} wei"));
    }
    out.kind = OutcomeKind::Naive;
    out.attack_txs = fork.txs;
    out.state_after = Some(fork.state);
    out
}

fn settle(out: &mut AttackOutcome, fork: &Fork, before: BigInt, opp: BigInt, held: Vec<Address>) {
    let delta = fork.balance() - before;
    out.gas_cost_e = fork.fees.clone();
    out.revenue_e = &delta + &fork.fees;
    out.net_profit_e = delta - opp;
    out.held_tokens = held;
}

/// Baseline: string-replace the sender and keep the result if it pays.
pub fn naive_imitate(
    fixture: &StateFixture,
    tx_v: &Transaction,
    adversary: Address,
    cfg: &PipelineConfig,
) -> AttackOutcome {
    let start = Instant::now();
    let opp = opportunity_cost(&fixture.state, tx_v, cfg);
    let mut out = run_naive(fixture, tx_v, adversary, opp, None, AttackOutcome::empty());
    out.timings.insert(Step::Validation, start.elapsed().as_secs_f64());
    out
}

/// Runs steps 1 to 6. Nothing is ever applied to `fixture`; on success the
/// resulting fork state is returned in the outcome.
pub fn ape_attack(
    fixture: &StateFixture,
    tx_v: &Transaction,
    adversary: Address,
    cfg: &PipelineConfig,
) -> AttackOutcome {
    let mut out = AttackOutcome::empty();
    let state = &fixture.state;
    let injected = |step: Step| cfg.fail_at == Some(step);
    macro_rules! timed {
        ($step:expr, $body:expr) => {{
            let s = Instant::now();
            let v = $body;
            out.timings.insert($step, s.elapsed().as_secs_f64());
            v
        }};
    }
    macro_rules! checkpoint {
        ($step:expr) => {
            if injected($step) {
                return out.abort(Some($step), "injected", "injected failure");
            }
        };
    }

    let (dcfg, victim_result) = match timed!(Step::Dcfg, build_dcfg(state, tx_v)) {
        Ok(v) => v,
        Err(e) => return out.abort(Some(Step::Dcfg), "victim-trace", e.to_string()),
    };
    checkpoint!(Step::Dcfg);

    let profit = timed!(Step::Profitability, analyze_profitability(&dcfg, &victim_result, fixture));
    if profit.decision == Decision::Abort {
        return out.abort(Some(Step::Profitability), "no-beneficiary", "no account profits from the victim");
    }
    checkpoint!(Step::Profitability);
    let opp = if cfg.opportunity_cost {
        to_bigint(Word::from(victim_result.gas_used)) * to_bigint(tx_v.gas_price)
    } else {
        BigInt::zero()
    };

    let probe = imitation_tx(tx_v, adversary, state.nonce(&adversary));
    let taint = match timed!(
        Step::Taint,
        taint_replay_with(state, &probe, &dcfg, TaintDomain::new(&cfg.taint_sources)).map(|(r, _)| r)
    ) {
        Ok(r) => r,
        Err(e) => return out.abort(Some(Step::Taint), "taint-replay", e.to_string()),
    };
    out.taint = Some(taint.clone());
    if !taint.aligned_ok {
        return out.abort(Some(Step::Taint), "untainted-divergence", "an untainted branch diverged");
    }
    checkpoint!(Step::Taint);

    let plan = timed!(Step::Patch, identify_patch_set(&taint, &profit, &dcfg, &victim_result, fixture));
    out.plan = Some(plan.clone());
    if let Some(a) = &plan.abort {
        let code = serde_json::to_value(a.cause).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        return out.abort(Some(Step::Patch), &code, a.detail.clone());
    }
    checkpoint!(Step::Patch);

    if plan.is_empty() {
        out.timings.insert(Step::Synthesis, 0.0);
        checkpoint!(Step::Synthesis);
        let s = Instant::now();
        let mut naive = run_naive(fixture, tx_v, adversary, opp, Some(Step::Validation), out);
        naive.timings.insert(Step::Validation, s.elapsed().as_secs_f64());
        if naive.is_success() && injected(Step::Validation) {
            return naive.abort(Some(Step::Validation), "injected", "injected failure");
        }
        return naive;
    }

    let contracts = match timed!(
        Step::Synthesis,
        synthesize(&plan, &dcfg, &taint, &profit, state, adversary, state.nonce(&adversary))
    ) {
        Ok(c) => c,
        Err(e) => return out.abort(Some(Step::Synthesis), "synthesis", e.to_string()),
    };
    out.deployments = contracts.clone();
    checkpoint!(Step::Synthesis);

    let s = Instant::now();
    let mut out = validate(fixture, tx_v, adversary, &plan, &contracts, &dcfg, opp, out);
    out.timings.insert(Step::Validation, s.elapsed().as_secs_f64());
    if out.is_success() && injected(Step::Validation) {
        return out.abort(Some(Step::Validation), "injected", "injected failure");
    }
    out
}

/// The imitation with sender substitution, target redirection and
/// calldata address rewrites applied.
pub fn build_tx_c(
    tx_v: &Transaction,
    adversary: Address,
    plan: &PatchPlan,
    contracts: &[SynthesizedContract],
) -> Transaction {
    let map: BTreeMap<Address, Address> = contracts.iter().map(|c| (c.victim_address, c.address)).collect();
    let mut tx = imitation_tx(tx_v, adversary, 0);
    if plan.tx_to_redirect {
        tx.to = tx.to.map(|t| map.get(&t).copied().unwrap_or(t));
    }
    for rw in &plan.calldata_rewrites {
        let start = rw.offset as usize + 12;
        if let Some(new) = map.get(&rw.victim_address) {
            if start + 20 <= tx.data.len() {
                tx.data[start..start + 20].copy_from_slice(new.as_bytes());
            }
        }
    }
    tx
}

#[allow(clippy::too_many_arguments)]
fn validate(
    fixture: &StateFixture,
    tx_v: &Transaction,
    adversary: Address,
    plan: &PatchPlan,
    contracts: &[SynthesizedContract],
    dcfg: &Dcfg,
    opp: BigInt,
    mut out: AttackOutcome,
) -> AttackOutcome {
    let step = Some(Step::Validation);
    let mut fork = Fork::new(fixture.state.clone(), adversary, tx_v.gas_price);
    let before = fork.balance();
    out.opportunity_cost_e = opp.clone();
    for c in contracts {
        match fork.send(Transaction::create(adversary, init_code(c)), false) {
            Ok((r, _)) if r.is_success() && r.created == Some(c.address) => {}
            Ok((r, _)) => {
                return out.abort(step, "deployment-failed", format!("{}: {:?}", c.victim_address, r.status));
            }
            Err(e) => return out.abort(step, "deployment-failed", e.to_string()),
        }
    }
    let (result, trace) = match fork.send(build_tx_c(tx_v, adversary, plan, contracts), true) {
        Ok(v) => v,
        Err(e) => return out.abort(step, "imitation-rejected", e.to_string()),
    };
    out.tx_c = fork.txs.last().cloned();
    if !result.is_success() {
        return out.abort(step, "imitation-reverted", format!("{:?}", result.status));
    }
    let imitation = trace.expect("traced run");
    let eq = path_equivalent(dcfg, &fixture.state, &imitation, contracts, adversary);
    out.path_equivalent = Some(eq.is_ok());
    if let Err(why) = eq {
        return out.abort(step, "path-mismatch", why);
    }
    let held = match fork.exchange(fixture, &tokens_received(&result, adversary)) {
        Ok(h) => h,
        Err(e) => return out.abort(step, "exchange-failed", e),
    };
    settle(&mut out, &fork, before, opp, held);
    if !out.net_profit_e.is_positive() {
        let net = out.net_profit_e.clone();
        return out.abort(step, "unprofitable", format!("net {net} wei"));
    }
    out.kind = OutcomeKind::Ape;
    out.attack_txs = fork.txs;
    out.state_after = Some(fork.state);
    out
}

fn expand(code: &[u8], blocks: &[crate::trace::BasicBlockRef]) -> Vec<usize> {
    let mut pcs = Vec::new();
    for b in blocks {
        let mut pc = b.start_pc;
        while pc <= b.end_pc && pc < code.len() {
            pcs.push(pc);
            pc += 1 + crate::evm::opcode::immediate_len(code[pc]);
        }
    }
    pcs
}

/// Checks that the imitation executed the victim's instruction sequence in
/// every frame, with synthesized offsets mapped back to victim offsets and
/// replaced addresses (and the sender) substituted. Frames spawned by
/// injected sweep code are excluded.
pub fn path_equivalent(
    victim: &Dcfg,
    victim_state: &WorldState,
    imitation: &Dcfg,
    contracts: &[SynthesizedContract],
    adversary: Address,
) -> Result<(), String> {
    let mut subst: BTreeMap<Address, Address> = contracts.iter().map(|c| (c.victim_address, c.address)).collect();
    subst.insert(victim.sender, adversary);
    let by_synth: BTreeMap<Address, &SynthesizedContract> = contracts.iter().map(|c| (c.address, c)).collect();

    let mut excluded: BTreeSet<usize> = BTreeSet::new();
    for e in &imitation.call_edges {
        if let (Some(cf), Some(c)) = (e.callee_frame, by_synth.get(&e.caller_code)) {
            if !c.origin_map.contains_key(&e.call_pc) {
                excluded.insert(cf);
            }
        }
    }
    for f in &imitation.frames {
        if f.parent.is_some_and(|p| excluded.contains(&p)) {
            excluded.insert(f.frame_index);
        }
    }
    let frames: Vec<_> = imitation.frames.iter().filter(|f| !excluded.contains(&f.frame_index)).collect();
    if frames.len() != victim.frames.len() {
        return Err(format!("{} frames, victim {}", frames.len(), victim.frames.len()));
    }
    for (v, i) in victim.frames.iter().zip(frames) {
        let expect = subst.get(&v.code_address).copied().unwrap_or(v.code_address);
        if i.code_address != expect || i.kind != v.kind {
            return Err(format!(
                "frame {}: entered {} ({:?}), expected {} ({:?})",
                v.frame_index, i.code_address, i.kind, expect, v.kind
            ));
        }
        let mut want = expand(&victim_state.code(&v.code_address), &v.blocks);
        want.dedup();
        let mut got: Vec<usize> = match by_synth.get(&i.code_address) {
            Some(c) => {
                expand(&c.runtime_code, &i.blocks).into_iter().filter_map(|pc| c.origin_map.get(&pc).copied()).collect()
            }
            None => expand(&victim_state.code(&v.code_address), &i.blocks),
        };
        got.dedup();
        if got != want {
            let at = got.iter().zip(&want).position(|(a, b)| a != b).unwrap_or(got.len().min(want.len()));
            return Err(format!("frame {} diverges at step {at}", v.frame_index));
        }
    }
    Ok(())
}

/// Runs the attack on every bundle, on the rayon pool when `parallel`.
pub fn run_corpus(
    bundles: &[crate::fixtures::ScenarioBundle],
    cfg: &PipelineConfig,
    parallel: bool,
) -> Vec<AttackOutcome> {
    par::map(bundles, parallel, |b| ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_replaces_every_occurrence() {
        let a = Address::from_low_u64(0xaa);
        let b = Address::from_low_u64(0xbb);
        let mut data = vec![1u8, 2];
        data.extend_from_slice(a.as_bytes());
        data.extend_from_slice(&[0; 12]);
        data.extend_from_slice(a.as_bytes());
        let out = substitute_address(&data, a, b);
        assert_eq!(&out[2..22], b.as_bytes());
        assert_eq!(&out[34..54], b.as_bytes());
        assert_eq!(out.len(), data.len());
    }
}
