//! Steps 2, 4 and 5 on the scenario fixtures and small constructed cases.

use std::collections::BTreeMap;

use ape_core::asm::Assembler;
use ape_core::evm::opcode::{self, *};
use ape_core::evm::types::selector;
use ape_core::evm::{
    deploy_contract, execute_transaction, Account, Address, DeployMode, Transaction, Word, WorldState,
};
use ape_core::fixtures::contracts::{self, calldata};
use ape_core::fixtures::scenarios::{self, ether};
use ape_core::fixtures::{Price, ScenarioBundle, StateFixture};
use ape_core::patch::{identify_patch_set, AbortCause, PatchPlan, ReplaceReason};
use ape_core::pipeline::{ape_attack, imitation_tx, PipelineConfig};
use ape_core::profit::{
    analyze_profitability, balance_delta, extract_transfers, Asset, Decision, ProceedCase, ProfitError, ProfitReport,
};
use ape_core::synth::{size_reduction, synthesize, SynthesizedContract, ZeroLengthVictim};
use ape_core::taint::{taint_replay, TaintReport};
use ape_core::trace::{build_dcfg, trace_transaction, Dcfg, Provenance};
use num_bigint::BigInt;
use num_rational::Rational64;

struct Analysis {
    dcfg: Dcfg,
    result: ape_core::evm::ExecutionResult,
    profit: ProfitReport,
    taint: TaintReport,
}

fn analyze(f: &StateFixture, tx_v: &Transaction, adversary: Address) -> Analysis {
    let (dcfg, result) = build_dcfg(&f.state, tx_v).unwrap();
    let profit = analyze_profitability(&dcfg, &result, f);
    let taint = taint_replay(&f.state, &imitation_tx(tx_v, adversary, f.state.nonce(&adversary)), &dcfg).unwrap();
    Analysis { dcfg, result, profit, taint }
}

fn plan_for(b: &ScenarioBundle) -> (Analysis, PatchPlan) {
    let a = analyze(&b.state_fixture, &b.victim_tx, b.adversary);
    let plan = identify_patch_set(&a.taint, &a.profit, &a.dcfg, &a.result, &b.state_fixture);
    (a, plan)
}

fn synth_for(b: &ScenarioBundle) -> (Analysis, PatchPlan, Vec<SynthesizedContract>) {
    let (a, plan) = plan_for(b);
    let s = &b.state_fixture.state;
    let out = synthesize(&plan, &a.dcfg, &a.taint, &a.profit, s, b.adversary, s.nonce(&b.adversary)).unwrap();
    (a, plan, out)
}

fn rich(s: &mut WorldState, a: Address) {
    s.accounts.insert(a, Account::with_balance(ether(100)));
}

// ---- profitability ----

#[test]
fn plain_transfer_deltas() {
    let (alice, bob) = (Address::from_low_u64(0xa1), Address::from_low_u64(0xb0));
    let mut f = StateFixture::new(WorldState::default());
    rich(&mut f.state, alice);
    let tx = Transaction::call(alice, bob, vec![]).with_value(ether(5)).with_gas(21_000, Word::from(3u64));
    let fee = BigInt::from(21_000 * 3);
    assert_eq!(balance_delta(&f, &tx, bob, Asset::Native).unwrap(), BigInt::from(5u64) * BigInt::from(10u64).pow(18));
    assert_eq!(
        balance_delta(&f, &tx, alice, Asset::Native).unwrap(),
        -(BigInt::from(5u64) * BigInt::from(10u64).pow(18)) - &fee
    );

    let (dcfg, r) = build_dcfg(&f.state, &tx).unwrap();
    let p = analyze_profitability(&dcfg, &r, &f);
    assert_eq!(p.sender_fee, fee);
    assert_eq!(p.beneficiaries.iter().copied().collect::<Vec<_>>(), vec![bob]);
    // bob's gain exactly offsets alice's transfer; her fee makes the sum negative.
    assert_eq!(p.decision, Decision::Abort);
}

#[test]
fn reverted_tx_moves_nothing() {
    let b = scenarios::guard();
    let mut tx = b.victim_tx.clone();
    tx.sender = b.adversary;
    let f = &b.state_fixture;
    assert_eq!(balance_delta(f, &tx, scenarios::lending_pool_address(), Asset::Native).unwrap(), BigInt::from(0));
    let (dcfg, r, _) = trace_transaction(&f.state, &tx).unwrap();
    assert!(extract_transfers(&dcfg, &r).is_empty());
}

#[test]
fn erc20_transfer_log_and_storage_agree() {
    let token = scenarios::deposit_token();
    let b = scenarios::mass_deposit();
    let mut f = b.state_fixture.clone();
    let (holder, to) = (Address::from_low_u64(0x401d), Address::from_low_u64(0x7000));
    rich(&mut f.state, holder);
    scenarios::set_token_balance(&mut f.state, token, holder, Word::from(50u64));
    let tx =
        Transaction::call(holder, token, calldata("transfer(address,uint256)", &[to.to_word(), Word::from(10u64)]));
    let (dcfg, r) = build_dcfg(&f.state, &tx).unwrap();
    let p = analyze_profitability(&dcfg, &r, &f);
    assert_eq!(p.asset_net(Asset::Token(token), to), BigInt::from(10));
    assert_eq!(balance_delta(&f, &tx, to, Asset::Token(token)).unwrap(), BigInt::from(10));
    assert!(p.cross_check_failures.is_empty());
    let unknown = Address::from_low_u64(0xdead);
    assert!(
        matches!(balance_delta(&f, &tx, to, Asset::Token(unknown)), Err(ProfitError::UnknownAssetLayout(a)) if a == unknown)
    );
}

#[test]
fn no_transfers_means_abort() {
    let b = scenarios::ecdsa_vault();
    let a = analyze(&b.state_fixture, &b.victim_tx, b.adversary);
    assert!(a.profit.transfers.is_empty());
    assert!(a.profit.beneficiaries.is_empty());
    assert_eq!(a.profit.decision, Decision::Abort);
}

#[test]
fn mass_deposit_vault_is_the_beneficiary() {
    let b = scenarios::mass_deposit();
    let a = analyze(&b.state_fixture, &b.victim_tx, b.adversary);
    assert!(a.profit.beneficiaries.contains(&scenarios::vault_address()));
    assert!(!a.profit.beneficiaries.contains(&b.victim_tx.sender));
    assert_eq!(a.profit.case, Some(ProceedCase::CollectiveProfit));
    assert_eq!(a.profit.decision, Decision::Proceed);
    assert!(a.profit.cross_check_failures.is_empty());
}

/// Sender pays 10 E that is burned, while contract C receives freshly minted
/// tokens priced at 4 E: the collective sum is 4 - 10 = -6.
#[test]
fn collective_loss_of_six_aborts() {
    let b = scenarios::mint();
    let mut f = b.state_fixture.clone();
    let token = scenarios::mint_token();
    let sender = Address::from_low_u64(0x5e4d);
    let c = Address::from_low_u64(0xc0c0);
    let x = Address::from_low_u64(0x1111);
    rich(&mut f.state, sender);
    f.state.accounts.insert(c, Account::with_code(contracts::tip_jar()));
    // 4 E for the whole minted amount of 4 units.
    f.price_table.insert(token, Price { num: ether(1), den: Word::one() });
    let mut a = Assembler::new();
    a.push(0u64).op(DUP1).op(DUP1).op(DUP1).op(CALLVALUE).push(0u64).op(GAS).op(CALL).op(POP);
    a.push_selector("increaseAllowance(address,uint256)").push(0xe0u64).op(SHL).push(0u64).op(MSTORE);
    a.push_addr(c).push(4u64).op(MSTORE).push(4u64).push(0x24u64).op(MSTORE);
    a.push(0u64).op(DUP1).push(0x44u64).push(0u64).op(DUP1).push_addr(token).op(GAS).op(CALL).op(POP).op(STOP);
    f.state.accounts.insert(x, Account::with_code(a.assemble().unwrap()));
    let tx = Transaction::call(sender, x, vec![]).with_value(ether(10)).with_gas(500_000, Word::zero());
    let (dcfg, r) = build_dcfg(&f.state, &tx).unwrap();
    assert!(r.is_success());
    let p = analyze_profitability(&dcfg, &r, &f);
    assert_eq!(p.per_account_net[&c], BigInt::from(4u64) * BigInt::from(10u64).pow(18));
    assert_eq!(p.sender_net, -BigInt::from(10u64) * BigInt::from(10u64).pow(18));
    let others: BigInt = p.beneficiaries.iter().filter(|a| **a != sender).map(|a| p.per_account_net[a].clone()).sum();
    assert_eq!(others + &p.sender_net, -BigInt::from(6u64) * BigInt::from(10u64).pow(18));
    assert_eq!(p.decision, Decision::Abort);
}

// ---- patch identification ----

#[test]
fn naive_case_has_an_empty_plan() {
    let (_, plan) = plan_for(&scenarios::mint());
    assert!(plan.abort.is_none());
    assert!(plan.is_empty());
    assert!(!plan.tx_to_redirect);
}

#[test]
fn relay_replaces_the_guard_and_its_hardcoding_caller() {
    let (_, plan) = plan_for(&scenarios::relay());
    let order: Vec<Address> = plan.replace_set.iter().map(|r| r.victim_address).collect();
    assert_eq!(order, vec![scenarios::relay_guard_address(), scenarios::router_address()]);
    assert_eq!(plan.replace_set[0].reason, ReplaceReason::Tainted);
    assert_eq!(plan.replace_set[1].reason, ReplaceReason::HardcodedCaller);
    assert!(plan.tx_to_redirect);
}

#[test]
fn tainted_token_is_an_asset_contract_abort() {
    // The token's balance check depends on CALLER through the mapping key.
    let b = scenarios::mass_deposit();
    let token = scenarios::deposit_token();
    let mut f = b.state_fixture.clone();
    let holder = Address::from_low_u64(0x401d);
    rich(&mut f.state, holder);
    scenarios::set_token_balance(&mut f.state, token, holder, Word::from(50u64));
    let tx = Transaction::call(
        holder,
        token,
        calldata("transfer(address,uint256)", &[Word::from(0x7000u64), Word::from(10u64)]),
    );
    let mut a = analyze(&f, &tx, b.adversary);
    assert!(a.taint.tainted_contracts.contains(&token));
    // Past the profitability gate on purpose.
    a.profit.decision = Decision::Proceed;
    let plan = identify_patch_set(&a.taint, &a.profit, &a.dcfg, &a.result, &f);
    let abort = plan.abort.expect("aborts");
    assert_eq!(abort.cause, AbortCause::AssetContract);
    assert_eq!(abort.contract, Some(token));
}

#[test]
fn plans_are_closed_and_topologically_ordered() {
    for b in scenarios::all() {
        let (a, plan) = plan_for(&b);
        if plan.abort.is_some() {
            continue;
        }
        let pos: BTreeMap<Address, usize> =
            plan.replace_set.iter().enumerate().map(|(i, r)| (r.victim_address, i)).collect();
        for e in a.dcfg.call_edges.iter().filter(|e| e.callee_frame.is_some() && pos.contains_key(&e.callee)) {
            let holder = match e.target_provenance {
                Provenance::CodeConstant { contract, .. } | Provenance::StorageSlot { contract, .. } => contract,
                _ => continue,
            };
            if holder == e.callee {
                continue;
            }
            assert!(pos.contains_key(&holder), "{}: holder {holder} missing", b.name);
            assert!(pos[&holder] > pos[&e.callee], "{}: {holder} deployed before {}", b.name, e.callee);
        }
    }
}

// ---- synthesis ----

fn jump_targets_land_on_jumpdests(code: &[u8]) {
    let ins = opcode::disassemble(code);
    let valid = opcode::jumpdests(code);
    for w in ins.windows(2) {
        if opcode::is_push(w[0].opcode) && matches!(w[1].opcode, JUMP | JUMPI) {
            let dest = Word::from_big_endian(&w[0].immediate).low_u64() as usize;
            assert!(dest < code.len() && valid[dest], "PUSH at {:#x} targets {dest:#x}", w[0].pc);
        }
    }
}

#[test]
fn guard_synthesis_pins_the_check_and_drops_the_revert() {
    let b = scenarios::guard();
    let (_, plan, out) = synth_for(&b);
    assert_eq!(plan.replace_set.len(), 1);
    assert_eq!(out.len(), 1);
    let c = &out[0];
    let code = &c.runtime_code;
    assert_eq!(c.pinned, BTreeMap::from([(0xb27, true)]));
    let at = c.offset_map[&0xb27];
    assert_eq!(&code[at..at + 3], &[SWAP1, POP, JUMP]);
    // The PUSH2 feeding the pinned jump now names the remapped 0xb2c.
    let push = c.offset_map[&0xb24];
    assert_eq!(code[push], PUSH2);
    let dest = u16::from_be_bytes([code[push + 1], code[push + 2]]) as usize;
    assert_eq!(dest, c.offset_map[&0xb2c]);
    assert_eq!(code[dest], JUMPDEST);
    // The revert block after the check is gone.
    for pc in 0xb28..=0xb2b {
        assert!(!c.offset_map.contains_key(&pc));
    }
    assert!(c.size_reduction_pct > Rational64::from_integer(0));
    jump_targets_land_on_jumpdests(code);

    // Deployed copy accepts any caller.
    let mut s = b.state_fixture.state.clone();
    let stranger = Address::from_low_u64(0x5742);
    s.accounts.insert(stranger, Account::with_balance(ether(1)));
    let d = deploy_contract(&mut s, stranger, code, DeployMode::DirectRuntime).unwrap();
    let mut tx = b.victim_tx.clone();
    (tx.sender, tx.to, tx.nonce) = (stranger, Some(d.address), s.nonce(&stranger));
    tx.gas_price = Word::zero();
    let r = execute_transaction(&s, &tx, None).unwrap();
    assert!(r.is_success());
    assert_eq!(r.state_after.balance(&stranger), ether(1) + ether(5));
}

#[test]
fn hardcoding_single_block_caller_is_byte_preserved() {
    let b = scenarios::relay();
    let guard2 = scenarios::relay_guard_address();
    let mut a = Assembler::new();
    a.push_selector("liquidate(address)").push(0xe0u64).op(SHL).push(0u64).op(MSTORE);
    a.push_addr(scenarios::borrower()).push(4u64).op(MSTORE);
    a.push(0u64).push(0u64).push(0x24u64).push(0u64).push(0u64).push_addr(guard2).op(GAS).op(CALL).op(POP).op(STOP);
    let r_code = a.assemble().unwrap();
    let r_addr = Address::from_low_u64(0x51b1);
    let mut bundle = b.clone();
    bundle.state_fixture.state.accounts.insert(r_addr, Account { nonce: 1, ..Account::with_code(r_code.clone()) });
    bundle.victim_tx.to = Some(r_addr);
    bundle.victim_tx.data = vec![];
    let (_, plan, out) = synth_for(&bundle);
    let order: Vec<Address> = plan.replace_set.iter().map(|r| r.victim_address).collect();
    assert_eq!(order, vec![guard2, r_addr]);
    let r_synth = out.iter().find(|c| c.victim_address == r_addr).unwrap();
    let g_synth = out.iter().find(|c| c.victim_address == guard2).unwrap();
    assert_eq!(r_synth.runtime_code.len(), r_code.len());
    let diff: Vec<usize> = (0..r_code.len()).filter(|i| r_code[*i] != r_synth.runtime_code[*i]).collect();
    let push_guard = opcode::disassemble(&r_code)
        .into_iter()
        .find(|i| i.opcode == PUSH20 && i.immediate == guard2.as_bytes())
        .unwrap()
        .pc;
    assert!(diff.iter().all(|i| (push_guard + 1..push_guard + 21).contains(i)));
    assert_eq!(&r_synth.runtime_code[push_guard + 1..push_guard + 21], g_synth.address.as_bytes());

    let o = ape_attack(&bundle.state_fixture, &bundle.victim_tx, bundle.adversary, &PipelineConfig::default());
    assert!(o.is_success(), "{:?}", o.abort);
}

#[test]
fn vault_replacement_keeps_entries_and_sweeps_the_token() {
    let b = scenarios::mass_deposit();
    let (_, plan, out) = synth_for(&b);
    assert_eq!(plan.replace_set.len(), 1);
    let v = &out[0];
    assert_eq!(v.victim_address, scenarios::vault_address());
    assert_eq!(v.sweep_assets, vec![scenarios::deposit_token()]);
    assert!(!v.sweep_native);
    let code = &v.runtime_code;
    let has = |needle: &[u8]| code.windows(needle.len()).any(|w| w == needle);
    assert!(has(&selector("depositOnBehalf(address,uint256)")));
    assert!(has(&selector("setOwner(address)")));
    assert!(has(&selector("transfer(address,uint256)")));
    assert!(has(b.adversary.as_bytes()));
    assert_eq!(v.storage_init.get(&Word::zero()), Some(&scenarios::deposit_token().to_word()));
    jump_targets_land_on_jumpdests(code);
    assert_eq!(plan.calldata_rewrites.len(), 1);
    assert_eq!(plan.calldata_rewrites[0].offset, 4);
}

#[test]
fn tip_jar_sweep_grows_the_contract() {
    let (_, _, out) = synth_for(&scenarios::tip_jar());
    assert_eq!(out.len(), 1);
    assert!(out[0].sweep_native);
    assert!(out[0].size_reduction_pct < Rational64::from_integer(0));
}

#[test]
fn synthesized_code_only_contains_victim_blocks_and_injections() {
    for b in scenarios::all() {
        let (a, plan) = plan_for(&b);
        if plan.abort.is_some() || plan.is_empty() {
            continue;
        }
        let s = &b.state_fixture.state;
        let out = synthesize(&plan, &a.dcfg, &a.taint, &a.profit, s, b.adversary, s.nonce(&b.adversary)).unwrap();
        for c in &out {
            let executed: std::collections::BTreeSet<usize> =
                a.dcfg.blocks_of(c.victim_address).iter().flat_map(|blk| blk.start_pc..=blk.end_pc).collect();
            assert!(c.origin_map.values().all(|old| executed.contains(old)), "{}", b.name);
            jump_targets_land_on_jumpdests(&c.runtime_code);
        }
    }
}

#[test]
fn size_reduction_examples() {
    assert_eq!(size_reduction(&[1; 10], &[1; 10]).unwrap(), Rational64::from_integer(0));
    assert_eq!(size_reduction(&[0; 1000], &[0; 400]).unwrap(), Rational64::from_integer(60));
    assert_eq!(size_reduction(&[0; 5], &[0; 60]).unwrap(), Rational64::from_integer(-1100));
    assert_eq!(size_reduction(&[], &[0; 4]), Err(ZeroLengthVictim));
}

#[test]
fn storage_values_naming_replaced_contracts_are_substituted() {
    // No copied slot may still name a replaced victim contract.
    let (_, _, out) = synth_for(&scenarios::relay());
    let g = out.iter().find(|c| c.victim_address == scenarios::relay_guard_address()).unwrap();
    for v in g.storage_init.values() {
        assert!(!g.address_rewrites.keys().any(|k| k.to_word() == *v));
    }
    // Slots that name no replaced contract keep their pre-state value.
    let b = scenarios::mass_deposit();
    let s = &b.state_fixture.state;
    let (_, _, out) = synth_for(&b);
    for (slot, v) in &out[0].storage_init {
        assert_eq!(s.storage(&scenarios::vault_address(), slot), *v);
    }
}
