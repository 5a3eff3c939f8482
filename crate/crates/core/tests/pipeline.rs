use ape_core::evm::{execute_transaction, Account, Address, Transaction, Word};
use ape_core::fixtures::scenarios::{self, ether, GWEI};
use ape_core::fixtures::StateFixture;
use ape_core::pipeline::mempool::{simulate_mempool, MempoolConfig, MempoolSim};
use ape_core::pipeline::report::{report, report_with};
use ape_core::pipeline::{ape_attack, naive_imitate, run_corpus, OutcomeKind, PipelineConfig, Step};
use num_bigint::BigInt;

fn wei(w: Word) -> BigInt {
    BigInt::parse_bytes(w.to_string().as_bytes(), 10).unwrap()
}

#[test]
fn guard_naive_reverts_ape_succeeds() {
    let b = scenarios::guard();
    let cfg = PipelineConfig::default();
    let n = naive_imitate(&b.state_fixture, &b.victim_tx, b.adversary, &cfg);
    assert_eq!(n.kind, OutcomeKind::Abort);
    assert_eq!(n.abort.unwrap().code, "imitation-reverted");
    let a = ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, &cfg);
    assert_eq!(a.kind, OutcomeKind::Ape);
    assert_eq!(a.deployments.len(), 1);
    assert!(a.net_profit_e > BigInt::from(0));
    assert_eq!(a.path_equivalent, Some(true));
    assert_eq!(a.timings.len(), Step::ALL.len());
    // Adversary ends with the 5 E liquidation payout minus fees and opportunity cost.
    let s0 = &b.state_fixture.state;
    let s1 = a.state_after.as_ref().unwrap();
    let gained = wei(s1.balance(&b.adversary)) - wei(s0.balance(&b.adversary));
    assert_eq!(gained, wei(ether(5)) - &a.gas_cost_e);
    assert_eq!(a.net_profit_e, gained - &a.opportunity_cost_e);
}

#[test]
fn mass_deposit_sweeps_every_deposited_token() {
    let b = scenarios::mass_deposit();
    let a = ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, &PipelineConfig::default());
    assert_eq!(a.kind, OutcomeKind::Ape);
    assert_eq!(a.deployments[0].victim_address, scenarios::vault_address());
    let pool = b.state_fixture.pool_for(scenarios::deposit_token()).unwrap();
    let deposited: Word = ether(1000);
    let quote = BigInt::from(pool.quote(deposited));
    assert_eq!(a.revenue_e, quote);
    assert_eq!(a.net_profit_e, quote - &a.gas_cost_e - &a.opportunity_cost_e);
    assert!(a.held_tokens.is_empty());
}

#[test]
fn ecdsa_vault_never_succeeds() {
    let b = scenarios::ecdsa_vault();
    let cfg = PipelineConfig::default();
    assert!(!ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, &cfg).is_success());
    assert!(!naive_imitate(&b.state_fixture, &b.victim_tx, b.adversary, &cfg).is_success());
}

#[test]
fn mint_scenario_is_a_naive_success() {
    let b = scenarios::mint();
    let cfg = PipelineConfig::default();
    let n = naive_imitate(&b.state_fixture, &b.victim_tx, b.adversary, &cfg);
    let a = ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, &cfg);
    assert_eq!(n.kind, OutcomeKind::Naive);
    assert_eq!(a.kind, OutcomeKind::Naive);
    assert_eq!(n.tx_c, a.tx_c);
    let pool = b.state_fixture.pool_for(scenarios::mint_token()).unwrap();
    assert_eq!(n.revenue_e, BigInt::from(pool.quote(scenarios::minted_amount())));
    assert_eq!(a.timings[&Step::Synthesis], 0.0);
}

#[test]
fn zero_beneficiary_flows_abort() {
    let (alice, bob) = (Address::from_low_u64(0xa1), Address::from_low_u64(0xb0));
    let mut f = StateFixture::new(Default::default());
    f.state.accounts.insert(alice, Account::with_balance(ether(10)));
    f.state.accounts.insert(scenarios::adversary(), Account::with_balance(ether(10)));
    let tx = Transaction::call(alice, bob, vec![]).with_gas(21_000, scenarios::victim_gas_price());
    let n = naive_imitate(&f, &tx, scenarios::adversary(), &PipelineConfig::default());
    assert_eq!(n.kind, OutcomeKind::Abort);
    assert!(n.net_profit_e <= BigInt::from(0));
}

#[test]
fn opportunity_cost_can_be_switched_off() {
    let b = scenarios::guard();
    let cfg = PipelineConfig { opportunity_cost: false, ..Default::default() };
    let a = ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, &cfg);
    assert_eq!(a.opportunity_cost_e, BigInt::from(0));
    let fee = BigInt::from(b.victim_tx.gas_limit) * wei(b.victim_tx.gas_price);
    let with = ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, &PipelineConfig::default());
    assert!(with.opportunity_cost_e > BigInt::from(0) && with.opportunity_cost_e <= fee);
    assert_eq!(a.net_profit_e - with.net_profit_e, with.opportunity_cost_e);
}

#[test]
fn aborts_leave_no_trace() {
    for b in scenarios::all() {
        for step in Step::ALL {
            let cfg = PipelineConfig { fail_at: Some(step), ..Default::default() };
            let before = b.state_fixture.state.clone();
            let o = ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, &cfg);
            assert_eq!(b.state_fixture.state, before);
            if !o.is_success() {
                assert!(o.state_after.is_none() && o.attack_txs.is_empty(), "{} {step:?}", b.name);
            }
        }
    }
}

#[test]
fn outcome_json_round_trips() {
    let b = scenarios::relay();
    let a = ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, &PipelineConfig::default());
    let v: serde_json::Value = serde_json::from_str(&a.to_json(false)).unwrap();
    assert_eq!(v["kind"], "ape");
    assert_eq!(v["deployments"].as_array().unwrap().len(), 2);
    assert_eq!(v["netProfitE"].as_str().unwrap(), a.net_profit_e.to_string());
}

// ---- mempool ----

fn sim(fixture: StateFixture, pending: Vec<Transaction>) -> MempoolSim {
    MempoolSim { pending, fixture, block_gas_limit: 30_000_000 }
}

#[test]
fn empty_mempool_builds_an_empty_block() {
    let r = simulate_mempool(
        &sim(scenarios::guard().state_fixture, vec![]),
        scenarios::adversary(),
        &MempoolConfig::default(),
    );
    assert!(r.block.is_empty() && r.outcomes.is_empty() && r.metrics.is_empty());
    assert_eq!(r.gas_used, 0);
}

fn transfer(i: u64, gwei: u64) -> Transaction {
    Transaction::call(Address::from_low_u64(0x5e00 + i), Address::from_low_u64(0x7000 + i), vec![])
        .with_gas(21_000, Word::from(gwei * GWEI))
        .with_value(Word::from(1u64))
}

fn funded(f: &mut StateFixture, txs: &[Transaction]) {
    for t in txs {
        f.state.accounts.entry(t.sender).or_insert_with(|| Account::with_balance(ether(1)));
    }
}

#[test]
fn plain_transfers_keep_gas_price_order() {
    let mut f = scenarios::guard().state_fixture;
    let txs = vec![transfer(0, 5), transfer(1, 40), transfer(2, 12)];
    funded(&mut f, &txs);
    for parallel in [false, true] {
        let cfg = MempoolConfig { parallel, ..Default::default() };
        let r = simulate_mempool(&sim(f.clone(), txs.clone()), scenarios::adversary(), &cfg);
        assert_eq!(r.block, vec![txs[1].clone(), txs[2].clone(), txs[0].clone()]);
        assert!(r.replaced.is_empty());
        assert_eq!(r.gas_used, 3 * 21_000);
    }
}

#[test]
fn guard_victim_is_replaced_in_place() {
    // Victim at 20 gwei lands third after the 40 and 30 gwei transfers.
    let b = scenarios::guard();
    let mut f = b.state_fixture.clone();
    let txs = vec![transfer(0, 10), b.victim_tx.clone(), transfer(1, 40), transfer(2, 30)];
    funded(&mut f, &txs);
    let expected = ape_attack(
        &{
            let mut g = f.clone();
            for t in [&txs[2], &txs[3]] {
                g.state = execute_transaction(&g.state, t, None).unwrap().state_after;
            }
            g
        },
        &b.victim_tx,
        b.adversary,
        &PipelineConfig::default(),
    );
    assert!(expected.is_success());
    let n_attack = expected.attack_txs.len();
    for parallel in [false, true] {
        let cfg = MempoolConfig { parallel, ..Default::default() };
        let r = simulate_mempool(&sim(f.clone(), txs.clone()), b.adversary, &cfg);
        assert_eq!(r.replaced, vec![2]);
        assert_eq!(r.block.len(), 3 + n_attack);
        assert_eq!(&r.block[..2], &[txs[2].clone(), txs[3].clone()]);
        assert_eq!(&r.block[2..2 + n_attack], expected.attack_txs.as_slice());
        assert_eq!(r.block[2 + n_attack], txs[0]);
        assert!(!r.block.contains(&b.victim_tx));
        assert!(r.block[2].to.is_none(), "deployment first");
    }
}

#[test]
fn parallel_mempool_equals_sequential() {
    let (f, pending) = scenarios::guard_mempool(17, 6);
    let seq = simulate_mempool(
        &sim(f.clone(), pending.clone()),
        scenarios::adversary(),
        &MempoolConfig { parallel: false, ..Default::default() },
    );
    let par = simulate_mempool(
        &sim(f, pending),
        scenarios::adversary(),
        &MempoolConfig { parallel: true, ..Default::default() },
    );
    assert_eq!(seq.block, par.block);
    assert_eq!(seq.replaced, par.replaced);
    assert_eq!(seq.dropped, par.dropped);
    assert_eq!(seq.final_state, par.final_state);
}

// ---- report ----

#[test]
fn report_of_nothing_is_zero() {
    let s = report(&[]);
    assert_eq!((s.total, s.naive, s.ape, s.abort), (0, 0, 0, 0));
    assert_eq!(s.total_net_profit_e, BigInt::from(0));
    assert_eq!(s.total_time.count, 0);
    assert!(s.step_timings.values().all(|t| t.count == 0));
}

#[test]
fn report_totals_one_three_ether_outcome() {
    let b = scenarios::guard();
    let mut o = ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, &PipelineConfig::default());
    o.net_profit_e = wei(ether(3));
    let s = report(&[o]);
    assert_eq!((s.total, s.ape), (1, 1));
    assert_eq!(s.total_net_profit_e, wei(ether(3)));
    assert_eq!(s.synthesized_contracts, 1);
    let table = s.render_table();
    for row in ["DCFG", "Profitability", "Taint", "Patch", "Synthesis", "Validation", "Total"] {
        assert!(table.lines().any(|l| l.starts_with(row)), "missing {row}");
    }
}

#[test]
fn corpus_and_report_agree_across_modes() {
    let bundles = scenarios::all();
    let cfg = PipelineConfig::default();
    let seq = run_corpus(&bundles, &cfg, false);
    let par = run_corpus(&bundles, &cfg, true);
    let kinds = |v: &[ape_core::pipeline::AttackOutcome]| {
        v.iter().map(|o| (o.kind, o.net_profit_e.clone())).collect::<Vec<_>>()
    };
    assert_eq!(kinds(&seq), kinds(&par));
    let (a, b) = (report_with(&seq, false), report_with(&seq, true));
    assert_eq!(a, b);
    assert_eq!((a.naive, a.ape, a.abort), (1, 4, 1));
}
