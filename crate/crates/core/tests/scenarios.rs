use ape_core::evm::types::mapping_slot;
use ape_core::evm::{execute_transaction, Status, Transaction, Word};
use ape_core::fixtures::scenarios::{self, ether};
use ape_core::fixtures::{ScenarioBundle, StateFixture};

fn run(b: &ScenarioBundle, tx: &Transaction) -> (ape_core::evm::WorldState, ape_core::evm::ExecutionResult) {
    let r = execute_transaction(&b.state_fixture.state, tx, None).expect("valid tx");
    (r.state_after.clone(), r)
}

#[test]
fn every_bundle_is_well_formed() {
    for b in scenarios::all() {
        b.check_well_formed().unwrap_or_else(|e| panic!("{}: {e}", b.name));
    }
}

#[test]
fn guard_pays_owner_and_rejects_others() {
    let b = scenarios::guard();
    let (s, r) = run(&b, &b.victim_tx);
    assert!(r.is_success());
    let fee = Word::from(r.gas_used) * b.victim_tx.gas_price;
    assert_eq!(s.balance(&scenarios::guard_owner()), ether(10) + ether(5) - fee);

    let mut naive = b.victim_tx.clone();
    naive.sender = b.adversary;
    let (_, r) = run(&b, &naive);
    assert_eq!(r.status, Status::Revert);
}

#[test]
fn relay_pays_origin() {
    let b = scenarios::relay();
    let (s, r) = run(&b, &b.victim_tx);
    assert!(r.is_success());
    let fee = Word::from(r.gas_used) * b.victim_tx.gas_price;
    assert_eq!(s.balance(&scenarios::relay_owner()), ether(10) + ether(4) - fee);
}

#[test]
fn mass_deposit_moves_tokens_into_vault() {
    let b = scenarios::mass_deposit();
    let (s, r) = run(&b, &b.victim_tx);
    assert!(r.is_success(), "{:?}", r.status);
    let t = scenarios::deposit_token();
    let vault_bal = s.storage(&t, &mapping_slot(scenarios::vault_address(), Word::zero()));
    assert_eq!(vault_bal, ether(1000));
    assert!(s.storage(&t, &mapping_slot(scenarios::depositer_address(), Word::zero())).is_zero());
    assert_eq!(s.storage(&scenarios::vault_address(), &Word::one()), scenarios::depositer_owner().to_word());
    // approve + three transfers
    assert_eq!(r.logs.len(), 4);
}

#[test]
fn mint_credits_spender() {
    let b = scenarios::mint();
    let (s, r) = run(&b, &b.victim_tx);
    assert!(r.is_success());
    let bal = s.storage(&scenarios::mint_token(), &mapping_slot(scenarios::minter(), Word::zero()));
    assert_eq!(bal, scenarios::minted_amount());
}

#[test]
fn ecdsa_vault_pays_nothing_without_recovery() {
    let b = scenarios::ecdsa_vault();
    let (s, r) = run(&b, &b.victim_tx);
    assert!(r.is_success());
    assert_eq!(s.balance(&scenarios::ecdsa_vault_address()), ether(50));
}

#[test]
fn tip_jar_collects() {
    let b = scenarios::tip_jar();
    let (s, r) = run(&b, &b.victim_tx);
    assert!(r.is_success());
    assert_eq!(s.balance(&scenarios::tip_jar_address()), ether(3));
}

#[test]
fn pool_sell_matches_quote() {
    let b = scenarios::mint();
    let f: &StateFixture = &b.state_fixture;
    let (s, _) = run(&b, &b.victim_tx);
    let t = scenarios::mint_token();
    let pool = f.pool_for(t).unwrap().pool_address;
    let m = scenarios::minter();
    let data = ape_core::fixtures::contracts::calldata(
        "transfer(address,uint256)",
        &[pool.to_word(), scenarios::minted_amount()],
    );
    let r = execute_transaction(&s, &Transaction::call(m, t, data).with_nonce(1), None).unwrap();
    assert!(r.is_success());
    let s = r.state_after;
    let before = s.balance(&m);
    let sell = ape_core::fixtures::contracts::calldata("sell(address)", &[m.to_word()]);
    let tx = Transaction::call(m, pool, sell).with_nonce(2).with_gas(200_000, Word::zero());
    let r = execute_transaction(&s, &tx, None).unwrap();
    assert!(r.is_success(), "{:?}", r.status);
    let s = r.state_after;
    let quote = f.quote_to_native(t, scenarios::minted_amount()).unwrap();
    assert_eq!(ape_core::valuation::to_biguint(s.balance(&m) - before), quote);
    // 10^33 * 73.3e18 * 997 / (10^33 * 1000 + 10^33 * 997)
    assert_eq!(quote.to_string(), "36594942413620430645");
}

#[test]
fn bundles_roundtrip_through_json() {
    for b in scenarios::all() {
        let text = b.to_json();
        let back = ScenarioBundle::from_json(&text).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_json(), text);
    }
}

#[test]
fn shipped_fixtures_match_the_builders() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for b in scenarios::all() {
        let shipped = ape_core::fixtures::load_bundle(dir.join(format!("{}.json", b.name))).unwrap();
        assert_eq!(shipped, b, "{} drifted; regenerate with `ape fixtures --out crates/core/fixtures`", b.name);
    }
    let (fixture, pending) = scenarios::guard_mempool(17, 6);
    assert_eq!(ape_core::fixtures::load_fixture(dir.join("mempool/guard-state.json")).unwrap(), fixture);
    assert_eq!(ape_core::fixtures::load_transactions(dir.join("mempool/guard-pool.json")).unwrap(), pending);
}
