use ape_core::asm::assemble_text;
use ape_core::evm::hooks::PcRecorder;
use ape_core::evm::opcode::REVERT;
use ape_core::evm::types::create_address;
use ape_core::evm::{
    deploy_contract, execute_transaction, Account, Address, BlockContext, DeployMode, HaltReason, HookSet, Status,
    Transaction, Word, WorldState,
};
use ape_core::fixtures::scenarios;
use proptest::prelude::*;

fn alice() -> Address {
    Address::from_low_u64(0xa11ce)
}

fn world(accounts: &[(Address, Account)]) -> WorldState {
    let mut s = WorldState::new(BlockContext::default());
    for (a, acct) in accounts {
        s.accounts.insert(*a, acct.clone());
    }
    s
}

#[test]
fn plain_value_transfer_moves_balance_and_fee() {
    let bob = Address::from_low_u64(0xb0b);
    let s = world(&[(alice(), Account::with_balance(Word::from(10u64).pow(Word::from(18))))]);
    let tx = Transaction::call(alice(), bob, vec![]).with_value(Word::from(5u64)).with_gas(21_000, Word::from(7u64));
    let r = execute_transaction(&s, &tx, None).unwrap();
    assert_eq!(r.status, Status::Success);
    assert_eq!(r.gas_used, 21_000);
    let after = &r.state_after;
    assert_eq!(after.balance(&bob), Word::from(5u64));
    let fee = Word::from(21_000u64 * 7);
    assert_eq!(after.balance(&alice()), s.balance(&alice()) - 5 - fee);
    assert_eq!(after.balance(&s.block.coinbase), fee);
    assert_eq!(after.nonce(&alice()), 1);
    assert_eq!(s.total_native(), after.total_native());
}

#[test]
fn unconditional_revert_only_charges_gas() {
    let c = Address::from_low_u64(0xc0de);
    let code = assemble_text("PUSH1 0x00 PUSH1 0x00 REVERT").unwrap();
    let s = world(&[
        (alice(), Account::with_balance(Word::from(10u64).pow(Word::from(18)))),
        (c, Account::with_code(code)),
    ]);
    let tx = Transaction::call(alice(), c, vec![]).with_value(Word::from(9u64)).with_gas(100_000, Word::one());
    let r = execute_transaction(&s, &tx, None).unwrap();
    assert_eq!(r.status, Status::Revert);
    let mut expected = s.clone();
    let fee = Word::from(r.gas_used);
    expected.account_mut(alice()).balance -= fee;
    expected.account_mut(alice()).nonce += 1;
    expected.account_mut(s.block.coinbase).balance += fee;
    assert_eq!(r.state_after, expected);
}

#[test]
fn guard_rejects_non_owner_at_the_revert_after_eq() {
    let b = scenarios::guard();
    let mut tx = b.victim_tx.clone();
    tx.sender = b.adversary;
    let mut rec = PcRecorder::default();
    let r = {
        let mut hooks = HookSet::read_only().with(&mut rec);
        execute_transaction(&b.state_fixture.state, &tx, Some(&mut hooks)).unwrap()
    };
    assert_eq!(r.status, Status::Revert);
    let (frame, pc, op) = *rec.steps.last().unwrap();
    assert_eq!((frame, pc, op), (0, 0xb2b, REVERT));
    // JUMPI at 0xb27 fell through.
    assert!(rec.steps.iter().any(|s| s.1 == 0xb27));
    assert!(!rec.steps.iter().any(|s| s.1 == 0xb2c));
}

#[test]
fn deploy_empty_code_and_distinct_nonces() {
    let mut s = world(&[(alice(), Account::with_balance(Word::from(1u64)))]);
    let d0 = deploy_contract(&mut s, alice(), &[], DeployMode::DirectRuntime).unwrap();
    assert_eq!(d0.gas_used, 0);
    assert!(s.code(&d0.address).is_empty());
    assert_eq!(d0.address, create_address(alice(), 0));
    let d1 = deploy_contract(&mut s, alice(), &[], DeployMode::InitCode).unwrap();
    assert_ne!(d0.address, d1.address);
    assert_eq!(d1.address, create_address(alice(), 1));
}

#[test]
fn redeployed_guard_behaves_like_the_original() {
    let b = scenarios::guard();
    let original = scenarios::guard_address();
    let mut s = b.state_fixture.state.clone();
    let deployer = Address::from_low_u64(0xde);
    s.account_mut(deployer).balance = Word::one();
    let code = s.code(&original).to_vec();
    let copy = deploy_contract(&mut s, deployer, &code, DeployMode::DirectRuntime).unwrap().address;
    s.account_mut(copy).balance = s.balance(&original);

    for sender in [scenarios::guard_owner(), b.adversary] {
        let mut tx = b.victim_tx.clone();
        tx.sender = sender;
        tx.nonce = s.nonce(&sender);
        let a = execute_transaction(&s, &tx, None).unwrap();
        tx.to = Some(copy);
        let c = execute_transaction(&s, &tx, None).unwrap();
        assert_eq!(a.status, c.status);
        assert_eq!(a.gas_used, c.gas_used);
        assert_eq!(a.return_data, c.return_data);
        assert_eq!(a.state_after.balance(&sender), c.state_after.balance(&sender));
    }
}

#[test]
fn out_of_gas_is_a_halt_not_an_error() {
    let c = Address::from_low_u64(0xc0de);
    let code = assemble_text("loop: JUMPDEST @loop JUMP").unwrap();
    let s = world(&[
        (alice(), Account::with_balance(Word::from(10u64).pow(Word::from(18)))),
        (c, Account::with_code(code)),
    ]);
    let tx = Transaction::call(alice(), c, vec![]).with_gas(50_000, Word::one());
    let r = execute_transaction(&s, &tx, None).unwrap();
    assert_eq!(r.status, Status::HaltError(HaltReason::OutOfGas));
    assert_eq!(r.gas_used, 50_000);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gas_never_exceeds_limit_and_oog_iff_short(limit in 21_000u64..120_000, n in 0u8..40) {
        // n SSTOREs of distinct slots: cost grows linearly with n.
        let mut src = String::new();
        for i in 0..n {
            src.push_str(&format!("PUSH1 0x01 PUSH1 {:#04x} SSTORE ", i));
        }
        src.push_str("STOP");
        let c = Address::from_low_u64(0xc0de);
        let s = world(&[(alice(), Account::with_balance(Word::from(10u64).pow(Word::from(18)))), (c, Account::with_code(assemble_text(&src).unwrap()))]);
        let full = execute_transaction(&s, &Transaction::call(alice(), c, vec![]).with_gas(10_000_000, Word::one()), None).unwrap();
        prop_assert!(full.is_success());
        let r = execute_transaction(&s, &Transaction::call(alice(), c, vec![]).with_gas(limit, Word::one()), None).unwrap();
        prop_assert!(r.gas_used <= limit);
        prop_assert_eq!(r.status == Status::HaltError(HaltReason::OutOfGas), full.gas_used > limit);
    }

    #[test]
    fn native_supply_is_conserved(values in proptest::collection::vec(0u64..1_000_000, 1..8), price in 0u64..50) {
        let mut s = world(&[(alice(), Account::with_balance(Word::from(10u64).pow(Word::from(18))))]);
        let before = s.total_native();
        for (i, v) in values.iter().enumerate() {
            let to = Address::from_low_u64(0x1000 + (i as u64 % 3));
            let tx = Transaction::call(alice(), to, vec![]).with_value(Word::from(*v)).with_gas(21_000, Word::from(price)).with_nonce(i as u64);
            s = execute_transaction(&s, &tx, None).unwrap().state_after;
        }
        prop_assert_eq!(s.total_native(), before);
    }
}
