//! Builders for the bundled scenarios. The JSON files under `fixtures/` are
//! generated from these and checked against them in tests.

use crate::evm::opcode::{CALLER, ORIGIN};
use crate::evm::types::mapping_slot;
use crate::evm::{Account, Address, BlockContext, Transaction, Word, WorldState};

use super::contracts::{self, calldata, GuardParams};
use super::{AmmPool, ExpectedOutcome, ScenarioBundle, StateFixture, TokenLayout};

pub const GWEI: u64 = 1_000_000_000;

pub fn ether(n: u64) -> Word {
    Word::from(n) * Word::exp10(18)
}

/// Victim transactions are priced at 20 gwei.
pub fn victim_gas_price() -> Word {
    Word::from(20 * GWEI)
}

pub fn addr(s: &str) -> Address {
    s.parse().expect("valid literal address")
}

pub fn adversary() -> Address {
    addr("0xad5e000000000000000000000000000000000001")
}

/// Principal hard-coded in the guard's ownership check.
pub fn guard_owner() -> Address {
    addr("0x53d8a1b2c3d4e5f60718293a4b5c6d7e8f900d81")
}

pub fn guard_address() -> Address {
    addr("0x9a4d000000000000000000000000000000000b0c")
}

pub fn lending_pool_address() -> Address {
    addr("0x1e4d000000000000000000000000000000000001")
}

pub fn borrower() -> Address {
    addr("0xb0770000000000000000000000000000000000b1")
}

fn base_state() -> WorldState {
    let mut s = WorldState::new(BlockContext::default());
    s.accounts.insert(adversary(), Account::with_balance(ether(100)));
    s
}

fn code_account(code: Vec<u8>) -> Account {
    Account { nonce: 1, ..Account::with_code(code) }
}

fn victim_call(sender: Address, to: Address, data: Vec<u8>) -> Transaction {
    Transaction::call(sender, to, data).with_gas(1_000_000, victim_gas_price())
}

/// Lending pool holding an open position for `borrower` that pays `reward`.
fn lending_pool_account(reward: Word) -> Account {
    let mut a = code_account(contracts::lending_pool().expect("assembles"));
    a.balance = ether(20);
    a.storage.insert(mapping_slot(borrower(), Word::zero()), Word::one());
    a.storage.insert(Word::one(), reward);
    a
}

/// Owner-guarded liquidation bot; the owner's liquidation call is the victim.
pub fn guard() -> ScenarioBundle {
    let mut s = base_state();
    s.accounts.insert(guard_owner(), Account::with_balance(ether(10)));
    let code = contracts::guard(GuardParams {
        owner: guard_owner(),
        pool: lending_pool_address(),
        auth: CALLER,
        padded: true,
    })
    .expect("assembles");
    s.accounts.insert(guard_address(), code_account(code));
    s.accounts.insert(lending_pool_address(), lending_pool_account(ether(5)));
    ScenarioBundle {
        name: "guard".into(),
        state_fixture: StateFixture::new(s),
        victim_tx: victim_call(
            guard_owner(),
            guard_address(),
            calldata("liquidate(address)", &[borrower().to_word()]),
        ),
        adversary: adversary(),
        expected_outcome: ExpectedOutcome::ApeSucceeds,
        notes: "Liquidation bot whose entry point requires the caller to be its owner; the reward is forwarded to the caller."
            .into(),
    }
}

pub fn relay_owner() -> Address {
    addr("0x0a7e000000000000000000000000000000000002")
}

pub fn router_address() -> Address {
    addr("0x7047e50000000000000000000000000000000001")
}

pub fn relay_guard_address() -> Address {
    addr("0x9a4d000000000000000000000000000000000002")
}

/// Entry router hard-coding a guard that authenticates `tx.origin`.
pub fn relay() -> ScenarioBundle {
    let mut s = base_state();
    s.accounts.insert(relay_owner(), Account::with_balance(ether(10)));
    let guard = contracts::guard(GuardParams {
        owner: relay_owner(),
        pool: lending_pool_address(),
        auth: ORIGIN,
        padded: false,
    })
    .expect("assembles");
    s.accounts.insert(relay_guard_address(), code_account(guard));
    s.accounts.insert(router_address(), code_account(contracts::router(relay_guard_address()).expect("assembles")));
    s.accounts.insert(lending_pool_address(), lending_pool_account(ether(4)));
    ScenarioBundle {
        name: "relay".into(),
        state_fixture: StateFixture::new(s),
        victim_tx: victim_call(relay_owner(), router_address(), calldata("run(address)", &[borrower().to_word()])),
        adversary: adversary(),
        expected_outcome: ExpectedOutcome::ApeSucceeds,
        notes: "Router with a hard-coded guard that checks tx.origin; both must be replaced.".into(),
    }
}

pub fn deposit_token() -> Address {
    addr("0x70ce000000000000000000000000000000000001")
}

pub fn token_pool_address() -> Address {
    addr("0xa3300000000000000000000000000000000000a1")
}

pub fn depositer_address() -> Address {
    addr("0xde90000000000000000000000000000000000001")
}

pub fn vault_address() -> Address {
    addr("0x7a01700000000000000000000000000000000001")
}

pub fn depositer_owner() -> Address {
    addr("0x0a7e000000000000000000000000000000000003")
}

fn users() -> Vec<(Address, Word)> {
    vec![
        (addr("0x5e12000000000000000000000000000000000001"), ether(100)),
        (addr("0x5e12000000000000000000000000000000000002"), ether(250)),
        (addr("0x5e12000000000000000000000000000000000003"), ether(650)),
    ]
}

/// Encodes `massDeposit(vault, token, users, amounts)` with dynamic arrays.
pub fn mass_deposit_calldata(vault: Address, token: Address, entries: &[(Address, Word)]) -> Vec<u8> {
    let n = entries.len() as u64;
    let mut words = vec![vault.to_word(), token.to_word(), Word::from(0x80u64), Word::from(0x80 + 32 * (n + 1))];
    words.push(Word::from(n));
    words.extend(entries.iter().map(|(a, _)| a.to_word()));
    words.push(Word::from(n));
    words.extend(entries.iter().map(|(_, v)| *v));
    calldata("massDeposit(address,address,address[],uint256[])", &words)
}

/// Sets an ERC20 balance in the reference storage layout.
pub fn set_token_balance(s: &mut WorldState, token: Address, holder: Address, amount: Word) {
    s.set_storage(token, mapping_slot(holder, Word::zero()), amount);
}

fn add_token_with_pool(
    f: &mut StateFixture,
    token: Address,
    code: Vec<u8>,
    pool: Address,
    reserve_token: Word,
    reserve_e: Word,
    holders: &[(Address, Word)],
) {
    let s = &mut f.state;
    s.accounts.insert(token, code_account(code));
    let mut supply = reserve_token;
    set_token_balance(s, token, pool, reserve_token);
    for (h, v) in holders {
        set_token_balance(s, token, *h, *v);
        supply += *v;
    }
    s.set_storage(token, Word::from(2), supply);
    let mut p = code_account(contracts::amm_pool().expect("assembles"));
    p.balance = reserve_e;
    p.storage.insert(Word::zero(), token.to_word());
    p.storage.insert(Word::one(), reserve_token);
    p.storage.insert(Word::from(2), reserve_e);
    s.accounts.insert(pool, p);
    f.amm_pools.push(AmmPool { pool_address: pool, token_address: token, reserve_token, reserve_e });
    f.token_layouts.insert(token, TokenLayout { balances_slot: Word::zero() });
}

/// Batch depositor funding a vault named in calldata; the vault collects
/// the tokens and is handed to the depositer's owner.
pub fn mass_deposit() -> ScenarioBundle {
    let mut f = StateFixture::new(base_state());
    let total = users().iter().fold(Word::zero(), |acc, (_, v)| acc + *v);
    add_token_with_pool(
        &mut f,
        deposit_token(),
        contracts::erc20(false).expect("assembles"),
        token_pool_address(),
        ether(10_000),
        ether(500),
        &[(depositer_address(), total)],
    );
    let s = &mut f.state;
    s.accounts.insert(depositer_owner(), Account::with_balance(ether(10)));
    let mut dep = code_account(contracts::depositer().expect("assembles"));
    dep.storage.insert(Word::zero(), depositer_owner().to_word());
    s.accounts.insert(depositer_address(), dep);
    let mut vault = code_account(contracts::vault().expect("assembles"));
    vault.storage.insert(Word::zero(), deposit_token().to_word());
    vault.storage.insert(Word::one(), addr("0x0a7e0000000000000000000000000000000000ff").to_word());
    s.accounts.insert(vault_address(), vault);
    ScenarioBundle {
        name: "mass-deposit".into(),
        state_fixture: f,
        victim_tx: victim_call(
            depositer_owner(),
            depositer_address(),
            mass_deposit_calldata(vault_address(), deposit_token(), &users()),
        ),
        adversary: adversary(),
        expected_outcome: ExpectedOutcome::ApeSucceeds,
        notes: "Depositer moves its tokens into a vault named by calldata; the vault is the beneficiary.".into(),
    }
}

pub fn mint_token() -> Address {
    addr("0x6a965100000000000000000000000000000000e1")
}

pub fn mint_pool_address() -> Address {
    addr("0xa3300000000000000000000000000000000000a2")
}

pub fn minter() -> Address {
    addr("0x0a7e000000000000000000000000000000000004")
}

/// Amount the victim mints: `10^33` smallest units.
pub fn minted_amount() -> Word {
    Word::exp10(33)
}

/// Token whose `increaseAllowance` mints to the spender; the victim mints
/// to itself. The pool is sized so the minted amount sells for about 36.6 E.
pub fn mint() -> ScenarioBundle {
    let mut f = StateFixture::new(base_state());
    add_token_with_pool(
        &mut f,
        mint_token(),
        contracts::erc20(true).expect("assembles"),
        mint_pool_address(),
        Word::exp10(33),
        ether(733) / 10,
        &[],
    );
    f.state.accounts.insert(minter(), Account::with_balance(ether(10)));
    ScenarioBundle {
        name: "mint".into(),
        state_fixture: f,
        victim_tx: victim_call(
            minter(),
            mint_token(),
            calldata("increaseAllowance(address,uint256)", &[minter().to_word(), minted_amount()]),
        ),
        adversary: adversary(),
        expected_outcome: ExpectedOutcome::NaiveSucceeds,
        notes: "Allowance increase mints to the spender; the minted tokens are sold on the pool.".into(),
    }
}

pub fn ecdsa_vault_address() -> Address {
    addr("0xecd5a00000000000000000000000000000000001")
}

pub fn signer() -> Address {
    addr("0x0a7e000000000000000000000000000000000005")
}

/// Vault paying out against a signature checked through the 0x01 precompile.
pub fn ecdsa_vault() -> ScenarioBundle {
    let mut s = base_state();
    s.accounts.insert(signer(), Account::with_balance(ether(10)));
    let mut v = code_account(contracts::ecdsa_vault().expect("assembles"));
    v.balance = ether(50);
    s.accounts.insert(ecdsa_vault_address(), v);
    let sig = [Word::from(0x1234u64), Word::from(27u64), Word::from(0xaaaau64), Word::from(0xbbbbu64)];
    ScenarioBundle {
        name: "ecdsa-vault".into(),
        state_fixture: StateFixture::new(s),
        victim_tx: victim_call(
            signer(),
            ecdsa_vault_address(),
            calldata("withdraw(bytes32,uint8,bytes32,bytes32)", &sig),
        ),
        adversary: adversary(),
        expected_outcome: ExpectedOutcome::Abort,
        notes: "Payout gated on signature recovery, which the emulator does not provide.".into(),
    }
}

pub fn distributor_address() -> Address {
    addr("0xd157000000000000000000000000000000000001")
}

pub fn tip_jar_address() -> Address {
    addr("0x71900000000000000000000000000000000000a1")
}

pub fn tipper() -> Address {
    addr("0x0a7e000000000000000000000000000000000006")
}

/// Distributor paying its balance into a tiny collector named in calldata.
pub fn tip_jar() -> ScenarioBundle {
    let mut s = base_state();
    s.accounts.insert(tipper(), Account::with_balance(ether(10)));
    let mut d = code_account(contracts::distributor().expect("assembles"));
    d.balance = ether(3);
    s.accounts.insert(distributor_address(), d);
    s.accounts.insert(tip_jar_address(), code_account(contracts::tip_jar()));
    ScenarioBundle {
        name: "tip-jar".into(),
        state_fixture: StateFixture::new(s),
        victim_tx: victim_call(
            tipper(),
            distributor_address(),
            calldata("payout(address)", &[tip_jar_address().to_word()]),
        ),
        adversary: adversary(),
        expected_outcome: ExpectedOutcome::ApeSucceeds,
        notes: "Five-byte collector contract receives the payout; capturing it needs a sweep larger than the victim."
            .into(),
    }
}

/// Every bundled scenario, in a stable order.
pub fn all() -> Vec<ScenarioBundle> {
    vec![guard(), relay(), mass_deposit(), mint(), ecdsa_vault(), tip_jar()]
}

/// A synthetic mempool around the guard scenario: `n_transfers` value
/// transfers from distinct senders at varied prices, two transactions with
/// wrong nonces, and the guard victim inserted at `victim_position`.
pub fn guard_mempool(n_transfers: usize, victim_position: usize) -> (StateFixture, Vec<Transaction>) {
    let bundle = guard();
    let mut f = bundle.state_fixture;
    let mut pending = Vec::new();
    for i in 0..n_transfers {
        let sender = Address::from_low_u64(0x5e0d_0000 + i as u64);
        f.state.accounts.insert(sender, Account::with_balance(ether(1)));
        let price = Word::from((3 + (i * 7) % 31) as u64 * GWEI);
        let to = Address::from_low_u64(0x7ec0_0000 + i as u64);
        pending
            .push(Transaction::call(sender, to, Vec::new()).with_gas(21_000, price).with_value(Word::from(1000 + i)));
    }
    for (k, nonce) in [(0u64, 5u64), (1, 9)] {
        let sender = Address::from_low_u64(0x5e0d_0000 + k);
        pending.push(
            Transaction::call(sender, Address::from_low_u64(0xbad), Vec::new())
                .with_gas(21_000, Word::from(90 * GWEI))
                .with_nonce(nonce),
        );
    }
    pending.insert(victim_position.min(pending.len()), bundle.victim_tx);
    (f, pending)
}
