//! Reference contracts used by the bundled scenarios, written against the
//! in-crate assembler. Calling conventions follow the usual ABI: a 4-byte
//! selector followed by 32-byte words.

use crate::asm::{AsmError, Assembler};
use crate::evm::opcode::*;
use crate::evm::types::keccak256;
use crate::evm::{Address, Word};

pub fn transfer_topic() -> Word {
    Word::from_big_endian(&keccak256(b"Transfer(address,address,uint256)"))
}

pub fn approval_topic() -> Word {
    Word::from_big_endian(&keccak256(b"Approval(address,address,uint256)"))
}

/// ABI-encodes a call with static word arguments.
pub fn calldata(signature: &str, args: &[Word]) -> Vec<u8> {
    let mut out = crate::evm::types::selector(signature).to_vec();
    for a in args {
        out.extend_from_slice(&crate::evm::types::word_to_bytes(*a));
    }
    out
}

/// Fragment helpers shared by the contracts below.
trait Frag {
    fn dispatch(&mut self, table: &[(&str, &str)]) -> &mut Self;
    fn arg(&mut self, i: u64) -> &mut Self;
    fn hash2(&mut self) -> &mut Self;
    fn fail_if_zero(&mut self) -> &mut Self;
    fn fail_block(&mut self) -> &mut Self;
    fn return_top(&mut self) -> &mut Self;
    fn selector_at(&mut self, signature: &str, offset: u64) -> &mut Self;
}

impl Frag for Assembler {
    /// Routes on the selector; unknown selectors (including empty calldata)
    /// fall through to a plain STOP so native transfers are accepted.
    fn dispatch(&mut self, table: &[(&str, &str)]) -> &mut Self {
        self.push(0u64).op(CALLDATALOAD).push(0xe0u64).op(SHR);
        for (sig, label) in table {
            self.op(DUP1).push_selector(sig).op(EQ).push_label(label).op(JUMPI);
        }
        self.op(STOP)
    }

    fn arg(&mut self, i: u64) -> &mut Self {
        self.push(4 + 32 * i).op(CALLDATALOAD)
    }

    /// `[key, base]` (base on top) to `keccak256(key . base)`.
    fn hash2(&mut self) -> &mut Self {
        self.push(0x20u64).op(MSTORE).push(0u64).op(MSTORE).push(0x40u64).push(0u64).op(KECCAK256)
    }

    fn fail_if_zero(&mut self) -> &mut Self {
        self.op(ISZERO).push_label("fail").op(JUMPI)
    }

    fn fail_block(&mut self) -> &mut Self {
        self.jumpdest("fail").push(0u64).op(DUP1).op(REVERT)
    }

    fn return_top(&mut self) -> &mut Self {
        self.push(0u64).op(MSTORE).push(0x20u64).push(0u64).op(RETURN)
    }

    fn selector_at(&mut self, signature: &str, offset: u64) -> &mut Self {
        self.push_selector(signature).push(0xe0u64).op(SHL).push(offset).op(MSTORE)
    }
}

/// Emits a CALL with the argument block at `[0x80, 0x80+in_size)` and a
/// 32-byte output window at 0x80. The target must already be on the stack.
fn call_with_target(a: &mut Assembler, in_size: u64, value_zero: bool, target: impl Fn(&mut Assembler)) {
    a.push(0x20u64).push(0x80u64).push(in_size).push(0x80u64);
    if value_zero {
        a.push(0u64);
    }
    target(a);
    a.op(GAS).op(CALL);
}

/// ERC-20 token. Storage: slot 0 balances, slot 1 allowances (owner then
/// spender), slot 2 total supply. With `mint_on_increase`, the
/// `increaseAllowance` entry point also mints the added amount to the
/// spender, the flaw exploited by the mint scenario.
pub fn erc20(mint_on_increase: bool) -> Result<Vec<u8>, AsmError> {
    let mut a = Assembler::new();
    let mut table = vec![
        ("transfer(address,uint256)", "transfer"),
        ("transferFrom(address,address,uint256)", "transferFrom"),
        ("approve(address,uint256)", "approve"),
        ("balanceOf(address)", "balanceOf"),
        ("totalSupply()", "totalSupply"),
        ("allowance(address,address)", "allowance"),
    ];
    if mint_on_increase {
        table.push(("increaseAllowance(address,uint256)", "increaseAllowance"));
    }
    a.dispatch(&table);

    // xfer: [ret, from, to, amt] -> jumps to ret.
    a.jumpdest("xfer");
    a.op(DUP3).push(0u64).hash2();
    a.op(DUP1).op(SLOAD);
    a.op(DUP1).op(DUP4).op(GT).push_label("fail").op(JUMPI);
    a.op(DUP3).op(SWAP1).op(SUB).op(SWAP1).op(SSTORE);
    a.op(DUP2).push(0u64).hash2();
    a.op(DUP1).op(SLOAD).op(DUP3).op(ADD).op(SWAP1).op(SSTORE);
    a.op(DUP1).push(0x80u64).op(MSTORE);
    a.op(DUP2).op(DUP4).push_n(32, transfer_topic()).push(0x20u64).push(0x80u64).op(LOG3);
    a.op(POP).op(POP).op(POP).op(JUMP);

    a.jumpdest("transfer");
    a.push_label("ret_true").op(CALLER).arg(0).arg(1).push_label("xfer").op(JUMP);

    a.jumpdest("transferFrom");
    a.op(CALLER).arg(0).push(1u64).hash2().hash2();
    a.op(DUP1).op(SLOAD).arg(2);
    a.op(DUP2).op(DUP2).op(GT).push_label("fail").op(JUMPI);
    a.op(SWAP1).op(SUB).op(SWAP1).op(SSTORE);
    a.push_label("ret_true").arg(0).arg(1).arg(2).push_label("xfer").op(JUMP);

    a.jumpdest("approve");
    a.arg(1).arg(0).op(CALLER).push(1u64).hash2().hash2().op(SSTORE);
    a.arg(1).push(0x80u64).op(MSTORE);
    a.arg(0).op(CALLER).push_n(32, approval_topic()).push(0x20u64).push(0x80u64).op(LOG3);
    a.push_label("ret_true").op(JUMP);

    a.jumpdest("balanceOf");
    a.arg(0).push(0u64).hash2().op(SLOAD).return_top();

    a.jumpdest("totalSupply");
    a.push(2u64).op(SLOAD).return_top();

    a.jumpdest("allowance");
    a.arg(1).arg(0).push(1u64).hash2().hash2().op(SLOAD).return_top();

    if mint_on_increase {
        a.jumpdest("increaseAllowance");
        a.arg(0).op(CALLER).push(1u64).hash2().hash2();
        a.op(DUP1).op(SLOAD).arg(1).op(ADD).op(SWAP1).op(SSTORE);
        a.push(2u64).op(SLOAD).arg(1).op(ADD).push(2u64).op(SSTORE);
        a.arg(0).push(0u64).hash2();
        a.op(DUP1).op(SLOAD).arg(1).op(ADD).op(SWAP1).op(SSTORE);
        a.arg(1).push(0x80u64).op(MSTORE);
        a.arg(0).push(0u64).push_n(32, transfer_topic()).push(0x20u64).push(0x80u64).op(LOG3);
        a.push_label("ret_true").op(JUMP);
    }

    a.jumpdest("ret_true");
    a.push(1u64).return_top();
    a.fail_block();
    a.assemble()
}

/// Constant-product pool trading one token against native currency.
/// Storage: slot 0 token, slot 1 token reserve, slot 2 native reserve.
/// `sell(to)` prices whatever token surplus the pool holds over its reserve
/// with a 0.3% fee and pays the native output to `to`.
pub fn amm_pool() -> Result<Vec<u8>, AsmError> {
    let mut a = Assembler::new();
    a.dispatch(&[("sell(address)", "sell"), ("getReserves()", "reserves")]);

    a.jumpdest("sell");
    a.selector_at("balanceOf(address)", 0x80).op(ADDRESS).push(0x84u64).op(MSTORE);
    a.push(0x20u64).push(0x80u64).push(0x24u64).push(0x80u64).push(0u64).op(SLOAD).op(GAS).op(STATICCALL);
    a.fail_if_zero();
    a.push(0x80u64).op(MLOAD).push(1u64).op(SLOAD);
    a.op(DUP1).op(DUP3).op(SUB);
    a.op(DUP1).push(997u64).op(MUL);
    a.op(DUP1).push(2u64).op(SLOAD).op(MUL);
    a.op(SWAP1).op(DUP4).push(1000u64).op(MUL).op(ADD);
    a.op(SWAP1).op(DIV);
    a.op(DUP4).push(1u64).op(SSTORE);
    a.op(DUP1).push(2u64).op(SLOAD).op(SUB).push(2u64).op(SSTORE);
    a.push(0u64).op(DUP1).op(DUP1).op(DUP1).op(DUP5).arg(0).op(GAS).op(CALL);
    a.fail_if_zero();
    a.return_top();

    a.jumpdest("reserves");
    a.push(1u64).op(SLOAD).push(0u64).op(MSTORE).push(2u64).op(SLOAD).push(0x20u64).op(MSTORE);
    a.push(0x40u64).push(0u64).op(RETURN);
    a.fail_block();
    a.assemble()
}

/// Lending pool whose `liquidate(borrower)` pays the fixed reward in slot 1
/// to the caller once per open position (positions keyed at slot 0).
pub fn lending_pool() -> Result<Vec<u8>, AsmError> {
    let mut a = Assembler::new();
    a.dispatch(&[("liquidate(address)", "liquidate")]);
    a.jumpdest("liquidate");
    a.arg(0).push(0u64).hash2();
    a.op(DUP1).op(SLOAD).fail_if_zero();
    a.push(0u64).op(SWAP1).op(SSTORE);
    a.push(0u64).op(DUP1).op(DUP1).op(DUP1).push(1u64).op(SLOAD).op(CALLER).op(GAS).op(CALL);
    a.fail_if_zero();
    a.op(STOP);
    a.fail_block();
    a.assemble()
}

/// Offset of the ownership check inside [`guard`] when padded.
pub const GUARD_CHECK_OFFSET: usize = 0xb0c;

#[derive(Debug, Clone, Copy)]
pub struct GuardParams {
    pub owner: Address,
    pub pool: Address,
    /// CALLER or ORIGIN: who must equal `owner` and who receives the reward.
    pub auth: u8,
    /// Pad unreachable helper code so the check lands at [`GUARD_CHECK_OFFSET`].
    pub padded: bool,
}

/// Front-running-protected liquidation bot: checks the principal, calls the
/// hard-coded lending pool, then forwards its whole balance to the principal.
pub fn guard(p: GuardParams) -> Result<Vec<u8>, AsmError> {
    let mut a = Assembler::new();
    a.dispatch(&[("liquidate(address)", "check"), ("withdraw()", "withdraw")]);

    // Owner-only withdraw, never executed by the scenarios.
    a.jumpdest("withdraw");
    a.op(p.auth).push_addr(p.owner).op(EQ).fail_if_zero();
    a.push(0u64).op(DUP1).op(DUP1).op(DUP1).op(SELFBALANCE).op(p.auth).op(GAS).op(CALL).op(POP).op(STOP);
    a.fail_block();
    if p.padded {
        // Unused getters standing in for the rest of a deployed bot.
        let mut slot = 3u64;
        loop {
            let mut probe = a.clone();
            probe.op(JUMPDEST).push(slot).op(SLOAD).return_top();
            if probe.len() > GUARD_CHECK_OFFSET {
                break;
            }
            a = probe;
            slot += 1;
        }
        a.org(GUARD_CHECK_OFFSET, INVALID);
    }

    a.jumpdest("check");
    a.op(p.auth).push_addr(p.owner).op(EQ).push_label("authorized").op(JUMPI);
    a.push(0u64).op(DUP1).op(REVERT);
    a.jumpdest("authorized");
    a.selector_at("liquidate(address)", 0x80).arg(0).push(0x84u64).op(MSTORE);
    a.push(0u64).push(0u64).push(0x24u64).push(0x80u64).push(0u64).push_addr(p.pool).op(GAS).op(CALL);
    a.fail_if_zero();
    a.push(0u64).op(DUP1).op(DUP1).op(DUP1).op(SELFBALANCE).op(p.auth).op(GAS).op(CALL).op(POP);
    a.op(STOP);
    a.assemble()
}

/// Entry contract that relays `run(borrower)` to a hard-coded guard.
pub fn router(guard: Address) -> Result<Vec<u8>, AsmError> {
    let mut a = Assembler::new();
    a.dispatch(&[("run(address)", "run")]);
    a.jumpdest("run");
    a.selector_at("liquidate(address)", 0x80).arg(0).push(0x84u64).op(MSTORE);
    a.push(0u64).push(0u64).push(0x24u64).push(0x80u64).push(0u64).push_addr(guard).op(GAS).op(CALL);
    a.fail_if_zero();
    a.op(STOP);
    a.fail_block();
    a.assemble()
}

/// Batch depositor holding tokens: `massDeposit(vault, token, users[], amounts[])`
/// approves the vault, deposits on behalf of each user, then hands the vault
/// to the owner in slot 0.
pub fn depositer() -> Result<Vec<u8>, AsmError> {
    let mut a = Assembler::new();
    a.dispatch(&[("massDeposit(address,address,address[],uint256[])", "mass")]);
    a.jumpdest("mass");
    a.selector_at("approve(address,uint256)", 0x80).arg(0).push(0x84u64).op(MSTORE);
    a.push(0u64).op(NOT).push(0xa4u64).op(MSTORE);
    call_with_target(&mut a, 0x44, true, |a| {
        a.arg(1);
    });
    a.fail_if_zero();
    a.arg(2).push(4u64).op(ADD).op(CALLDATALOAD);
    a.arg(3).push(4u64).op(ADD).op(CALLDATALOAD);
    a.op(DUP2).op(EQ).fail_if_zero();
    a.push(0u64);
    a.jumpdest("loop");
    a.op(DUP2).op(DUP2).op(LT).op(ISZERO).push_label("done").op(JUMPI);
    a.selector_at("depositOnBehalf(address,uint256)", 0x80);
    a.op(DUP1).push(5u64).op(SHL).arg(2).op(ADD).push(0x24u64).op(ADD).op(CALLDATALOAD).push(0x84u64).op(MSTORE);
    a.op(DUP1).push(5u64).op(SHL).arg(3).op(ADD).push(0x24u64).op(ADD).op(CALLDATALOAD).push(0xa4u64).op(MSTORE);
    a.push(0u64).push(0u64).push(0x44u64).push(0x80u64).push(0u64).arg(0).op(GAS).op(CALL);
    a.fail_if_zero();
    a.push(1u64).op(ADD).push_label("loop").op(JUMP);
    a.jumpdest("done");
    a.selector_at("setOwner(address)", 0x80).push(0u64).op(SLOAD).push(0x84u64).op(MSTORE);
    a.push(0u64).push(0u64).push(0x24u64).push(0x80u64).push(0u64).arg(0).op(GAS).op(CALL);
    a.fail_if_zero();
    a.op(STOP);
    a.fail_block();
    a.assemble()
}

/// Custodial vault. Storage: slot 0 token, slot 1 owner, slot 2 deposits.
/// `depositOnBehalf(user, amount)` pulls tokens from the caller.
pub fn vault() -> Result<Vec<u8>, AsmError> {
    let mut a = Assembler::new();
    a.dispatch(&[("depositOnBehalf(address,uint256)", "deposit"), ("setOwner(address)", "setOwner")]);
    a.jumpdest("deposit");
    a.selector_at("transferFrom(address,address,uint256)", 0x80);
    a.op(CALLER).push(0x84u64).op(MSTORE).op(ADDRESS).push(0xa4u64).op(MSTORE).arg(1).push(0xc4u64).op(MSTORE);
    call_with_target(&mut a, 0x64, true, |a| {
        a.push(0u64).op(SLOAD);
    });
    a.fail_if_zero();
    a.arg(0).push(2u64).hash2().op(DUP1).op(SLOAD).arg(1).op(ADD).op(SWAP1).op(SSTORE);
    a.op(STOP);
    a.jumpdest("setOwner");
    a.arg(0).push(1u64).op(SSTORE).op(STOP);
    a.fail_block();
    a.assemble()
}

/// Vault paying its balance to whoever presents a signature recovering to
/// the caller. Recovery goes through the 0x01 precompile.
pub fn ecdsa_vault() -> Result<Vec<u8>, AsmError> {
    let mut a = Assembler::new();
    a.dispatch(&[("withdraw(bytes32,uint8,bytes32,bytes32)", "withdraw")]);
    a.jumpdest("withdraw");
    a.push(0x80u64).push(4u64).push(0u64).op(CALLDATACOPY);
    a.push(0u64).push(0x80u64).op(MSTORE);
    a.push(0x20u64).push(0x80u64).push(0x80u64).push(0u64).push(1u64).op(GAS).op(STATICCALL).op(POP);
    a.push(0x80u64).op(MLOAD).op(CALLER).op(EQ).op(ISZERO).push_label("skip").op(JUMPI);
    a.push(0u64).op(DUP1).op(DUP1).op(DUP1).op(SELFBALANCE).op(CALLER).op(GAS).op(CALL).op(POP);
    a.jumpdest("skip");
    a.op(STOP);
    a.assemble()
}

/// Forwards its whole balance to the collector named in calldata.
pub fn distributor() -> Result<Vec<u8>, AsmError> {
    let mut a = Assembler::new();
    a.dispatch(&[("payout(address)", "payout")]);
    a.jumpdest("payout");
    a.push(0u64).op(DUP1).op(DUP1).op(DUP1).op(SELFBALANCE).arg(0).op(GAS).op(CALL);
    a.fail_if_zero();
    a.op(STOP);
    a.fail_block();
    a.assemble()
}

/// Five-byte collector that records the last amount received.
pub fn tip_jar() -> Vec<u8> {
    vec![CALLVALUE, PUSH1, 0, SSTORE, STOP]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evm::opcode::decode_at;

    #[test]
    fn guard_check_layout() {
        let code = guard(GuardParams {
            owner: "0x53d8a1b2c3d4e5f60718293a4b5c6d7e8f900d81".parse().unwrap(),
            pool: Address::from_low_u64(0x1234),
            auth: CALLER,
            padded: true,
        })
        .unwrap();
        let at = |pc: usize| decode_at(&code, pc).unwrap().opcode;
        assert_eq!(at(0xb0c), JUMPDEST);
        assert_eq!(at(0xb0d), CALLER);
        assert_eq!(at(0xb0e), PUSH20);
        assert_eq!(code[0xb0f..0xb11], [0x53, 0xd8]);
        assert_eq!(code[0xb21..0xb23], [0x0d, 0x81]);
        assert_eq!(at(0xb23), EQ);
        assert_eq!(decode_at(&code, 0xb24).unwrap().immediate, vec![0x0b, 0x2c]);
        assert_eq!(at(0xb27), JUMPI);
        assert_eq!(at(0xb2c), JUMPDEST);
    }

    #[test]
    fn all_contracts_assemble() {
        for mint in [false, true] {
            erc20(mint).unwrap();
        }
        amm_pool().unwrap();
        lending_pool().unwrap();
        depositer().unwrap();
        vault().unwrap();
        ecdsa_vault().unwrap();
        distributor().unwrap();
        router(Address::from_low_u64(1)).unwrap();
    }
}
