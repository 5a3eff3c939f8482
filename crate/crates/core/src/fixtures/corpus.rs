//! Seeded random straight-line programs with forward branches, used to
//! exercise taint tracking against a perturbation oracle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asm::Assembler;
use crate::evm::opcode::*;
use crate::evm::{Account, Address, BlockContext, Transaction, Word, WorldState};

use super::scenarios::ether;

/// One program deployed at [`program_address`], run by a victim and an
/// imitating sender with identical calldata and value.
#[derive(Debug, Clone)]
pub struct TaintCase {
    pub seed: u64,
    pub code: Vec<u8>,
    pub state: WorldState,
    pub victim_tx: Transaction,
    pub imitation_tx: Transaction,
}

pub fn program_address() -> Address {
    Address::from_low_u64(0x9a0_0000)
}

pub fn corpus_victim() -> Address {
    Address::from_low_u64(0x71c7_1111)
}

pub fn corpus_imitator() -> Address {
    Address::from_low_u64(0xad_0000_2222)
}

const SOURCES: [u8; 9] = [CALLER, ORIGIN, ADDRESS, CODESIZE, SELFBALANCE, PC, CALLVALUE, NUMBER, TIMESTAMP];
const BINARY: [u8; 13] = [ADD, SUB, MUL, DIV, MOD, AND, OR, XOR, EQ, LT, GT, BYTE, SHR];
const UNARY: [u8; 2] = [ISZERO, NOT];

/// Emits a random program of roughly `len` steps. The generator tracks the
/// stack depth so the program never underflows and every branch target is a
/// later JUMPDEST reached with the same depth on both sides.
pub fn random_program(rng: &mut impl Rng, len: usize) -> Vec<u8> {
    let mut a = Assembler::new();
    let mut depth = 0usize;
    let mut label = 0usize;
    for _ in 0..len {
        let roll = rng.gen_range(0..100);
        match roll {
            _ if depth > 10 => {
                a.op(POP);
                depth -= 1;
            }
            0..=19 => {
                a.op(*SOURCES.choose(rng).expect("nonempty"));
                depth += 1;
            }
            20..=29 => {
                match rng.gen_range(0..3) {
                    0 => a.push_addr(corpus_victim()),
                    1 => a.push(rng.gen_range(0u64..4)),
                    _ => a.push(rng.gen::<u64>()),
                };
                depth += 1;
            }
            30..=49 if depth >= 2 => {
                a.op(*BINARY.choose(rng).expect("nonempty"));
                depth -= 1;
            }
            50..=56 if depth >= 1 => {
                a.op(*UNARY.choose(rng).expect("nonempty"));
            }
            57..=62 if depth >= 1 => {
                a.op(DUP1 + rng.gen_range(0..depth.min(3) as u8));
                depth += 1;
            }
            63..=65 if depth >= 2 => {
                a.op(SWAP1);
            }
            66..=71 if depth >= 1 => {
                // memory round trip at a fixed word, or a byte write
                let off = 0x20 * rng.gen_range(0u64..3);
                if rng.gen_bool(0.3) {
                    a.push(off + rng.gen_range(0u64..32)).op(MSTORE8);
                    depth -= 1;
                } else {
                    a.push(off).op(MSTORE).push(off).op(MLOAD);
                }
            }
            72..=74 => {
                let off = 0x20 * rng.gen_range(0u64..3);
                a.push(0x20u64).push(off).op(KECCAK256);
                depth += 1;
            }
            75..=80 if depth >= 1 => {
                // storage write then a read, possibly through a computed key
                let slot = rng.gen_range(0u64..4);
                a.push(slot).op(SSTORE);
                depth -= 1;
                if rng.gen_bool(0.5) {
                    a.push(slot).op(SLOAD);
                } else {
                    a.op(CALLER).push(3u64).op(AND).op(SLOAD);
                }
                depth += 1;
            }
            81..=99 if depth >= 1 => {
                // cond PUSH2 Lk JUMPI <stack-neutral filler> Lk: JUMPDEST
                let name = format!("l{label}");
                label += 1;
                a.push_label(&name).op(JUMPI);
                depth -= 1;
                a.push(rng.gen::<u32>() as u64).push(rng.gen_range(0u64..4)).op(SSTORE);
                a.jumpdest(&name);
            }
            _ => {
                a.op(*SOURCES.choose(rng).expect("nonempty"));
                depth += 1;
            }
        }
    }
    a.op(STOP);
    a.assemble().expect("generated labels are defined")
}

/// `n` cases from `seed`; case `i` uses its own seed so any single case can
/// be regenerated with [`taint_case`].
pub fn taint_corpus(seed: u64, n: usize) -> Vec<TaintCase> {
    (0..n).map(|i| taint_case(seed.wrapping_add(i as u64))).collect()
}

pub fn taint_case(seed: u64) -> TaintCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(8..48);
    let code = random_program(&mut rng, len);
    let mut state = WorldState::new(BlockContext::default());
    state.accounts.insert(corpus_victim(), Account::with_balance(ether(10)));
    state.accounts.insert(corpus_imitator(), Account::with_balance(ether(10)));
    state.accounts.insert(
        program_address(),
        Account { balance: Word::from(rng.gen::<u32>()), ..Account::with_code(code.clone()) },
    );
    let value = Word::from(rng.gen_range(0u64..3));
    let victim_tx = Transaction::call(corpus_victim(), program_address(), vec![]).with_value(value);
    let imitation_tx = Transaction::call(corpus_imitator(), program_address(), vec![]).with_value(value);
    TaintCase { seed, code, state, victim_tx, imitation_tx }
}
