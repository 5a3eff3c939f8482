//! Step 3: replays the imitation candidate with taint tracking while forcing
//! it along the victim's recorded branch outcomes, and reports the blocks
//! whose branch conditions depend on the taint sources and differ.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::evm::opcode::{self, *};
use crate::evm::{
    execute_transaction, Address, ExecutionResult, FrameEnter, FrameExit, Hook, HookSet, StackPatch, StepEvent,
    Transaction, TxError, Word, WorldState,
};
use crate::shadow::{OpCtx, Shadow, TagDomain};
use crate::trace::{BasicBlockRef, Dcfg, JumpiRecord};

/// Default taint sources: values that certainly differ once the sender or
/// the executing contract changes.
pub const DEFAULT_SOURCES: [u8; 6] = [ORIGIN, CALLER, ADDRESS, CODESIZE, SELFBALANCE, PC];

/// Set of source opcodes a value derives from; empty means untainted.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaintTag([u64; 4]);

impl TaintTag {
    pub fn clean() -> Self {
        TaintTag::default()
    }

    pub fn source(op: u8) -> Self {
        let mut t = TaintTag::default();
        t.0[(op / 64) as usize] |= 1 << (op % 64);
        t
    }

    pub fn is_tainted(&self) -> bool {
        self.0.iter().any(|w| *w != 0)
    }

    pub fn join(&self, other: &TaintTag) -> TaintTag {
        TaintTag([self.0[0] | other.0[0], self.0[1] | other.0[1], self.0[2] | other.0[2], self.0[3] | other.0[3]])
    }

    pub fn origins(&self) -> Vec<u8> {
        (0u16..256).map(|b| b as u8).filter(|b| self.0[(b / 64) as usize] >> (b % 64) & 1 == 1).collect()
    }

    pub fn origin_names(&self) -> Vec<&'static str> {
        self.origins().into_iter().map(opcode::name).collect()
    }
}

impl fmt::Debug for TaintTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TaintTag{:?}", self.origin_names())
    }
}

impl Serialize for TaintTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        #[serde(rename_all = "camelCase")]
        struct Repr<'a> {
            tainted: bool,
            origin_opcodes: Vec<&'a str>,
        }
        Repr { tainted: self.is_tainted(), origin_opcodes: self.origin_names() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TaintTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(rename_all = "camelCase")]
        struct Repr {
            origin_opcodes: Vec<String>,
        }
        let r = Repr::deserialize(d)?;
        r.origin_opcodes.iter().try_fold(TaintTag::clean(), |t, n| {
            opcode::from_name(n)
                .map(|op| t.join(&TaintTag::source(op)))
                .ok_or_else(|| serde::de::Error::custom(format!("unknown opcode {n}")))
        })
    }
}

/// Tag produced by executing `op` with no tainted inputs.
pub fn introduce_taint(op: u8) -> TaintTag {
    if DEFAULT_SOURCES.contains(&op) {
        TaintTag::source(op)
    } else {
        TaintTag::clean()
    }
}

#[derive(Debug, Clone)]
pub struct TaintDomain {
    sources: [bool; 256],
}

impl TaintDomain {
    pub fn new(sources: &[u8]) -> Self {
        let mut s = [false; 256];
        for op in sources {
            s[*op as usize] = true;
        }
        TaintDomain { sources: s }
    }
}

impl Default for TaintDomain {
    fn default() -> Self {
        TaintDomain::new(&DEFAULT_SOURCES)
    }
}

impl TagDomain for TaintDomain {
    type Tag = TaintTag;

    fn join(&self, a: &TaintTag, b: &TaintTag) -> TaintTag {
        a.join(b)
    }

    fn produce(&mut self, c: &OpCtx<'_, TaintTag>) -> TaintTag {
        if self.sources[c.op as usize] {
            return TaintTag::source(c.op);
        }
        let mut t = c.loaded.unwrap_or_default();
        for i in c.inputs {
            t = t.join(i);
        }
        t
    }

    fn root_calldata(&self, _frame_index: usize, _offset: u64) -> TaintTag {
        TaintTag::clean()
    }

    fn key_influence(&self, key: &TaintTag) -> Option<TaintTag> {
        key.is_tainted().then_some(*key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaintedBlock {
    pub block: BasicBlockRef,
    pub jumpi_pc: usize,
    pub frame_index: usize,
    pub seq_index: usize,
    pub victim_condition: bool,
    pub imitation_condition: bool,
    pub origins: TaintTag,
    /// The same JUMPI site took both directions in the victim trace.
    pub bi_branch: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaintReport {
    pub tainted_blocks: Vec<TaintedBlock>,
    pub tainted_contracts: BTreeSet<Address>,
    pub aligned_ok: bool,
    /// Untainted JUMPIs whose condition differed (environmental divergence).
    pub untainted_divergences: Vec<(usize, usize)>,
    /// JUMPIs with a tainted condition, whether or not it differed.
    pub tainted_jumpis: usize,
    pub total_jumpis: usize,
}

impl TaintReport {
    pub fn is_empty(&self) -> bool {
        self.tainted_blocks.is_empty()
    }

    pub fn to_json(&self, pretty: bool) -> String {
        if pretty {
            serde_json::to_string_pretty(self).expect("serializable")
        } else {
            serde_json::to_string(self).expect("serializable")
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaintError {
    #[error("imitation rejected: {0}")]
    Rejected(#[from] TxError),
    #[error("trace misalignment: {0}")]
    TraceMisalignment(String),
}

struct FrameCursor {
    index: usize,
    block_start: usize,
    last_op: Option<u8>,
    started: bool,
}

/// Hook that tracks taint and pins branches to the victim's outcomes.
pub struct TaintReplay<'v> {
    shadow: Shadow<TaintDomain>,
    victim: BTreeMap<(usize, usize), &'v JumpiRecord>,
    bi_branch: &'v BTreeSet<(Address, usize)>,
    cursors: Vec<FrameCursor>,
    blocks: Vec<TaintedBlock>,
    aligned_ok: bool,
    misalignment: Option<String>,
    untainted: Vec<(usize, usize)>,
    tainted_jumpis: usize,
    total_jumpis: usize,
    frame_counts: BTreeMap<usize, usize>,
    force: bool,
}

impl<'v> TaintReplay<'v> {
    pub fn new(victim: &'v Dcfg, domain: TaintDomain) -> Self {
        TaintReplay {
            shadow: Shadow::new(domain),
            victim: victim.jumpi_record.iter().map(|j| ((j.frame_index, j.seq_index), j)).collect(),
            bi_branch: &victim.bi_branch,
            cursors: Vec::new(),
            blocks: Vec::new(),
            aligned_ok: true,
            misalignment: None,
            untainted: Vec::new(),
            tainted_jumpis: 0,
            total_jumpis: 0,
            frame_counts: BTreeMap::new(),
            force: true,
        }
    }

    /// Disables branch forcing (observation only).
    pub fn without_forcing(mut self) -> Self {
        self.force = false;
        self
    }

    fn misaligned(&mut self, why: String) {
        if self.misalignment.is_none() {
            self.misalignment = Some(why);
        }
    }
}

impl Hook for TaintReplay<'_> {
    fn pre_step(&mut self, ev: &StepEvent<'_>) -> Option<StackPatch> {
        let c = self.cursors.last_mut().expect("step inside a frame");
        if !c.started || ev.opcode == JUMPDEST || c.last_op.is_some_and(opcode::is_terminator) {
            c.block_start = ev.pc;
            c.started = true;
        }
        c.last_op = Some(ev.opcode);
        let block_start = c.block_start;
        *self.frame_counts.entry(ev.frame_index).or_default() += 1;

        let mut patch = None;
        if ev.opcode == JUMPI {
            self.total_jumpis += 1;
            let natural = ev.peek(1).is_some_and(|w| !w.is_zero());
            let tag = self.shadow.stack_tag(1).copied().unwrap_or_default();
            if tag.is_tainted() {
                self.tainted_jumpis += 1;
            }
            match self.victim.get(&(ev.frame_index, ev.seq)).copied() {
                None => self.misaligned(format!(
                    "JUMPI at frame {} step {} pc {:#x} has no victim counterpart",
                    ev.frame_index, ev.seq, ev.pc
                )),
                Some(v) if v.pc != ev.pc || v.contract != ev.code_address => self.misaligned(format!(
                    "frame {} step {}: imitation at pc {:#x}, victim at pc {:#x}",
                    ev.frame_index, ev.seq, ev.pc, v.pc
                )),
                Some(v) => {
                    if natural != v.condition_value {
                        if tag.is_tainted() {
                            self.blocks.push(TaintedBlock {
                                block: BasicBlockRef {
                                    contract: ev.code_address,
                                    start_pc: block_start,
                                    end_pc: ev.pc,
                                },
                                jumpi_pc: ev.pc,
                                frame_index: ev.frame_index,
                                seq_index: ev.seq,
                                victim_condition: v.condition_value,
                                imitation_condition: natural,
                                origins: tag,
                                bi_branch: self.bi_branch.contains(&(ev.code_address, ev.pc)),
                            });
                        } else {
                            self.aligned_ok = false;
                            self.untainted.push((ev.frame_index, ev.seq));
                        }
                        if self.force {
                            let value = if v.condition_value { Word::one() } else { Word::zero() };
                            patch = Some(StackPatch { depth: 1, value });
                        }
                    }
                }
            }
        }
        self.shadow.pre_step(ev);
        patch
    }

    fn post_step(&mut self, ev: &StepEvent<'_>) {
        self.shadow.post_step(ev);
    }

    fn frame_enter(&mut self, e: &FrameEnter<'_>) {
        self.cursors.push(FrameCursor { index: e.frame_index, block_start: 0, last_op: None, started: false });
        self.frame_counts.entry(e.frame_index).or_default();
        self.shadow.frame_enter(e);
    }

    fn frame_exit(&mut self, x: &FrameExit<'_>) {
        let c = self.cursors.pop();
        debug_assert_eq!(c.map(|c| c.index), Some(x.frame_index));
        self.shadow.frame_exit(x);
    }
}

/// Taint-checks `tx_c` against the victim trace with the default sources.
pub fn taint_replay(state: &WorldState, tx_c: &Transaction, victim: &Dcfg) -> Result<TaintReport, TaintError> {
    taint_replay_with(state, tx_c, victim, TaintDomain::default()).map(|(r, _)| r)
}

/// Same as [`taint_replay`] with a custom source set; also returns the forced
/// execution result.
pub fn taint_replay_with(
    state: &WorldState,
    tx_c: &Transaction,
    victim: &Dcfg,
    domain: TaintDomain,
) -> Result<(TaintReport, ExecutionResult), TaintError> {
    let mut replay = TaintReplay::new(victim, domain);
    let result = {
        let mut hooks = HookSet::mutating().with(&mut replay);
        execute_transaction(state, tx_c, Some(&mut hooks))?
    };
    if let Some(why) = replay.misalignment.take() {
        return Err(TaintError::TraceMisalignment(why));
    }
    if replay.frame_counts.len() != victim.frames.len() {
        return Err(TaintError::TraceMisalignment(format!(
            "imitation entered {} frames, victim {}",
            replay.frame_counts.len(),
            victim.frames.len()
        )));
    }
    for f in &victim.frames {
        let got = replay.frame_counts.get(&f.frame_index).copied().unwrap_or(0);
        if got != f.instruction_count {
            return Err(TaintError::TraceMisalignment(format!(
                "frame {} executed {} instructions, victim {}",
                f.frame_index, got, f.instruction_count
            )));
        }
    }
    let tainted_contracts = replay.blocks.iter().map(|b| b.block.contract).collect();
    Ok((
        TaintReport {
            tainted_blocks: replay.blocks,
            tainted_contracts,
            aligned_ok: replay.aligned_ok,
            untainted_divergences: replay.untainted,
            tainted_jumpis: replay.tainted_jumpis,
            total_jumpis: replay.total_jumpis,
        },
        result,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sources() {
        for op in DEFAULT_SOURCES {
            assert!(introduce_taint(op).is_tainted(), "{}", opcode::name(op));
        }
        for op in [ADD, GAS, NUMBER, BALANCE, CALLVALUE, TIMESTAMP] {
            assert!(!introduce_taint(op).is_tainted());
        }
    }

    #[test]
    fn tag_join_and_origins() {
        let t = TaintTag::source(CALLER).join(&TaintTag::source(ORIGIN));
        assert_eq!(t.origin_names(), vec!["ORIGIN", "CALLER"]);
        assert!(!TaintTag::clean().join(&TaintTag::clean()).is_tainted());
    }
}
