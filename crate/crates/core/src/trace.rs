//! Dynamic control-flow graph of one executed transaction: the basic blocks
//! that actually ran, every JUMPI outcome, call edges, and where call targets
//! and jump destinations came from.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::evm::opcode::{self, *};
use crate::evm::{
    execute_transaction, Address, CallKind, ExecutionResult, FrameEnter, FrameExit, HaltReason, Hook, HookSet,
    StackPatch, Status, StepEvent, Transaction, TxError, Word, WorldState,
};
use crate::hexfmt;
use crate::shadow::{OpCtx, Shadow, TagDomain};

/// Where a stack word came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    /// Immediate of the PUSH at `pc` in `contract`'s code.
    CodeConstant {
        contract: Address,
        pc: usize,
    },
    /// Value loaded from `slot` of `contract`'s storage.
    StorageSlot {
        contract: Address,
        #[serde(with = "hexfmt::u256")]
        slot: Word,
    },
    /// Word at `offset` of the transaction's own calldata.
    Calldata {
        frame: usize,
        offset: u64,
    },
    Environment {
        opcode: u8,
    },
    #[default]
    Computed,
}

impl Provenance {
    pub fn is_hard_coded(&self) -> bool {
        matches!(self, Provenance::CodeConstant { .. } | Provenance::StorageSlot { .. })
    }
}

/// Provenance propagation: exact through moves and zero/one identities,
/// `Computed` for any other combination.
#[derive(Debug, Default, Clone)]
pub struct ProvenanceDomain;

impl TagDomain for ProvenanceDomain {
    type Tag = Provenance;

    fn join(&self, a: &Provenance, b: &Provenance) -> Provenance {
        match (a, b) {
            (Provenance::Computed, x) | (x, Provenance::Computed) => x.clone(),
            (x, y) if x == y => x.clone(),
            _ => Provenance::Computed,
        }
    }

    fn produce(&mut self, c: &OpCtx<'_, Provenance>) -> Provenance {
        let zero = |i: usize| c.input_values.get(i).is_some_and(|v| v.is_zero());
        let one = |i: usize| c.input_values.get(i).is_some_and(|v| *v == Word::one());
        match c.op {
            op if opcode::is_push(op) => Provenance::CodeConstant { contract: c.code_address, pc: c.pc },
            SLOAD => Provenance::StorageSlot { contract: c.storage_address, slot: c.input_values[0] },
            CALLDATALOAD | MLOAD => c.loaded.clone().unwrap_or_default(),
            ADD | OR | XOR => {
                if zero(1) {
                    c.inputs[0].clone()
                } else if zero(0) {
                    c.inputs[1].clone()
                } else {
                    Provenance::Computed
                }
            }
            SUB if zero(1) => c.inputs[0].clone(),
            MUL if one(1) => c.inputs[0].clone(),
            MUL if one(0) => c.inputs[1].clone(),
            DIV if one(1) => c.inputs[0].clone(),
            AND => {
                if c.input_values[0] == c.output {
                    c.inputs[0].clone()
                } else if c.input_values[1] == c.output {
                    c.inputs[1].clone()
                } else {
                    Provenance::Computed
                }
            }
            ADDRESS | ORIGIN | CALLER | CALLVALUE | CALLDATASIZE | CODESIZE | GASPRICE | RETURNDATASIZE | COINBASE
            | TIMESTAMP | NUMBER | DIFFICULTY | GASLIMIT | CHAINID | SELFBALANCE | PC | MSIZE | GAS | BALANCE => {
                Provenance::Environment { opcode: c.op }
            }
            _ => Provenance::Computed,
        }
    }

    fn root_calldata(&self, frame_index: usize, offset: u64) -> Provenance {
        Provenance::Calldata { frame: frame_index, offset }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BasicBlockRef {
    pub contract: Address,
    pub start_pc: usize,
    pub end_pc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Fallthrough,
    Jump,
    JumpiTaken,
    JumpiNotTaken,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: BasicBlockRef,
    pub to: BasicBlockRef,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CallEdge {
    pub caller_frame: usize,
    pub caller_block: Option<BasicBlockRef>,
    pub caller_code: Address,
    pub caller_storage: Address,
    pub call_pc: usize,
    /// Frame entered for the call; `None` when the call failed before entry.
    pub callee_frame: Option<usize>,
    pub callee: Address,
    pub call_kind: CallKind,
    #[serde(with = "hexfmt::u256")]
    pub value_wei: Word,
    pub target_provenance: Provenance,
    pub success: bool,
    /// The call and all of its ancestors succeeded, so its effects persist.
    pub effective: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JumpiRecord {
    pub frame_index: usize,
    pub seq_index: usize,
    pub contract: Address,
    pub pc: usize,
    pub condition_value: bool,
    pub destination: usize,
}

/// One executed JUMP/JUMPI with the provenance of its destination word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JumpSource {
    pub frame_index: usize,
    pub contract: Address,
    pub pc: usize,
    pub opcode: u8,
    pub destination: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SloadRecord {
    pub frame_index: usize,
    pub code_address: Address,
    pub storage_address: Address,
    #[serde(with = "hexfmt::u256")]
    pub slot: Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrameTrace {
    pub frame_index: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub kind: CallKind,
    pub caller: Address,
    pub code_address: Address,
    pub storage_address: Address,
    #[serde(with = "hexfmt::u256")]
    pub value: Word,
    pub status: Status,
    pub has_code: bool,
    pub is_precompile: bool,
    pub blocks: Vec<BasicBlockRef>,
    pub instruction_count: usize,
    pub selfdestruct_to: Option<Address>,
    #[serde(with = "hexfmt::u256")]
    pub selfdestruct_value: Word,
    pub created: Option<Address>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Dcfg {
    pub sender: Address,
    pub to: Option<Address>,
    pub nodes: BTreeSet<BasicBlockRef>,
    pub edges: BTreeSet<Edge>,
    pub frames: Vec<FrameTrace>,
    pub call_edges: Vec<CallEdge>,
    pub jumpi_record: Vec<JumpiRecord>,
    pub jump_sources: Vec<JumpSource>,
    pub sloads: Vec<SloadRecord>,
    /// JUMPI sites observed with both condition values.
    pub bi_branch: BTreeSet<(Address, usize)>,
}

impl Dcfg {
    /// Frames whose effects persisted (the frame and all ancestors succeeded).
    pub fn frame_effective(&self, frame_index: usize) -> bool {
        let mut cur = Some(frame_index);
        while let Some(i) = cur {
            let f = &self.frames[i];
            if !f.status.is_success() {
                return false;
            }
            cur = f.parent;
        }
        true
    }

    pub fn executed_instructions(&self) -> usize {
        self.frames.iter().map(|f| f.instruction_count).sum()
    }

    /// Contracts whose code ran, in first-execution order.
    pub fn executed_contracts(&self) -> Vec<Address> {
        let mut seen = BTreeSet::new();
        self.frames
            .iter()
            .filter(|f| f.has_code && !f.is_precompile)
            .filter(|f| seen.insert(f.code_address))
            .map(|f| f.code_address)
            .collect()
    }

    /// Executed blocks of `contract`, by start offset.
    pub fn blocks_of(&self, contract: Address) -> Vec<BasicBlockRef> {
        self.nodes.iter().filter(|b| b.contract == contract).copied().collect()
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
pub enum TraceError {
    #[error("transaction rejected: {0}")]
    Rejected(#[from] TxError),
    #[error("victim execution failed with status {0:?}")]
    VictimExecutionFailed(Status),
    #[error("CREATE2 is not supported")]
    Create2Unsupported,
}

struct OpenFrame {
    index: usize,
    code_address: Address,
    /// Start and latest pc of the block being executed.
    current: Option<(usize, usize)>,
    last_op: Option<u8>,
    last_jumpi_taken: bool,
    /// Previous block of this frame and how control left it.
    prev_block: Option<(BasicBlockRef, EdgeKind)>,
    pending_calls: Vec<usize>,
}

/// Hook that records a [`Dcfg`] while the transaction runs.
pub struct DcfgBuilder {
    shadow: Shadow<ProvenanceDomain>,
    dcfg: Dcfg,
    open: Vec<OpenFrame>,
    unsupported: bool,
}

impl DcfgBuilder {
    pub fn new(tx: &Transaction) -> Self {
        DcfgBuilder {
            shadow: Shadow::new(ProvenanceDomain),
            dcfg: Dcfg {
                sender: tx.sender,
                to: tx.to,
                nodes: BTreeSet::new(),
                edges: BTreeSet::new(),
                frames: Vec::new(),
                call_edges: Vec::new(),
                jumpi_record: Vec::new(),
                jump_sources: Vec::new(),
                sloads: Vec::new(),
                bi_branch: BTreeSet::new(),
            },
            open: Vec::new(),
            unsupported: false,
        }
    }

    /// Closes the running block of the innermost frame.
    fn close_block(&mut self) {
        let Some(f) = self.open.last_mut() else { return };
        let Some((start, end)) = f.current.take() else { return };
        let block = BasicBlockRef { contract: f.code_address, start_pc: start, end_pc: end };
        if let Some((prev, kind)) = f.prev_block {
            self.dcfg.edges.insert(Edge { from: prev, to: block, kind });
        }
        let exit = match f.last_op {
            Some(JUMP) => EdgeKind::Jump,
            Some(JUMPI) if f.last_jumpi_taken => EdgeKind::JumpiTaken,
            Some(JUMPI) => EdgeKind::JumpiNotTaken,
            _ => EdgeKind::Fallthrough,
        };
        f.prev_block = Some((block, exit));
        self.dcfg.nodes.insert(block);
        self.dcfg.frames[f.index].blocks.push(block);
    }

    /// True when CREATE2 (or another unsupported instruction) was attempted.
    pub fn saw_unsupported(&self) -> bool {
        self.unsupported
    }

    pub fn finish(mut self) -> Dcfg {
        let mut seen: BTreeMap<(Address, usize), bool> = BTreeMap::new();
        for j in &self.dcfg.jumpi_record {
            match seen.get(&(j.contract, j.pc)) {
                Some(v) if *v != j.condition_value => {
                    self.dcfg.bi_branch.insert((j.contract, j.pc));
                }
                Some(_) => {}
                None => {
                    seen.insert((j.contract, j.pc), j.condition_value);
                }
            }
        }
        let effective: Vec<bool> = (0..self.dcfg.frames.len()).map(|i| self.dcfg.frame_effective(i)).collect();
        for e in &mut self.dcfg.call_edges {
            e.effective = e.success && effective[e.caller_frame];
        }
        self.dcfg
    }
}

impl Hook for DcfgBuilder {
    fn pre_step(&mut self, ev: &StepEvent<'_>) -> Option<StackPatch> {
        let f = self.open.last_mut().expect("step inside a frame");
        let starts_block = match f.current {
            None => true,
            Some(_) => ev.opcode == JUMPDEST || f.last_op.is_some_and(opcode::is_terminator),
        };
        if starts_block {
            self.close_block();
        }
        let f = self.open.last_mut().expect("step inside a frame");
        let block_start = f.current.map(|c| c.0).unwrap_or(ev.pc);
        f.current = Some((block_start, ev.pc));
        f.last_op = Some(ev.opcode);
        let block = BasicBlockRef { contract: f.code_address, start_pc: block_start, end_pc: ev.pc };
        let frame_index = f.index;
        self.dcfg.frames[frame_index].instruction_count += 1;

        match ev.opcode {
            JUMP | JUMPI => {
                let dest = ev.peek(0).unwrap_or_default();
                let destination = if dest.bits() > 63 { usize::MAX } else { dest.low_u64() as usize };
                let provenance = self.shadow.stack_tag(0).cloned().unwrap_or_default();
                self.dcfg.jump_sources.push(JumpSource {
                    frame_index,
                    contract: ev.code_address,
                    pc: ev.pc,
                    opcode: ev.opcode,
                    destination,
                    provenance,
                });
                if ev.opcode == JUMPI {
                    let cond = ev.peek(1).is_some_and(|c| !c.is_zero());
                    self.open.last_mut().expect("frame").last_jumpi_taken = cond;
                    self.dcfg.jumpi_record.push(JumpiRecord {
                        frame_index,
                        seq_index: ev.seq,
                        contract: ev.code_address,
                        pc: ev.pc,
                        condition_value: cond,
                        destination,
                    });
                }
            }
            SLOAD => {
                self.dcfg.sloads.push(SloadRecord {
                    frame_index,
                    code_address: ev.code_address,
                    storage_address: ev.storage_address,
                    slot: ev.peek(0).unwrap_or_default(),
                });
            }
            CREATE2 => self.unsupported = true,
            op if opcode::is_call_family(op) || op == CREATE => {
                let kind = CallKind::from_opcode(op).expect("call family");
                let (callee, value, target_provenance) = if op == CREATE {
                    (Address::ZERO, ev.peek(0).unwrap_or_default(), Provenance::Computed)
                } else {
                    let value =
                        if matches!(op, CALL | CALLCODE) { ev.peek(2).unwrap_or_default() } else { Word::zero() };
                    (
                        Address::from_word(ev.peek(1).unwrap_or_default()),
                        value,
                        self.shadow.stack_tag(1).cloned().unwrap_or_default(),
                    )
                };
                let idx = self.dcfg.call_edges.len();
                self.dcfg.call_edges.push(CallEdge {
                    caller_frame: frame_index,
                    caller_block: Some(block),
                    caller_code: ev.code_address,
                    caller_storage: ev.storage_address,
                    call_pc: ev.pc,
                    callee_frame: None,
                    callee,
                    call_kind: kind,
                    value_wei: value,
                    target_provenance,
                    success: false,
                    effective: false,
                });
                self.open.last_mut().expect("frame").pending_calls.push(idx);
            }
            _ => {}
        }
        self.shadow.pre_step(ev);
        None
    }

    fn post_step(&mut self, ev: &StepEvent<'_>) {
        if opcode::is_call_family(ev.opcode) || ev.opcode == CREATE {
            if let Some(idx) = self.open.last_mut().and_then(|f| f.pending_calls.pop()) {
                let top = ev.peek(0).unwrap_or_default();
                let e = &mut self.dcfg.call_edges[idx];
                e.success = !top.is_zero();
                if ev.opcode == CREATE && e.success {
                    e.callee = Address::from_word(top);
                }
            }
        }
        self.shadow.post_step(ev);
    }

    fn frame_enter(&mut self, e: &FrameEnter<'_>) {
        if let Some(parent) = self.open.last() {
            if let Some(idx) = parent.pending_calls.last() {
                let edge = &mut self.dcfg.call_edges[*idx];
                edge.callee_frame = Some(e.frame_index);
                if e.kind == CallKind::Create {
                    edge.callee = e.code_address;
                }
            }
        }
        debug_assert_eq!(e.frame_index, self.dcfg.frames.len());
        self.dcfg.frames.push(FrameTrace {
            frame_index: e.frame_index,
            parent: e.parent,
            depth: e.depth,
            kind: e.kind,
            caller: e.caller,
            code_address: e.code_address,
            storage_address: e.storage_address,
            value: e.value,
            status: Status::Success,
            has_code: e.has_code,
            is_precompile: e.is_precompile,
            blocks: Vec::new(),
            instruction_count: 0,
            selfdestruct_to: None,
            selfdestruct_value: Word::zero(),
            created: None,
        });
        self.open.push(OpenFrame {
            index: e.frame_index,
            code_address: e.code_address,
            current: None,
            last_op: None,
            last_jumpi_taken: false,
            prev_block: None,
            pending_calls: Vec::new(),
        });
        self.shadow.frame_enter(e);
    }

    fn frame_exit(&mut self, x: &FrameExit<'_>) {
        self.close_block();
        self.open.pop();
        let f = &mut self.dcfg.frames[x.frame_index];
        f.status = x.status;
        f.created = x.created;
        if let Some((to, v)) = x.selfdestruct_to {
            f.selfdestruct_to = Some(to);
            f.selfdestruct_value = v;
        }
        if x.status == Status::HaltError(HaltReason::Unsupported) {
            self.unsupported = true;
        }
        self.shadow.frame_exit(x);
    }
}

/// Runs `tx` and records its DCFG regardless of outcome.
pub fn trace_transaction(state: &WorldState, tx: &Transaction) -> Result<(Dcfg, ExecutionResult, bool), TxError> {
    let mut builder = DcfgBuilder::new(tx);
    let result = {
        let mut hooks = HookSet::read_only().with(&mut builder);
        execute_transaction(state, tx, Some(&mut hooks))?
    };
    let unsupported = builder.saw_unsupported();
    Ok((builder.finish(), result, unsupported))
}

/// Step 1: executes the victim transaction and builds its DCFG.
pub fn build_dcfg(state: &WorldState, tx_v: &Transaction) -> Result<(Dcfg, ExecutionResult), TraceError> {
    let (dcfg, result, unsupported) = trace_transaction(state, tx_v)?;
    if unsupported {
        return Err(TraceError::Create2Unsupported);
    }
    if !result.is_success() {
        return Err(TraceError::VictimExecutionFailed(result.status));
    }
    Ok((dcfg, result))
}
