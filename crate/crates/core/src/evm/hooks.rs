//! Instrumentation bus. Subscribers observe every executed instruction and
//! every frame boundary. A pre-step subscriber may ask to overwrite a stack
//! word before the instruction runs; the request is honoured only when the
//! hook set was built with stack mutation enabled.

use serde::{Deserialize, Serialize};

use super::state::Status;
use super::types::{Address, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CallKind {
    Call,
    CallCode,
    DelegateCall,
    StaticCall,
    Create,
}

impl CallKind {
    pub fn from_opcode(op: u8) -> Option<CallKind> {
        use super::opcode::*;
        match op {
            CALL => Some(CallKind::Call),
            CALLCODE => Some(CallKind::CallCode),
            DELEGATECALL => Some(CallKind::DelegateCall),
            STATICCALL => Some(CallKind::StaticCall),
            CREATE => Some(CallKind::Create),
            _ => None,
        }
    }
}

/// View of the machine around one instruction.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub frame_index: usize,
    pub depth: usize,
    /// Index of this instruction within its frame.
    pub seq: usize,
    pub pc: usize,
    pub opcode: u8,
    /// Bottom-first; the top of stack is the last element.
    pub stack: &'a [Word],
    pub memory: &'a [u8],
    pub gas_remaining: u64,
    pub code_address: Address,
    pub storage_address: Address,
    pub code: &'a [u8],
}

impl StepEvent<'_> {
    /// The `n`th word from the top (0 = top).
    pub fn peek(&self, n: usize) -> Option<Word> {
        self.stack.len().checked_sub(n + 1).map(|i| self.stack[i])
    }
}

#[derive(Debug)]
pub struct FrameEnter<'a> {
    pub frame_index: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub kind: CallKind,
    pub caller: Address,
    pub code_address: Address,
    pub storage_address: Address,
    pub value: Word,
    pub input: &'a [u8],
    pub has_code: bool,
    pub is_precompile: bool,
}

#[derive(Debug)]
pub struct FrameExit<'a> {
    pub frame_index: usize,
    pub depth: usize,
    pub status: Status,
    pub output: &'a [u8],
    /// Beneficiary when the frame self-destructed successfully.
    pub selfdestruct_to: Option<(Address, Word)>,
    pub created: Option<Address>,
}

/// Overwrites the `depth`th word from the top of stack before execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackPatch {
    pub depth: usize,
    pub value: Word,
}

pub trait Hook {
    fn pre_step(&mut self, _ev: &StepEvent<'_>) -> Option<StackPatch> {
        None
    }
    fn post_step(&mut self, _ev: &StepEvent<'_>) {}
    fn frame_enter(&mut self, _f: &FrameEnter<'_>) {}
    fn frame_exit(&mut self, _f: &FrameExit<'_>) {}
}

/// Ordered fan-out of hooks.
pub struct HookSet<'h> {
    hooks: Vec<&'h mut dyn Hook>,
    allow_stack_mutation: bool,
}

impl<'h> HookSet<'h> {
    pub fn read_only() -> Self {
        HookSet { hooks: Vec::new(), allow_stack_mutation: false }
    }

    pub fn mutating() -> Self {
        HookSet { hooks: Vec::new(), allow_stack_mutation: true }
    }

    pub fn with(mut self, hook: &'h mut dyn Hook) -> Self {
        self.hooks.push(hook);
        self
    }

    pub fn push(&mut self, hook: &'h mut dyn Hook) {
        self.hooks.push(hook);
    }

    pub fn allows_stack_mutation(&self) -> bool {
        self.allow_stack_mutation
    }

    pub fn is_empty(&self) -> bool {
        self.hooks.is_empty()
    }

    /// Collects patches from every hook; they are dropped in read-only mode.
    pub(crate) fn pre_step(&mut self, ev: &StepEvent<'_>) -> Vec<StackPatch> {
        let mut patches = Vec::new();
        for h in self.hooks.iter_mut() {
            if let Some(p) = h.pre_step(ev) {
                if self.allow_stack_mutation {
                    patches.push(p);
                }
            }
        }
        patches
    }

    pub(crate) fn post_step(&mut self, ev: &StepEvent<'_>) {
        self.hooks.iter_mut().for_each(|h| h.post_step(ev));
    }

    pub(crate) fn frame_enter(&mut self, f: &FrameEnter<'_>) {
        self.hooks.iter_mut().for_each(|h| h.frame_enter(f));
    }

    pub(crate) fn frame_exit(&mut self, f: &FrameExit<'_>) {
        self.hooks.iter_mut().for_each(|h| h.frame_exit(f));
    }
}

/// Records the pc stream of every frame; handy as a reference decoder.
#[derive(Debug, Default, Clone)]
pub struct PcRecorder {
    pub steps: Vec<(usize, usize, u8)>,
    pub post_steps: usize,
}

impl Hook for PcRecorder {
    fn pre_step(&mut self, ev: &StepEvent<'_>) -> Option<StackPatch> {
        self.steps.push((ev.frame_index, ev.pc, ev.opcode));
        None
    }

    fn post_step(&mut self, _ev: &StepEvent<'_>) {
        self.post_steps += 1;
    }
}
