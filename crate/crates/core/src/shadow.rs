//! Shadow execution: a tag per stack word, byte-interval tags for memory,
//! calldata and returndata, and tags per storage slot, all propagated in
//! lockstep with the interpreter through the hook bus.
//!
//! What a tag means is decided by a [`TagDomain`]; the engine only moves tags
//! around. Taint analysis and value provenance are the two domains in use.

use std::collections::BTreeMap;
use std::fmt::Debug;

use crate::evm::opcode::{self, *};
use crate::evm::{Address, FrameEnter, FrameExit, StepEvent, Word};

/// Context handed to a domain when an instruction produces a value.
#[derive(Debug)]
pub struct OpCtx<'a, T> {
    pub op: u8,
    pub pc: usize,
    pub frame_index: usize,
    pub code_address: Address,
    pub storage_address: Address,
    /// Input tags in pop order (top of stack first).
    pub inputs: &'a [T],
    pub input_values: &'a [Word],
    pub output: Word,
    /// Tag of the data read from memory, calldata, returndata or storage.
    pub loaded: Option<T>,
}

pub trait TagDomain {
    type Tag: Clone + Default + PartialEq + Debug;

    fn join(&self, a: &Self::Tag, b: &Self::Tag) -> Self::Tag;

    /// Tag of the word an instruction pushes.
    fn produce(&mut self, ctx: &OpCtx<'_, Self::Tag>) -> Self::Tag;

    /// Tag of 32 bytes read from the transaction's own calldata.
    fn root_calldata(&self, frame_index: usize, offset: u64) -> Self::Tag;

    /// When a memory offset or storage key carries this tag, the write could
    /// have landed anywhere; the returned tag is joined into every later read.
    fn key_influence(&self, _key: &Self::Tag) -> Option<Self::Tag> {
        None
    }
}

/// Non-overlapping byte intervals with a tag each; uncovered bytes carry the
/// default tag.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMap<T> {
    spans: BTreeMap<u64, (u64, T)>,
}

impl<T> Default for IntervalMap<T> {
    fn default() -> Self {
        IntervalMap { spans: BTreeMap::new() }
    }
}

impl<T: Clone + Default + PartialEq> IntervalMap<T> {
    pub fn new() -> Self {
        Self::default()
    }

    fn cut(&mut self, start: u64, end: u64) {
        let overlapping: Vec<u64> =
            self.spans.range(..end).filter(|(s, (e, _))| **s < end && *e > start).map(|(s, _)| *s).collect();
        for s in overlapping {
            let (e, t) = self.spans.remove(&s).expect("present");
            if s < start {
                self.spans.insert(s, (start, t.clone()));
            }
            if e > end {
                self.spans.insert(end, (e, t));
            }
        }
    }

    /// Overwrites `[start, start+len)` with `tag`.
    pub fn write(&mut self, start: u64, len: u64, tag: T) {
        if len == 0 {
            return;
        }
        let end = start.saturating_add(len);
        self.cut(start, end);
        if tag != T::default() {
            self.spans.insert(start, (end, tag));
        }
    }

    /// Tags overlapping `[start, start+len)`, plus the default tag if any byte
    /// of the range is uncovered.
    pub fn read(&self, start: u64, len: u64) -> Vec<T> {
        if len == 0 {
            return Vec::new();
        }
        let end = start.saturating_add(len);
        let mut out = Vec::new();
        let mut covered_to = start;
        let mut gap = false;
        let first = self.spans.range(..=start).next_back().map(|(s, _)| *s).unwrap_or(start);
        for (s, (e, t)) in self.spans.range(first..end) {
            if *e <= start {
                continue;
            }
            if *s > covered_to {
                gap = true;
            }
            covered_to = covered_to.max(*e);
            out.push(t.clone());
        }
        if covered_to < end {
            gap = true;
        }
        if gap {
            out.push(T::default());
        }
        out
    }

    /// Copies `[src, src+len)` of `self` into a fresh map starting at 0.
    pub fn extract(&self, src: u64, len: u64) -> IntervalMap<T> {
        let mut out = IntervalMap::new();
        let end = src.saturating_add(len);
        for (s, (e, t)) in &self.spans {
            let (a, b) = ((*s).max(src), (*e).min(end));
            if a < b {
                out.spans.insert(a - src, (b - src, t.clone()));
            }
        }
        out
    }

    /// Writes `other[0..len)` at `dst`, overwriting.
    pub fn paste(&mut self, dst: u64, other: &IntervalMap<T>, len: u64) {
        if len == 0 {
            return;
        }
        self.cut(dst, dst.saturating_add(len));
        for (s, (e, t)) in &other.spans {
            let e = (*e).min(len);
            if *s < e {
                self.spans.insert(dst + s, (dst + e, t.clone()));
            }
        }
    }

    pub fn clear(&mut self) {
        self.spans.clear();
    }
}

#[derive(Debug)]
struct Pending<T> {
    op: u8,
    pc: usize,
    inputs: Vec<T>,
    values: Vec<Word>,
    loaded: Option<T>,
    pushes: usize,
}

#[derive(Debug)]
struct FrameShadow<T> {
    frame_index: usize,
    stack: Vec<T>,
    memory: IntervalMap<T>,
    memory_wild: T,
    /// `None` for the transaction's top-level frame.
    calldata: Option<IntervalMap<T>>,
    calldata_len: u64,
    returndata: IntervalMap<T>,
    output: IntervalMap<T>,
    pending: Option<Pending<T>>,
    /// Memory window the running CALL will receive its output into.
    call_out: Option<(u64, u64)>,
}

#[derive(Debug)]
struct StorageTags<T> {
    slots: BTreeMap<(Address, Word), T>,
    wild: BTreeMap<Address, T>,
}

impl<T: Clone> Clone for StorageTags<T> {
    fn clone(&self) -> Self {
        StorageTags { slots: self.slots.clone(), wild: self.wild.clone() }
    }
}

/// The shadow machine. Feed it every hook event (pre-step before the
/// instruction executes, post-step after) and query tags in between.
#[derive(Debug)]
pub struct Shadow<D: TagDomain> {
    pub domain: D,
    frames: Vec<FrameShadow<D::Tag>>,
    storage: StorageTags<D::Tag>,
    checkpoints: Vec<StorageTags<D::Tag>>,
    /// Calldata tags prepared by a CALL for the frame about to be entered.
    next_calldata: Option<IntervalMap<D::Tag>>,
    /// Output tags and length of the most recently exited child frame.
    last_output: Option<(IntervalMap<D::Tag>, u64)>,
}

fn as_u64(w: Word) -> u64 {
    if w.bits() > 64 {
        u64::MAX
    } else {
        w.low_u64()
    }
}

impl<D: TagDomain> Shadow<D> {
    pub fn new(domain: D) -> Self {
        Shadow {
            domain,
            frames: Vec::new(),
            storage: StorageTags { slots: BTreeMap::new(), wild: BTreeMap::new() },
            checkpoints: Vec::new(),
            next_calldata: None,
            last_output: None,
        }
    }

    fn join_all<'a>(&self, tags: impl IntoIterator<Item = &'a D::Tag>) -> D::Tag
    where
        D::Tag: 'a,
    {
        tags.into_iter().fold(D::Tag::default(), |acc, t| self.domain.join(&acc, t))
    }

    /// Tag of the `n`th stack word from the top in the innermost frame.
    pub fn stack_tag(&self, n: usize) -> Option<&D::Tag> {
        let f = self.frames.last()?;
        f.stack.len().checked_sub(n + 1).map(|i| &f.stack[i])
    }

    pub fn stack_depth(&self) -> usize {
        self.frames.last().map(|f| f.stack.len()).unwrap_or(0)
    }

    pub fn storage_tag(&self, address: Address, slot: Word) -> D::Tag {
        let stored = self.storage.slots.get(&(address, slot)).cloned().unwrap_or_default();
        match self.storage.wild.get(&address) {
            Some(w) => self.domain.join(&stored, w),
            None => stored,
        }
    }

    /// Joined tag of memory bytes `[offset, offset+len)` in the innermost frame.
    pub fn memory_tag(&self, offset: u64, len: u64) -> D::Tag {
        let Some(f) = self.frames.last() else { return D::Tag::default() };
        let tags = f.memory.read(offset, len);
        let t = self.join_all(tags.iter());
        self.domain.join(&t, &f.memory_wild)
    }

    pub fn frame_enter(&mut self, e: &FrameEnter<'_>) {
        let calldata = if e.parent.is_none() { None } else { Some(self.next_calldata.take().unwrap_or_default()) };
        self.checkpoints.push(self.storage.clone());
        self.frames.push(FrameShadow {
            frame_index: e.frame_index,
            stack: Vec::new(),
            memory: IntervalMap::new(),
            memory_wild: D::Tag::default(),
            calldata,
            calldata_len: e.input.len() as u64,
            returndata: IntervalMap::new(),
            output: IntervalMap::new(),
            pending: None,
            call_out: None,
        });
        if e.is_precompile {
            // Identity: output bytes are the input bytes.
            let f = self.frames.last_mut().expect("just pushed");
            f.output = f.calldata.clone().unwrap_or_default();
        }
    }

    pub fn frame_exit(&mut self, x: &FrameExit<'_>) {
        let Some(f) = self.frames.pop() else { return };
        let saved = self.checkpoints.pop();
        if !x.status.is_success() {
            if let Some(s) = saved {
                self.storage = s;
            }
        }
        self.last_output = Some((f.output, x.output.len() as u64));
    }

    fn calldata_read(&self, f: &FrameShadow<D::Tag>, offset: u64, len: u64) -> D::Tag {
        match &f.calldata {
            Some(map) => self.join_all(map.read(offset, len).iter()),
            None => {
                if offset >= f.calldata_len {
                    D::Tag::default()
                } else {
                    self.domain.root_calldata(f.frame_index, offset)
                }
            }
        }
    }

    pub fn pre_step(&mut self, ev: &StepEvent<'_>) {
        let op = ev.opcode;
        let Some(info) = opcode::info(op) else { return };
        let pops = info.pops as usize;
        if ev.stack.len() < pops {
            return;
        }
        let frame_pos = self.frames.len() - 1;
        // Structural moves keep tags exact.
        if (DUP1..=DUP16).contains(&op) {
            let f = &mut self.frames[frame_pos];
            let n = (op - DUP1) as usize;
            let t = f.stack[f.stack.len() - 1 - n].clone();
            f.stack.push(t);
            return;
        }
        if (SWAP1..=SWAP16).contains(&op) {
            let f = &mut self.frames[frame_pos];
            let n = (op - SWAP1 + 1) as usize;
            let top = f.stack.len() - 1;
            f.stack.swap(top, top - n);
            return;
        }
        let values: Vec<Word> = (0..pops).map(|i| ev.stack[ev.stack.len() - 1 - i]).collect();
        let inputs: Vec<D::Tag> = {
            let f = &mut self.frames[frame_pos];
            let at = f.stack.len() - pops;
            let mut v = f.stack.split_off(at);
            v.reverse();
            v
        };
        let influence = |s: &Self, t: &D::Tag| s.domain.key_influence(t);

        let mut loaded = None;
        match op {
            MLOAD => {
                let o = as_u64(values[0]);
                loaded = Some(self.memory_tag(o, 32));
            }
            MSTORE | MSTORE8 => {
                let o = as_u64(values[0]);
                let wild = influence(self, &inputs[0]);
                let f = &mut self.frames[frame_pos];
                if op == MSTORE {
                    f.memory.write(o, 32, inputs[1].clone());
                } else {
                    let word = o - o % 32;
                    let old = f.memory.read(word, 32);
                    let t = old.iter().fold(inputs[1].clone(), |acc, x| self.domain.join(&acc, x));
                    let f = &mut self.frames[frame_pos];
                    f.memory.write(word, 32, t);
                }
                if let Some(w) = wild {
                    let f = &mut self.frames[frame_pos];
                    f.memory_wild = self.domain.join(&f.memory_wild, &w);
                }
            }
            SLOAD => {
                loaded = Some(self.storage_tag(ev.storage_address, values[0]));
            }
            SSTORE => {
                if let Some(w) = influence(self, &inputs[0]) {
                    let cur = self.storage.wild.get(&ev.storage_address).cloned().unwrap_or_default();
                    let joined = self.domain.join(&cur, &w);
                    self.storage.wild.insert(ev.storage_address, joined);
                }
                let t = inputs[1].clone();
                if t == D::Tag::default() {
                    self.storage.slots.remove(&(ev.storage_address, values[0]));
                } else {
                    self.storage.slots.insert((ev.storage_address, values[0]), t);
                }
            }
            CALLDATALOAD => {
                let f = &self.frames[frame_pos];
                loaded = Some(self.calldata_read(f, as_u64(values[0]), 32));
            }
            CALLDATACOPY | CODECOPY | RETURNDATACOPY | EXTCODECOPY => {
                let (mo, so, len) = if op == EXTCODECOPY {
                    (as_u64(values[1]), as_u64(values[2]), as_u64(values[3]))
                } else {
                    (as_u64(values[0]), as_u64(values[1]), as_u64(values[2]))
                };
                let wild = influence(self, &inputs[0]);
                let f = &self.frames[frame_pos];
                let copied = match op {
                    CALLDATACOPY => match &f.calldata {
                        Some(map) => map.extract(so, len),
                        None => {
                            let mut m = IntervalMap::new();
                            let mut k = 0;
                            while k < len {
                                let n = (len - k).min(32);
                                if so.saturating_add(k) < f.calldata_len {
                                    m.write(k, n, self.domain.root_calldata(f.frame_index, so + k));
                                }
                                k += 32;
                            }
                            m
                        }
                    },
                    RETURNDATACOPY => f.returndata.extract(so, len),
                    _ => IntervalMap::new(),
                };
                // Offsets and sizes that are themselves tagged taint the copy.
                let extra = self.join_all(inputs.iter());
                let f = &mut self.frames[frame_pos];
                f.memory.paste(mo, &copied, len);
                if extra != D::Tag::default() && len > 0 {
                    let old = f.memory.read(mo, len);
                    let mut t = extra.clone();
                    for x in &old {
                        t = self.domain.join(&t, x);
                    }
                    let f = &mut self.frames[frame_pos];
                    f.memory.write(mo, len, t);
                }
                if let Some(w) = wild {
                    let f = &mut self.frames[frame_pos];
                    f.memory_wild = self.domain.join(&f.memory_wild, &w);
                }
            }
            KECCAK256 => {
                loaded = Some(self.memory_tag(as_u64(values[0]), as_u64(values[1])));
            }
            LOG0..=LOG4 => {}
            CALL | CALLCODE | DELEGATECALL | STATICCALL => {
                let base = if matches!(op, CALL | CALLCODE) { 3 } else { 2 };
                let (io, is) = (as_u64(values[base]), as_u64(values[base + 1]));
                let (oo, os) = (as_u64(values[base + 2]), as_u64(values[base + 3]));
                let f = &self.frames[frame_pos];
                let mut args = f.memory.extract(io, is);
                let extra = self.domain.join(&self.join_all(inputs[base..base + 2].iter()), &f.memory_wild);
                if extra != D::Tag::default() && is > 0 {
                    let old = args.read(0, is);
                    let t = old.iter().fold(extra, |acc, x| self.domain.join(&acc, x));
                    args.write(0, is, t);
                }
                self.next_calldata = Some(args);
                self.last_output = None;
                self.frames[frame_pos].call_out = Some((oo, os));
            }
            CREATE => {
                self.next_calldata = Some(IntervalMap::new());
                self.last_output = None;
                self.frames[frame_pos].call_out = None;
            }
            RETURN | REVERT => {
                let (o, s) = (as_u64(values[0]), as_u64(values[1]));
                let f = &self.frames[frame_pos];
                let mut out = f.memory.extract(o, s);
                let extra = self.domain.join(&self.join_all(inputs.iter()), &f.memory_wild);
                if extra != D::Tag::default() && s > 0 {
                    let old = out.read(0, s);
                    let t = old.iter().fold(extra, |acc, x| self.domain.join(&acc, x));
                    out.write(0, s, t);
                }
                self.frames[frame_pos].output = out;
            }
            _ => {}
        }
        self.frames[frame_pos].pending =
            Some(Pending { op, pc: ev.pc, inputs, values, loaded, pushes: info.pushes as usize });
    }

    pub fn post_step(&mut self, ev: &StepEvent<'_>) {
        let Some(frame_pos) = self.frames.len().checked_sub(1) else { return };
        let Some(p) = self.frames[frame_pos].pending.take() else { return };
        if matches!(p.op, CALL | CALLCODE | DELEGATECALL | STATICCALL | CREATE) {
            let (out, len) = self.last_output.take().unwrap_or_default();
            let f = &mut self.frames[frame_pos];
            if let Some((oo, os)) = f.call_out.take() {
                f.memory.paste(oo, &out, os.min(len));
            }
            f.returndata = out;
        }
        if p.pushes == 0 {
            return;
        }
        let output = ev.stack.last().copied().unwrap_or_default();
        let tag = self.domain.produce(&OpCtx {
            op: p.op,
            pc: p.pc,
            frame_index: ev.frame_index,
            code_address: ev.code_address,
            storage_address: ev.storage_address,
            inputs: &p.inputs,
            input_values: &p.values,
            output,
            loaded: p.loaded,
        });
        self.frames[frame_pos].stack.push(tag);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_write_read() {
        let mut m: IntervalMap<u8> = IntervalMap::new();
        m.write(0, 32, 1);
        m.write(16, 32, 2);
        assert_eq!(m.read(0, 16), vec![1]);
        assert_eq!(m.read(0, 32), vec![1, 2]);
        assert_eq!(m.read(40, 32), vec![2, 0]);
        assert_eq!(m.read(100, 4), vec![0]);
        m.write(0, 64, 0);
        assert_eq!(m.read(0, 64), vec![0]);
    }

    #[test]
    fn interval_extract_paste() {
        let mut m: IntervalMap<u8> = IntervalMap::new();
        m.write(4, 32, 7);
        let e = m.extract(4, 32);
        assert_eq!(e.read(0, 32), vec![7]);
        let mut dst: IntervalMap<u8> = IntervalMap::new();
        dst.write(0, 100, 3);
        dst.paste(10, &e, 8);
        assert_eq!(dst.read(10, 8), vec![7]);
        assert_eq!(dst.read(18, 1), vec![3]);
        assert_eq!(dst.read(0, 10), vec![3]);
    }
}
