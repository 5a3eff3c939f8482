use std::sync::OnceLock;

use bytes::Bytes;

use super::arith;
use super::gas::GasTable;
use super::hooks::{CallKind, FrameEnter, FrameExit, HookSet, StepEvent};
use super::opcode::{self, *};
use super::state::{ExecutionResult, HaltReason, Log, Status, Transaction, WorldState};
use super::types::{create_address, keccak256, Address, Word};

/// Address of the only precompile provided (identity / datacopy).
pub const IDENTITY_PRECOMPILE: Address = Address([0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 4]);
pub const MAX_CALL_DEPTH: usize = 1024;
const STACK_LIMIT: usize = 1024;
/// Memory offsets beyond this are treated as out-of-gas rather than allocated.
const MEMORY_LIMIT: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TxError {
    #[error("invalid nonce: account has {expected}, transaction carries {got}")]
    InvalidNonce { expected: u64, got: u64 },
    #[error("insufficient balance: need {need}, have {have}")]
    InsufficientBalance { need: Word, have: Word },
    #[error("gas limit {limit} below intrinsic cost {required}")]
    IntrinsicGas { required: u64, limit: u64 },
}

pub fn default_gas_table() -> &'static GasTable {
    static TABLE: OnceLock<GasTable> = OnceLock::new();
    TABLE.get_or_init(GasTable::default)
}

/// Applies `tx` to a copy of `state` using the default gas schedule.
pub fn execute_transaction(
    state: &WorldState,
    tx: &Transaction,
    hooks: Option<&mut HookSet<'_>>,
) -> Result<ExecutionResult, TxError> {
    execute_transaction_with(default_gas_table(), state, tx, hooks)
}

pub fn execute_transaction_with(
    table: &GasTable,
    state: &WorldState,
    tx: &Transaction,
    hooks: Option<&mut HookSet<'_>>,
) -> Result<ExecutionResult, TxError> {
    let expected = state.nonce(&tx.sender);
    if tx.nonce != expected {
        return Err(TxError::InvalidNonce { expected, got: tx.nonce });
    }
    let upfront = tx.gas_price.checked_mul(Word::from(tx.gas_limit)).and_then(|f| f.checked_add(tx.value));
    let have = state.balance(&tx.sender);
    match upfront {
        Some(need) if need <= have => {}
        _ => {
            let need = upfront.unwrap_or(Word::MAX);
            return Err(TxError::InsufficientBalance { need, have });
        }
    }
    let intrinsic = table.intrinsic_gas(&tx.data, tx.to.is_none());
    if intrinsic > tx.gas_limit {
        return Err(TxError::IntrinsicGas { required: intrinsic, limit: tx.gas_limit });
    }

    let mut world = state.clone();
    {
        let acct = world.account_mut(tx.sender);
        acct.nonce += 1;
        acct.balance -= tx.gas_price * Word::from(tx.gas_limit);
    }

    let mut evm = Evm {
        table,
        state: world,
        hooks,
        logs: Vec::new(),
        destructs: Vec::new(),
        frames: 0,
        origin: tx.sender,
        gas_price: tx.gas_price,
    };
    let gas = tx.gas_limit - intrinsic;
    let msg = match tx.to {
        Some(to) => Message {
            kind: CallKind::Call,
            caller: tx.sender,
            code_address: to,
            storage_address: to,
            value: tx.value,
            transfers_value: true,
            input: tx.data.clone(),
            gas,
            depth: 0,
            is_static: false,
            parent: None,
            code: evm.state.code(&to),
        },
        None => Message {
            kind: CallKind::Create,
            caller: tx.sender,
            code_address: create_address(tx.sender, tx.nonce),
            storage_address: create_address(tx.sender, tx.nonce),
            value: tx.value,
            transfers_value: true,
            input: Vec::new(),
            gas,
            depth: 0,
            is_static: false,
            parent: None,
            code: Bytes::from(tx.data.clone()),
        },
    };
    let out = evm.run_message(msg);

    let gas_used = tx.gas_limit - out.gas_left;
    let Evm { mut state, logs, destructs, .. } = evm;
    let success = out.status.is_success();
    if success {
        for a in destructs {
            state.accounts.remove(&a);
        }
    }
    let refund = tx.gas_price * Word::from(out.gas_left);
    state.account_mut(tx.sender).balance += refund;
    let coinbase = state.block.coinbase;
    state.account_mut(coinbase).balance += tx.gas_price * Word::from(gas_used);

    Ok(ExecutionResult {
        status: out.status,
        gas_used,
        return_data: out.output,
        logs: if success { logs } else { Vec::new() },
        created: if success { out.created } else { None },
        state_after: state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeployMode {
    /// Runs the bytes as init code; the returned bytes become runtime code.
    InitCode,
    /// Installs the bytes as runtime code verbatim.
    DirectRuntime,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeployError {
    #[error("creator {0} does not exist")]
    MissingCreator(Address),
    #[error("an account with code or nonce already exists at {0}")]
    AddressCollision(Address),
    #[error("init code failed: {0:?}")]
    InitFailed(Status),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deployment {
    pub address: Address,
    pub gas_used: u64,
}

/// Creates a contract account at the creator's next creation address. Gas is
/// measured and reported but not charged to any balance.
pub fn deploy_contract(
    state: &mut WorldState,
    creator: Address,
    code: &[u8],
    mode: DeployMode,
) -> Result<Deployment, DeployError> {
    let table = default_gas_table();
    if state.account(&creator).is_none() {
        return Err(DeployError::MissingCreator(creator));
    }
    let nonce = state.nonce(&creator);
    let address = create_address(creator, nonce);
    if state.account(&address).is_some_and(|a| a.nonce > 0 || !a.code.is_empty()) {
        return Err(DeployError::AddressCollision(address));
    }
    match mode {
        DeployMode::DirectRuntime => {
            state.account_mut(creator).nonce += 1;
            let acct = state.account_mut(address);
            acct.nonce = 1;
            acct.code = Bytes::copy_from_slice(code);
            Ok(Deployment { address, gas_used: table.dynamic.code_deposit_byte * code.len() as u64 })
        }
        DeployMode::InitCode => {
            state.account_mut(creator).nonce += 1;
            let gas = state.block.gas_limit;
            let mut evm = Evm {
                table,
                state: state.clone(),
                hooks: None,
                logs: Vec::new(),
                destructs: Vec::new(),
                frames: 0,
                origin: creator,
                gas_price: Word::zero(),
            };
            let out = evm.run_message(Message {
                kind: CallKind::Create,
                caller: creator,
                code_address: address,
                storage_address: address,
                value: Word::zero(),
                transfers_value: true,
                input: Vec::new(),
                gas,
                depth: 0,
                is_static: false,
                parent: None,
                code: Bytes::copy_from_slice(code),
            });
            if !out.status.is_success() {
                return Err(DeployError::InitFailed(out.status));
            }
            *state = evm.state;
            Ok(Deployment { address, gas_used: gas - out.gas_left })
        }
    }
}

struct Message {
    kind: CallKind,
    caller: Address,
    code_address: Address,
    storage_address: Address,
    value: Word,
    transfers_value: bool,
    input: Vec<u8>,
    gas: u64,
    depth: usize,
    is_static: bool,
    parent: Option<usize>,
    code: Bytes,
}

struct FrameOutcome {
    status: Status,
    gas_left: u64,
    output: Vec<u8>,
    created: Option<Address>,
}

enum Halt {
    Stop,
    Return(Vec<u8>),
    Revert(Vec<u8>),
    SelfDestruct(Address, Word),
    Error(HaltReason),
}

struct Frame {
    code: Bytes,
    jumpdests: Vec<bool>,
    stack: Vec<Word>,
    memory: Vec<u8>,
    pc: usize,
    gas: u64,
    return_data: Vec<u8>,
    index: usize,
    caller: Address,
    code_address: Address,
    address: Address,
    value: Word,
    input: Vec<u8>,
    depth: usize,
    is_static: bool,
}

struct Evm<'t, 'a, 'h> {
    table: &'t GasTable,
    state: WorldState,
    hooks: Option<&'a mut HookSet<'h>>,
    logs: Vec<Log>,
    destructs: Vec<Address>,
    frames: usize,
    origin: Address,
    gas_price: Word,
}

type Step<T> = Result<T, HaltReason>;

impl Frame {
    fn pop(&mut self) -> Step<Word> {
        self.stack.pop().ok_or(HaltReason::StackUnderflow)
    }

    fn push(&mut self, w: Word) -> Step<()> {
        if self.stack.len() >= STACK_LIMIT {
            return Err(HaltReason::StackOverflow);
        }
        self.stack.push(w);
        Ok(())
    }

    fn charge(&mut self, cost: u64) -> Step<()> {
        if cost > self.gas {
            self.gas = 0;
            return Err(HaltReason::OutOfGas);
        }
        self.gas -= cost;
        Ok(())
    }

    /// Charges expansion for `[offset, offset+size)` and returns the range.
    fn touch(&mut self, table: &GasTable, offset: Word, size: Word) -> Step<(usize, usize)> {
        if size.is_zero() {
            return Ok((0, 0));
        }
        if offset.bits() > 32 || size.bits() > 32 {
            self.gas = 0;
            return Err(HaltReason::OutOfGas);
        }
        let (o, s) = (offset.low_u64(), size.low_u64());
        let end = o + s;
        if end > MEMORY_LIMIT {
            self.gas = 0;
            return Err(HaltReason::OutOfGas);
        }
        let cur_words = (self.memory.len() as u64).div_ceil(32);
        let new_words = end.div_ceil(32);
        if new_words > cur_words {
            self.charge(table.memory_cost(new_words) - table.memory_cost(cur_words))?;
            self.memory.resize(new_words as usize * 32, 0);
        }
        Ok((o as usize, s as usize))
    }

    fn mem_slice(&self, o: usize, s: usize) -> Vec<u8> {
        if s == 0 {
            Vec::new()
        } else {
            self.memory[o..o + s].to_vec()
        }
    }
}

fn words(n: usize) -> u64 {
    (n as u64).div_ceil(32)
}

/// Copies `src[offset..offset+len]` with zero fill past the end of `src`.
fn padded_slice(src: &[u8], offset: Word, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    if offset.bits() <= 64 {
        let o = offset.low_u64();
        if o < src.len() as u64 {
            let o = o as usize;
            let n = (src.len() - o).min(len);
            out[..n].copy_from_slice(&src[o..o + n]);
        }
    }
    out
}

fn as_usize_sat(w: Word) -> usize {
    if w.bits() > 63 {
        usize::MAX
    } else {
        w.low_u64() as usize
    }
}

impl Evm<'_, '_, '_> {
    fn run_message(&mut self, msg: Message) -> FrameOutcome {
        let index = self.frames;
        self.frames += 1;
        let is_precompile = msg.kind != CallKind::Create && msg.code_address == IDENTITY_PRECOMPILE;
        if let Some(h) = self.hooks.as_deref_mut() {
            h.frame_enter(&FrameEnter {
                frame_index: index,
                parent: msg.parent,
                depth: msg.depth,
                kind: msg.kind,
                caller: msg.caller,
                code_address: msg.code_address,
                storage_address: msg.storage_address,
                value: msg.value,
                input: &msg.input,
                has_code: !msg.code.is_empty(),
                is_precompile,
            });
        }

        let checkpoint = (self.state.clone(), self.logs.len(), self.destructs.len());
        let mut created = None;
        let mut selfdestruct_to = None;

        let (status, gas_left, output) = 'run: {
            if msg.kind == CallKind::Create {
                let target = msg.storage_address;
                if self.state.account(&target).is_some_and(|a| a.nonce > 0 || !a.code.is_empty()) {
                    break 'run (Status::HaltError(HaltReason::AddressCollision), 0, Vec::new());
                }
                self.state.account_mut(target).nonce = 1;
            }
            if msg.transfers_value && !msg.value.is_zero() {
                let from = self.state.account_mut(msg.caller);
                if from.balance < msg.value {
                    break 'run (Status::Revert, msg.gas, Vec::new());
                }
                from.balance -= msg.value;
                self.state.account_mut(msg.storage_address).balance += msg.value;
            }
            if is_precompile {
                let cost = self.table.dynamic.identity_base + self.table.dynamic.identity_word * words(msg.input.len());
                if cost > msg.gas {
                    break 'run (Status::HaltError(HaltReason::OutOfGas), 0, Vec::new());
                }
                break 'run (Status::Success, msg.gas - cost, msg.input.clone());
            }
            if msg.code.is_empty() {
                if msg.kind == CallKind::Create {
                    created = Some(msg.storage_address);
                }
                break 'run (Status::Success, msg.gas, Vec::new());
            }
            let mut frame = Frame {
                jumpdests: opcode::jumpdests(&msg.code),
                code: msg.code.clone(),
                stack: Vec::new(),
                memory: Vec::new(),
                pc: 0,
                gas: msg.gas,
                return_data: Vec::new(),
                index,
                caller: msg.caller,
                code_address: msg.code_address,
                address: msg.storage_address,
                value: msg.value,
                input: msg.input.clone(),
                depth: msg.depth,
                is_static: msg.is_static,
            };
            match self.run_frame(&mut frame) {
                Halt::Stop => {
                    if msg.kind == CallKind::Create {
                        created = Some(msg.storage_address);
                    }
                    (Status::Success, frame.gas, Vec::new())
                }
                Halt::Return(data) => {
                    if msg.kind == CallKind::Create {
                        let deposit = self.table.dynamic.code_deposit_byte * data.len() as u64;
                        if deposit > frame.gas {
                            break 'run (Status::HaltError(HaltReason::OutOfGas), 0, Vec::new());
                        }
                        self.state.account_mut(msg.storage_address).code = Bytes::from(data);
                        created = Some(msg.storage_address);
                        (Status::Success, frame.gas - deposit, Vec::new())
                    } else {
                        (Status::Success, frame.gas, data)
                    }
                }
                Halt::Revert(data) => (Status::Revert, frame.gas, data),
                Halt::SelfDestruct(to, amount) => {
                    selfdestruct_to = Some((to, amount));
                    (Status::Success, frame.gas, Vec::new())
                }
                Halt::Error(r) => (Status::HaltError(r), 0, Vec::new()),
            }
        };

        if !status.is_success() {
            let (s, l, d) = checkpoint;
            self.state = s;
            self.logs.truncate(l);
            self.destructs.truncate(d);
            created = None;
            selfdestruct_to = None;
        }
        if let Some(h) = self.hooks.as_deref_mut() {
            h.frame_exit(&FrameExit {
                frame_index: index,
                depth: msg.depth,
                status,
                output: &output,
                selfdestruct_to,
                created,
            });
        }
        FrameOutcome { status, gas_left, output, created }
    }

    fn run_frame(&mut self, f: &mut Frame) -> Halt {
        let mut seq = 0usize;
        loop {
            let op = f.code.get(f.pc).copied().unwrap_or(STOP);
            if let Some(h) = self.hooks.as_deref_mut() {
                let patches = h.pre_step(&StepEvent {
                    frame_index: f.index,
                    depth: f.depth,
                    seq,
                    pc: f.pc,
                    opcode: op,
                    stack: &f.stack,
                    memory: &f.memory,
                    gas_remaining: f.gas,
                    code_address: f.code_address,
                    storage_address: f.address,
                    code: &f.code,
                });
                for p in patches {
                    if let Some(i) = f.stack.len().checked_sub(p.depth + 1) {
                        f.stack[i] = p.value;
                    }
                }
            }
            let pc = f.pc;
            let res = self.step(f, op);
            match res {
                Ok(next) => {
                    if let Some(h) = self.hooks.as_deref_mut() {
                        h.post_step(&StepEvent {
                            frame_index: f.index,
                            depth: f.depth,
                            seq,
                            pc,
                            opcode: op,
                            stack: &f.stack,
                            memory: &f.memory,
                            gas_remaining: f.gas,
                            code_address: f.code_address,
                            storage_address: f.address,
                            code: &f.code,
                        });
                    }
                    if let Some(halt) = next {
                        return halt;
                    }
                }
                Err(reason) => return Halt::Error(reason),
            }
            seq += 1;
        }
    }

    /// Executes one instruction. `Ok(Some(_))` ends the frame.
    fn step(&mut self, f: &mut Frame, op: u8) -> Step<Option<Halt>> {
        let t = self.table;
        let Some(info) = opcode::info(op) else {
            return Err(HaltReason::InvalidOpcode);
        };
        if op == INVALID {
            return Err(HaltReason::InvalidOpcode);
        }
        if op == CREATE2 {
            return Err(HaltReason::Unsupported);
        }
        if f.stack.len() < info.pops as usize {
            return Err(HaltReason::StackUnderflow);
        }
        if f.stack.len() - info.pops as usize + info.pushes as usize > STACK_LIMIT {
            return Err(HaltReason::StackOverflow);
        }
        f.charge(t.static_cost(op))?;
        let mut next_pc = f.pc + 1;

        macro_rules! binop {
            ($fun:expr) => {{
                let a = f.pop()?;
                let b = f.pop()?;
                f.push($fun(a, b))?;
            }};
        }

        match op {
            STOP => return Ok(Some(Halt::Stop)),
            ADD => binop!(arith::add),
            MUL => binop!(arith::mul),
            SUB => binop!(arith::sub),
            DIV => binop!(arith::div),
            SDIV => binop!(arith::sdiv),
            MOD => binop!(arith::rem),
            SMOD => binop!(arith::smod),
            ADDMOD => {
                let (a, b, n) = (f.pop()?, f.pop()?, f.pop()?);
                f.push(arith::addmod(a, b, n))?;
            }
            MULMOD => {
                let (a, b, n) = (f.pop()?, f.pop()?, f.pop()?);
                f.push(arith::mulmod(a, b, n))?;
            }
            EXP => {
                let (a, e) = (f.pop()?, f.pop()?);
                f.charge(t.dynamic.exp_byte * (e.bits() as u64).div_ceil(8))?;
                f.push(arith::exp(a, e))?;
            }
            SIGNEXTEND => binop!(arith::signextend),
            LT => binop!(|a, b| arith::bool_word(a < b)),
            GT => binop!(|a, b| arith::bool_word(a > b)),
            SLT => binop!(|a, b| arith::bool_word(arith::slt(a, b))),
            SGT => binop!(|a, b| arith::bool_word(arith::slt(b, a))),
            EQ => binop!(|a, b| arith::bool_word(a == b)),
            ISZERO => {
                let a = f.pop()?;
                f.push(arith::bool_word(a.is_zero()))?;
            }
            AND => binop!(|a, b| a & b),
            OR => binop!(|a, b| a | b),
            XOR => binop!(|a, b| a ^ b),
            NOT => {
                let a = f.pop()?;
                f.push(!a)?;
            }
            BYTE => binop!(arith::byte),
            SHL => binop!(arith::shl),
            SHR => binop!(arith::shr),
            SAR => binop!(arith::sar),
            KECCAK256 => {
                let (o, s) = (f.pop()?, f.pop()?);
                let (o, s) = f.touch(t, o, s)?;
                f.charge(t.dynamic.keccak_word * words(s))?;
                let h = keccak256(&f.mem_slice(o, s));
                f.push(Word::from_big_endian(&h))?;
            }
            ADDRESS => f.push(f.address.to_word())?,
            BALANCE => {
                let a = Address::from_word(f.pop()?);
                f.push(self.state.balance(&a))?;
            }
            ORIGIN => f.push(self.origin.to_word())?,
            CALLER => f.push(f.caller.to_word())?,
            CALLVALUE => f.push(f.value)?,
            CALLDATALOAD => {
                let o = f.pop()?;
                let b = padded_slice(&f.input, o, 32);
                f.push(Word::from_big_endian(&b))?;
            }
            CALLDATASIZE => f.push(Word::from(f.input.len()))?,
            CALLDATACOPY | CODECOPY | RETURNDATACOPY => {
                let (mo, so, s) = (f.pop()?, f.pop()?, f.pop()?);
                if op == RETURNDATACOPY {
                    let end = so.checked_add(s);
                    if end.is_none_or(|e| e > Word::from(f.return_data.len())) {
                        return Err(HaltReason::InvalidOpcode);
                    }
                }
                let (mo, s) = f.touch(t, mo, s)?;
                f.charge(t.dynamic.copy_word * words(s))?;
                if s > 0 {
                    let src: &[u8] = match op {
                        CALLDATACOPY => &f.input,
                        CODECOPY => &f.code,
                        _ => &f.return_data,
                    };
                    let data = padded_slice(src, so, s);
                    f.memory[mo..mo + s].copy_from_slice(&data);
                }
            }
            CODESIZE => f.push(Word::from(f.code.len()))?,
            GASPRICE => f.push(self.gas_price)?,
            EXTCODESIZE => {
                let a = Address::from_word(f.pop()?);
                f.push(Word::from(self.state.code(&a).len()))?;
            }
            EXTCODECOPY => {
                let a = Address::from_word(f.pop()?);
                let (mo, so, s) = (f.pop()?, f.pop()?, f.pop()?);
                let (mo, s) = f.touch(t, mo, s)?;
                f.charge(t.dynamic.copy_word * words(s))?;
                if s > 0 {
                    let data = padded_slice(&self.state.code(&a), so, s);
                    f.memory[mo..mo + s].copy_from_slice(&data);
                }
            }
            RETURNDATASIZE => f.push(Word::from(f.return_data.len()))?,
            EXTCODEHASH => {
                let a = Address::from_word(f.pop()?);
                let h = match self.state.account(&a) {
                    Some(acct) if !acct.is_empty() => Word::from_big_endian(&keccak256(&acct.code)),
                    _ => Word::zero(),
                };
                f.push(h)?;
            }
            BLOCKHASH => {
                let n = f.pop()?;
                let cur = self.state.block.number;
                let h = if n < Word::from(cur) && Word::from(cur) - n <= Word::from(256) {
                    Word::from_big_endian(&keccak256(&super::types::word_to_bytes(n)))
                } else {
                    Word::zero()
                };
                f.push(h)?;
            }
            COINBASE => f.push(self.state.block.coinbase.to_word())?,
            TIMESTAMP => f.push(Word::from(self.state.block.timestamp))?,
            NUMBER => f.push(Word::from(self.state.block.number))?,
            DIFFICULTY => f.push(Word::zero())?,
            GASLIMIT => f.push(Word::from(self.state.block.gas_limit))?,
            CHAINID => f.push(Word::from(self.state.block.chain_id))?,
            SELFBALANCE => f.push(self.state.balance(&f.address))?,
            POP => {
                f.pop()?;
            }
            MLOAD => {
                let o = f.pop()?;
                let (o, _) = f.touch(t, o, Word::from(32))?;
                f.push(Word::from_big_endian(&f.memory[o..o + 32]))?;
            }
            MSTORE => {
                let (o, v) = (f.pop()?, f.pop()?);
                let (o, _) = f.touch(t, o, Word::from(32))?;
                v.to_big_endian(&mut f.memory[o..o + 32]);
            }
            MSTORE8 => {
                let (o, v) = (f.pop()?, f.pop()?);
                let (o, _) = f.touch(t, o, Word::one())?;
                f.memory[o] = v.byte(0);
            }
            SLOAD => {
                let k = f.pop()?;
                f.push(self.state.storage(&f.address, &k))?;
            }
            SSTORE => {
                if f.is_static {
                    return Err(HaltReason::StaticViolation);
                }
                let (k, v) = (f.pop()?, f.pop()?);
                let cur = self.state.storage(&f.address, &k);
                let cost = if cur.is_zero() && !v.is_zero() { t.dynamic.sstore_set } else { t.dynamic.sstore_reset };
                f.charge(cost)?;
                self.state.set_storage(f.address, k, v);
            }
            JUMP => {
                let d = f.pop()?;
                next_pc = self.jump_target(f, d)?;
            }
            JUMPI => {
                let (d, c) = (f.pop()?, f.pop()?);
                if !c.is_zero() {
                    next_pc = self.jump_target(f, d)?;
                }
            }
            PC => f.push(Word::from(f.pc))?,
            MSIZE => f.push(Word::from(f.memory.len()))?,
            GAS => f.push(Word::from(f.gas))?,
            JUMPDEST => {}
            _ if opcode::is_push(op) => {
                let n = opcode::immediate_len(op);
                let imm = padded_slice(&f.code, Word::from(f.pc + 1), n);
                f.push(Word::from_big_endian(&imm))?;
                next_pc = f.pc + 1 + n;
            }
            _ if (DUP1..=DUP16).contains(&op) => {
                let n = (op - DUP1) as usize;
                let v = f.stack[f.stack.len() - 1 - n];
                f.push(v)?;
            }
            _ if (SWAP1..=SWAP16).contains(&op) => {
                let n = (op - SWAP1 + 1) as usize;
                let top = f.stack.len() - 1;
                f.stack.swap(top, top - n);
            }
            _ if (LOG0..=LOG4).contains(&op) => {
                if f.is_static {
                    return Err(HaltReason::StaticViolation);
                }
                let (o, s) = (f.pop()?, f.pop()?);
                let topics = (0..(op - LOG0)).map(|_| f.pop()).collect::<Step<Vec<_>>>()?;
                let (o, s) = f.touch(t, o, s)?;
                f.charge(t.dynamic.log_byte * s as u64)?;
                self.logs.push(Log { emitter: f.address, topics, data: f.mem_slice(o, s) });
            }
            CREATE => {
                if f.is_static {
                    return Err(HaltReason::StaticViolation);
                }
                let (value, o, s) = (f.pop()?, f.pop()?, f.pop()?);
                let (o, s) = f.touch(t, o, s)?;
                let init = f.mem_slice(o, s);
                f.return_data.clear();
                let gas = f.gas - f.gas / 64;
                let creator = f.address;
                if f.depth + 1 > MAX_CALL_DEPTH || self.state.balance(&creator) < value {
                    f.push(Word::zero())?;
                } else {
                    f.charge(gas)?;
                    let nonce = self.state.nonce(&creator);
                    self.state.account_mut(creator).nonce += 1;
                    let addr = create_address(creator, nonce);
                    let out = self.run_message(Message {
                        kind: CallKind::Create,
                        caller: creator,
                        code_address: addr,
                        storage_address: addr,
                        value,
                        transfers_value: true,
                        input: Vec::new(),
                        gas,
                        depth: f.depth + 1,
                        is_static: false,
                        parent: Some(f.index),
                        code: Bytes::from(init),
                    });
                    f.gas += out.gas_left;
                    if out.status == Status::Revert {
                        f.return_data = out.output;
                    }
                    f.push(out.created.map(|a| a.to_word()).unwrap_or_default())?;
                }
            }
            CALL | CALLCODE | DELEGATECALL | STATICCALL => {
                let gas_req = f.pop()?;
                let target = Address::from_word(f.pop()?);
                let value = if matches!(op, CALL | CALLCODE) { f.pop()? } else { Word::zero() };
                let (io, is, oo, os) = (f.pop()?, f.pop()?, f.pop()?, f.pop()?);
                if op == CALL && f.is_static && !value.is_zero() {
                    return Err(HaltReason::StaticViolation);
                }
                let (io, is) = f.touch(t, io, is)?;
                let (oo, os) = f.touch(t, oo, os)?;
                let mut extra = 0;
                if !value.is_zero() {
                    extra += t.dynamic.call_value;
                    if op == CALL && self.state.account(&target).is_none_or(|a| a.is_empty()) {
                        extra += t.dynamic.new_account;
                    }
                }
                f.charge(extra)?;
                let avail = f.gas - f.gas / 64;
                let gas = as_usize_sat(gas_req).min(avail as usize) as u64;
                f.charge(gas)?;
                let callee_gas = if value.is_zero() { gas } else { gas + t.dynamic.call_stipend };
                let input = f.mem_slice(io, is);
                f.return_data.clear();
                if f.depth + 1 > MAX_CALL_DEPTH
                    || (matches!(op, CALL | CALLCODE) && self.state.balance(&f.address) < value)
                {
                    f.gas += callee_gas;
                    f.push(Word::zero())?;
                } else {
                    let (kind, caller, storage, msg_value, transfers) = match op {
                        CALL => (CallKind::Call, f.address, target, value, true),
                        CALLCODE => (CallKind::CallCode, f.address, f.address, value, true),
                        DELEGATECALL => (CallKind::DelegateCall, f.caller, f.address, f.value, false),
                        _ => (CallKind::StaticCall, f.address, target, Word::zero(), false),
                    };
                    let out = self.run_message(Message {
                        kind,
                        caller,
                        code_address: target,
                        storage_address: storage,
                        value: msg_value,
                        transfers_value: transfers,
                        input,
                        gas: callee_gas,
                        depth: f.depth + 1,
                        is_static: f.is_static || op == STATICCALL,
                        parent: Some(f.index),
                        code: self.state.code(&target),
                    });
                    f.gas += out.gas_left;
                    let n = out.output.len().min(os);
                    f.memory[oo..oo + n].copy_from_slice(&out.output[..n]);
                    f.return_data = out.output;
                    f.push(arith::bool_word(out.status.is_success()))?;
                }
            }
            RETURN | REVERT => {
                let (o, s) = (f.pop()?, f.pop()?);
                let (o, s) = f.touch(t, o, s)?;
                let data = f.mem_slice(o, s);
                return Ok(Some(if op == RETURN { Halt::Return(data) } else { Halt::Revert(data) }));
            }
            SELFDESTRUCT => {
                if f.is_static {
                    return Err(HaltReason::StaticViolation);
                }
                let to = Address::from_word(f.pop()?);
                let amount = self.state.balance(&f.address);
                if !amount.is_zero() && self.state.account(&to).is_none_or(|a| a.is_empty()) {
                    f.charge(t.dynamic.new_account)?;
                }
                self.state.account_mut(f.address).balance = Word::zero();
                if to != f.address {
                    self.state.account_mut(to).balance += amount;
                }
                self.destructs.push(f.address);
                return Ok(Some(Halt::SelfDestruct(to, amount)));
            }
            _ => return Err(HaltReason::InvalidOpcode),
        }
        f.pc = next_pc;
        Ok(None)
    }

    fn jump_target(&self, f: &Frame, dest: Word) -> Step<usize> {
        if dest.bits() > 32 {
            return Err(HaltReason::InvalidJump);
        }
        let d = dest.low_u64() as usize;
        if f.jumpdests.get(d).copied().unwrap_or(false) {
            Ok(d)
        } else {
            Err(HaltReason::InvalidJump)
        }
    }
}
