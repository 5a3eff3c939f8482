//! Deterministic EVM interpreter (Frontier through Istanbul opcode set).

pub mod arith;
pub mod gas;
pub mod hooks;
pub mod interpreter;
pub mod opcode;
pub mod state;
pub mod types;

pub use gas::GasTable;
pub use hooks::{CallKind, FrameEnter, FrameExit, Hook, HookSet, StackPatch, StepEvent};
pub use interpreter::{
    default_gas_table, deploy_contract, execute_transaction, execute_transaction_with, DeployError, DeployMode,
    Deployment, TxError, IDENTITY_PRECOMPILE,
};
pub use state::{Account, BlockContext, ExecutionResult, HaltReason, Log, Status, Transaction, WorldState};
pub use types::{Address, Word};
