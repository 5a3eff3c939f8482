//! Transaction imitation engine: given a victim transaction and a world-state
//! snapshot, builds an adversarial imitation (possibly with replacement
//! contracts), validates its profitability on a fork, and simulates block
//! building over a mempool.

pub mod asm;
pub mod evm;
pub mod fixtures;
pub mod hexfmt;
pub mod par;
pub mod patch;
pub mod pipeline;
pub mod profit;
pub mod shadow;
pub mod synth;
pub mod taint;
pub mod trace;
pub mod valuation;
