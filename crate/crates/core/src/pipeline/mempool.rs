//! Block building over a pending pool with victim replacement.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{ape_attack, AttackOutcome, PipelineConfig};
use crate::evm::{execute_transaction, Address, Transaction, WorldState};
use crate::fixtures::StateFixture;
use crate::par;

#[derive(Debug, Clone)]
pub struct MempoolSim {
    pub pending: Vec<Transaction>,
    /// Current chain state plus pricing data.
    pub fixture: StateFixture,
    pub block_gas_limit: u64,
}

#[derive(Debug, Clone)]
pub struct MempoolConfig {
    pub pipeline: PipelineConfig,
    /// Evaluate candidates speculatively on the rayon pool.
    pub parallel: bool,
    /// Synthetic time from the start of processing to the next block.
    pub block_arrival_secs: f64,
}

impl Default for MempoolConfig {
    fn default() -> Self {
        MempoolConfig { pipeline: PipelineConfig::default(), parallel: par::AVAILABLE, block_arrival_secs: 13.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TxMetrics {
    /// Position in processing order.
    pub index: usize,
    /// Attack generation time in seconds.
    pub t0: f64,
    /// Seconds left until the synthetic block arrival after this attack was generated.
    pub t1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MempoolResult {
    pub block: Vec<Transaction>,
    pub outcomes: Vec<AttackOutcome>,
    pub metrics: Vec<TxMetrics>,
    /// Transactions filtered out before ordering.
    pub dropped: Vec<Transaction>,
    /// Processing-order indices of the victims that were replaced.
    pub replaced: Vec<usize>,
    /// Ordered candidates that did not make it into the block.
    pub excluded: Vec<usize>,
    pub gas_used: u64,
    #[serde(skip)]
    pub final_state: Option<WorldState>,
}

/// Keeps, per sender, the run of consecutive nonces starting at the
/// sender's current nonce. Returns `(kept, dropped)`, each in input order.
pub fn filter_legitimate(state: &WorldState, pending: &[Transaction]) -> (Vec<Transaction>, Vec<Transaction>) {
    let mut by_sender: BTreeMap<Address, Vec<usize>> = BTreeMap::new();
    for (i, tx) in pending.iter().enumerate() {
        by_sender.entry(tx.sender).or_default().push(i);
    }
    let mut keep = vec![false; pending.len()];
    for (sender, mut idx) in by_sender {
        idx.sort_by_key(|i| (pending[*i].nonce, *i));
        let mut next = state.nonce(&sender);
        for i in idx {
            if pending[i].nonce == next {
                keep[i] = true;
                next += 1;
            }
        }
    }
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for (tx, k) in pending.iter().zip(keep) {
        if k {
            kept.push(tx.clone())
        } else {
            dropped.push(tx.clone())
        }
    }
    (kept, dropped)
}

/// Highest gas price first, never reordering one sender's nonces; ties keep
/// arrival order.
pub fn order_by_gas_price(txs: &[Transaction]) -> Vec<Transaction> {
    let mut queues: BTreeMap<Address, VecDeque<(usize, &Transaction)>> = BTreeMap::new();
    let mut sorted: Vec<(usize, &Transaction)> = txs.iter().enumerate().collect();
    sorted.sort_by_key(|(i, t)| (t.sender, t.nonce, *i));
    for (i, t) in sorted {
        queues.entry(t.sender).or_default().push_back((i, t));
    }
    let mut out = Vec::with_capacity(txs.len());
    loop {
        let best = queues
            .iter()
            .filter_map(|(s, q)| q.front().map(|(i, t)| (*s, *i, t.gas_price)))
            .max_by(|a, b| a.2.cmp(&b.2).then(b.1.cmp(&a.1)));
        let Some((sender, _, _)) = best else { break };
        let (_, t) = queues.get_mut(&sender).and_then(|q| q.pop_front()).expect("nonempty queue");
        out.push(t.clone());
    }
    out
}

struct Builder {
    state: WorldState,
    gas_used: u64,
    limit: u64,
    block: Vec<Transaction>,
}

impl Builder {
    /// Appends `tx` if its gas limit fits and it is valid on the current state.
    fn include(&mut self, tx: &Transaction) -> bool {
        if self.gas_used + tx.gas_limit > self.limit {
            return false;
        }
        match execute_transaction(&self.state, tx, None) {
            Ok(r) => {
                self.gas_used += r.gas_used;
                self.state = r.state_after;
                self.block.push(tx.clone());
                true
            }
            Err(_) => false,
        }
    }
}

/// Filters and orders the pool, evaluates the attack against each candidate
/// on the state produced by everything before it, and swaps a victim for
/// the attack transactions whenever the attack succeeds and fits.
///
/// In parallel mode candidates are evaluated speculatively on snapshots
/// computed as if no replacement happens; after the first replacement the
/// remaining candidates are re-speculated from the new state, so the result
/// equals the sequential one.
pub fn simulate_mempool(sim: &MempoolSim, adversary: Address, cfg: &MempoolConfig) -> MempoolResult {
    let (kept, dropped) = filter_legitimate(&sim.fixture.state, &sim.pending);
    let ordered = order_by_gas_price(&kept);
    let mut b =
        Builder { state: sim.fixture.state.clone(), gas_used: 0, limit: sim.block_gas_limit, block: Vec::new() };
    let mut outcomes = Vec::new();
    let mut metrics = Vec::new();
    let mut replaced = Vec::new();
    let mut excluded = Vec::new();
    let mut elapsed = 0.0;
    let with_state = |s: WorldState| StateFixture { state: s, ..sim.fixture.clone() };

    let mut i = 0;
    while i < ordered.len() {
        let batch: Vec<(usize, WorldState)> = if cfg.parallel {
            let mut spec = Builder { state: b.state.clone(), gas_used: b.gas_used, limit: b.limit, block: Vec::new() };
            (i..ordered.len())
                .map(|j| {
                    let s = spec.state.clone();
                    spec.include(&ordered[j]);
                    (j, s)
                })
                .collect()
        } else {
            vec![(i, b.state.clone())]
        };
        let evaluated = par::map(&batch, cfg.parallel, |(j, s)| {
            ape_attack(&with_state(s.clone()), &ordered[*j], adversary, &cfg.pipeline)
        });
        let mut next = ordered.len();
        for ((j, _), outcome) in batch.iter().zip(evaluated) {
            let j = *j;
            elapsed += outcome.total_time();
            metrics.push(TxMetrics { index: j, t0: outcome.total_time(), t1: cfg.block_arrival_secs - elapsed });
            let fits = outcome.is_success()
                && b.gas_used + outcome.attack_txs.iter().map(|t| t.gas_limit).sum::<u64>() <= b.limit;
            if fits {
                let snapshot = (b.state.clone(), b.gas_used, b.block.len());
                if outcome.attack_txs.iter().all(|t| b.include(t)) {
                    replaced.push(j);
                    outcomes.push(outcome);
                    next = j + 1;
                    break;
                }
                (b.state, b.gas_used) = (snapshot.0, snapshot.1);
                b.block.truncate(snapshot.2);
            }
            if !b.include(&ordered[j]) {
                excluded.push(j);
            }
            outcomes.push(outcome);
            next = j + 1;
        }
        i = next;
    }
    MempoolResult {
        block: b.block,
        outcomes,
        metrics,
        dropped,
        replaced,
        excluded,
        gas_used: b.gas_used,
        final_state: Some(b.state),
    }
}
