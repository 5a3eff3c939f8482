//! Aggregates attack outcomes into counts, profit totals and timing tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use super::{AttackOutcome, OutcomeKind, Step};
use crate::par;
use crate::profit::bigint_dec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Stats {
        if xs.is_empty() {
            return Stats::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Stats {
            count: xs.len(),
            mean,
            std: var.sqrt(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub total: usize,
    pub naive: usize,
    pub ape: usize,
    pub abort: usize,
    /// Sums over successful outcomes, in wei.
    #[serde(with = "bigint_dec")]
    pub total_net_profit_e: BigInt,
    #[serde(with = "bigint_dec")]
    pub total_revenue_e: BigInt,
    #[serde(with = "bigint_dec")]
    pub total_gas_cost_e: BigInt,
    pub step_timings: BTreeMap<Step, Stats>,
    /// Per-outcome total generation time.
    pub total_time: Stats,
    pub size_reduction_pct: Stats,
    pub synthesized_contracts: usize,
    pub max_contracts_per_attack: usize,
    pub abort_causes: BTreeMap<String, usize>,
}

pub fn report(outcomes: &[AttackOutcome]) -> Summary {
    report_with(outcomes, par::AVAILABLE)
}

/// Same as [`report`]; the per-outcome extraction runs on the rayon pool
/// when `parallel`.
pub fn report_with(outcomes: &[AttackOutcome], parallel: bool) -> Summary {
    struct Row {
        kind: OutcomeKind,
        net: BigInt,
        revenue: BigInt,
        gas: BigInt,
        timings: Vec<(Step, f64)>,
        total: f64,
        sizes: Vec<f64>,
        abort: Option<String>,
    }
    let rows = par::map(outcomes, parallel, |o| Row {
        kind: o.kind,
        net: o.net_profit_e.clone(),
        revenue: o.revenue_e.clone(),
        gas: o.gas_cost_e.clone(),
        timings: o.timings.iter().map(|(s, t)| (*s, *t)).collect(),
        total: o.total_time(),
        sizes: o.deployments.iter().map(|d| d.size_reduction_pct.to_f64().unwrap_or(0.0)).collect(),
        abort: o.abort.as_ref().map(|a| a.code.clone()),
    });

    let mut s = Summary {
        total: rows.len(),
        naive: 0,
        ape: 0,
        abort: 0,
        total_net_profit_e: BigInt::default(),
        total_revenue_e: BigInt::default(),
        total_gas_cost_e: BigInt::default(),
        step_timings: BTreeMap::new(),
        total_time: Stats::default(),
        size_reduction_pct: Stats::default(),
        synthesized_contracts: 0,
        max_contracts_per_attack: 0,
        abort_causes: BTreeMap::new(),
    };
    let mut per_step: BTreeMap<Step, Vec<f64>> = Step::ALL.iter().map(|s| (*s, Vec::new())).collect();
    let mut totals = Vec::new();
    let mut sizes = Vec::new();
    for r in rows {
        match r.kind {
            OutcomeKind::Naive => s.naive += 1,
            OutcomeKind::Ape => s.ape += 1,
            OutcomeKind::Abort => s.abort += 1,
        }
        if r.kind != OutcomeKind::Abort {
            s.total_net_profit_e += r.net;
            s.total_revenue_e += r.revenue;
            s.total_gas_cost_e += r.gas;
            s.synthesized_contracts += r.sizes.len();
            s.max_contracts_per_attack = s.max_contracts_per_attack.max(r.sizes.len());
            sizes.extend(r.sizes);
        }
        if let Some(code) = r.abort {
            *s.abort_causes.entry(code).or_default() += 1;
        }
        for (step, t) in r.timings {
            per_step.entry(step).or_default().push(t);
        }
        totals.push(r.total);
    }
    s.step_timings = per_step.into_iter().map(|(k, v)| (k, Stats::of(&v))).collect();
    s.total_time = Stats::of(&totals);
    s.size_reduction_pct = Stats::of(&sizes);
    s
}

impl Summary {
    pub fn to_json(&self, pretty: bool) -> String {
        if pretty {
            serde_json::to_string_pretty(self).expect("serializable")
        } else {
            serde_json::to_string(self).expect("serializable")
        }
    }

    /// Human-readable rendering with one timing row per pipeline step.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ =
            writeln!(out, "outcomes: {} (naive {}, ape {}, abort {})", self.total, self.naive, self.ape, self.abort);
        let _ = writeln!(
            out,
            "net profit: {} wei  revenue: {} wei  gas: {} wei",
            self.total_net_profit_e, self.total_revenue_e, self.total_gas_cost_e
        );
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>11} {:>11} {:>11} {:>11}",
            "step", "n", "mean (s)", "std (s)", "max (s)", "min (s)"
        );
        let mut row = |name: &str, st: &Stats| {
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>11.6} {:>11.6} {:>11.6} {:>11.6}",
                name, st.count, st.mean, st.std, st.max, st.min
            );
        };
        for step in Step::ALL {
            row(step.label(), &self.step_timings.get(&step).copied().unwrap_or_default());
        }
        row("Total", &self.total_time);
        let z = &self.size_reduction_pct;
        let _ = writeln!(
            out,
            "size reduction: n={} mean={:.2}% max={:.2}% min={:.2}%  contracts: {} (max {} per attack)",
            z.count, z.mean, z.max, z.min, self.synthesized_contracts, self.max_contracts_per_attack
        );
        for (code, n) in &self.abort_causes {
            let _ = writeln!(out, "abort {code}: {n}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_values() {
        let s = Stats::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.std, 2.0);
        assert_eq!((s.min, s.max), (2.0, 9.0));
        assert_eq!(Stats::of(&[]), Stats::default());
    }
}
