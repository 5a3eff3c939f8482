use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ape_core::evm::{Address, Transaction};
use ape_core::fixtures::{load_transaction, load_transactions, scenarios, ScenarioBundle, StateFixture};
use ape_core::patch::{identify_patch_set, PatchPlan};
use ape_core::pipeline::mempool::{simulate_mempool, MempoolConfig, MempoolSim};
use ape_core::pipeline::report::report;
use ape_core::pipeline::{ape_attack, imitation_tx, naive_imitate, AttackOutcome, PipelineConfig};
use ape_core::profit::analyze_profitability;
use ape_core::synth::{disassembly_diff, synthesize};
use ape_core::taint::taint_replay;
use ape_core::trace::{trace_transaction, Dcfg};

#[derive(Parser)]
#[command(name = "ape", version, about = "Imitate a transaction against a local fixture state")]
struct Cli {
    /// Pretty-print JSON output.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the imitation pipeline on one victim transaction.
    Run {
        #[command(flatten)]
        input: Input,
        /// Only try the sender-substitution baseline.
        #[arg(long)]
        naive_only: bool,
    },
    /// Build a block from a pending pool, replacing vulnerable transactions.
    Mempool {
        /// State fixture or scenario bundle.
        #[arg(long)]
        state: PathBuf,
        /// JSON array of pending transactions.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 30_000_000)]
        gas_limit: u64,
        #[arg(long)]
        adversary: Option<Address>,
        /// Evaluate candidates one at a time.
        #[arg(long)]
        sequential: bool,
        /// Seconds until the next block, for the t1 metric.
        #[arg(long, default_value_t = 13.0)]
        block_arrival: f64,
    },
    /// Print the victim's dynamic control-flow graph.
    Trace {
        #[command(flatten)]
        input: Input,
    },
    /// Print the taint report of the imitation against the victim trace.
    Taint {
        #[command(flatten)]
        input: Input,
    },
    /// Print the patch plan.
    Plan {
        #[command(flatten)]
        input: Input,
    },
    /// Write synthesized runtime code and a disassembly diff per contract.
    SynthDump {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "synth-out")]
        out: PathBuf,
    },
    /// Summarize outcome files, running any scenario bundles found.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
        /// Human-readable table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Write the built-in scenario bundles and the 20-transaction guard pool as JSON.
    Fixtures {
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Input {
    /// State fixture or scenario bundle.
    #[arg(long)]
    state: PathBuf,
    /// Victim transaction; defaults to the bundle's.
    #[arg(long)]
    tx: Option<PathBuf>,
    /// Defaults to the bundle's adversary.
    #[arg(long)]
    adversary: Option<Address>,
}

struct Case {
    fixture: StateFixture,
    tx: Transaction,
    adversary: Address,
}

/// Reads either a bundle or a bare state fixture.
fn load_state(path: &Path) -> Result<(StateFixture, Option<ScenarioBundle>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if v.get("stateFixture").is_some() {
        let b = ScenarioBundle::from_json(&text).with_context(|| format!("loading bundle {}", path.display()))?;
        Ok((b.state_fixture.clone(), Some(b)))
    } else {
        Ok((StateFixture::from_json(&text).with_context(|| format!("loading fixture {}", path.display()))?, None))
    }
}

impl Input {
    fn load(&self) -> Result<Case> {
        let (fixture, bundle) = load_state(&self.state)?;
        let tx = match (&self.tx, &bundle) {
            (Some(p), _) => load_transaction(p).with_context(|| format!("loading {}", p.display()))?,
            (None, Some(b)) => b.victim_tx.clone(),
            (None, None) => bail!("--tx is required unless --state is a scenario bundle"),
        };
        let adversary = match (self.adversary, &bundle) {
            (Some(a), _) => a,
            (None, Some(b)) => b.adversary,
            (None, None) => bail!("--adversary is required unless --state is a scenario bundle"),
        };
        Ok(Case { fixture, tx, adversary })
    }
}

fn emit<T: Serialize>(v: &T, pretty: bool) -> Result<()> {
    let s = if pretty { serde_json::to_string_pretty(v)? } else { serde_json::to_string(v)? };
    println!("{s}");
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TraceOut<'a> {
    success: bool,
    gas_used: u64,
    /// CREATE2 or another unsupported feature was hit.
    unsupported: bool,
    dcfg: &'a Dcfg,
}

fn plan(c: &Case) -> Result<(Dcfg, ape_core::profit::ProfitReport, ape_core::taint::TaintReport, PatchPlan)> {
    let (dcfg, result, _) = trace_transaction(&c.fixture.state, &c.tx).context("victim transaction rejected")?;
    let profit = analyze_profitability(&dcfg, &result, &c.fixture);
    let tx_c = imitation_tx(&c.tx, c.adversary, c.fixture.state.nonce(&c.adversary));
    let taint = taint_replay(&c.fixture.state, &tx_c, &dcfg).context("taint replay")?;
    let plan = identify_patch_set(&taint, &profit, &dcfg, &result, &c.fixture);
    Ok((dcfg, profit, taint, plan))
}

fn outcome_or_bundle(path: &Path) -> Result<AttackOutcome> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(o) = serde_json::from_str::<AttackOutcome>(&text) {
        return Ok(o);
    }
    let b = ScenarioBundle::from_json(&text)
        .with_context(|| format!("{} is neither an outcome nor a bundle", path.display()))?;
    Ok(ape_attack(&b.state_fixture, &b.victim_tx, b.adversary, &PipelineConfig::default()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let pretty = cli.pretty;
    match cli.cmd {
        Cmd::Run { input, naive_only } => {
            let c = input.load()?;
            let cfg = PipelineConfig::default();
            let o = if naive_only {
                naive_imitate(&c.fixture, &c.tx, c.adversary, &cfg)
            } else {
                ape_attack(&c.fixture, &c.tx, c.adversary, &cfg)
            };
            println!("{}", o.to_json(pretty));
        }
        Cmd::Mempool { state, pool, gas_limit, adversary, sequential, block_arrival } => {
            let (fixture, bundle) = load_state(&state)?;
            let adversary = adversary
                .or(bundle.map(|b| b.adversary))
                .context("--adversary is required unless --state is a scenario bundle")?;
            let pending = load_transactions(&pool).with_context(|| format!("loading {}", pool.display()))?;
            let sim = MempoolSim { pending, fixture, block_gas_limit: gas_limit };
            let cfg = MempoolConfig {
                parallel: !sequential && ape_core::par::AVAILABLE,
                block_arrival_secs: block_arrival,
                ..Default::default()
            };
            emit(&simulate_mempool(&sim, adversary, &cfg), pretty)?;
        }
        Cmd::Trace { input } => {
            let c = input.load()?;
            let (dcfg, r, unsupported) =
                trace_transaction(&c.fixture.state, &c.tx).context("victim transaction rejected")?;
            emit(&TraceOut { success: r.is_success(), gas_used: r.gas_used, unsupported, dcfg: &dcfg }, pretty)?;
        }
        Cmd::Taint { input } => {
            let c = input.load()?;
            let (_, _, taint, _) = plan(&c)?;
            println!("{}", taint.to_json(pretty));
        }
        Cmd::Plan { input } => {
            let c = input.load()?;
            let (_, _, _, p) = plan(&c)?;
            emit(&p, pretty)?;
        }
        Cmd::SynthDump { input, out } => {
            let c = input.load()?;
            let (dcfg, profit, taint, p) = plan(&c)?;
            if let Some(a) = &p.abort {
                bail!("patch plan aborted: {a:?}");
            }
            let s = &c.fixture.state;
            let contracts = synthesize(&p, &dcfg, &taint, &profit, s, c.adversary, s.nonce(&c.adversary))?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for sc in &contracts {
                let stem = sc.victim_address.to_string();
                fs::write(out.join(format!("{stem}.hex")), format!("0x{}\n", hex_string(&sc.runtime_code)))?;
                fs::write(out.join(format!("{stem}.diff")), disassembly_diff(&s.code(&sc.victim_address), sc))?;
            }
            emit(&contracts, pretty)?;
        }
        Cmd::Report { dir, table } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            let outcomes = paths.iter().map(|p| outcome_or_bundle(p)).collect::<Result<Vec<_>>>()?;
            let s = report(&outcomes);
            if table {
                print!("{}", s.render_table());
            } else {
                println!("{}", s.to_json(pretty));
            }
        }
        Cmd::Fixtures { out } => {
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for b in scenarios::all() {
                fs::write(out.join(format!("{}.json", b.name)), b.to_json())?;
            }
            let (fixture, pending) = scenarios::guard_mempool(17, 6);
            let dir = out.join("mempool");
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("guard-state.json"), fixture.to_json())?;
            fs::write(dir.join("guard-pool.json"), serde_json::to_string_pretty(&pending)? + "\n")?;
        }
    }
    Ok(())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
