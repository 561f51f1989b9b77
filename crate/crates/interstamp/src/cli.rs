//! Command-line front end: simulation, matrix verification, boundary
//! enumeration, trace forensics, and mesh analysis.
//!
//! Exit codes: 0 on success, 1 when a checked property fails (a matrix
//! mismatch, or a trace containing safety violations), 2 on usage or
//! configuration errors.

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::boundary::{self, TupleClass};
use crate::forensics;
use crate::mesh::{self, ZoneGraph};
use crate::scenario;
use crate::sim::{self, Trace};
use crate::{bitset, sim::SimRun};

#[derive(Parser)]
#[command(name = "interstamp", about = "Interchain timestamping toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted multi-chain simulation and audit the trace.
    Simulate {
        /// Scenario file (JSON).
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the LDJSON trace.
        #[arg(long, default_value = "trace.ldjson")]
        out: PathBuf,
    },
    /// Sweep corruption and stall patterns over a telescope of k providers
    /// and check every cell against the algebraic prediction.
    Verify {
        /// Number of provider chains.
        #[arg(long)]
        k: usize,
        /// Per-chain fault budgets, consumer first (defaults to all 1s).
        #[arg(long, value_delimiter = ',')]
        f: Option<Vec<usize>>,
    },
    /// Enumerate the achievable upper boundary of property tuples.
    Enumerate {
        /// Number of chains.
        #[arg(long)]
        k: usize,
        /// Chains whose payloads full nodes check (defaults to all).
        #[arg(long, value_delimiter = ',')]
        da: Option<Vec<usize>>,
    },
    /// Identify equivocation culprits from a recorded trace.
    Forensics {
        /// Trace file (LDJSON, as written by simulate).
        #[arg(long)]
        trace: PathBuf,
    },
    /// Compute the zone-mesh security report.
    Analyze {
        /// Zone graph file (JSON).
        #[arg(long)]
        graph: PathBuf,
        /// Path bounds to evaluate.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        /// Cross-staking power caps (defaults to 0, 0.1, 0.5, 1).
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<f64>>,
        /// Prefix for the report and histogram CSV files.
        #[arg(long)]
        out: String,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.command {
        Command::Simulate { scenario, seed, out } => simulate(&scenario, seed, &out),
        Command::Verify { k, f } => verify(k, f),
        Command::Enumerate { k, da } => enumerate(k, da),
        Command::Forensics { trace } => run_forensics(&trace),
        Command::Analyze { graph, k, p, out } => analyze(&graph, &k, p, &out),
    }
}

fn fail_usage(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    2
}

fn fmt_indices(xs: &[usize]) -> String {
    let inner: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

fn simulate(scenario: &PathBuf, seed: Option<u64>, out: &PathBuf) -> i32 {
    let text = match fs::read_to_string(scenario) {
        Ok(t) => t,
        Err(e) => return fail_usage(format!("{}: {e}", scenario.display())),
    };
    let mut cfg = match scenario::load_scenario(&text) {
        Ok(c) => c,
        Err(e) => return fail_usage(e),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let n_chains = cfg.chains.len();
    let outcome: SimRun = match sim::run(cfg) {
        Ok(o) => o,
        Err(e) => return fail_usage(e),
    };
    let trace = &outcome.trace;
    if let Err(e) = fs::write(out, trace.to_ldjson()) {
        return fail_usage(format!("{}: {e}", out.display()));
    }
    println!("trace: {} events -> {}", trace.events.len(), out.display());
    for c in &trace.summary.clients {
        println!(
            "client {}: ledger length {}, stalled={}, ever_stalled={}",
            c.name,
            c.ledger.0.len(),
            c.stalled,
            c.ever_stalled
        );
    }
    if trace.summary.violations.is_empty() {
        println!("no violations");
        return 0;
    }
    for v in &trace.summary.violations {
        println!(
            "violation: {}@r{} vs {}@r{} diverge at position {} ({} vs {})",
            v.client_a, v.round_a, v.client_b, v.round_b, v.position, v.digest_a, v.digest_b
        );
    }
    for proof in forensics::compromised_chains(trace, n_chains) {
        let culprits: Vec<String> = proof.culprits.iter().map(|v| v.to_string()).collect();
        println!(
            "chain {}: culprits {{{}}} from certificates at heights {} and {}",
            proof.chain,
            culprits.join(", "),
            proof.first.height,
            proof.second.height
        );
    }
    1
}

fn verify(k: usize, f: Option<Vec<usize>>) -> i32 {
    if !(1..=3).contains(&k) {
        return fail_usage("--k must be between 1 and 3");
    }
    let f = f.unwrap_or_else(|| vec![1; k + 1]);
    if f.len() != k + 1 {
        return fail_usage(format!(
            "--f needs {} entries (consumer plus {k} providers), got {}",
            k + 1,
            f.len()
        ));
    }
    if f.iter().any(|&fi| fi == 0) {
        return fail_usage("fault budgets must be at least 1");
    }
    let safety = match scenario::run_safety_matrix(&f) {
        Ok(cells) => cells,
        Err(e) => return fail_usage(e),
    };
    let mut all_pass = true;
    for cell in &safety {
        let verdict = |b: bool| if b { "consistent" } else { "violation" };
        println!(
            "SAFETY   compromised={:<10} expected={:<10} observed={:<10} culprits={:<3} {}",
            fmt_indices(&cell.pattern),
            verdict(cell.expected_safe),
            verdict(cell.observed_safe),
            if cell.forensics_ok { "ok" } else { "BAD" },
            if cell.pass { "PASS" } else { "FAIL" }
        );
        all_pass &= cell.pass;
    }
    let relay_delay = 2;
    let liveness = match scenario::run_liveness_matrix(&f, relay_delay) {
        Ok(cells) => cells,
        Err(e) => return fail_usage(e),
    };
    for cell in &liveness {
        let verdict = |b: bool| if b { "live" } else { "stall" };
        let served = match cell.served_round {
            Some(r) => format!("r{r}"),
            None => "-".to_string(),
        };
        println!(
            "LIVENESS stalled={:<13} expected={:<6} observed={:<6} bound=r{} served={:<5} {}",
            fmt_indices(&cell.stalled),
            verdict(cell.expected_live),
            verdict(cell.observed_live),
            cell.bound,
            served,
            if cell.pass { "PASS" } else { "FAIL" }
        );
        all_pass &= cell.pass;
    }
    if all_pass {
        0
    } else {
        1
    }
}

fn enumerate(k: usize, da: Option<Vec<usize>>) -> i32 {
    let da_mask = match da {
        None => bitset::full(k),
        Some(chains) => match chains.iter().find(|&&c| c >= k) {
            Some(c) => return fail_usage(format!("--da chain {c} outside 0..{k}")),
            None => bitset::from_elements(chains.iter().copied()),
        },
    };
    let tuples = match boundary::enumerate_upper_boundary(k, da_mask) {
        Ok(t) => t,
        Err(e) => return fail_usage(e),
    };
    for t in &tuples {
        let marker = match t.classify() {
            TupleClass::Trivial => "trivial",
            TupleClass::Timestamping => "timestamping",
            TupleClass::Other => "other",
        };
        println!("{t}\t{marker}");
    }
    0
}

fn run_forensics(path: &PathBuf) -> i32 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail_usage(format!("{}: {e}", path.display())),
    };
    let trace = match Trace::from_ldjson(&text) {
        Ok(t) => t,
        Err(e) => return fail_usage(e),
    };
    if trace.summary.violations.is_empty() {
        println!("no violation");
        return 0;
    }
    let n_chains = trace
        .events
        .iter()
        .filter_map(|e| match e {
            sim::Event::BlockFinalized { chain, .. }
            | sim::Event::QuorumFormed { chain, .. } => Some(*chain),
            _ => None,
        })
        .max()
        .map_or(0, |c| c + 1);
    for v in &trace.summary.violations {
        println!(
            "violation: {}@r{} vs {}@r{} diverge at position {}",
            v.client_a, v.round_a, v.client_b, v.round_b, v.position
        );
    }
    let proofs = forensics::compromised_chains(&trace, n_chains);
    if proofs.is_empty() {
        println!("no identifiable culprits (no conflicting certificates visible)");
    }
    for proof in &proofs {
        let culprits: Vec<String> = proof.culprits.iter().map(|v| v.to_string()).collect();
        println!(
            "chain {}: culprits {{{}}} from certificates for {} (h{}) and {} (h{})",
            proof.chain,
            culprits.join(", "),
            proof.first.target,
            proof.first.height,
            proof.second.target,
            proof.second.height
        );
    }
    1
}

fn analyze(graph: &PathBuf, ks: &[usize], ps: Option<Vec<f64>>, prefix: &str) -> i32 {
    let text = match fs::read_to_string(graph) {
        Ok(t) => t,
        Err(e) => return fail_usage(format!("{}: {e}", graph.display())),
    };
    let g = match ZoneGraph::parse(&text) {
        Ok(g) => g,
        Err(e) => return fail_usage(e),
    };
    let ps = ps.unwrap_or_else(|| vec![0.0, 0.1, 0.5, 1.0]);
    let report = match mesh::report(&g, ks, &ps) {
        Ok(r) => r,
        Err(e) => return fail_usage(e),
    };
    let csv = match report.to_csv() {
        Ok(c) => c,
        Err(e) => return fail_usage(e),
    };
    print!("{csv}");
    if report.approximate {
        eprintln!(
            "note: {} zones exceed the exact search limit; paths found by beam search",
            g.zones.len()
        );
    }
    let main_path = format!("{prefix}.csv");
    if let Err(e) = fs::write(&main_path, &csv) {
        return fail_usage(format!("{main_path}: {e}"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &k in ks {
        if !seen.insert(k) {
            continue;
        }
        let hist_path = format!("{prefix}_hist_k{k}.csv");
        if let Err(e) = fs::write(&hist_path, report.histogram_csv(k)) {
            return fail_usage(format!("{hist_path}: {e}"));
        }
    }
    0
}
