//! Scenario files and the cross-validation matrices.
//!
//! A scenario is a JSON description of chains, checkpoint topology,
//! clients, network timing and an adversary script; `load_scenario` turns
//! it into a runnable configuration. The matrix drivers sweep every
//! corruption (or stall) pattern over a telescope of chains and compare
//! what the simulator produces against what the algebraic tuple for
//! interchain timestamping predicts: safe while at least one chain is
//! honest, live only while all are.

use serde::Deserialize;

use crate::algebra::SetFamily;
use crate::bitset;
use crate::boundary::timestamping_tuple;
use crate::chain::ChainConfig;
use crate::forensics::forensic_identify;
use crate::sim::{
    run, ClientSpec, Directive, NetworkModel, SimConfig, SimError, SyncMode, TxInjection,
};

fn one() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainSpec {
    n: usize,
    /// Either `threshold(n=4,q=3)` or an explicit family `{{0,1,2},{1,2,3}}`.
    quorum: String,
    latency: u64,
    /// Defaults to true exactly for chain 0, the chain clients serve.
    #[serde(default)]
    checks_da: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    chains: Vec<ChainSpec>,
    topology: Vec<(usize, usize)>,
    clients: Vec<ClientSpec>,
    network: NetworkModel,
    #[serde(default)]
    relay_delay: u64,
    #[serde(default = "one")]
    cadence: u64,
    horizon: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    transactions: Vec<TxInjection>,
    #[serde(default)]
    adversary: Vec<Directive>,
}

/// Parses a scenario JSON document into a runnable configuration.
pub fn load_scenario(json: &str) -> Result<SimConfig, SimError> {
    let file: ScenarioFile =
        serde_json::from_str(json).map_err(|e| SimError::MalformedScript(e.to_string()))?;
    let mut chains = Vec::new();
    for (i, spec) in file.chains.iter().enumerate() {
        let quorums = SetFamily::parse(&spec.quorum)
            .and_then(|f| f.with_universe(bitset::full(spec.n)))
            .map_err(|e| {
                SimError::MalformedScript(format!("chain {i} quorum {:?}: {e}", spec.quorum))
            })?;
        chains.push(ChainConfig {
            chain: i,
            n: spec.n,
            quorums,
            latency: spec.latency,
            checks_data_availability: spec.checks_da.unwrap_or(i == 0),
        });
    }
    Ok(SimConfig {
        chains,
        topology: file.topology,
        clients: file.clients,
        network: file.network,
        relay_delay: file.relay_delay,
        cadence: file.cadence,
        horizon: file.horizon,
        seed: file.seed,
        injections: file.transactions,
        adversary: file.adversary,
    })
}

/// Tendermint-style chain: n = 3f+1 validators, any 2f+1 form a quorum.
pub fn tendermint_chain(chain: usize, f: usize, latency: u64) -> ChainConfig {
    ChainConfig::threshold(chain, 3 * f + 1, 2 * f + 1, latency)
}

/// Staggered block intervals so the latency bound exercises distinct terms.
fn matrix_latency(chain: usize) -> u64 {
    5 + chain as u64
}

fn matrix_clients() -> Vec<ClientSpec> {
    ["c1", "c2"]
        .iter()
        .map(|name| ClientSpec {
            name: (*name).to_string(),
            providers: Vec::new(), // filled by the builder
            stall_on_unavailable: true,
        })
        .collect()
}

/// Common scaffold for one matrix cell: a telescope of `f.len()` chains,
/// chain 0 the consumer, two clients observing through the full path.
fn matrix_config(f: &[usize], horizon: u64, network: NetworkModel, relay_delay: u64) -> SimConfig {
    let chains: Vec<ChainConfig> = f
        .iter()
        .enumerate()
        .map(|(i, &fi)| tendermint_chain(i, fi, matrix_latency(i)))
        .collect();
    let topology: Vec<(usize, usize)> = (0..f.len() - 1).map(|i| (i, i + 1)).collect();
    let providers: Vec<usize> = (1..f.len()).collect();
    let mut clients = matrix_clients();
    for c in &mut clients {
        c.providers = providers.clone();
    }
    SimConfig {
        chains,
        topology,
        clients,
        network,
        relay_delay,
        cadence: 1,
        horizon,
        seed: 0,
        injections: vec![TxInjection {
            round: 1,
            chain: 0,
            id: "probe".into(),
        }],
        adversary: Vec::new(),
    }
}

/// Corruption plus split-brain equivocation on one chain, sized exactly at
/// the forensic floor: f+1 validators, enough for two quorums to intersect
/// only in corrupted ones.
fn compromise(chain: usize, f: usize) -> Vec<Directive> {
    vec![
        Directive::Corrupt {
            chain,
            validators: (1..=f + 1).collect(),
        },
        Directive::Equivocate {
            chain,
            fork_height: 2,
            audience_a: vec!["c1".into()],
            audience_b: vec!["c2".into()],
            reveal_round: None,
        },
    ]
}

/// One cell of the safety sweep.
#[derive(Debug, Clone)]
pub struct SafetyCell {
    /// Chains under adversary control in this cell.
    pub pattern: Vec<usize>,
    pub expected_safe: bool,
    pub observed_safe: bool,
    /// (chain, culprits identified) for every compromised chain, in cells
    /// where safety actually broke.
    pub forensics: Vec<(usize, usize)>,
    pub forensics_ok: bool,
    pub pass: bool,
}

/// Sweeps all 2^(k+1) corruption patterns over a telescope with fault
/// budgets `f` (consumer first) and checks each outcome against the
/// algebraic prediction: prefix consistency holds iff at least one chain is
/// uncompromised, and when it breaks, certificates convict f_i + 1
/// validators per chain with no honest validator accused.
pub fn run_safety_matrix(f: &[usize]) -> Result<Vec<SafetyCell>, SimError> {
    let k = f.len() - 1;
    let tuple = timestamping_tuple(k).map_err(|e| SimError::MalformedScript(e.to_string()))?;
    let network = NetworkModel {
        mode: SyncMode::Synchronous,
        delta: 2,
        gst: 0,
    };
    let mut cells = Vec::new();
    for pattern_mask in bitset::all_subsets(bitset::full(f.len())) {
        let pattern = bitset::elements(pattern_mask);
        let mut cfg = matrix_config(f, 60, network, 0);
        for &chain in &pattern {
            cfg.adversary.extend(compromise(chain, f[chain]));
        }
        let outcome = run(cfg)?;

        let expected_safe = tuple.safe_sets.in_closure_downward(pattern_mask);
        let observed_safe = outcome.trace.summary.violations.is_empty();

        let mut forensics = Vec::new();
        let mut forensics_ok = true;
        if !observed_safe {
            for &chain in &pattern {
                match forensic_identify(&outcome.trace, chain) {
                    Ok(proof) => {
                        forensics_ok &= proof.culprits.len() >= f[chain] + 1
                            && proof.culprits.is_subset(&outcome.corrupted[chain]);
                        forensics.push((chain, proof.culprits.len()));
                    }
                    Err(_) => forensics_ok = false,
                }
            }
        }
        cells.push(SafetyCell {
            pass: expected_safe == observed_safe && forensics_ok,
            pattern,
            expected_safe,
            observed_safe,
            forensics,
            forensics_ok,
        });
    }
    Ok(cells)
}

/// One cell of the liveness sweep.
#[derive(Debug, Clone)]
pub struct LivenessCell {
    /// Chains scripted to stop finalizing.
    pub stalled: Vec<usize>,
    pub expected_live: bool,
    pub observed_live: bool,
    /// Worst round, across clients, at which the probe entered the ledger.
    pub served_round: Option<u64>,
    /// max(GST, r) + sum of block intervals + one relay delay per hop.
    pub bound: u64,
    pub pass: bool,
}

/// Sweeps all stall patterns and checks the probe transaction is served to
/// every client within the latency bound exactly when no chain is stalled.
pub fn run_liveness_matrix(f: &[usize], relay_delay: u64) -> Result<Vec<LivenessCell>, SimError> {
    let k = f.len() - 1;
    let tuple = timestamping_tuple(k).map_err(|e| SimError::MalformedScript(e.to_string()))?;
    let gst = 6;
    let network = NetworkModel {
        mode: SyncMode::PartiallySynchronous,
        delta: 2,
        gst,
    };
    let inject_round = 1;
    let sum_latency: u64 = (0..f.len()).map(|i| matrix_latency(i)).sum();
    let bound = gst.max(inject_round) + sum_latency + k as u64 * relay_delay;
    let horizon = bound + 2 * matrix_latency(f.len() - 1);

    let mut cells = Vec::new();
    for stalled_mask in bitset::all_subsets(bitset::full(f.len())) {
        let stalled = bitset::elements(stalled_mask);
        let mut cfg = matrix_config(f, horizon, network, relay_delay);
        for &chain in &stalled {
            cfg.adversary.push(Directive::StallChain {
                chain,
                from_round: 0,
            });
        }
        let outcome = run(cfg)?;

        let live_mask = bitset::full(f.len()) & !stalled_mask;
        let expected_live = tuple.live_sets.in_closure_upward(live_mask);
        let served_round = ["c1", "c2"]
            .iter()
            .map(|c| outcome.round_tx_served(c, "probe"))
            .collect::<Option<Vec<u64>>>()
            .map(|rounds| rounds.into_iter().max().unwrap());
        let observed_live = served_round.is_some_and(|r| r <= bound);

        cells.push(LivenessCell {
            pass: expected_live == observed_live
                && outcome.trace.summary.violations.is_empty(),
            stalled,
            expected_live,
            observed_live,
            served_round,
            bound,
        });
    }
    Ok(cells)
}
