//! Deterministic round-based simulator for a consumer chain checkpointed
//! onto a telescope of provider chains.
//!
//! Rounds advance a global clock. Each chain finalizes a block every
//! `latency` rounds while it is live for the scripted fault set; relayers
//! embed checkpoints of finalized blocks into the next chain outward; every
//! observer's view is updated per round and every client re-runs its fork
//! choice per round. The adversary is a script of directives, not a random
//! process, so a run is a pure function of its configuration. The `seed`
//! field is recorded in the trace for forward compatibility with randomized
//! schedules but does not influence this engine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitset::{self, Mask};
use crate::chain::{Block, ChainConfig, ChainError, ChainState, Digest, QuorumCert, Tx, ValidatorId};
use crate::client::{
    fork_choice_multi, prefix_consistent, provider_chain_order, Checkpoint, ChainObservation,
    ClientError, ClientPolicy, ClientView, LedgerSeq,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("malformed scenario: {0}")]
    MalformedScript(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("trace line {0} is not valid JSON: {1}")]
    BadTrace(usize, String),
}

fn script_err<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::MalformedScript(msg.into()))
}

/// Network timing regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    Synchronous,
    PartiallySynchronous,
}

/// Timing parameters: messages between honest parties arrive within `delta`
/// rounds, unconditionally under synchrony and only after `gst` under
/// partial synchrony.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NetworkModel {
    pub mode: SyncMode,
    pub delta: u64,
    #[serde(default)]
    pub gst: u64,
}

impl NetworkModel {
    /// The round from which delivery guarantees hold.
    pub fn effective_gst(&self) -> u64 {
        match self.mode {
            SyncMode::Synchronous => 0,
            SyncMode::PartiallySynchronous => self.gst,
        }
    }
}

/// Which side of an equivocation fork a block (or a checkpoint of it)
/// belongs to. `Main` covers honest chains and the common prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchTag {
    Main,
    A,
    B,
}

impl fmt::Display for BranchTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchTag::Main => write!(f, "main"),
            BranchTag::A => write!(f, "a"),
            BranchTag::B => write!(f, "b"),
        }
    }
}

/// One adversary instruction. Directives are applied at setup (`Corrupt`)
/// or bound to rounds; they are validated before the run starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "directive", rename_all = "snake_case")]
pub enum Directive {
    /// Put the listed validators of one chain under adversary control.
    Corrupt { chain: usize, validators: Vec<usize> },
    /// From `fork_height` on, the chain finalizes two conflicting blocks per
    /// slot, one shown to each audience. Requires enough corruption that two
    /// quorums intersect only in corrupted validators. `reveal_round`
    /// (optional) is when both branches become visible to everyone.
    Equivocate {
        chain: usize,
        fork_height: u64,
        audience_a: Vec<String>,
        audience_b: Vec<String>,
        #[serde(default)]
        reveal_round: Option<u64>,
    },
    /// The payload of the block produced at (`chain`, `height`, `branch`)
    /// is kept from the listed observers until `reveal_round` (forever when
    /// omitted). Headers still circulate.
    Withhold {
        chain: usize,
        height: u64,
        #[serde(default = "BranchTag::main")]
        branch: BranchTag,
        observers: Vec<String>,
        #[serde(default)]
        reveal_round: Option<u64>,
    },
    /// Producing validators skip the matching transaction (`tx: None`
    /// censors everything, checkpoints included) from `from_round` on.
    Censor {
        chain: usize,
        #[serde(default)]
        tx: Option<String>,
        from_round: u64,
    },
    /// The chain stops finalizing blocks from `from_round` on.
    StallChain { chain: usize, from_round: u64 },
    /// Deliveries of `chain`'s blocks to `observer` are held back until
    /// `until_round`, which must not exceed GST + delta.
    Delay {
        chain: usize,
        observer: String,
        until_round: u64,
    },
}

impl BranchTag {
    fn main() -> BranchTag {
        BranchTag::Main
    }
}

/// One client: which providers it telescopes through and whether it stalls
/// on unavailable checkpoint targets (the protocol rule) or skips them (a
/// diagnostic weakening).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientSpec {
    pub name: String,
    pub providers: Vec<usize>,
    #[serde(default = "default_true")]
    pub stall_on_unavailable: bool,
}

fn default_true() -> bool {
    true
}

/// An application transaction submitted to a chain at a round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TxInjection {
    pub round: u64,
    pub chain: usize,
    pub id: String,
}

/// Complete description of one run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Chain 0 is the consumer whose ledger clients ultimately serve.
    pub chains: Vec<ChainConfig>,
    /// Checkpointing channels (from, to): finalized blocks of `from` are
    /// embedded as transactions into `to`.
    pub topology: Vec<(usize, usize)>,
    pub clients: Vec<ClientSpec>,
    pub network: NetworkModel,
    /// Rounds between a block finalizing and its checkpoint reaching the
    /// provider's pending pool. Must not exceed delta.
    pub relay_delay: u64,
    /// Every `cadence`-th block (by height) is checkpointed.
    pub cadence: u64,
    pub horizon: u64,
    pub seed: u64,
    pub injections: Vec<TxInjection>,
    pub adversary: Vec<Directive>,
}

// ---------------------------------------------------------------------------
// Trace

/// One line of the run log. Everything a post-hoc analysis needs is here:
/// quorum certificates for forensics, deliveries for visibility arguments,
/// checkpoint submissions for latency accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TxInjected {
        round: u64,
        chain: usize,
        id: String,
    },
    BlockFinalized {
        round: u64,
        chain: usize,
        digest: Digest,
        parent: Digest,
        height: u64,
        branch: BranchTag,
        txs: Vec<String>,
        checkpoints: usize,
    },
    QuorumFormed {
        round: u64,
        chain: usize,
        digest: Digest,
        height: u64,
        signers: Vec<ValidatorId>,
    },
    CheckpointSubmitted {
        round: u64,
        from_chain: usize,
        to_chain: usize,
        target: Digest,
        height: u64,
        arrival: u64,
    },
    Delivered {
        round: u64,
        observer: String,
        chain: usize,
        digest: Digest,
    },
    PayloadWithheld {
        round: u64,
        chain: usize,
        digest: Digest,
        observers: Vec<String>,
    },
    PayloadRevealed {
        round: u64,
        chain: usize,
        digest: Digest,
    },
    ForkRevealed {
        round: u64,
        chain: usize,
    },
    ClientEvaluated {
        round: u64,
        client: String,
        ledger_len: usize,
        stalled: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub name: String,
    pub ledger: LedgerSeq,
    pub stalled: bool,
    pub ever_stalled: bool,
}

/// A prefix-consistency breach between two ledger snapshots (possibly the
/// same client at two rounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub client_a: String,
    pub round_a: u64,
    pub client_b: String,
    pub round_b: u64,
    pub position: usize,
    pub digest_a: Digest,
    pub digest_b: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub horizon: u64,
    pub seed: u64,
    pub clients: Vec<ClientSummary>,
    pub violations: Vec<Violation>,
}

/// Full run log: the event sequence plus the end-of-run summary. Byte-stable
/// across runs of the same configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub events: Vec<Event>,
    pub summary: Summary,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: Summary,
}

impl Trace {
    /// Newline-delimited JSON: one event per line, summary last.
    pub fn to_ldjson(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("event serializes"));
            out.push('\n');
        }
        let tail = SummaryLine {
            summary: self.summary.clone(),
        };
        out.push_str(&serde_json::to_string(&tail).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn from_ldjson(text: &str) -> Result<Trace, SimError> {
        let mut events = Vec::new();
        let mut summary = None;
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(ev) = serde_json::from_str::<Event>(line) {
                events.push(ev);
            } else {
                match serde_json::from_str::<SummaryLine>(line) {
                    Ok(tail) => summary = Some(tail.summary),
                    Err(e) => return Err(SimError::BadTrace(ln + 1, e.to_string())),
                }
            }
        }
        match summary {
            Some(summary) => Ok(Trace { events, summary }),
            None => Err(SimError::BadTrace(0, "missing summary line".into())),
        }
    }
}

// ---------------------------------------------------------------------------
// Engine

/// A pending pool entry: a transaction waiting to be included by `chain`'s
/// producers, invisible to them before `available`.
#[derive(Debug, Clone)]
struct PoolTx {
    available: u64,
    seq: usize,
    branch: BranchTag,
    tx: Tx,
}

/// Live state of one scripted equivocation.
#[derive(Debug)]
struct ForkScript {
    fork_height: u64,
    audience_a: BTreeSet<String>,
    audience_b: BTreeSet<String>,
    reveal: Option<u64>,
    signers_a: BTreeSet<ValidatorId>,
    signers_b: BTreeSet<ValidatorId>,
    tip_a: Digest,
    tip_b: Digest,
    started: bool,
    revealed: bool,
    /// Branch blocks whose delivery to non-audience observers is pending a
    /// reveal.
    hidden: Vec<(Digest, BranchTag)>,
}

#[derive(Debug, Clone)]
struct WithholdScript {
    chain: usize,
    height: u64,
    branch: BranchTag,
    observers: BTreeSet<String>,
    reveal: Option<u64>,
}

/// A withhold script bound to the concrete block it matched.
#[derive(Debug, Clone)]
struct ActiveWithhold {
    chain: usize,
    digest: Digest,
    observers: BTreeSet<String>,
    reveal: Option<u64>,
    revealed: bool,
}

#[derive(Debug, Clone)]
struct CensorScript {
    chain: usize,
    tx: Option<String>,
    from_round: u64,
}

/// Result of a run: the serializable trace plus in-memory structures that
/// drivers (latency measurements, forensics ground-truth checks) consult
/// without re-parsing the log.
#[derive(Debug)]
pub struct SimRun {
    pub trace: Trace,
    /// (client, round) -> ledger and stall flag at that round.
    pub history: BTreeMap<(String, u64), (LedgerSeq, bool)>,
    /// Every block finalized on any chain, by digest.
    pub blocks: BTreeMap<Digest, Block>,
    /// Scripted corruption per chain, the ground truth forensic output is
    /// judged against.
    pub corrupted: Vec<BTreeSet<ValidatorId>>,
    /// Each observer's final view, as a monitor would hold it.
    pub views: BTreeMap<String, ClientView>,
}

impl SimRun {
    /// First round at which `client`'s ledger contains a block carrying the
    /// opaque transaction `id`.
    pub fn round_tx_served(&self, client: &str, id: &str) -> Option<u64> {
        self.history
            .iter()
            .filter(|((name, _), _)| name == client)
            .find(|(_, (ledger, _))| {
                ledger.0.iter().any(|d| {
                    self.blocks
                        .get(d)
                        .is_some_and(|b| b.payload.contains(&Tx::opaque(id)))
                })
            })
            .map(|((_, round), _)| *round)
    }
}

struct Sim {
    cfg: SimConfig,
    chains: Vec<ChainState>,
    corrupted: Vec<BTreeSet<usize>>,
    forks: Vec<Option<ForkScript>>,
    withholds: Vec<WithholdScript>,
    active_withholds: Vec<ActiveWithhold>,
    censors: Vec<CensorScript>,
    stalls: Vec<Option<u64>>,
    delays: BTreeMap<(usize, String), u64>,
    pools: Vec<Vec<PoolTx>>,
    next_seq: usize,
    views: BTreeMap<String, ClientView>,
    orders: BTreeMap<String, Vec<usize>>,
    policies: BTreeMap<String, ClientPolicy>,
    /// Deliveries postponed by a Delay directive: (due round, observer,
    /// chain, digest).
    scheduled: Vec<(u64, String, usize, Digest)>,
    events: Vec<Event>,
    history: BTreeMap<(String, u64), (LedgerSeq, bool)>,
}

/// Runs the scenario to its horizon and audits every pair of ledger
/// snapshots for prefix consistency.
pub fn run(cfg: SimConfig) -> Result<SimRun, SimError> {
    let mut sim = Sim::new(cfg)?;
    for t in 0..=sim.cfg.horizon {
        sim.step(t)?;
    }
    Ok(sim.finish())
}

impl Sim {
    fn new(cfg: SimConfig) -> Result<Sim, SimError> {
        validate(&cfg)?;
        let n_chains = cfg.chains.len();
        let observer_names: BTreeSet<String> =
            cfg.clients.iter().map(|c| c.name.clone()).collect();

        let mut corrupted: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_chains];
        for d in &cfg.adversary {
            if let Directive::Corrupt { chain, validators } = d {
                corrupted[*chain].extend(validators.iter().copied());
            }
        }

        let chains: Vec<ChainState> = cfg.chains.iter().cloned().map(ChainState::new).collect();

        let mut forks: Vec<Option<ForkScript>> = (0..n_chains).map(|_| None).collect();
        let mut withholds = Vec::new();
        let mut censors = Vec::new();
        let mut stalls: Vec<Option<u64>> = vec![None; n_chains];
        let mut delays = BTreeMap::new();
        for d in &cfg.adversary {
            match d {
                Directive::Corrupt { .. } => {}
                Directive::Equivocate {
                    chain,
                    fork_height,
                    audience_a,
                    audience_b,
                    reveal_round,
                } => {
                    if forks[*chain].is_some() {
                        return script_err(format!("chain {chain} has two fork scripts"));
                    }
                    for name in audience_a.iter().chain(audience_b) {
                        if !observer_names.contains(name) {
                            return script_err(format!("unknown observer {name:?} in audience"));
                        }
                    }
                    let (sa, sb) =
                        equivocation_quorums(&cfg.chains[*chain], &corrupted[*chain])?;
                    let tip = chains[*chain].genesis();
                    forks[*chain] = Some(ForkScript {
                        fork_height: *fork_height,
                        audience_a: audience_a.iter().cloned().collect(),
                        audience_b: audience_b.iter().cloned().collect(),
                        reveal: *reveal_round,
                        signers_a: sa,
                        signers_b: sb,
                        tip_a: tip,
                        tip_b: tip,
                        started: false,
                        revealed: false,
                        hidden: Vec::new(),
                    });
                }
                Directive::Withhold {
                    chain,
                    height,
                    branch,
                    observers,
                    reveal_round,
                } => {
                    for name in observers {
                        if !observer_names.contains(name) {
                            return script_err(format!("unknown observer {name:?} in withhold"));
                        }
                    }
                    withholds.push(WithholdScript {
                        chain: *chain,
                        height: *height,
                        branch: *branch,
                        observers: observers.iter().cloned().collect(),
                        reveal: *reveal_round,
                    });
                }
                Directive::Censor {
                    chain,
                    tx,
                    from_round,
                } => censors.push(CensorScript {
                    chain: *chain,
                    tx: tx.clone(),
                    from_round: *from_round,
                }),
                Directive::StallChain { chain, from_round } => {
                    stalls[*chain] = Some(match stalls[*chain] {
                        Some(existing) => existing.min(*from_round),
                        None => *from_round,
                    });
                }
                Directive::Delay {
                    chain,
                    observer,
                    until_round,
                } => {
                    if !observer_names.contains(observer) {
                        return script_err(format!("unknown observer {observer:?} in delay"));
                    }
                    delays.insert((*chain, observer.clone()), *until_round);
                }
            }
        }

        let mut chains = chains;
        for (i, fork) in forks.iter().enumerate() {
            chains[i].under_equivocation_fault = fork.is_some();
        }

        // Every observer starts knowing each chain's genesis.
        let mut views = BTreeMap::new();
        let mut orders = BTreeMap::new();
        let mut policies = BTreeMap::new();
        for spec in &cfg.clients {
            let mut chain_obs = BTreeMap::new();
            for st in &chains {
                let mut obs = ChainObservation::default();
                let g = st.genesis();
                obs.blocks.insert(g, st.resolve(g)?.clone());
                chain_obs.insert(st.cfg.chain, obs);
            }
            views.insert(
                spec.name.clone(),
                ClientView {
                    observer: spec.name.clone(),
                    round: 0,
                    chains: chain_obs,
                },
            );
            let providers: BTreeSet<usize> = spec.providers.iter().copied().collect();
            orders.insert(
                spec.name.clone(),
                provider_chain_order(&cfg.topology, 0, &providers)?,
            );
            policies.insert(
                spec.name.clone(),
                ClientPolicy {
                    enforce_stalling: spec.stall_on_unavailable,
                },
            );
        }

        let gst = cfg.network.effective_gst();
        let mut pools: Vec<Vec<PoolTx>> = vec![Vec::new(); n_chains];
        let mut next_seq = 0;
        for inj in &cfg.injections {
            pools[inj.chain].push(PoolTx {
                available: inj.round.max(gst),
                seq: next_seq,
                branch: BranchTag::Main,
                tx: Tx::opaque(&inj.id),
            });
            next_seq += 1;
        }

        Ok(Sim {
            cfg,
            chains,
            corrupted,
            forks,
            withholds,
            active_withholds: Vec::new(),
            censors,
            stalls,
            delays,
            pools,
            next_seq,
            views,
            orders,
            policies,
            scheduled: Vec::new(),
            events: Vec::new(),
            history: BTreeMap::new(),
        })
    }

    fn step(&mut self, t: u64) -> Result<(), SimError> {
        self.process_fork_reveals(t);
        self.process_withhold_reveals(t);
        self.flush_scheduled(t);
        for inj in &self.cfg.injections {
            if inj.round == t {
                self.events.push(Event::TxInjected {
                    round: t,
                    chain: inj.chain,
                    id: inj.id.clone(),
                });
            }
        }
        for chain in 0..self.chains.len() {
            self.produce(chain, t)?;
        }
        self.evaluate_clients(t)?;
        Ok(())
    }

    fn process_fork_reveals(&mut self, t: u64) {
        for chain in 0..self.forks.len() {
            let Some(fork) = self.forks[chain].as_mut() else {
                continue;
            };
            if fork.revealed || fork.reveal != Some(t) {
                continue;
            }
            fork.revealed = true;
            let hidden = std::mem::take(&mut fork.hidden);
            self.events.push(Event::ForkRevealed { round: t, chain });
            for (digest, _) in hidden {
                let names: Vec<String> = self.views.keys().cloned().collect();
                for name in names {
                    self.deliver(t, &name, chain, digest);
                }
            }
        }
    }

    fn process_withhold_reveals(&mut self, t: u64) {
        for i in 0..self.active_withholds.len() {
            if self.active_withholds[i].revealed
                || self.active_withholds[i].reveal != Some(t)
            {
                continue;
            }
            self.active_withholds[i].revealed = true;
            let (chain, digest) = (
                self.active_withholds[i].chain,
                self.active_withholds[i].digest,
            );
            for view in self.views.values_mut() {
                if let Some(obs) = view.chains.get_mut(&chain) {
                    obs.unavailable_payload.remove(&digest);
                }
            }
            self.events.push(Event::PayloadRevealed {
                round: t,
                chain,
                digest,
            });
        }
    }

    fn flush_scheduled(&mut self, t: u64) {
        let due: Vec<(u64, String, usize, Digest)> = self
            .scheduled
            .iter()
            .filter(|(round, ..)| *round <= t)
            .cloned()
            .collect();
        self.scheduled.retain(|(round, ..)| *round > t);
        for (_, observer, chain, digest) in due {
            self.deliver(t, &observer, chain, digest);
        }
    }

    /// Inserts one finalized block (and its certificate) into an observer's
    /// view, honoring payload withholding.
    fn deliver(&mut self, t: u64, observer: &str, chain: usize, digest: Digest) {
        let block = self.chains[chain]
            .resolve(digest)
            .expect("delivered blocks exist")
            .clone();
        let cert = self.chains[chain].certificate(digest).cloned();
        let withheld = self
            .active_withholds
            .iter()
            .any(|w| w.digest == digest && !w.revealed && w.observers.contains(observer));
        let Some(view) = self.views.get_mut(observer) else {
            return;
        };
        let obs = view.chains.entry(chain).or_default();
        if obs.blocks.contains_key(&digest) {
            return;
        }
        if withheld {
            obs.unavailable_payload.insert(digest);
        }
        obs.blocks.insert(digest, block);
        if let Some(cert) = cert {
            obs.certificates.insert(digest, cert);
        }
        self.events.push(Event::Delivered {
            round: t,
            observer: observer.to_string(),
            chain,
            digest,
        });
    }

    /// Sends a block to its audience, through any Delay directive, keeping
    /// hidden-branch bookkeeping for a later fork reveal.
    fn announce(&mut self, t: u64, chain: usize, digest: Digest, branch: BranchTag) {
        let (audience, hide): (BTreeSet<String>, bool) = match (&self.forks[chain], branch) {
            (Some(fork), BranchTag::A) if !fork.revealed => (fork.audience_a.clone(), true),
            (Some(fork), BranchTag::B) if !fork.revealed => (fork.audience_b.clone(), true),
            _ => (self.views.keys().cloned().collect(), false),
        };
        if hide {
            if let Some(fork) = self.forks[chain].as_mut() {
                fork.hidden.push((digest, branch));
            }
        }
        for observer in audience {
            let due = match self.delays.get(&(chain, observer.clone())) {
                Some(until) => t.max(*until),
                None => t,
            };
            if due <= t {
                self.deliver(t, &observer, chain, digest);
            } else {
                self.scheduled.push((due, observer, chain, digest));
            }
        }
    }

    /// Pool entries a block on `branch` may include at round `t`, in
    /// submission order, with censored entries skipped.
    fn payload_for(&self, chain: usize, t: u64, branch: BranchTag) -> Vec<(usize, Tx)> {
        let mut picked: Vec<(usize, Tx)> = self.pools[chain]
            .iter()
            .filter(|p| p.available <= t)
            // An honest producer carries everything submitted to it, fork
            // branches of its consumer included. A forked producer keeps
            // each of its branches aligned with the matching consumer
            // branch.
            .filter(|p| match branch {
                BranchTag::Main => true,
                b => p.branch == BranchTag::Main || p.branch == b,
            })
            .filter(|p| !self.censored(chain, t, &p.tx))
            .map(|p| (p.seq, p.tx.clone()))
            .collect();
        picked.sort_by_key(|(seq, _)| *seq);
        picked
    }

    fn censored(&self, chain: usize, t: u64, tx: &Tx) -> bool {
        self.censors.iter().any(|c| {
            c.chain == chain
                && t >= c.from_round
                && match (&c.tx, tx) {
                    (None, _) => true,
                    (Some(id), Tx::Opaque { id: got }) => id == got,
                    (Some(_), Tx::Checkpoint { .. }) => false,
                }
        })
    }

    fn remove_from_pool(&mut self, chain: usize, consumed: &BTreeSet<usize>) {
        self.pools[chain].retain(|p| !consumed.contains(&p.seq));
    }

    fn produce(&mut self, chain: usize, t: u64) -> Result<(), SimError> {
        let cfg = &self.cfg.chains[chain];
        let boundary = t > 0
            && t % cfg.latency == 0
            && (self.cfg.network.mode == SyncMode::Synchronous
                || t > self.cfg.network.effective_gst());
        if !boundary {
            return Ok(());
        }
        if matches!(self.stalls[chain], Some(from) if t >= from) {
            return Ok(());
        }

        let fork_active = self.forks[chain].is_some();
        if fork_active {
            let (next_height, fork_height) = {
                let fork = self.forks[chain].as_ref().unwrap();
                let tip_height = self.chains[chain].resolve(fork.tip_a)?.height;
                (tip_height + 1, fork.fork_height)
            };
            if next_height < fork_height {
                // The adversary cooperates until the scripted fork point.
                let signers = self.forks[chain].as_ref().unwrap().signers_a.clone();
                let tip = self.forks[chain].as_ref().unwrap().tip_a;
                let (digest, consumed) =
                    self.seal_block(chain, t, tip, BranchTag::Main, signers)?;
                self.remove_from_pool(chain, &consumed);
                let fork = self.forks[chain].as_mut().unwrap();
                fork.tip_a = digest;
                fork.tip_b = digest;
            } else {
                self.produce_fork_pair(chain, t)?;
            }
            return Ok(());
        }

        // Honest production requires a quorum without corrupted members; a
        // corrupted chain with no scripted equivocation simply goes dark.
        let corrupt_mask = bitset::from_elements(self.corrupted[chain].iter().copied());
        let Some(quorum) = honest_quorum(cfg, corrupt_mask) else {
            return Ok(());
        };
        let signers = to_validator_ids(chain, quorum);
        let tip = self.main_tip(chain)?;
        let (_, consumed) = self.seal_block(chain, t, tip, BranchTag::Main, signers)?;
        self.remove_from_pool(chain, &consumed);
        Ok(())
    }

    fn produce_fork_pair(&mut self, chain: usize, t: u64) -> Result<(), SimError> {
        let (tip_a, tip_b, signers_a, signers_b) = {
            let fork = self.forks[chain].as_ref().unwrap();
            (
                fork.tip_a,
                fork.tip_b,
                fork.signers_a.clone(),
                fork.signers_b.clone(),
            )
        };
        let (da, used_a) = self.seal_block(chain, t, tip_a, BranchTag::A, signers_a)?;
        let (db, used_b) = self.seal_block(chain, t, tip_b, BranchTag::B, signers_b)?;
        self.remove_from_pool(chain, &used_a.union(&used_b).copied().collect());
        let fork = self.forks[chain].as_mut().unwrap();
        fork.tip_a = da;
        fork.tip_b = db;
        fork.started = true;
        Ok(())
    }

    /// Builds, finalizes, announces and relays one block. Returns the new
    /// digest and the pool sequence numbers it consumed; the caller removes
    /// them, so that both branches of a fork can drain one pool.
    fn seal_block(
        &mut self,
        chain: usize,
        t: u64,
        parent: Digest,
        branch: BranchTag,
        signers: BTreeSet<ValidatorId>,
    ) -> Result<(Digest, BTreeSet<usize>), SimError> {
        let entries = self.payload_for(chain, t, branch);
        let mut payload: Vec<Tx> = entries.iter().map(|(_, tx)| tx.clone()).collect();
        let height = self.chains[chain].resolve(parent)?.height + 1;
        if branch == BranchTag::B {
            // A second branch must diverge even over an identical pool.
            payload.push(Tx::opaque(&format!("fork:{chain}:{height}:b")));
        }
        let consumed: BTreeSet<usize> = entries.iter().map(|(seq, _)| *seq).collect();
        let withheld_from: BTreeSet<String> = self
            .withholds
            .iter()
            .filter(|w| {
                w.chain == chain
                    && w.height == height
                    && w.branch == branch
                    && w.reveal.is_none_or(|r| r > t)
            })
            .flat_map(|w| w.observers.iter().cloned())
            .collect();

        let digest = self.chains[chain].make_block(parent, payload, withheld_from.clone())?;
        let qc = QuorumCert {
            target: digest,
            height,
            signers,
        };
        self.chains[chain].finalize(t, &qc)?;

        let block = self.chains[chain].resolve(digest)?.clone();
        self.events.push(Event::BlockFinalized {
            round: t,
            chain,
            digest,
            parent,
            height,
            branch,
            txs: block
                .payload
                .iter()
                .filter_map(|tx| match tx {
                    Tx::Opaque { id } => Some(id.clone()),
                    Tx::Checkpoint { .. } => None,
                })
                .collect(),
            checkpoints: block.checkpoints().count(),
        });
        self.events.push(Event::QuorumFormed {
            round: t,
            chain,
            digest,
            height,
            signers: qc.signers.iter().cloned().collect(),
        });
        if !withheld_from.is_empty() {
            for w in &self.withholds {
                if w.chain == chain && w.height == height && w.branch == branch {
                    self.active_withholds.push(ActiveWithhold {
                        chain,
                        digest,
                        observers: w.observers.clone(),
                        reveal: w.reveal,
                        revealed: false,
                    });
                }
            }
            self.events.push(Event::PayloadWithheld {
                round: t,
                chain,
                digest,
                observers: withheld_from.iter().cloned().collect(),
            });
        }

        self.announce(t, chain, digest, branch);
        self.relay(t, chain, digest, height, branch, &qc);
        Ok((digest, consumed))
    }

    /// Submits the block's checkpoint to every chain one hop outward.
    fn relay(
        &mut self,
        t: u64,
        chain: usize,
        digest: Digest,
        height: u64,
        branch: BranchTag,
        qc: &QuorumCert,
    ) {
        if height % self.cfg.cadence != 0 {
            return;
        }
        let gst = self.cfg.network.effective_gst();
        let arrival = t.max(gst) + self.cfg.relay_delay;
        let edges: Vec<usize> = self
            .cfg
            .topology
            .iter()
            .filter(|(from, _)| *from == chain)
            .map(|(_, to)| *to)
            .collect();
        for to in edges {
            self.pools[to].push(PoolTx {
                available: arrival,
                seq: self.next_seq,
                branch,
                tx: Tx::Checkpoint {
                    checkpoint: Checkpoint {
                        consumer_chain: chain,
                        target: digest,
                        height,
                        signers: qc.signers.clone(),
                    },
                },
            });
            self.next_seq += 1;
            self.events.push(Event::CheckpointSubmitted {
                round: t,
                from_chain: chain,
                to_chain: to,
                target: digest,
                height,
                arrival,
            });
        }
    }

    fn main_tip(&self, chain: usize) -> Result<Digest, SimError> {
        let st = &self.chains[chain];
        let tip = st
            .finalized_blocks()
            .map(|(d, _)| st.resolve(*d))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .max_by_key(|b| b.height)
            .expect("genesis always finalized")
            .digest;
        Ok(tip)
    }

    fn evaluate_clients(&mut self, t: u64) -> Result<(), SimError> {
        let names: Vec<String> = self.views.keys().cloned().collect();
        for name in names {
            let view = self.views.get_mut(&name).unwrap();
            view.round = t;
            let order = &self.orders[&name];
            let policy = self.policies[&name];
            let (ledger, stalled) =
                fork_choice_multi(&self.views[&name], order, &self.cfg.chains, policy)?;
            self.events.push(Event::ClientEvaluated {
                round: t,
                client: name.clone(),
                ledger_len: ledger.len(),
                stalled,
            });
            self.history.insert((name, t), (ledger, stalled));
        }
        Ok(())
    }

    fn finish(self) -> SimRun {
        let horizon = self.cfg.horizon;
        let names: Vec<String> = self.cfg.clients.iter().map(|c| c.name.clone()).collect();
        let clients: Vec<ClientSummary> = names
            .iter()
            .map(|name| {
                let (ledger, stalled) = self.history[&(name.clone(), horizon)].clone();
                let ever_stalled = (0..=horizon)
                    .any(|r| self.history[&(name.clone(), r)].1);
                ClientSummary {
                    name: name.clone(),
                    ledger,
                    stalled,
                    ever_stalled,
                }
            })
            .collect();

        let violations = audit_history(&names, horizon, &self.history);
        let summary = Summary {
            horizon,
            seed: self.cfg.seed,
            clients,
            violations,
        };
        let blocks: BTreeMap<Digest, Block> = self
            .chains
            .iter()
            .flat_map(|st| st.blocks().map(|b| (b.digest, b.clone())))
            .collect();
        let corrupted = self
            .corrupted
            .iter()
            .enumerate()
            .map(|(chain, set)| {
                set.iter()
                    .map(|&index| ValidatorId { chain, index })
                    .collect()
            })
            .collect();
        SimRun {
            trace: Trace {
                events: self.events,
                summary,
            },
            history: self.history,
            blocks,
            corrupted,
            views: self.views,
        }
    }
}

/// First index at which the two sequences disagree while both are defined.
pub fn first_divergence(a: &LedgerSeq, b: &LedgerSeq) -> Option<usize> {
    a.0.iter().zip(&b.0).position(|(x, y)| x != y)
}

/// Checks prefix consistency over every pair of (client, round) snapshots,
/// including one client against its own earlier rounds, and reports the
/// first breach per client pair.
fn audit_history(
    names: &[String],
    horizon: u64,
    history: &BTreeMap<(String, u64), (LedgerSeq, bool)>,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i..] {
            let found = (0..=horizon)
                .flat_map(|ra| {
                    let start = if a == b { ra + 1 } else { 0 };
                    (start..=horizon).map(move |rb| (ra, rb))
                })
                .find_map(|(ra, rb)| {
                    let la = &history[&(a.clone(), ra)].0;
                    let lb = &history[&(b.clone(), rb)].0;
                    if prefix_consistent(la, lb) {
                        return None;
                    }
                    let position = first_divergence(la, lb).expect("inconsistent pair diverges");
                    Some(Violation {
                        client_a: a.clone(),
                        round_a: ra,
                        client_b: b.clone(),
                        round_b: rb,
                        position,
                        digest_a: la.0[position],
                        digest_b: lb.0[position],
                    })
                });
            violations.extend(found);
        }
    }
    violations
}

/// First pair of quorums whose intersection is fully corrupted, in the
/// family's canonical member order. This is the pair an equivocating
/// adversary uses: honest validators outside the intersection are split
/// between the branches, the corrupted intersection signs both.
fn equivocation_quorums(
    cfg: &ChainConfig,
    corrupted: &BTreeSet<usize>,
) -> Result<(BTreeSet<ValidatorId>, BTreeSet<ValidatorId>), SimError> {
    let corrupt_mask = bitset::from_elements(corrupted.iter().copied());
    let members = cfg.quorums.members();
    for (i, &qa) in members.iter().enumerate() {
        for &qb in &members[i + 1..] {
            if bitset::is_subset(qa & qb, corrupt_mask) {
                return Ok((to_validator_ids(cfg.chain, qa), to_validator_ids(cfg.chain, qb)));
            }
        }
    }
    script_err(format!(
        "insufficient corruption on chain {} to equivocate: every quorum pair shares an honest validator",
        cfg.chain
    ))
}

fn honest_quorum(cfg: &ChainConfig, corrupt_mask: Mask) -> Option<Mask> {
    cfg.quorums
        .members()
        .into_iter()
        .find(|q| q & corrupt_mask == 0)
}

fn to_validator_ids(chain: usize, mask: Mask) -> BTreeSet<ValidatorId> {
    bitset::elements(mask)
        .into_iter()
        .map(|index| ValidatorId { chain, index })
        .collect()
}

fn validate(cfg: &SimConfig) -> Result<(), SimError> {
    if cfg.chains.is_empty() {
        return script_err("a scenario needs at least one chain");
    }
    for (i, c) in cfg.chains.iter().enumerate() {
        if c.chain != i {
            return script_err(format!("chain {i} is labeled {}", c.chain));
        }
        if c.latency == 0 {
            return script_err(format!("chain {i} has zero latency"));
        }
        if c.n == 0 || c.n > 64 {
            return script_err(format!("chain {i} has unsupported validator count {}", c.n));
        }
    }
    if cfg.cadence == 0 {
        return script_err("cadence must be at least 1");
    }
    if cfg.relay_delay > cfg.network.delta {
        return script_err(format!(
            "relay delay {} exceeds delta {}",
            cfg.relay_delay, cfg.network.delta
        ));
    }
    let n_chains = cfg.chains.len();
    let chain_ok = |c: usize| c < n_chains;
    for (from, to) in &cfg.topology {
        if !chain_ok(*from) || !chain_ok(*to) || from == to {
            return script_err(format!("bad topology edge ({from}, {to})"));
        }
    }
    if cfg.clients.is_empty() {
        return script_err("a scenario needs at least one client");
    }
    let mut seen = BTreeSet::new();
    for c in &cfg.clients {
        if !seen.insert(&c.name) {
            return script_err(format!("duplicate client name {:?}", c.name));
        }
        if c.providers.iter().any(|p| !chain_ok(*p)) {
            return script_err(format!("client {:?} lists an unknown provider", c.name));
        }
    }
    for inj in &cfg.injections {
        if !chain_ok(inj.chain) {
            return script_err(format!("injection {:?} targets unknown chain", inj.id));
        }
    }
    let gst = cfg.network.effective_gst();
    for d in &cfg.adversary {
        match d {
            Directive::Corrupt { chain, validators } => {
                if !chain_ok(*chain) {
                    return script_err("corrupt directive targets unknown chain");
                }
                if validators.iter().any(|v| *v >= cfg.chains[*chain].n) {
                    return script_err(format!(
                        "corrupt directive names a validator outside chain {chain}"
                    ));
                }
            }
            Directive::Equivocate {
                chain, fork_height, ..
            } => {
                if !chain_ok(*chain) {
                    return script_err("equivocate directive targets unknown chain");
                }
                if *fork_height == 0 {
                    return script_err("cannot fork at genesis");
                }
            }
            Directive::Withhold { chain, height, .. } => {
                if !chain_ok(*chain) {
                    return script_err("withhold directive targets unknown chain");
                }
                if *height == 0 {
                    return script_err("genesis has no payload to withhold");
                }
            }
            Directive::Censor { chain, .. } => {
                if !chain_ok(*chain) {
                    return script_err("censor directive targets unknown chain");
                }
            }
            Directive::StallChain { chain, .. } => {
                if !chain_ok(*chain) {
                    return script_err("stall directive targets unknown chain");
                }
            }
            Directive::Delay {
                chain, until_round, ..
            } => {
                if !chain_ok(*chain) {
                    return script_err("delay directive targets unknown chain");
                }
                if *until_round > gst + cfg.network.delta {
                    return script_err(format!(
                        "delay until round {until_round} exceeds GST + delta = {}",
                        gst + cfg.network.delta
                    ));
                }
            }
        }
    }
    Ok(())
}
