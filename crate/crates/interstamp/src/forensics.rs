//! After-the-fact accountability: given a run log in which clients were
//! split, name validators that provably signed conflicting blocks.
//!
//! The evidence is a pair of quorum certificates over blocks neither of
//! which is an ancestor of the other. Every validator in the intersection
//! of the two signer sets double-signed; for a threshold chain with quorum
//! `q` out of `n` that intersection has at least `2q - n` members. Only
//! blocks that reached at least one observer count as evidence: a
//! certificate nobody ever saw cannot be brought to a tribunal.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainConfig, Digest, ValidatorId};
use crate::client::{extract_checkpoints, ClientError, ClientView, LedgerSeq};
use crate::sim::{Event, Trace};

#[derive(Debug, Error)]
pub enum ForensicsError {
    #[error("no visible conflicting finalized blocks on chain {0}")]
    NoConflict(usize),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// First position at which two ledgers disagree, or None when one is a
/// prefix of the other.
pub fn detect_violation(a: &LedgerSeq, b: &LedgerSeq) -> Option<usize> {
    a.0.iter().zip(&b.0).position(|(x, y)| x != y)
}

/// One quorum-certified block, as reconstructed from a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    pub target: Digest,
    pub height: u64,
    pub signers: BTreeSet<ValidatorId>,
}

/// Transferable evidence of equivocation on one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForensicProof {
    pub chain: usize,
    pub culprits: BTreeSet<ValidatorId>,
    pub first: Attestation,
    pub second: Attestation,
}

/// Per-chain wreckage pulled out of a trace: certificates, parent links,
/// and which blocks any observer actually received.
struct ChainLog {
    attestations: Vec<Attestation>,
    parents: BTreeMap<Digest, Digest>,
    visible: BTreeSet<Digest>,
}

fn chain_log(trace: &Trace, chain: usize) -> ChainLog {
    let mut attestations = Vec::new();
    let mut parents = BTreeMap::new();
    let mut visible = BTreeSet::new();
    for ev in &trace.events {
        match ev {
            Event::QuorumFormed {
                chain: c,
                digest,
                height,
                signers,
                ..
            } if *c == chain => attestations.push(Attestation {
                target: *digest,
                height: *height,
                signers: signers.iter().cloned().collect(),
            }),
            Event::BlockFinalized {
                chain: c,
                digest,
                parent,
                ..
            } if *c == chain => {
                parents.insert(*digest, *parent);
            }
            Event::Delivered {
                chain: c, digest, ..
            } if *c == chain => {
                visible.insert(*digest);
            }
            _ => {}
        }
    }
    ChainLog {
        attestations,
        parents,
        visible,
    }
}

/// Whether `anc` lies on the parent path of `d` (inclusive).
fn is_ancestor(parents: &BTreeMap<Digest, Digest>, anc: Digest, d: Digest) -> bool {
    let mut cur = d;
    loop {
        if cur == anc {
            return true;
        }
        match parents.get(&cur) {
            Some(p) => cur = *p,
            None => return false,
        }
    }
}

/// Finds the canonically first pair of visible conflicting certificates on
/// `chain` and intersects their signer sets.
pub fn forensic_identify(trace: &Trace, chain: usize) -> Result<ForensicProof, ForensicsError> {
    let log = chain_log(trace, chain);
    let mut candidates: Vec<&Attestation> = log
        .attestations
        .iter()
        .filter(|a| log.visible.contains(&a.target))
        .collect();
    candidates.sort_by_key(|a| (a.height, a.target));
    candidates.dedup_by_key(|a| a.target);

    for (i, first) in candidates.iter().enumerate() {
        for second in &candidates[i + 1..] {
            let related = is_ancestor(&log.parents, first.target, second.target)
                || is_ancestor(&log.parents, second.target, first.target);
            if related {
                continue;
            }
            let culprits: BTreeSet<ValidatorId> = first
                .signers
                .intersection(&second.signers)
                .cloned()
                .collect();
            return Ok(ForensicProof {
                chain,
                culprits,
                first: (*first).clone(),
                second: (*second).clone(),
            });
        }
    }
    Err(ForensicsError::NoConflict(chain))
}

/// Chains on which a trace contains visible conflicting certificates.
pub fn compromised_chains(trace: &Trace, n_chains: usize) -> Vec<ForensicProof> {
    (0..n_chains)
        .filter_map(|chain| forensic_identify(trace, chain).ok())
        .collect()
}

/// A timestamp on the provider that contradicts the monitor's own reading
/// of the consumer chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorAlert {
    pub consumer_chain: usize,
    pub height: u64,
    /// What the provider vouches for.
    pub timestamped: Attestation,
    /// What the monitor itself observed at that height.
    pub observed: Attestation,
    pub culprits: BTreeSet<ValidatorId>,
}

/// One polling pass of an external monitor: compare the consumer headers
/// the provider has timestamped against the consumer chain in the
/// monitor's own view. A provider that timestamps the same branch the
/// monitor is shown raises nothing; catching that case needs a second
/// vantage point.
pub fn monitor_poll(
    view: &ClientView,
    provider: usize,
    consumer_cfg: &ChainConfig,
) -> Result<Option<MonitorAlert>, ForensicsError> {
    let checkpoints = extract_checkpoints(view, provider, consumer_cfg)?;
    let obs = view.chain(consumer_cfg.chain)?;
    let finalized = obs.finalized_set();
    let mut by_height: BTreeMap<u64, Vec<Digest>> = BTreeMap::new();
    for d in &finalized {
        by_height
            .entry(obs.blocks[d].height)
            .or_default()
            .push(*d);
    }
    for ckpt in checkpoints {
        let Some(local) = by_height.get(&ckpt.height) else {
            continue;
        };
        for &d in local {
            if d == ckpt.target {
                continue;
            }
            let Some(cert) = obs.certificates.get(&d) else {
                continue;
            };
            let culprits: BTreeSet<ValidatorId> = ckpt
                .signers
                .intersection(&cert.signers)
                .cloned()
                .collect();
            return Ok(Some(MonitorAlert {
                consumer_chain: consumer_cfg.chain,
                height: ckpt.height,
                timestamped: Attestation {
                    target: ckpt.target,
                    height: ckpt.height,
                    signers: ckpt.signers.clone(),
                },
                observed: Attestation {
                    target: d,
                    height: ckpt.height,
                    signers: cert.signers.clone(),
                },
                culprits,
            }));
        }
    }
    Ok(None)
}
