//! Block, certificate, and per-chain state primitives.
//!
//! Chains are idealized BFT instances: a block is final once it carries a
//! certificate from a quorum of its chain's validators, and an honest chain
//! never finalizes two conflicting blocks. The conflicting case is still
//! representable because the simulator injects it deliberately when a chain
//! is scripted to equivocate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::algebra::SetFamily;
use crate::bitset;
use crate::client::Checkpoint;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("unknown parent digest {0}")]
    UnknownParent(Digest),
    #[error("unknown block digest {0}")]
    UnknownDigest(Digest),
    #[error("certificate does not satisfy the quorum system of chain {chain}")]
    InvalidCertificate { chain: usize },
    #[error("refusing to finalize {candidate} at height {height}: conflicts with finalized {existing}")]
    ConflictingFinalization {
        candidate: Digest,
        existing: Digest,
        height: u64,
    },
    #[error("block {digest} belongs to chain {actual}, not chain {expected}")]
    WrongChain {
        digest: Digest,
        actual: usize,
        expected: usize,
    },
}

/// A validator, addressed by chain index and position within that chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValidatorId {
    pub chain: usize,
    pub index: usize,
}

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.chain, self.index)
    }
}

/// Content identifier of a block: a structural hash of parent, height,
/// chain index, and payload. Visibility metadata does not contribute, so
/// withholding or revealing a block never changes its identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub u64);

impl Digest {
    /// Sentinel parent of genesis blocks.
    pub const NONE: Digest = Digest(0);
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", self.0))
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        u64::from_str_radix(&text, 16)
            .map(Digest)
            .map_err(serde::de::Error::custom)
    }
}

/// A ledger entry: either an opaque application transaction or an embedded
/// checkpoint attesting to a block of another chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tx {
    Opaque { id: String },
    Checkpoint { checkpoint: Checkpoint },
}

impl Tx {
    pub fn opaque(id: &str) -> Tx {
        Tx::Opaque { id: id.into() }
    }

    fn feed(&self, hasher: &mut Sha256) {
        match self {
            Tx::Opaque { id } => {
                hasher.update(b"t");
                hasher.update(id.as_bytes());
            }
            Tx::Checkpoint { checkpoint } => {
                hasher.update(b"c");
                hasher.update(checkpoint.consumer_chain.to_le_bytes());
                hasher.update(checkpoint.target.0.to_le_bytes());
                hasher.update(checkpoint.height.to_le_bytes());
                for v in &checkpoint.signers {
                    hasher.update(v.chain.to_le_bytes());
                    hasher.update(v.index.to_le_bytes());
                }
            }
        }
    }
}

/// A block. `withheld_from` lists observers that currently cannot obtain
/// the payload even though they may know the header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub digest: Digest,
    pub parent: Digest,
    pub height: u64,
    pub chain: usize,
    pub payload: Vec<Tx>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub withheld_from: BTreeSet<String>,
}

impl Block {
    pub fn checkpoints(&self) -> impl Iterator<Item = &Checkpoint> {
        self.payload.iter().filter_map(|tx| match tx {
            Tx::Checkpoint { checkpoint } => Some(checkpoint),
            Tx::Opaque { .. } => None,
        })
    }
}

fn block_digest(chain: usize, height: u64, parent: Digest, payload: &[Tx]) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update(b"blk");
    hasher.update(chain.to_le_bytes());
    hasher.update(height.to_le_bytes());
    hasher.update(parent.0.to_le_bytes());
    for tx in payload {
        tx.feed(&mut hasher);
    }
    let out = hasher.finalize();
    Digest(u64::from_be_bytes(out[..8].try_into().unwrap()))
}

/// A quorum certificate: the set of validators that signed off on a block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumCert {
    pub target: Digest,
    pub height: u64,
    pub signers: BTreeSet<ValidatorId>,
}

/// Static parameters of one chain.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub chain: usize,
    pub n: usize,
    pub quorums: SetFamily,
    /// Rounds between consecutive finalized blocks while the chain is live.
    pub latency: u64,
    /// Whether clients of this chain download payloads and check their
    /// availability (true for the chain whose ledger is ultimately served).
    pub checks_data_availability: bool,
}

impl ChainConfig {
    /// Threshold chain with all `q`-subsets of `n` validators as quorums.
    pub fn threshold(chain: usize, n: usize, q: usize, latency: u64) -> ChainConfig {
        ChainConfig {
            chain,
            n,
            quorums: SetFamily::threshold(n, q, 0).expect("valid threshold"),
            latency,
            checks_data_availability: chain == 0,
        }
    }

    /// Checks that `signers` names validators of this chain and satisfies
    /// its quorum system.
    pub fn verify_signers(&self, signers: &BTreeSet<ValidatorId>) -> bool {
        let mut mask = 0u64;
        for v in signers {
            if v.chain != self.chain || v.index >= self.n {
                return false;
            }
            mask |= bitset::bit(v.index);
        }
        self.quorums.in_closure_upward(mask)
    }
}

/// Certificate check against a chain's quorum system.
pub fn verify_qc(qc: &QuorumCert, cfg: &ChainConfig) -> bool {
    cfg.verify_signers(&qc.signers)
}

/// Append-only store of one chain's blocks, plus finalization marks.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub cfg: ChainConfig,
    blocks: BTreeMap<Digest, Block>,
    certificates: BTreeMap<Digest, QuorumCert>,
    finalized: BTreeMap<Digest, u64>,
    genesis: Digest,
    /// Set while the chain is scripted to equivocate; lets `finalize`
    /// accept conflicting blocks instead of tripping the safety guard.
    pub under_equivocation_fault: bool,
}

impl ChainState {
    pub fn new(cfg: ChainConfig) -> ChainState {
        let genesis = Block {
            digest: block_digest(cfg.chain, 0, Digest::NONE, &[]),
            parent: Digest::NONE,
            height: 0,
            chain: cfg.chain,
            payload: Vec::new(),
            withheld_from: BTreeSet::new(),
        };
        let gd = genesis.digest;
        let mut blocks = BTreeMap::new();
        blocks.insert(gd, genesis);
        let mut finalized = BTreeMap::new();
        finalized.insert(gd, 0);
        ChainState {
            cfg,
            blocks,
            certificates: BTreeMap::new(),
            finalized,
            genesis: gd,
            under_equivocation_fault: false,
        }
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn resolve(&self, d: Digest) -> Result<&Block, ChainError> {
        self.blocks.get(&d).ok_or(ChainError::UnknownDigest(d))
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    pub fn certificate(&self, d: Digest) -> Option<&QuorumCert> {
        self.certificates.get(&d)
    }

    pub fn is_finalized(&self, d: Digest) -> bool {
        self.finalized.contains_key(&d)
    }

    pub fn finalized_blocks(&self) -> impl Iterator<Item = (&Digest, &u64)> {
        self.finalized.iter()
    }

    /// Extends `parent` with a new block. The digest is derived from the
    /// content, so identical content under the same parent yields the same
    /// block.
    pub fn make_block(
        &mut self,
        parent: Digest,
        payload: Vec<Tx>,
        withheld_from: BTreeSet<String>,
    ) -> Result<Digest, ChainError> {
        let parent_block = self
            .blocks
            .get(&parent)
            .ok_or(ChainError::UnknownParent(parent))?;
        let height = parent_block.height + 1;
        let digest = block_digest(self.cfg.chain, height, parent, &payload);
        self.blocks.entry(digest).or_insert(Block {
            digest,
            parent,
            height,
            chain: self.cfg.chain,
            payload,
            withheld_from,
        });
        Ok(digest)
    }

    /// Digests from genesis up to and including `d`.
    pub fn ancestry(&self, d: Digest) -> Result<Vec<Digest>, ChainError> {
        let mut back = Vec::new();
        let mut cur = d;
        loop {
            let b = self.resolve(cur)?;
            back.push(cur);
            if b.parent == Digest::NONE {
                break;
            }
            cur = b.parent;
        }
        back.reverse();
        Ok(back)
    }

    /// True when `a` lies on the path from genesis to `b`.
    pub fn is_prefix(&self, a: Digest, b: Digest) -> Result<bool, ChainError> {
        let target = self.resolve(a)?;
        let mut cur = self.resolve(b)?;
        loop {
            if cur.digest == a {
                return Ok(true);
            }
            if cur.height <= target.height {
                return Ok(false);
            }
            cur = self.resolve(cur.parent)?;
        }
    }

    /// True when neither block is an ancestor of the other.
    pub fn conflicts(&self, a: Digest, b: Digest) -> Result<bool, ChainError> {
        Ok(!self.is_prefix(a, b)? && !self.is_prefix(b, a)?)
    }

    /// Marks a certified block (and its ancestors) final.
    ///
    /// An honest chain refuses a certificate for a block conflicting with
    /// anything already final; that guard is lifted only while the chain is
    /// under an equivocation fault.
    pub fn finalize(&mut self, round: u64, qc: &QuorumCert) -> Result<(), ChainError> {
        if !verify_qc(qc, &self.cfg) {
            return Err(ChainError::InvalidCertificate {
                chain: self.cfg.chain,
            });
        }
        let target = self.resolve(qc.target)?;
        if target.chain != self.cfg.chain {
            return Err(ChainError::WrongChain {
                digest: qc.target,
                actual: target.chain,
                expected: self.cfg.chain,
            });
        }
        if !self.under_equivocation_fault {
            for (&existing, _) in &self.finalized {
                if self.conflicts(existing, qc.target)? {
                    let height = self.resolve(existing)?.height;
                    return Err(ChainError::ConflictingFinalization {
                        candidate: qc.target,
                        existing,
                        height,
                    });
                }
            }
        }
        self.certificates.entry(qc.target).or_insert_with(|| qc.clone());
        for d in self.ancestry(qc.target)? {
            self.finalized.entry(d).or_insert(round);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qc(chain: usize, target: Digest, height: u64, idx: &[usize]) -> QuorumCert {
        QuorumCert {
            target,
            height,
            signers: idx.iter().map(|&index| ValidatorId { chain, index }).collect(),
        }
    }

    fn chain_with_blocks(n_blocks: u64) -> (ChainState, Vec<Digest>) {
        let mut st = ChainState::new(ChainConfig::threshold(0, 4, 3, 1));
        let mut tips = vec![st.genesis()];
        for h in 1..=n_blocks {
            let d = st
                .make_block(
                    *tips.last().unwrap(),
                    vec![Tx::opaque(&format!("tx{h}"))],
                    BTreeSet::new(),
                )
                .unwrap();
            tips.push(d);
        }
        (st, tips)
    }

    #[test]
    fn make_block_assigns_heights_and_is_deterministic() {
        let (mut st, tips) = chain_with_blocks(2);
        assert_eq!(st.resolve(tips[2]).unwrap().height, 2);
        let again = st
            .make_block(tips[1], vec![Tx::opaque("tx2")], BTreeSet::new())
            .unwrap();
        assert_eq!(again, tips[2]);
        // different payload, different digest
        let other = st
            .make_block(tips[1], vec![Tx::opaque("other")], BTreeSet::new())
            .unwrap();
        assert_ne!(other, tips[2]);
    }

    #[test]
    fn make_block_rejects_unknown_parent() {
        let (mut st, _) = chain_with_blocks(1);
        let err = st
            .make_block(Digest(0xdead), vec![], BTreeSet::new())
            .unwrap_err();
        assert_eq!(err, ChainError::UnknownParent(Digest(0xdead)));
    }

    #[test]
    fn rebuilding_the_same_tree_reproduces_digests() {
        let (_, a) = chain_with_blocks(3);
        let (_, b) = chain_with_blocks(3);
        assert_eq!(a, b);
    }

    #[test]
    fn genesis_digests_differ_by_chain() {
        let a = ChainState::new(ChainConfig::threshold(0, 4, 3, 1));
        let b = ChainState::new(ChainConfig::threshold(1, 4, 3, 1));
        assert_ne!(a.genesis(), b.genesis());
    }

    #[test]
    fn verify_qc_checks_quorum_and_chain() {
        let cfg = ChainConfig::threshold(0, 4, 3, 1);
        let d = Digest(1);
        assert!(verify_qc(&qc(0, d, 1, &[0, 1, 2]), &cfg));
        assert!(verify_qc(&qc(0, d, 1, &[0, 1, 2, 3]), &cfg));
        assert!(!verify_qc(&qc(0, d, 1, &[0, 1]), &cfg));
        assert!(!verify_qc(&qc(1, d, 1, &[0, 1, 2]), &cfg));
        assert!(!verify_qc(&qc(0, d, 1, &[0, 1, 7]), &cfg));
    }

    #[test]
    fn is_prefix_on_a_fork() {
        let (mut st, tips) = chain_with_blocks(2);
        let sibling = st
            .make_block(tips[1], vec![Tx::opaque("fork")], BTreeSet::new())
            .unwrap();
        assert!(st.is_prefix(st.genesis(), tips[2]).unwrap());
        assert!(st.is_prefix(tips[2], tips[2]).unwrap());
        assert!(!st.is_prefix(tips[2], sibling).unwrap());
        assert!(!st.is_prefix(sibling, tips[2]).unwrap());
        assert!(st.conflicts(sibling, tips[2]).unwrap());
        assert!(!st.conflicts(tips[1], tips[2]).unwrap());
        assert!(st.is_prefix(Digest(0xbad), tips[1]).is_err());
    }

    #[test]
    fn finalize_marks_ancestors_and_rejects_conflicts() {
        let (mut st, tips) = chain_with_blocks(2);
        st.finalize(5, &qc(0, tips[2], 2, &[0, 1, 2])).unwrap();
        assert!(st.is_finalized(tips[1]));
        assert!(st.is_finalized(tips[2]));
        // finalizing again is a no-op
        st.finalize(6, &qc(0, tips[2], 2, &[1, 2, 3])).unwrap();

        let sibling = st
            .make_block(tips[1], vec![Tx::opaque("fork")], BTreeSet::new())
            .unwrap();
        let err = st.finalize(7, &qc(0, sibling, 2, &[1, 2, 3])).unwrap_err();
        assert!(matches!(err, ChainError::ConflictingFinalization { .. }));

        // under an equivocation fault the conflicting block goes through
        st.under_equivocation_fault = true;
        st.finalize(7, &qc(0, sibling, 2, &[1, 2, 3])).unwrap();
        assert!(st.is_finalized(sibling));
    }

    #[test]
    fn finalize_rejects_bad_certificates() {
        let (mut st, tips) = chain_with_blocks(1);
        let err = st.finalize(1, &qc(0, tips[1], 1, &[0])).unwrap_err();
        assert_eq!(err, ChainError::InvalidCertificate { chain: 0 });
        assert!(!st.is_finalized(tips[1]));
    }

    #[test]
    fn two_quorums_share_enough_signers() {
        // with all q-subsets of n as quorums, two certificates overlap in at
        // least 2q - n validators
        for (n, q) in [(4usize, 3usize), (7, 5), (10, 7)] {
            let subsets = bitset::k_subsets(bitset::full(n), q);
            for (i, &a) in subsets.iter().enumerate() {
                for &b in &subsets[i..] {
                    assert!(bitset::card(a & b) >= 2 * q - n);
                }
            }
        }
    }
}
