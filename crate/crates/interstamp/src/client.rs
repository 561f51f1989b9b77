//! Client-side ledger construction from checkpointed chains.
//!
//! A consumer chain is periodically checkpointed onto one or more provider
//! chains: a checkpoint is the consumer block hash and height signed by a
//! quorum of consumer validators, carried as an ordinary transaction in
//! provider blocks. A client reads the provider chain in order and replays
//! the checkpoints it finds:
//!
//! * a checkpoint whose target chain is fully available and finalized in the
//!   client's view extends the ledger through [`sanitize`], which appends
//!   the not-yet-seen portion of the target chain;
//! * a valid checkpoint whose target chain cannot be resolved, is missing a
//!   certificate, or has an unavailable payload makes the client *stall*:
//!   the ledger built so far is served and nothing later is consumed until
//!   the data appears. Skipping instead of stalling would let whoever
//!   withheld the data replay it later and rewrite history for newcomers;
//! * checkpoints without a valid signer quorum are ignored.
//!
//! With several providers the construction telescopes: the timestamped
//! ledger built from the outermost provider serves as the provider sequence
//! for the next chain in, and payload availability is enforced only at the
//! innermost, full-node level.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Block, ChainConfig, ChainError, Digest, QuorumCert, ValidatorId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("a provider sequence needs at least two chains, got {0}")]
    ChainOrderTooShort(usize),
    #[error("no providers selected")]
    NoProviders,
    #[error("providers {0:?} do not form a telescoping path from the consumer")]
    NotATelescopingPath(Vec<usize>),
    #[error("chain {0} is not observed by this client")]
    ChainNotObserved(usize),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// A quorum-signed commitment to one consumer block.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Checkpoint {
    pub consumer_chain: usize,
    pub target: Digest,
    pub height: u64,
    pub signers: BTreeSet<ValidatorId>,
}

/// Signer-quorum check; the target need not be resolvable yet.
pub fn checkpoint_valid(ckpt: &Checkpoint, consumer_cfg: &ChainConfig) -> bool {
    ckpt.consumer_chain == consumer_cfg.chain && consumer_cfg.verify_signers(&ckpt.signers)
}

/// An ordered, duplicate-free sequence of block digests. Unlike a chain, a
/// ledger may interleave blocks from conflicting branches; the order is
/// what clients agree on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSeq(pub Vec<Digest>);

impl LedgerSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, d: Digest) -> bool {
        self.0.contains(&d)
    }

    pub fn is_prefix_of(&self, other: &LedgerSeq) -> bool {
        self.0.len() <= other.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

/// True when one ledger extends the other.
pub fn prefix_consistent(a: &LedgerSeq, b: &LedgerSeq) -> bool {
    a.is_prefix_of(b) || b.is_prefix_of(a)
}

/// Appends to `ledger` every block of `chain` not already present, keeping
/// earlier entries in place. The input ledger is always a prefix of the
/// result, and every digest of `chain` is in the result.
pub fn sanitize(ledger: &LedgerSeq, chain: &[Digest]) -> LedgerSeq {
    let mut out = ledger.clone();
    let mut seen: BTreeSet<Digest> = out.0.iter().copied().collect();
    for &d in chain {
        if seen.insert(d) {
            out.0.push(d);
        }
    }
    out
}

/// What one observer has seen of one chain.
#[derive(Debug, Clone, Default)]
pub struct ChainObservation {
    pub blocks: BTreeMap<Digest, Block>,
    pub certificates: BTreeMap<Digest, QuorumCert>,
    /// Blocks whose payload this observer currently cannot obtain.
    pub unavailable_payload: BTreeSet<Digest>,
}

impl ChainObservation {
    /// Blocks final in this view: every ancestor present, every non-genesis
    /// ancestor certified.
    pub fn finalized_set(&self) -> BTreeSet<Digest> {
        let mut by_height: BTreeMap<u64, Vec<&Block>> = BTreeMap::new();
        for b in self.blocks.values() {
            by_height.entry(b.height).or_default().push(b);
        }
        let mut finalized: BTreeSet<Digest> = BTreeSet::new();
        for (height, blocks) in by_height {
            for b in blocks {
                let parent_ok = height == 0 || finalized.contains(&b.parent);
                let certified = height == 0 || self.certificates.contains_key(&b.digest);
                if parent_ok && certified {
                    finalized.insert(b.digest);
                }
            }
        }
        finalized
    }
}

/// Everything one client can see at one round.
#[derive(Debug, Clone)]
pub struct ClientView {
    pub observer: String,
    pub round: u64,
    pub chains: BTreeMap<usize, ChainObservation>,
}

impl ClientView {
    pub fn chain(&self, idx: usize) -> Result<&ChainObservation, ClientError> {
        self.chains.get(&idx).ok_or(ClientError::ChainNotObserved(idx))
    }

    /// Copy of the view restricted to the consumer and the given providers.
    pub fn restricted_to(&self, chains: &[usize]) -> ClientView {
        ClientView {
            observer: self.observer.clone(),
            round: self.round,
            chains: self
                .chains
                .iter()
                .filter(|(idx, _)| chains.contains(idx))
                .map(|(idx, obs)| (*idx, obs.clone()))
                .collect(),
        }
    }
}

/// The finalized header chain of a provider as one observer sees it,
/// truncated at the first fork.
///
/// Walks finalized blocks upward from genesis. At the first height where
/// two conflicting finalized blocks exist (or where no finalized block
/// extends the unique chain so far while others exist), the walk stops, so
/// only blocks strictly below the fork are returned.
pub fn provider_header_chain(obs: &ChainObservation) -> Vec<Digest> {
    let finalized = obs.finalized_set();
    let mut by_height: BTreeMap<u64, Vec<&Block>> = BTreeMap::new();
    for d in &finalized {
        let b = &obs.blocks[d];
        by_height.entry(b.height).or_default().push(b);
    }
    let mut chain: Vec<Digest> = Vec::new();
    let Some(roots) = by_height.get(&0) else {
        return chain;
    };
    if roots.len() > 1 {
        return chain;
    }
    let mut tip = roots[0].digest;
    chain.push(tip);
    for height in 1.. {
        let Some(candidates) = by_height.get(&height) else {
            break;
        };
        if candidates.len() > 1 {
            // two finalized blocks at one height always conflict: everything
            // from here up sits at or past the fork point
            break;
        }
        let b = candidates[0];
        if b.parent != tip {
            break;
        }
        tip = b.digest;
        chain.push(tip);
    }
    chain
}

/// Valid checkpoints for `consumer` read along a sequence of provider
/// blocks, in block-then-payload order. Invalid signer sets are dropped
/// here; availability of targets is the fork-choice's business.
pub fn checkpoints_in_blocks<'a, I>(blocks: I, consumer_cfg: &ChainConfig) -> Vec<Checkpoint>
where
    I: IntoIterator<Item = &'a Block>,
{
    blocks
        .into_iter()
        .flat_map(|b| b.checkpoints())
        .filter(|c| checkpoint_valid(c, consumer_cfg))
        .cloned()
        .collect()
}

/// All valid checkpoints for `consumer` visible on a provider chain in one
/// observer's view, respecting the fork truncation rule.
pub fn extract_checkpoints(
    view: &ClientView,
    provider: usize,
    consumer_cfg: &ChainConfig,
) -> Result<Vec<Checkpoint>, ClientError> {
    let obs = view.chain(provider)?;
    let chain = provider_header_chain(obs);
    let blocks = chain.iter().map(|d| &obs.blocks[d]);
    Ok(checkpoints_in_blocks(blocks, consumer_cfg))
}

/// How strictly a client reacts to unavailable checkpoint targets.
/// Disabling the stall is a diagnostic control used to demonstrate the
/// history-rewrite that the rule prevents; production paths keep it on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientPolicy {
    pub enforce_stalling: bool,
}

impl Default for ClientPolicy {
    fn default() -> Self {
        ClientPolicy {
            enforce_stalling: true,
        }
    }
}

enum TargetState {
    Ready(Vec<Digest>),
    NotReady,
}

/// Resolves the chain from genesis to `ckpt.target` and checks that every
/// block not already in the ledger is present, certified, and (for full
/// nodes) payload-available.
fn target_chain_state(
    obs: &ChainObservation,
    ckpt: &Checkpoint,
    in_ledger: &BTreeSet<Digest>,
    full_node: bool,
) -> TargetState {
    let mut suffix = Vec::new();
    let mut cur = ckpt.target;
    loop {
        if in_ledger.contains(&cur) {
            break; // checked when it entered the ledger; views only grow
        }
        let Some(block) = obs.blocks.get(&cur) else {
            return TargetState::NotReady;
        };
        let certified = block.height == 0 || obs.certificates.contains_key(&cur);
        if !certified {
            return TargetState::NotReady;
        }
        if full_node && obs.unavailable_payload.contains(&cur) {
            return TargetState::NotReady;
        }
        suffix.push(cur);
        if block.height == 0 {
            break;
        }
        cur = block.parent;
    }
    suffix.reverse();
    TargetState::Ready(suffix)
}

fn replay_checkpoints(
    obs: &ChainObservation,
    checkpoints: &[Checkpoint],
    full_node: bool,
    policy: ClientPolicy,
) -> (LedgerSeq, bool) {
    let mut ledger = LedgerSeq::default();
    let mut in_ledger: BTreeSet<Digest> = BTreeSet::new();
    for ckpt in checkpoints {
        match target_chain_state(obs, ckpt, &in_ledger, full_node) {
            TargetState::Ready(suffix) => {
                for d in suffix {
                    if in_ledger.insert(d) {
                        ledger.0.push(d);
                    }
                }
            }
            TargetState::NotReady => {
                if policy.enforce_stalling {
                    return (ledger, true);
                }
                // diagnostic mode: skip and keep consuming
            }
        }
    }
    (ledger, false)
}

/// Ledger of `consumer` as read from a single provider chain in `view`.
/// Returns the ledger together with a flag telling whether the client is
/// stalled on an unavailable or unfinalized checkpoint target.
pub fn fork_choice_single(
    view: &ClientView,
    consumer_cfg: &ChainConfig,
    provider: usize,
    policy: ClientPolicy,
) -> Result<(LedgerSeq, bool), ClientError> {
    let checkpoints = extract_checkpoints(view, provider, consumer_cfg)?;
    let obs = view.chain(consumer_cfg.chain)?;
    Ok(replay_checkpoints(
        obs,
        &checkpoints,
        consumer_cfg.checks_data_availability,
        policy,
    ))
}

/// Telescoping ledger construction across `chain_order`, consumer first.
///
/// The outermost provider contributes its finalized header chain; each inner
/// level replays the checkpoints found in the sequence produced one level
/// out. Only the innermost level checks payload availability; intermediate
/// levels are header-only light clients. The stall flag is the OR across
/// levels.
pub fn fork_choice_multi(
    view: &ClientView,
    chain_order: &[usize],
    cfgs: &[ChainConfig],
    policy: ClientPolicy,
) -> Result<(LedgerSeq, bool), ClientError> {
    if chain_order.len() < 2 {
        return Err(ClientError::ChainOrderTooShort(chain_order.len()));
    }
    let top = *chain_order.last().unwrap();
    let mut provider_seq = provider_header_chain(view.chain(top)?);
    let mut provider_idx = top;
    let mut stalled = false;
    let mut ledger = LedgerSeq::default();
    for level in (0..chain_order.len() - 1).rev() {
        let consumer = chain_order[level];
        let provider_obs = view.chain(provider_idx)?;
        let blocks: Vec<&Block> = provider_seq
            .iter()
            .map(|d| provider_obs.blocks.get(d).ok_or(ChainError::UnknownDigest(*d)))
            .collect::<Result<_, _>>()?;
        let checkpoints = checkpoints_in_blocks(blocks.into_iter(), &cfgs[consumer]);
        let full_node = level == 0 && cfgs[consumer].checks_data_availability;
        let consumer_obs = view.chain(consumer)?;
        let (lvl_ledger, lvl_stalled) =
            replay_checkpoints(consumer_obs, &checkpoints, full_node, policy);
        stalled |= lvl_stalled;
        provider_seq = lvl_ledger.0.clone();
        provider_idx = consumer;
        ledger = lvl_ledger;
    }
    Ok((ledger, stalled))
}

/// Orders `providers` into the telescoping sequence the topology implies:
/// consumer first, then each provider reached over a channel from the
/// previous entry. Errors when the subset does not form such a path.
pub fn provider_chain_order(
    topology: &[(usize, usize)],
    consumer: usize,
    providers: &BTreeSet<usize>,
) -> Result<Vec<usize>, ClientError> {
    if providers.is_empty() {
        return Err(ClientError::NoProviders);
    }
    let mut order = vec![consumer];
    let mut remaining = providers.clone();
    let mut cur = consumer;
    while !remaining.is_empty() {
        let next = topology
            .iter()
            .find(|(from, to)| *from == cur && remaining.contains(to))
            .map(|(_, to)| *to);
        match next {
            Some(p) => {
                remaining.remove(&p);
                order.push(p);
                cur = p;
            }
            None => {
                return Err(ClientError::NotATelescopingPath(
                    providers.iter().copied().collect(),
                ))
            }
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{ChainState, Tx};

    fn digests(seed: &[u64]) -> Vec<Digest> {
        seed.iter().map(|&x| Digest(x)).collect()
    }

    #[test]
    fn sanitize_merges_fork_then_extension() {
        // ledger already holds a four-block chain; a conflicting tip at the
        // same height is appended after it
        let ledger = LedgerSeq(digests(&[1, 2, 3, 4]));
        let fork = digests(&[1, 2, 3, 14]);
        let merged = sanitize(&ledger, &fork);
        assert_eq!(merged, LedgerSeq(digests(&[1, 2, 3, 4, 14])));

        // a later checkpoint extends the original branch past the fork
        let longer = digests(&[1, 2, 3, 4, 5]);
        let merged2 = sanitize(&merged, &longer);
        assert_eq!(merged2, LedgerSeq(digests(&[1, 2, 3, 4, 14, 5])));
    }

    #[test]
    fn sanitize_trivial_cases() {
        let empty = LedgerSeq::default();
        assert_eq!(sanitize(&empty, &[]), empty);
        let chain = digests(&[7, 8]);
        assert_eq!(sanitize(&empty, &chain), LedgerSeq(chain.clone()));
        let ledger = LedgerSeq(chain.clone());
        assert_eq!(sanitize(&ledger, &chain), ledger);
    }

    #[test]
    fn prefix_consistency() {
        let a = LedgerSeq(digests(&[1, 2]));
        let b = LedgerSeq(digests(&[1, 2, 3]));
        let c = LedgerSeq(digests(&[1, 9]));
        assert!(prefix_consistent(&a, &b));
        assert!(prefix_consistent(&b, &a));
        assert!(prefix_consistent(&a, &a));
        assert!(!prefix_consistent(&b, &c));
    }

    struct Fixture {
        consumer_cfg: ChainConfig,
        provider_cfg: ChainConfig,
        view: ClientView,
        consumer_tips: Vec<Digest>,
    }

    fn signers(chain: usize, idx: &[usize]) -> BTreeSet<ValidatorId> {
        idx.iter().map(|&index| ValidatorId { chain, index }).collect()
    }

    /// Two chains; the consumer has `consumer_len` blocks, each checkpointed
    /// in its own provider block. The view sees everything.
    fn two_chain_fixture(consumer_len: u64) -> Fixture {
        let consumer_cfg = ChainConfig::threshold(0, 4, 3, 1);
        let provider_cfg = ChainConfig::threshold(1, 4, 3, 1);
        let mut consumer = ChainState::new(consumer_cfg.clone());
        let mut provider = ChainState::new(provider_cfg.clone());
        let mut consumer_tips = vec![consumer.genesis()];
        let mut provider_tip = provider.genesis();
        for h in 1..=consumer_len {
            let d = consumer
                .make_block(
                    *consumer_tips.last().unwrap(),
                    vec![Tx::opaque(&format!("tx{h}"))],
                    BTreeSet::new(),
                )
                .unwrap();
            consumer
                .finalize(
                    h,
                    &QuorumCert {
                        target: d,
                        height: h,
                        signers: signers(0, &[0, 1, 2]),
                    },
                )
                .unwrap();
            consumer_tips.push(d);
            let ckpt = Checkpoint {
                consumer_chain: 0,
                target: d,
                height: h,
                signers: signers(0, &[0, 1, 2]),
            };
            provider_tip = provider
                .make_block(
                    provider_tip,
                    vec![Tx::Checkpoint { checkpoint: ckpt }],
                    BTreeSet::new(),
                )
                .unwrap();
            provider
                .finalize(
                    h,
                    &QuorumCert {
                        target: provider_tip,
                        height: h,
                        signers: signers(1, &[0, 1, 2]),
                    },
                )
                .unwrap();
        }
        let view = ClientView {
            observer: "c1".into(),
            round: consumer_len,
            chains: BTreeMap::from([
                (0, observation_of(&consumer)),
                (1, observation_of(&provider)),
            ]),
        };
        Fixture {
            consumer_cfg,
            provider_cfg,
            view,
            consumer_tips,
        }
    }

    fn observation_of(st: &ChainState) -> ChainObservation {
        ChainObservation {
            blocks: st.blocks().map(|b| (b.digest, b.clone())).collect(),
            certificates: st
                .blocks()
                .filter_map(|b| st.certificate(b.digest).map(|qc| (b.digest, qc.clone())))
                .collect(),
            unavailable_payload: BTreeSet::new(),
        }
    }

    #[test]
    fn fork_choice_replays_honest_chain() {
        let fx = two_chain_fixture(3);
        let (ledger, stalled) = fork_choice_single(
            &fx.view,
            &fx.consumer_cfg,
            1,
            ClientPolicy::default(),
        )
        .unwrap();
        assert!(!stalled);
        assert_eq!(ledger, LedgerSeq(fx.consumer_tips.clone()));
        let _ = fx.provider_cfg;
    }

    #[test]
    fn fork_choice_skips_invalid_checkpoints() {
        let mut fx = two_chain_fixture(2);
        // append a provider block carrying a checkpoint with a sub-quorum
        // signer set; it must not stall or extend anything
        let obs = fx.view.chains.get_mut(&1).unwrap();
        let tip = provider_header_chain(obs).last().copied().unwrap();
        let tip_height = obs.blocks[&tip].height;
        let bogus = Checkpoint {
            consumer_chain: 0,
            target: Digest(0xf00d),
            height: 99,
            signers: signers(0, &[0]),
        };
        let block = Block {
            digest: Digest(0xabcd),
            parent: tip,
            height: tip_height + 1,
            chain: 1,
            payload: vec![Tx::Checkpoint { checkpoint: bogus }],
            withheld_from: BTreeSet::new(),
        };
        obs.certificates.insert(
            block.digest,
            QuorumCert {
                target: block.digest,
                height: block.height,
                signers: signers(1, &[0, 1, 2]),
            },
        );
        obs.blocks.insert(block.digest, block);
        let (ledger, stalled) = fork_choice_single(
            &fx.view,
            &fx.consumer_cfg,
            1,
            ClientPolicy::default(),
        )
        .unwrap();
        assert!(!stalled);
        assert_eq!(ledger.len(), 3); // genesis + 2 blocks
    }

    #[test]
    fn unavailable_target_stalls_and_skip_mode_does_not() {
        let mut fx = two_chain_fixture(3);
        // make the payload of consumer block 2 unavailable
        let victim = fx.consumer_tips[2];
        fx.view
            .chains
            .get_mut(&0)
            .unwrap()
            .unavailable_payload
            .insert(victim);
        let (ledger, stalled) = fork_choice_single(
            &fx.view,
            &fx.consumer_cfg,
            1,
            ClientPolicy::default(),
        )
        .unwrap();
        assert!(stalled);
        assert_eq!(ledger, LedgerSeq(fx.consumer_tips[..2].to_vec()));

        let (skipped, stalled2) = fork_choice_single(
            &fx.view,
            &fx.consumer_cfg,
            1,
            ClientPolicy {
                enforce_stalling: false,
            },
        )
        .unwrap();
        // the skipping client serves the same prefix but reports itself
        // healthy, and will keep consuming whatever comes later: that is
        // the opening a reveal-later adversary exploits
        assert!(!stalled2);
        assert_eq!(skipped, LedgerSeq(fx.consumer_tips[..2].to_vec()));
    }

    #[test]
    fn missing_certificate_stalls() {
        let mut fx = two_chain_fixture(3);
        let victim = fx.consumer_tips[3];
        fx.view
            .chains
            .get_mut(&0)
            .unwrap()
            .certificates
            .remove(&victim);
        let (ledger, stalled) = fork_choice_single(
            &fx.view,
            &fx.consumer_cfg,
            1,
            ClientPolicy::default(),
        )
        .unwrap();
        assert!(stalled);
        assert_eq!(ledger, LedgerSeq(fx.consumer_tips[..3].to_vec()));
    }

    #[test]
    fn provider_fork_truncates_checkpoints() {
        let mut fx = two_chain_fixture(3);
        // finalize a conflicting provider block at height 2
        let obs = fx.view.chains.get_mut(&1).unwrap();
        let chain = provider_header_chain(obs);
        let parent = chain[1];
        let rogue = Block {
            digest: Digest(0xbeef),
            parent,
            height: 2,
            chain: 1,
            payload: Vec::new(),
            withheld_from: BTreeSet::new(),
        };
        obs.certificates.insert(
            rogue.digest,
            QuorumCert {
                target: rogue.digest,
                height: 2,
                signers: signers(1, &[1, 2, 3]),
            },
        );
        obs.blocks.insert(rogue.digest, rogue);
        let truncated = provider_header_chain(obs);
        assert_eq!(truncated.len(), 2); // genesis + height 1 only
        let (ledger, stalled) = fork_choice_single(
            &fx.view,
            &fx.consumer_cfg,
            1,
            ClientPolicy::default(),
        )
        .unwrap();
        assert!(!stalled);
        // only the first checkpoint (consumer block 1) is honored
        assert_eq!(ledger, LedgerSeq(fx.consumer_tips[..2].to_vec()));
    }

    #[test]
    fn multi_with_one_provider_matches_single() {
        let fx = two_chain_fixture(3);
        let cfgs = vec![fx.consumer_cfg.clone(), fx.provider_cfg.clone()];
        let single =
            fork_choice_single(&fx.view, &fx.consumer_cfg, 1, ClientPolicy::default())
                .unwrap();
        let multi =
            fork_choice_multi(&fx.view, &[0, 1], &cfgs, ClientPolicy::default()).unwrap();
        assert_eq!(single, multi);
    }

    #[test]
    fn multi_rejects_short_orders() {
        let fx = two_chain_fixture(1);
        let cfgs = vec![fx.consumer_cfg.clone()];
        let err =
            fork_choice_multi(&fx.view, &[0], &cfgs, ClientPolicy::default()).unwrap_err();
        assert_eq!(err, ClientError::ChainOrderTooShort(1));
    }

    #[test]
    fn provider_order_follows_topology() {
        let topo = vec![(0, 1), (1, 2)];
        let order =
            provider_chain_order(&topo, 0, &BTreeSet::from([1, 2])).unwrap();
        assert_eq!(order, vec![0, 1, 2]);
        let short = provider_chain_order(&topo, 0, &BTreeSet::from([1])).unwrap();
        assert_eq!(short, vec![0, 1]);
        assert_eq!(
            provider_chain_order(&topo, 0, &BTreeSet::new()).unwrap_err(),
            ClientError::NoProviders
        );
        assert!(matches!(
            provider_chain_order(&topo, 0, &BTreeSet::from([2])).unwrap_err(),
            ClientError::NotATelescopingPath(_)
        ));
    }

    #[test]
    fn view_restriction_drops_other_chains() {
        let fx = two_chain_fixture(1);
        let restricted = fx.view.restricted_to(&[0]);
        assert!(restricted.chain(0).is_ok());
        assert!(restricted.chain(1).is_err());
    }
}
