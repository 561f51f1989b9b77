//! Quorum and fail-prone system algebra.
//!
//! A [`SetFamily`] is an antichain of subsets of a small universe: a quorum
//! system (read upward: supersets of a member still contain a quorum) or a
//! fail-prone system (read downward: subsets of a member are still tolerable).
//! Closures are never materialized; membership is answered by subset tests
//! against the antichain, so threshold families over large universes stay
//! cheap.
//!
//! On top of the raw families sit the cross-chain mappings: which chains stay
//! live given an honest validator set, which can be unsafe given a faulty
//! set, and from which chains culprits can be identified. These feed the
//! trade-off checkers that decide whether a combined quorum/fail-prone
//! configuration can be simultaneously safe, live, and accountable.

use std::collections::BTreeSet;
use std::fmt;

use crate::bitset::{self, Mask};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlgebraError {
    #[error("family member {{{member}}} is not a subset of the universe")]
    MemberOutsideUniverse { member: String },
    #[error("universes differ: {0} vs {1}")]
    UniverseMismatch(String, String),
    #[error("threshold parameters invalid: n={n}, q={q}")]
    BadThreshold { n: usize, q: usize },
    #[error("cannot parse set family from {0:?}")]
    Parse(String),
    #[error("chain universes must be disjoint and non-empty")]
    BadChainUniverses,
    #[error("per-chain resilience requires at least one chain")]
    NoChains,
    #[error("consumer resilience must not exceed any provider's: f = {0:?}")]
    ConsumerNotWeakest(Vec<u64>),
}

/// An antichain of subsets of a fixed universe.
///
/// `Explicit` keeps the members as sorted masks. `Threshold { q }` stands for
/// all `q`-element subsets of the universe without listing them; predicates
/// use cardinality arithmetic instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetFamily {
    universe: Mask,
    repr: Repr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Repr {
    Explicit(Vec<Mask>),
    Threshold { q: usize },
}

impl SetFamily {
    /// An explicit family; members are sorted but otherwise taken as given.
    /// Use [`SetFamily::normalize`] to strip redundant members.
    pub fn explicit<I: IntoIterator<Item = Mask>>(
        universe: Mask,
        members: I,
    ) -> Result<Self, AlgebraError> {
        let mut v: Vec<Mask> = members.into_iter().collect();
        for &m in &v {
            if !bitset::is_subset(m, universe) {
                return Err(AlgebraError::MemberOutsideUniverse {
                    member: bitset::format_set(m),
                });
            }
        }
        v.sort_by(|a, b| bitset::cmp_sets(*a, *b));
        v.dedup();
        Ok(SetFamily {
            universe,
            repr: Repr::Explicit(v),
        })
    }

    /// The family of all `q`-element subsets of a universe of `n` elements
    /// occupying bits `offset..offset+n`.
    pub fn threshold(n: usize, q: usize, offset: usize) -> Result<Self, AlgebraError> {
        if n == 0 || q > n || offset + n > 64 {
            return Err(AlgebraError::BadThreshold { n, q });
        }
        Ok(SetFamily {
            universe: bitset::full(n) << offset,
            repr: Repr::Threshold { q },
        })
    }

    /// The empty family (no members). Distinct from a family whose only
    /// member is the empty set.
    pub fn empty(universe: Mask) -> Self {
        SetFamily {
            universe,
            repr: Repr::Explicit(Vec::new()),
        }
    }

    pub fn universe(&self) -> Mask {
        self.universe
    }

    pub fn is_empty(&self) -> bool {
        match &self.repr {
            Repr::Explicit(v) => v.is_empty(),
            Repr::Threshold { .. } => false,
        }
    }

    pub fn len(&self) -> usize {
        match &self.repr {
            Repr::Explicit(v) => v.len(),
            Repr::Threshold { q } => {
                let n = bitset::card(self.universe);
                binomial(n, *q)
            }
        }
    }

    /// Iterates the members. Threshold families generate their subsets on
    /// the fly; nothing larger than the antichain itself is ever built.
    pub fn members(&self) -> Vec<Mask> {
        match &self.repr {
            Repr::Explicit(v) => v.clone(),
            Repr::Threshold { q } => bitset::k_subsets(self.universe, *q),
        }
    }

    /// True when `s` lies in the upward closure: some member is a subset of
    /// `s`. This is the quorum-system reading.
    pub fn in_closure_upward(&self, s: Mask) -> bool {
        match &self.repr {
            Repr::Explicit(v) => v.iter().any(|&m| bitset::is_subset(m, s)),
            Repr::Threshold { q } => bitset::card(s & self.universe) >= *q,
        }
    }

    /// True when `s` lies in the downward closure: some member contains `s`.
    /// This is the fail-prone reading.
    pub fn in_closure_downward(&self, s: Mask) -> bool {
        match &self.repr {
            Repr::Explicit(v) => v.iter().any(|&m| bitset::is_subset(s, m)),
            Repr::Threshold { q } => {
                bitset::is_subset(s, self.universe) && bitset::card(s) <= *q
            }
        }
    }

    /// Removes every member that strictly contains another member, leaving
    /// the minimal antichain. Idempotent.
    pub fn normalize(&self) -> SetFamily {
        match &self.repr {
            Repr::Threshold { .. } => self.clone(),
            Repr::Explicit(v) => {
                let kept: Vec<Mask> = v
                    .iter()
                    .copied()
                    .filter(|&m| !v.iter().any(|&o| bitset::is_strict_subset(o, m)))
                    .collect();
                SetFamily {
                    universe: self.universe,
                    repr: Repr::Explicit(kept),
                }
            }
        }
    }

    /// Upward-closure containment: every member of `other` is in the upward
    /// closure of `self`.
    pub fn covers_upward(&self, other: &SetFamily) -> bool {
        other.members().iter().all(|&m| self.in_closure_upward(m))
    }

    /// Downward-closure containment: every member of `other` is in the
    /// downward closure of `self`.
    pub fn covers_downward(&self, other: &SetFamily) -> bool {
        other.members().iter().all(|&m| self.in_closure_downward(m))
    }

    /// Canonical order on families: member lists compared elementwise under
    /// the canonical set order (cardinality, then elements), shorter list
    /// first on ties. Representation-independent: a threshold family and
    /// its explicit expansion compare equal.
    pub fn canonical_cmp(&self, other: &SetFamily) -> std::cmp::Ordering {
        let a = self.members();
        let b = other.members();
        for (x, y) in a.iter().zip(b.iter()) {
            let ord = bitset::cmp_sets(*x, *y);
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        a.len().cmp(&b.len())
    }

    /// Canonical text form, e.g. `{{0,1},{0,2}}`; threshold families print
    /// their generator as `threshold(n=4,q=3)`.
    pub fn canonical_text(&self) -> String {
        match &self.repr {
            Repr::Threshold { q } => {
                format!("threshold(n={},q={})", bitset::card(self.universe), q)
            }
            Repr::Explicit(v) => {
                let inner: Vec<String> =
                    v.iter().map(|&m| bitset::format_set(m)).collect();
                format!("{{{}}}", inner.join(","))
            }
        }
    }

    /// Parses either an explicit family `{{0,1},{2}}` (members of `{}` are
    /// allowed) or a generator form `threshold(n=4,q=3)`.
    pub fn parse(text: &str) -> Result<Self, AlgebraError> {
        let t = text.trim();
        if let Some(rest) = t.strip_prefix("threshold(") {
            let rest = rest
                .strip_suffix(')')
                .ok_or_else(|| AlgebraError::Parse(text.into()))?;
            let mut n = None;
            let mut q = None;
            for part in rest.split(',') {
                let (key, val) = part
                    .split_once('=')
                    .ok_or_else(|| AlgebraError::Parse(text.into()))?;
                let num: usize = val
                    .trim()
                    .parse()
                    .map_err(|_| AlgebraError::Parse(text.into()))?;
                match key.trim() {
                    "n" => n = Some(num),
                    "q" => q = Some(num),
                    _ => return Err(AlgebraError::Parse(text.into())),
                }
            }
            let (n, q) = match (n, q) {
                (Some(n), Some(q)) => (n, q),
                _ => return Err(AlgebraError::Parse(text.into())),
            };
            return SetFamily::threshold(n, q, 0);
        }
        let inner = t
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .ok_or_else(|| AlgebraError::Parse(text.into()))?;
        let mut members = Vec::new();
        let mut depth = 0usize;
        let mut current = String::new();
        let mut universe: Mask = 0;
        for ch in inner.chars() {
            match ch {
                '{' => {
                    depth += 1;
                    current.clear();
                }
                '}' => {
                    if depth != 1 {
                        return Err(AlgebraError::Parse(text.into()));
                    }
                    depth = 0;
                    let mut m: Mask = 0;
                    for e in current.split(',').filter(|e| !e.trim().is_empty()) {
                        let idx: usize = e
                            .trim()
                            .parse()
                            .map_err(|_| AlgebraError::Parse(text.into()))?;
                        if idx >= 64 {
                            return Err(AlgebraError::Parse(text.into()));
                        }
                        m |= bitset::bit(idx);
                    }
                    universe |= m;
                    members.push(m);
                }
                ',' if depth == 0 => {}
                c if depth == 1 => current.push(c),
                c if c.is_whitespace() => {}
                _ => return Err(AlgebraError::Parse(text.into())),
            }
        }
        if depth != 0 {
            return Err(AlgebraError::Parse(text.into()));
        }
        SetFamily::explicit(universe, members)
    }

    /// Same family re-read over a wider universe.
    pub fn with_universe(&self, universe: Mask) -> Result<Self, AlgebraError> {
        if !bitset::is_subset(self.universe, universe) {
            return Err(AlgebraError::UniverseMismatch(
                bitset::format_set(self.universe),
                bitset::format_set(universe),
            ));
        }
        let mut f = self.clone();
        if let Repr::Explicit(_) = f.repr {
            f.universe = universe;
            Ok(f)
        } else {
            // a threshold family is tied to its own universe
            SetFamily::explicit(universe, self.members())
        }
    }
}

impl fmt::Display for SetFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.canonical_text())
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// A quorum system together with the fail-prone systems for safety and for
/// accountable identification, all over one universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemsTuple {
    pub quorums: SetFamily,
    pub safety_fail_prone: SetFamily,
    pub accountable_fail_prone: SetFamily,
}

impl SystemsTuple {
    pub fn new(
        quorums: SetFamily,
        safety_fail_prone: SetFamily,
        accountable_fail_prone: SetFamily,
    ) -> Result<Self, AlgebraError> {
        let u = quorums.universe();
        if safety_fail_prone.universe() != u || accountable_fail_prone.universe() != u {
            return Err(AlgebraError::UniverseMismatch(
                quorums.canonical_text(),
                safety_fail_prone.canonical_text(),
            ));
        }
        Ok(SystemsTuple {
            quorums,
            safety_fail_prone,
            accountable_fail_prone,
        })
    }

    pub fn universe(&self) -> Mask {
        self.quorums.universe()
    }
}

/// `a` dominates `b` when each of the three closures of `a` contains the
/// corresponding closure of `b` (upward for quorums, downward for the two
/// fail-prone systems) and at least one containment is strict.
pub fn dominates(a: &SystemsTuple, b: &SystemsTuple) -> Result<bool, AlgebraError> {
    if a.universe() != b.universe() {
        return Err(AlgebraError::UniverseMismatch(
            bitset::format_set(a.universe()),
            bitset::format_set(b.universe()),
        ));
    }
    let q_ge = a.quorums.covers_upward(&b.quorums);
    let s_ge = a.safety_fail_prone.covers_downward(&b.safety_fail_prone);
    let acc_ge = a
        .accountable_fail_prone
        .covers_downward(&b.accountable_fail_prone);
    if !(q_ge && s_ge && acc_ge) {
        return Ok(false);
    }
    let q_strict = !b.quorums.covers_upward(&a.quorums);
    let s_strict = !b.safety_fail_prone.covers_downward(&a.safety_fail_prone);
    let acc_strict = !b
        .accountable_fail_prone
        .covers_downward(&a.accountable_fail_prone);
    Ok(q_strict || s_strict || acc_strict)
}

/// Per-chain systems over pairwise disjoint validator universes.
#[derive(Debug, Clone)]
pub struct ChainSystems {
    chains: Vec<SystemsTuple>,
}

impl ChainSystems {
    pub fn new(chains: Vec<SystemsTuple>) -> Result<Self, AlgebraError> {
        if chains.is_empty() {
            return Err(AlgebraError::NoChains);
        }
        let mut seen: Mask = 0;
        for t in &chains {
            let u = t.universe();
            if u == 0 || seen & u != 0 {
                return Err(AlgebraError::BadChainUniverses);
            }
            seen |= u;
        }
        Ok(ChainSystems { chains })
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn chain(&self, i: usize) -> &SystemsTuple {
        &self.chains[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &SystemsTuple> {
        self.chains.iter()
    }

    /// Union of the per-chain validator universes.
    pub fn universe(&self) -> Mask {
        self.chains.iter().fold(0, |m, t| m | t.universe())
    }

    /// Chains whose quorum system is satisfied inside `validators`: chain
    /// `i` is counted when `validators` restricted to its universe contains
    /// one of its quorums.
    pub fn live_chains(&self, validators: Mask) -> BTreeSet<usize> {
        self.chains
            .iter()
            .enumerate()
            .filter(|(_, t)| t.quorums.in_closure_upward(validators & t.universe()))
            .map(|(i, _)| i)
            .collect()
    }

    /// Chains that can lose safety under the faulty set: chain `i` is
    /// counted when its share of `faulty` fits inside no member of its
    /// safety fail-prone system.
    pub fn unsafe_chains(&self, faulty: Mask) -> BTreeSet<usize> {
        self.chains
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                !t.safety_fail_prone
                    .in_closure_downward(faulty & t.universe())
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Chains from which a full accountable set is contained in the faulty
    /// set: culprits there are identifiable after a violation.
    pub fn identifiable_chains(&self, faulty: Mask) -> BTreeSet<usize> {
        self.chains
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                let local = faulty & t.universe();
                t.accountable_fail_prone
                    .members()
                    .iter()
                    .any(|&b| bitset::is_subset(b, local))
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// Partially synchronous safety/liveness trade-off for a combined protocol
/// over several chains: for every two combined quorums and every combined
/// safety fail-prone member, the chains live under both quorums must not all
/// be allowed to go unsafe. The subset on the right is non-strict.
pub fn check_interchain_safety_tradeoff(
    combined: &SystemsTuple,
    chains: &ChainSystems,
) -> Result<bool, AlgebraError> {
    require_same_universe(combined, chains)?;
    let quorums = combined.quorums.members();
    for &q1 in &quorums {
        let live1 = chains.live_chains(q1);
        for &q2 in &quorums {
            let both: BTreeSet<usize> =
                live1.intersection(&chains.live_chains(q2)).copied().collect();
            for &bs in &combined.safety_fail_prone.members() {
                let tolerated = chains.unsafe_chains(bs);
                if both.is_subset(&tolerated) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Accountability trade-off: for every two combined quorums and every
/// combined accountable member, the chains live under both quorums must not
/// be a *strict* subset of the identifiable chains; and no accountable
/// member may strictly contain a per-chain accountable member on any chain.
pub fn check_interchain_slashable_tradeoff(
    combined: &SystemsTuple,
    chains: &ChainSystems,
) -> Result<bool, AlgebraError> {
    require_same_universe(combined, chains)?;
    let quorums = combined.quorums.members();
    let accountable = combined.accountable_fail_prone.members();
    for &q1 in &quorums {
        let live1 = chains.live_chains(q1);
        for &q2 in &quorums {
            let both: BTreeSet<usize> =
                live1.intersection(&chains.live_chains(q2)).copied().collect();
            for &ba in &accountable {
                let identifiable = chains.identifiable_chains(ba);
                if both.is_subset(&identifiable) && both != identifiable {
                    return Ok(false);
                }
            }
        }
    }
    for &ba in &accountable {
        for t in chains.iter() {
            let local = ba & t.universe();
            let strictly_contains_member = t
                .accountable_fail_prone
                .members()
                .iter()
                .any(|&b| bitset::is_strict_subset(b, local));
            if strictly_contains_member {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Data-availability condition: every combined quorum must keep at least one
/// of the designated full-node chains live.
pub fn check_interchain_da_condition(
    combined: &SystemsTuple,
    chains: &ChainSystems,
    da_chains: &BTreeSet<usize>,
) -> Result<bool, AlgebraError> {
    require_same_universe(combined, chains)?;
    for &q in &combined.quorums.members() {
        let live = chains.live_chains(q);
        if da_chains.iter().all(|j| !live.contains(j)) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn require_same_universe(
    combined: &SystemsTuple,
    chains: &ChainSystems,
) -> Result<(), AlgebraError> {
    if combined.universe() != chains.universe() {
        return Err(AlgebraError::UniverseMismatch(
            bitset::format_set(combined.universe()),
            bitset::format_set(chains.universe()),
        ));
    }
    Ok(())
}

/// Single-protocol safety/liveness trade-off under partial synchrony: no two
/// quorums may intersect inside (non-strictly) a safety fail-prone member.
pub fn check_smr_psync(quorums: &SetFamily, safety: &SetFamily) -> bool {
    let qs = quorums.members();
    qs.iter().all(|&q1| {
        qs.iter()
            .all(|&q2| !safety.in_closure_downward(q1 & q2))
    })
}

/// Accountability variant: no two quorums may intersect *strictly inside* an
/// accountable fail-prone member.
pub fn check_smr_slashable(quorums: &SetFamily, accountable: &SetFamily) -> bool {
    let qs = quorums.members();
    let bas = accountable.members();
    qs.iter().all(|&q1| {
        qs.iter().all(|&q2| {
            let i = q1 & q2;
            !bas.iter().any(|&b| bitset::is_strict_subset(i, b))
        })
    })
}

/// Every quorum must intersect the full-node subset.
pub fn check_smr_da(quorums: &SetFamily, full_nodes: Mask) -> bool {
    quorums.members().iter().all(|&q| q & full_nodes != 0)
}

/// Synchronous trade-off: no single quorum may lie (non-strictly) inside a
/// safety fail-prone member.
pub fn check_smr_sync(quorums: &SetFamily, safety: &SetFamily) -> bool {
    quorums
        .members()
        .iter()
        .all(|&q| !safety.in_closure_downward(q))
}

/// Threshold BFT systems for resilience `f`: `3f+1` validators, quorums of
/// size `2f+1`, safety tolerable up to `f` faults, identification of `f+1`
/// culprits after a violation. `f = 0` degenerates to a single validator.
pub fn tendermint_systems(f: usize, offset: usize) -> Result<SystemsTuple, AlgebraError> {
    let n = 3 * f + 1;
    SystemsTuple::new(
        SetFamily::threshold(n, 2 * f + 1, offset)?,
        SetFamily::threshold(n, f, offset)?,
        SetFamily::threshold(n, f + 1, offset)?,
    )
}

/// Collapses a tuple to threshold-style numbers:
/// the largest `f` such that every `f`-subset leaves some quorum intact, the
/// largest `f` such that every `f`-subset is tolerable for safety, and the
/// size of the smallest accountable member.
pub fn scalar_resilience(tuple: &SystemsTuple) -> (usize, usize, usize) {
    let u = tuple.universe();
    let n = bitset::card(u);
    let f_live = largest_f(n, |s| {
        tuple
            .quorums
            .members()
            .iter()
            .any(|&q| q & s == 0)
    }, u);
    let f_safe = largest_f(n, |s| tuple.safety_fail_prone.in_closure_downward(s), u);
    let f_acc = tuple
        .accountable_fail_prone
        .members()
        .iter()
        .map(|&b| bitset::card(b))
        .min()
        .unwrap_or(0);
    (f_live, f_safe, f_acc)
}

fn largest_f<P: Fn(Mask) -> bool>(n: usize, pred: P, universe: Mask) -> usize {
    let mut best = 0;
    for f in 0..=n {
        if bitset::k_subsets(universe, f).iter().all(|&s| pred(s)) {
            best = f;
        } else {
            break;
        }
    }
    best
}
