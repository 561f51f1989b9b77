//! The attainable frontier of interchain protocols.
//!
//! Lifting quorum/fail-prone reasoning from validators to whole chains
//! turns every interchain protocol into a "property tuple": which chain
//! sets must be live for the protocol to be live, which compromised chain
//! sets it tolerates for safety, and which compromise patterns still leave
//! violations attributable. This module enumerates the non-dominated
//! tuples over small chain counts, classifies which of them plain
//! timestamping achieves, and lifts property tuples back down to concrete
//! validator-level systems for the theorem checkers.

use std::cmp::Ordering;
use std::fmt;

use itertools::Itertools;
use thiserror::Error;

use crate::algebra::{dominates, AlgebraError, ChainSystems, SetFamily, SystemsTuple};
use crate::bitset::{self, Mask};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BoundaryError {
    #[error("enumeration supports 1 to 4 chains, got {0}")]
    UnsupportedChainCount(usize),
    #[error("chain set {0} lies outside the {1}-chain universe")]
    ChainsOutsideUniverse(String, usize),
    #[error("timestamping needs at least one provider")]
    NeedProviders,
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// A point in the space of interchain protocol properties, with families
/// ranging over chain indices rather than validators.
#[derive(Debug, Clone)]
pub struct PropertyTuple {
    /// Chain sets whose joint liveness makes the protocol live: a quorum
    /// system over chains.
    pub live_sets: SetFamily,
    /// Compromised-chain sets under which the protocol remains safe: a
    /// fail-prone system over chains. `{{}}` means safe only while no
    /// chain is compromised.
    pub safe_sets: SetFamily,
    /// Compromised-chain sets from which a safety violation still yields
    /// identifiable culprits on every listed chain. `None` means violations
    /// can never be attributed, which only the never-live protocol affords.
    pub accountable_sets: Option<SetFamily>,
}

impl PropertyTuple {
    pub fn new(
        live_sets: SetFamily,
        safe_sets: SetFamily,
        accountable_sets: Option<SetFamily>,
    ) -> Result<Self, BoundaryError> {
        let u = live_sets.universe();
        for f in std::iter::once(&safe_sets).chain(accountable_sets.iter()) {
            if f.universe() != u {
                return Err(BoundaryError::Algebra(AlgebraError::UniverseMismatch(
                    bitset::format_set(u),
                    bitset::format_set(f.universe()),
                )));
            }
        }
        Ok(PropertyTuple {
            live_sets: live_sets.normalize(),
            safe_sets: safe_sets.normalize(),
            accountable_sets: accountable_sets.map(|f| f.normalize()),
        })
    }

    pub fn universe(&self) -> Mask {
        self.live_sets.universe()
    }

    /// Safety trade-off: no intersection of two liveness quorums fits
    /// inside a tolerated compromise set, so a split-brain through that
    /// intersection is never survivable by assumption.
    pub fn safety_tradeoff_holds(&self) -> bool {
        let live = self.live_sets.members();
        live.iter().cartesian_product(live.iter()).all(|(&a, &b)| {
            !self.safe_sets.in_closure_downward(a & b)
        })
    }

    /// Slashable-safety trade-off: the strict variant. An intersection may
    /// equal an accountable set but must never sit strictly inside one.
    pub fn slashable_tradeoff_holds(&self) -> bool {
        let Some(acc) = &self.accountable_sets else {
            return true;
        };
        let live = self.live_sets.members();
        live.iter().cartesian_product(live.iter()).all(|(&a, &b)| {
            !acc.members()
                .iter()
                .any(|&m| bitset::is_strict_subset(a & b, m))
        })
    }

    /// Data-availability condition: every liveness quorum includes a chain
    /// whose payloads full nodes actually check.
    pub fn da_condition_holds(&self, da_chains: Mask) -> bool {
        self.live_sets.members().iter().all(|&d| d & da_chains != 0)
    }

    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.live_sets
            .canonical_cmp(&other.live_sets)
            .then_with(|| self.safe_sets.canonical_cmp(&other.safe_sets))
            .then_with(|| match (&self.accountable_sets, &other.accountable_sets) {
                (None, None) => Ordering::Equal,
                (None, Some(_)) => Ordering::Less,
                (Some(_), None) => Ordering::Greater,
                (Some(a), Some(b)) => a.canonical_cmp(b),
            })
    }

    /// Which protocol family attains this point.
    pub fn classify(&self) -> TupleClass {
        let members = self.live_sets.members();
        match members.as_slice() {
            [] => TupleClass::Trivial,
            [d] if bitset::card(*d) == 1 => TupleClass::Trivial,
            [d] => {
                if timestamping_over(self.universe(), *d)
                    .is_ok_and(|t| t == *self)
                {
                    TupleClass::Timestamping
                } else {
                    TupleClass::Other
                }
            }
            _ => TupleClass::Other,
        }
    }
}

impl PartialEq for PropertyTuple {
    fn eq(&self, other: &Self) -> bool {
        self.universe() == other.universe()
            && self.canonical_cmp(other) == Ordering::Equal
    }
}

impl Eq for PropertyTuple {}

impl fmt::Display for PropertyTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let acc = match &self.accountable_sets {
            Some(a) => a.canonical_text(),
            None => "⊥".to_string(),
        };
        write!(
            f,
            "({}, {}, {})",
            self.live_sets.canonical_text(),
            self.safe_sets.canonical_text(),
            acc
        )
    }
}

/// How a frontier point is attainable: by doing nothing or following a
/// single chain, by the timestamping protocol over some chain set, or only
/// by running a consensus protocol on top of the chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TupleClass {
    Trivial,
    Timestamping,
    Other,
}

impl fmt::Display for TupleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TupleClass::Trivial => "trivial",
            TupleClass::Timestamping => "timestamping",
            TupleClass::Other => "other",
        })
    }
}

fn maximal(sets: &[Mask]) -> Vec<Mask> {
    sets.iter()
        .copied()
        .filter(|&s| !sets.iter().any(|&o| bitset::is_strict_subset(s, o)))
        .collect()
}

fn minimal(sets: &[Mask]) -> Vec<Mask> {
    sets.iter()
        .copied()
        .filter(|&s| !sets.iter().any(|&o| bitset::is_strict_subset(o, s)))
        .collect()
}

/// The best safety and accountability a protocol with liveness quorums
/// `live_members` can reach, or `None` when two of its quorums are
/// disjoint (such a protocol can be split with zero compromised chains, so
/// it is never safe and never on the frontier).
fn best_companions(
    universe: Mask,
    live_members: &[Mask],
) -> Option<(Vec<Mask>, Option<Vec<Mask>>)> {
    let mut intersections = Vec::new();
    for (i, &a) in live_members.iter().enumerate() {
        for &b in &live_members[i..] {
            let x = a & b;
            if x == 0 {
                return None;
            }
            intersections.push(x);
        }
    }
    // Tolerable compromise sets: those covering no quorum intersection.
    // A split-brain needs every honest chain out of some intersection.
    let tolerable: Vec<Mask> = bitset::all_subsets(universe)
        .into_iter()
        .filter(|&s| !intersections.iter().any(|&x| bitset::is_subset(x, s)))
        .collect();
    let safe = maximal(&tolerable);
    // Attribution is possible exactly where safety is already lost: the
    // minimal compromise patterns able to violate safety are the ones a
    // violation exposes. Anything larger would promise culprits on chains
    // that never signed conflicting data.
    let violating: Vec<Mask> = bitset::all_subsets(universe)
        .into_iter()
        .filter(|&s| !tolerable.contains(&s))
        .collect();
    let acc = if violating.is_empty() {
        None
    } else {
        Some(minimal(&violating))
    };
    Some((safe, acc))
}

/// Every non-dominated property tuple over `chain_count` chains whose
/// liveness quorums all touch a data-checking chain in `da_chains`.
///
/// Candidate liveness systems are all antichains of nonempty chain sets;
/// for each, the construction above pins the unique best safety and
/// accountability companions, and a final pairwise pass drops dominated
/// tuples. Output is canonically ordered and independent of input order.
pub fn enumerate_upper_boundary(
    chain_count: usize,
    da_chains: Mask,
) -> Result<Vec<PropertyTuple>, BoundaryError> {
    if chain_count == 0 || chain_count > 4 {
        return Err(BoundaryError::UnsupportedChainCount(chain_count));
    }
    let universe = bitset::full(chain_count);
    if !bitset::is_subset(da_chains, universe) {
        return Err(BoundaryError::ChainsOutsideUniverse(
            bitset::format_set(da_chains),
            chain_count,
        ));
    }
    let nonempty: Vec<Mask> = bitset::all_subsets(universe)
        .into_iter()
        .filter(|&s| s != 0)
        .collect();
    let mut tuples = Vec::new();
    for choice in 0u32..(1 << nonempty.len()) {
        let members: Vec<Mask> = nonempty
            .iter()
            .enumerate()
            .filter(|(i, _)| choice >> i & 1 == 1)
            .map(|(_, &s)| s)
            .collect();
        let antichain = members.iter().all(|&a| {
            !members.iter().any(|&b| bitset::is_strict_subset(a, b))
        });
        if !antichain {
            continue;
        }
        if !members.iter().all(|&d| d & da_chains != 0) {
            continue;
        }
        let Some((safe, acc)) = best_companions(universe, &members) else {
            continue;
        };
        let tuple = PropertyTuple::new(
            SetFamily::explicit(universe, members)?,
            SetFamily::explicit(universe, safe)?,
            acc.map(|a| SetFamily::explicit(universe, a))
                .transpose()?,
        )?;
        debug_assert!(tuple.safety_tradeoff_holds());
        debug_assert!(tuple.slashable_tradeoff_holds());
        tuples.push(tuple);
    }
    let survivors: Vec<PropertyTuple> = tuples
        .iter()
        .filter(|t| {
            !tuples
                .iter()
                .any(|o| dominates_property(o, t).unwrap_or(false))
        })
        .cloned()
        .collect();
    let mut out = survivors;
    out.sort_by(|a, b| a.canonical_cmp(b));
    Ok(out)
}

/// Domination between property tuples: the validator-level relation reused
/// over chain indices, with an absent accountability family acting as the
/// bottom element.
pub fn dominates_property(
    a: &PropertyTuple,
    b: &PropertyTuple,
) -> Result<bool, BoundaryError> {
    let as_systems = |t: &PropertyTuple| -> Result<SystemsTuple, AlgebraError> {
        SystemsTuple::new(
            t.live_sets.clone(),
            t.safe_sets.clone(),
            t.accountable_sets
                .clone()
                .unwrap_or_else(|| SetFamily::empty(t.universe())),
        )
    };
    Ok(dominates(&as_systems(a)?, &as_systems(b)?)?)
}

/// The property point of timestamping run over the chain set `chain_set`
/// within a wider universe: live iff all of them are live, safe iff one of
/// them is safe, attributable under every compromise pattern that can
/// violate safety.
pub fn timestamping_over(
    universe: Mask,
    chain_set: Mask,
) -> Result<PropertyTuple, BoundaryError> {
    if chain_set == 0 {
        return Err(BoundaryError::NeedProviders);
    }
    let safe: Vec<Mask> = bitset::elements(chain_set)
        .into_iter()
        .map(|i| universe & !bitset::bit(i))
        .collect();
    PropertyTuple::new(
        SetFamily::explicit(universe, [chain_set])?,
        SetFamily::explicit(universe, safe)?,
        Some(SetFamily::explicit(universe, [chain_set])?),
    )
}

/// The timestamping protocol's property point for one consumer and
/// `providers` provider chains.
pub fn timestamping_tuple(providers: usize) -> Result<PropertyTuple, BoundaryError> {
    if providers == 0 {
        return Err(BoundaryError::NeedProviders);
    }
    let universe = bitset::full(providers + 1);
    timestamping_over(universe, universe)
}

/// True when no enumerated tuple offers strictly more accountability than
/// timestamping over all chains: its family covers every other tuple's.
pub fn check_best_accountability(
    chain_count: usize,
    da_chains: Mask,
) -> Result<bool, BoundaryError> {
    let best = timestamping_over(bitset::full(chain_count), bitset::full(chain_count))?;
    let best_acc = best.accountable_sets.as_ref().expect("nonempty chain set");
    Ok(enumerate_upper_boundary(chain_count, da_chains)?
        .iter()
        .filter_map(|t| t.accountable_sets.as_ref())
        .all(|acc| best_acc.covers_downward(acc)))
}

fn union_products(parts: Vec<Vec<Mask>>) -> Vec<Mask> {
    parts
        .into_iter()
        .multi_cartesian_product()
        .map(|combo| combo.into_iter().fold(0, |acc, m| acc | m))
        .collect()
}

/// Realizes a property tuple as validator-level systems over concrete
/// chains: liveness quorums become unions of per-chain quorums, a
/// tolerated compromise set sacrifices its chains' full validator sets
/// while the rest contribute per-chain tolerable sets, and accountable
/// sets become unions of per-chain accountable sets.
pub fn lift_to_systems(
    t: &PropertyTuple,
    chains: &ChainSystems,
) -> Result<SystemsTuple, BoundaryError> {
    let k = chains.len();
    if t.universe() != bitset::full(k) {
        return Err(BoundaryError::ChainsOutsideUniverse(
            bitset::format_set(t.universe()),
            k,
        ));
    }
    let union = chains.universe();
    let quorums = union_products_over(t.live_sets.members(), |i, in_set| {
        if in_set {
            chains.chain(i).quorums.members()
        } else {
            vec![0]
        }
    }, k);
    let safety = union_products_over(t.safe_sets.members(), |i, in_set| {
        if in_set {
            vec![chains.chain(i).universe()]
        } else {
            chains.chain(i).safety_fail_prone.members()
        }
    }, k);
    let accountable = match &t.accountable_sets {
        None => Vec::new(),
        Some(acc) => union_products_over(acc.members(), |i, in_set| {
            if in_set {
                chains.chain(i).accountable_fail_prone.members()
            } else {
                vec![0]
            }
        }, k),
    };
    Ok(SystemsTuple::new(
        SetFamily::explicit(union, quorums)?.normalize(),
        SetFamily::explicit(union, safety)?.normalize(),
        SetFamily::explicit(union, accountable)?.normalize(),
    )?)
}

fn union_products_over<F>(patterns: Vec<Mask>, part: F, k: usize) -> Vec<Mask>
where
    F: Fn(usize, bool) -> Vec<Mask>,
{
    patterns
        .into_iter()
        .flat_map(|d| {
            let parts: Vec<Vec<Mask>> =
                (0..k).map(|i| part(i, d & bitset::bit(i) != 0)).collect();
            union_products(parts)
        })
        .collect()
}

/// Liveness and slashable-safety resilience of a timestamping telescope
/// with per-chain fault budgets `f` (consumer first): liveness is capped
/// by the weakest chain, which must be the consumer, and a violation
/// slashes at least `f_i + 1` validators on every chain.
pub fn mesh_resilience(f: &[u64]) -> Result<(u64, u64), BoundaryError> {
    let Some(&f0) = f.first() else {
        return Err(BoundaryError::Algebra(AlgebraError::NoChains));
    };
    if f.iter().any(|&fi| fi < f0) {
        return Err(BoundaryError::Algebra(AlgebraError::ConsumerNotWeakest(
            f.to_vec(),
        )));
    }
    Ok((f0, f.iter().map(|&fi| fi + 1).sum()))
}
