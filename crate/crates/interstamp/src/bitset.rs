//! Small-universe set arithmetic on `u64` bitmasks.
//!
//! Every set family in this crate lives over a universe of at most 64
//! elements, so sets are plain bitmasks and subset tests are single
//! instructions. Element indices are bit positions.

/// A subset of a universe with at most 64 elements.
pub type Mask = u64;

pub fn bit(i: usize) -> Mask {
    debug_assert!(i < 64);
    1 << i
}

pub fn contains(m: Mask, i: usize) -> bool {
    m & bit(i) != 0
}

pub fn is_subset(a: Mask, b: Mask) -> bool {
    a & !b == 0
}

pub fn is_strict_subset(a: Mask, b: Mask) -> bool {
    a != b && is_subset(a, b)
}

pub fn card(m: Mask) -> usize {
    m.count_ones() as usize
}

/// Ascending element indices of `m`.
pub fn elements(m: Mask) -> Vec<usize> {
    let mut out = Vec::with_capacity(card(m));
    let mut rest = m;
    while rest != 0 {
        let i = rest.trailing_zeros() as usize;
        out.push(i);
        rest &= rest - 1;
    }
    out
}

pub fn from_elements<I: IntoIterator<Item = usize>>(iter: I) -> Mask {
    iter.into_iter().fold(0, |m, i| m | bit(i))
}

/// A mask whose elements are `0..n`.
pub fn full(n: usize) -> Mask {
    debug_assert!(n <= 64);
    if n == 64 {
        Mask::MAX
    } else {
        (1 << n) - 1
    }
}

/// Canonical set order: by cardinality, then by ascending element list.
///
/// This is the order used for printing families and for the canonical
/// ordering of enumeration output, so `{1}` sorts before `{0,1}` and
/// `{0,3}` before `{1,2}`.
pub fn cmp_sets(a: Mask, b: Mask) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    match card(a).cmp(&card(b)) {
        Ordering::Equal => {}
        ord => return ord,
    }
    let (mut ra, mut rb) = (a, b);
    while ra != 0 && rb != 0 {
        let (ia, ib) = (ra.trailing_zeros(), rb.trailing_zeros());
        match ia.cmp(&ib) {
            Ordering::Equal => {
                ra &= ra - 1;
                rb &= rb - 1;
            }
            ord => return ord,
        }
    }
    Ordering::Equal
}

/// All subsets of `universe` with exactly `k` elements, in `cmp_sets` order.
pub fn k_subsets(universe: Mask, k: usize) -> Vec<Mask> {
    let elems = elements(universe);
    let n = elems.len();
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(from_elements(idx.iter().map(|&i| elems[i])));
        // next combination in lexicographic index order
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// All subsets of `universe`, the empty set included.
pub fn all_subsets(universe: Mask) -> Vec<Mask> {
    let elems = elements(universe);
    let n = elems.len();
    assert!(n <= 20, "subset enumeration limited to 20 elements");
    let mut out = Vec::with_capacity(1 << n);
    for pattern in 0u64..(1 << n) {
        let mut m = 0;
        for (pos, &e) in elems.iter().enumerate() {
            if pattern & (1 << pos) != 0 {
                m |= bit(e);
            }
        }
        out.push(m);
    }
    out
}

/// Formats a set in family notation, e.g. `{0,2,3}`.
pub fn format_set(m: Mask) -> String {
    let inner: Vec<String> = elements(m).iter().map(|e| e.to_string()).collect();
    format!("{{{}}}", inner.join(","))
}
