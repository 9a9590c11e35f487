//! Finite unions of half-open rational intervals `[a, b)` inside `[0, 1)`.
//!
//! `IntervalSet` is the universal representation of measurable sets here:
//! tower bases, tower levels, return sets, probe sets. The representation
//! is canonical (sorted, pairwise disjoint, maximally merged), so equality
//! of sets is structural equality.

use crate::rational::{format_rat, Rat};
use num_traits::Zero;
use std::fmt;

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct IntervalSet {
    // Canonical: sorted by left endpoint, disjoint, non-adjacent, non-empty.
    spans: Vec<(Rat, Rat)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetOp {
    Union,
    Intersect,
    Subtract,
    /// Complement of the left operand inside `[0, 1)`; the right operand is ignored.
    ComplementInUnit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutOfRange {
    pub lo: Rat,
    pub hi: Rat,
}

impl fmt::Display for OutOfRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "translated image [{}, {}) leaves [0, 1)",
            format_rat(&self.lo),
            format_rat(&self.hi)
        )
    }
}

impl std::error::Error for OutOfRange {}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet { spans: Vec::new() }
    }

    /// The whole space `[0, 1)`.
    pub fn unit() -> Self {
        Self::interval(Rat::zero(), Rat::from_integer(1.into()))
    }

    /// Single interval `[a, b)`; empty if `a >= b`.
    pub fn interval(a: Rat, b: Rat) -> Self {
        if a < b {
            IntervalSet {
                spans: vec![(a, b)],
            }
        } else {
            Self::empty()
        }
    }

    /// Canonicalizes an arbitrary list of `[a, b)` pairs: drops empties,
    /// sorts, merges overlapping and adjacent spans.
    pub fn from_spans(mut spans: Vec<(Rat, Rat)>) -> Self {
        spans.retain(|(a, b)| a < b);
        spans.sort();
        let mut out: Vec<(Rat, Rat)> = Vec::with_capacity(spans.len());
        for (a, b) in spans {
            match out.last_mut() {
                Some((_, prev_b)) if *prev_b >= a => {
                    if b > *prev_b {
                        *prev_b = b;
                    }
                }
                _ => out.push((a, b)),
            }
        }
        IntervalSet { spans: out }
    }

    pub fn spans(&self) -> &[(Rat, Rat)] {
        &self.spans
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Total length, exact.
    pub fn measure(&self) -> Rat {
        let mut m = Rat::zero();
        for (a, b) in &self.spans {
            m += b - a;
        }
        m
    }

    pub fn contains(&self, x: &Rat) -> bool {
        self.spans
            .binary_search_by(|(a, b)| {
                if b <= x {
                    std::cmp::Ordering::Less
                } else if a > x {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .is_ok()
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut spans = self.spans.clone();
        spans.extend(other.spans.iter().cloned());
        IntervalSet::from_spans(spans)
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.spans.len() && j < other.spans.len() {
            let (a1, b1) = &self.spans[i];
            let (a2, b2) = &other.spans[j];
            let lo = a1.max(a2);
            let hi = b1.min(b2);
            if lo < hi {
                out.push((lo.clone(), hi.clone()));
            }
            if b1 <= b2 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet { spans: out }
    }

    pub fn subtract(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        let mut j = 0;
        for (a, b) in &self.spans {
            let mut cur = a.clone();
            while j < other.spans.len() && other.spans[j].1 <= cur {
                j += 1;
            }
            let mut jj = j;
            while jj < other.spans.len() && &other.spans[jj].0 < b {
                let (ca, cb) = &other.spans[jj];
                if *ca > cur {
                    out.push((cur.clone(), ca.min(b).clone()));
                }
                if cb >= b {
                    cur = b.clone();
                    break;
                }
                if *cb > cur {
                    cur = cb.clone();
                }
                jj += 1;
            }
            if cur < *b {
                out.push((cur, b.clone()));
            }
        }
        IntervalSet { spans: out }
    }

    pub fn complement_in_unit(&self) -> IntervalSet {
        IntervalSet::unit().subtract(self)
    }

    pub fn is_subset_of(&self, other: &IntervalSet) -> bool {
        self.subtract(other).is_empty()
    }

    /// Shifts every span by `t`; errors unless the image stays inside `[0, 1)`.
    pub fn translate(&self, t: &Rat) -> Result<IntervalSet, OutOfRange> {
        let shifted = self.translate_unchecked(t);
        if let (Some(first), Some(last)) = (shifted.spans.first(), shifted.spans.last()) {
            if first.0 < Rat::zero() || last.1 > Rat::from_integer(1.into()) {
                return Err(OutOfRange {
                    lo: first.0.clone(),
                    hi: last.1.clone(),
                });
            }
        }
        Ok(shifted)
    }

    /// Shift without the ambient-range check; canonical form is preserved.
    pub fn translate_unchecked(&self, t: &Rat) -> IntervalSet {
        IntervalSet {
            spans: self.spans.iter().map(|(a, b)| (a + t, b + t)).collect(),
        }
    }
}

/// Dispatcher over the four set-algebra operations.
pub fn set_algebra(lhs: &IntervalSet, rhs: &IntervalSet, op: SetOp) -> IntervalSet {
    match op {
        SetOp::Union => lhs.union(rhs),
        SetOp::Intersect => lhs.intersect(rhs),
        SetOp::Subtract => lhs.subtract(rhs),
        SetOp::ComplementInUnit => lhs.complement_in_unit(),
    }
}

impl fmt::Display for IntervalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.spans.is_empty() {
            return write!(f, "{{}}");
        }
        let parts: Vec<String> = self
            .spans
            .iter()
            .map(|(a, b)| format!("[{}..{})", format_rat(a), format_rat(b)))
            .collect();
        write!(f, "{}", parts.join(" u "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, rint};

    fn iv(a: (i64, i64), b: (i64, i64)) -> IntervalSet {
        IntervalSet::interval(rat(a.0, a.1), rat(b.0, b.1))
    }

    #[test]
    fn intersect_identity() {
        let got = IntervalSet::unit().intersect(&iv((1, 2), (1, 1)));
        assert_eq!(got, iv((1, 2), (1, 1)));
    }

    #[test]
    fn complement_of_two_pieces() {
        let s = iv((0, 1), (1, 4)).union(&iv((1, 2), (1, 1)));
        assert_eq!(s.complement_in_unit(), iv((1, 4), (1, 2)));
    }

    #[test]
    fn subtract_middle() {
        let got = iv((0, 1), (3, 4)).subtract(&iv((1, 4), (1, 2)));
        let want = iv((0, 1), (1, 4)).union(&iv((1, 2), (3, 4)));
        assert_eq!(got, want);
    }

    #[test]
    fn measures() {
        assert_eq!(IntervalSet::empty().measure(), rint(0));
        assert_eq!(IntervalSet::unit().measure(), rint(1));
        let s = iv((0, 1), (1, 4)).union(&iv((1, 2), (5, 8)));
        assert_eq!(s.measure(), rat(3, 8));
    }

    #[test]
    fn translate_checked() {
        assert_eq!(
            iv((0, 1), (1, 4)).translate(&rat(1, 2)).unwrap(),
            iv((1, 2), (3, 4))
        );
        assert_eq!(
            iv((1, 2), (1, 1)).translate(&rat(-1, 2)).unwrap(),
            iv((0, 1), (1, 2))
        );
        assert!(iv((0, 1), (1, 2)).translate(&rat(3, 4)).is_err());
    }

    #[test]
    fn canonical_merging() {
        let s = IntervalSet::from_spans(vec![
            (rat(1, 2), rat(3, 4)),
            (rat(0, 1), rat(1, 4)),
            (rat(1, 4), rat(1, 2)),
            (rat(7, 8), rat(7, 8)),
        ]);
        assert_eq!(s, iv((0, 1), (3, 4)));
        // Canonicalization is idempotent.
        assert_eq!(IntervalSet::from_spans(s.spans().to_vec()), s);
    }

    #[test]
    fn membership() {
        let s = iv((0, 1), (1, 4)).union(&iv((1, 2), (5, 8)));
        assert!(s.contains(&rat(0, 1)));
        assert!(!s.contains(&rat(1, 4)));
        assert!(s.contains(&rat(1, 2)));
        assert!(!s.contains(&rat(5, 8)));
    }
}
