//! Exact piecewise functions on `[0, 1)`.
//!
//! Three representations share the file:
//!
//! - [`StepFunction`]: piecewise constant, right-open pieces. Test
//!   observables and indicator functions.
//! - [`PiecewiseLinear`]: continuous piecewise linear with exactly
//!   computable Lipschitz constant. The 1-Lipschitz test family lives here.
//! - [`PwAffine`]: piecewise affine with jumps; the internal closure of the
//!   other two under pullback, mixture, and difference. Integrals of it and
//!   of its square are exact rationals.

use crate::interval_set::IntervalSet;
use crate::rational::Rat;
use num_traits::{One, Signed, Zero};

/// Piecewise-constant function. Piece `i` covers `[breaks[i], breaks[i+1])`
/// with the final piece extending to 1. `breaks[0]` is always 0.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StepFunction {
    breaks: Vec<Rat>,
    values: Vec<Rat>,
}

impl StepFunction {
    pub fn constant(c: Rat) -> Self {
        StepFunction {
            breaks: vec![Rat::zero()],
            values: vec![c],
        }
    }

    /// Indicator of a set (1 on the set, 0 elsewhere).
    pub fn indicator(s: &IntervalSet) -> Self {
        let mut breaks = vec![Rat::zero()];
        let mut values = vec![Rat::zero()];
        for (a, b) in s.spans() {
            if a.is_zero() {
                values[0] = Rat::one();
            } else {
                breaks.push(a.clone());
                values.push(Rat::one());
            }
            if *b < Rat::one() {
                breaks.push(b.clone());
                values.push(Rat::zero());
            }
        }
        StepFunction { breaks, values }
    }

    /// From explicit pieces; `breaks` must start at 0 and increase strictly.
    pub fn from_pieces(breaks: Vec<Rat>, values: Vec<Rat>) -> Self {
        assert_eq!(breaks.len(), values.len(), "piece count mismatch");
        assert!(
            !breaks.is_empty() && breaks[0].is_zero(),
            "first break must be 0"
        );
        for w in breaks.windows(2) {
            assert!(w[0] < w[1], "breaks must increase strictly");
        }
        assert!(
            *breaks.last().unwrap() < Rat::one(),
            "breaks must stay below 1"
        );
        StepFunction { breaks, values }
    }

    pub fn breaks(&self) -> &[Rat] {
        &self.breaks
    }

    pub fn values(&self) -> &[Rat] {
        &self.values
    }

    pub fn eval(&self, x: &Rat) -> Rat {
        let i = match self.breaks.binary_search(x) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        self.values[i].clone()
    }

    pub fn is_non_negative(&self) -> bool {
        self.values.iter().all(|v| !v.is_negative())
    }

    pub fn to_affine(&self) -> PwAffine {
        PwAffine {
            breaks: self.breaks.clone(),
            pieces: self
                .values
                .iter()
                .map(|v| (v.clone(), Rat::zero()))
                .collect(),
        }
    }

    /// `∫ f dλ` over `[0, 1)`.
    pub fn integral(&self) -> Rat {
        self.to_affine().integral()
    }

    /// Squared L²(λ) distance `∫ (f-g)² dλ`, exact.
    pub fn l2_sq_distance(&self, other: &StepFunction) -> Rat {
        self.to_affine()
            .sub(&other.to_affine())
            .integral_of_square()
    }
}

/// Continuous piecewise-linear function given by nodes
/// `(x_0, v_0), ..., (x_m, v_m)` with `x_0 = 0`, `x_m = 1`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PiecewiseLinear {
    nodes: Vec<(Rat, Rat)>,
}

impl PiecewiseLinear {
    pub fn from_nodes(nodes: Vec<(Rat, Rat)>) -> Self {
        assert!(nodes.len() >= 2, "need at least the two endpoint nodes");
        assert!(nodes[0].0.is_zero(), "first node must sit at 0");
        assert!(nodes.last().unwrap().0.is_one(), "last node must sit at 1");
        for w in nodes.windows(2) {
            assert!(w[0].0 < w[1].0, "node abscissae must increase strictly");
        }
        PiecewiseLinear { nodes }
    }

    /// The identity observable f(x) = x.
    pub fn identity() -> Self {
        Self::from_nodes(vec![(Rat::zero(), Rat::zero()), (Rat::one(), Rat::one())])
    }

    pub fn nodes(&self) -> &[(Rat, Rat)] {
        &self.nodes
    }

    pub fn eval(&self, x: &Rat) -> Rat {
        let i = match self.nodes.binary_search_by(|(bx, _)| bx.cmp(x)) {
            Ok(i) => return self.nodes[i].1.clone(),
            Err(i) => i - 1,
        };
        let (x0, v0) = &self.nodes[i];
        let (x1, v1) = &self.nodes[i + 1];
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    /// Maximum absolute slope; exact.
    pub fn lipschitz_constant(&self) -> Rat {
        let mut best = Rat::zero();
        for w in self.nodes.windows(2) {
            let slope = ((&w[1].1 - &w[0].1) / (&w[1].0 - &w[0].0)).abs();
            if slope > best {
                best = slope;
            }
        }
        best
    }

    /// Sup norm: linear pieces attain extremes at nodes.
    pub fn sup_norm(&self) -> Rat {
        self.nodes
            .iter()
            .map(|(_, v)| v.abs())
            .max()
            .unwrap_or_else(Rat::zero)
    }

    pub fn to_affine(&self) -> PwAffine {
        let mut breaks = Vec::with_capacity(self.nodes.len() - 1);
        let mut pieces = Vec::with_capacity(self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            let (x0, v0) = &w[0];
            let (x1, v1) = &w[1];
            let slope = (v1 - v0) / (x1 - x0);
            let intercept = v0 - &slope * x0;
            breaks.push(x0.clone());
            pieces.push((intercept, slope));
        }
        PwAffine { breaks, pieces }
    }
}

/// A test observable: either kind of exactly integrable function.
#[derive(Clone, Debug)]
pub enum Observable {
    Step(StepFunction),
    Linear(PiecewiseLinear),
}

impl Observable {
    pub fn to_affine(&self) -> PwAffine {
        match self {
            Observable::Step(f) => f.to_affine(),
            Observable::Linear(f) => f.to_affine(),
        }
    }

    pub fn sup_norm(&self) -> Rat {
        match self {
            Observable::Step(f) => f
                .values()
                .iter()
                .map(|v| v.abs())
                .max()
                .unwrap_or_else(Rat::zero),
            Observable::Linear(f) => f.sup_norm(),
        }
    }
}

/// Piecewise-affine function with jumps: piece `i` is `a_i + b_i·x` on
/// `[breaks[i], breaks[i+1])`, last piece up to 1. Not an exposed domain
/// type; the algebraic closure used by operators and error integrals.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PwAffine {
    breaks: Vec<Rat>,
    pieces: Vec<(Rat, Rat)>, // (intercept, slope) in global coordinates
}

impl PwAffine {
    pub fn zero() -> Self {
        PwAffine {
            breaks: vec![Rat::zero()],
            pieces: vec![(Rat::zero(), Rat::zero())],
        }
    }

    pub fn constant(c: Rat) -> Self {
        PwAffine {
            breaks: vec![Rat::zero()],
            pieces: vec![(c, Rat::zero())],
        }
    }

    /// From raw pieces, sorted with strictly increasing breaks starting at 0;
    /// structurally equal neighbours are merged.
    pub fn from_pieces(breaks: Vec<Rat>, pieces: Vec<(Rat, Rat)>) -> Self {
        assert_eq!(breaks.len(), pieces.len());
        assert!(!breaks.is_empty() && breaks[0].is_zero());
        for w in breaks.windows(2) {
            assert!(w[0] < w[1]);
        }
        let mut out = PwAffine { breaks, pieces };
        out.coalesce();
        out
    }

    pub fn breaks(&self) -> &[Rat] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[(Rat, Rat)] {
        &self.pieces
    }

    pub fn eval(&self, x: &Rat) -> Rat {
        let i = match self.breaks.binary_search(x) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let (a, b) = &self.pieces[i];
        a + b * x
    }

    fn zip_with(
        &self,
        other: &PwAffine,
        f: impl Fn(&(Rat, Rat), &(Rat, Rat)) -> (Rat, Rat),
    ) -> PwAffine {
        let mut all: Vec<Rat> = Vec::with_capacity(self.breaks.len() + other.breaks.len());
        all.extend(self.breaks.iter().cloned());
        all.extend(other.breaks.iter().cloned());
        all.sort();
        all.dedup();
        let mut pieces = Vec::with_capacity(all.len());
        let (mut i, mut j) = (0usize, 0usize);
        for br in &all {
            while i + 1 < self.breaks.len() && &self.breaks[i + 1] <= br {
                i += 1;
            }
            while j + 1 < other.breaks.len() && &other.breaks[j + 1] <= br {
                j += 1;
            }
            pieces.push(f(&self.pieces[i], &other.pieces[j]));
        }
        let mut out = PwAffine {
            breaks: all,
            pieces,
        };
        out.coalesce();
        out
    }

    /// Merges structurally identical neighbours.
    fn coalesce(&mut self) {
        let mut breaks = Vec::with_capacity(self.breaks.len());
        let mut pieces: Vec<(Rat, Rat)> = Vec::with_capacity(self.pieces.len());
        for (br, pc) in self.breaks.drain(..).zip(self.pieces.drain(..)) {
            if let Some(last) = pieces.last() {
                if *last == pc {
                    continue;
                }
            }
            breaks.push(br);
            pieces.push(pc);
        }
        self.breaks = breaks;
        self.pieces = pieces;
    }

    pub fn add(&self, other: &PwAffine) -> PwAffine {
        self.zip_with(other, |(a1, b1), (a2, b2)| (a1 + a2, b1 + b2))
    }

    pub fn sub(&self, other: &PwAffine) -> PwAffine {
        self.zip_with(other, |(a1, b1), (a2, b2)| (a1 - a2, b1 - b2))
    }

    pub fn scale(&self, c: &Rat) -> PwAffine {
        PwAffine {
            breaks: self.breaks.clone(),
            pieces: self.pieces.iter().map(|(a, b)| (a * c, b * c)).collect(),
        }
    }

    /// `∫ f dλ` over `[0, 1)`.
    pub fn integral(&self) -> Rat {
        let mut total = Rat::zero();
        let two = Rat::from_integer(2.into());
        for i in 0..self.pieces.len() {
            let lo = &self.breaks[i];
            let hi = if i + 1 < self.breaks.len() {
                self.breaks[i + 1].clone()
            } else {
                Rat::one()
            };
            let (a, b) = &self.pieces[i];
            // ∫ (a + bx) dx = a(hi-lo) + b(hi²-lo²)/2
            total += a * (&hi - lo) + b * (&hi * &hi - lo * lo) / &two;
        }
        total
    }

    /// `∫ f² dλ` over `[0, 1)`, exact.
    pub fn integral_of_square(&self) -> Rat {
        let mut total = Rat::zero();
        let three = Rat::from_integer(3.into());
        for i in 0..self.pieces.len() {
            let lo = &self.breaks[i];
            let hi = if i + 1 < self.breaks.len() {
                self.breaks[i + 1].clone()
            } else {
                Rat::one()
            };
            let (a, b) = &self.pieces[i];
            // ∫ (a + bx)² dx = a²Δ + ab(hi²-lo²) + b²(hi³-lo³)/3
            let d1 = &hi - lo;
            let d2 = &hi * &hi - lo * lo;
            let d3 = &hi * &hi * &hi - lo * lo * lo;
            total += a * a * d1 + a * b * d2 + b * b * d3 / &three;
        }
        total
    }

    /// Restriction: f·1_S (zero outside S).
    pub fn restrict(&self, s: &IntervalSet) -> PwAffine {
        let ind = StepFunction::indicator(s).to_affine();
        self.zip_with(&ind, |(a, b), (m, _)| {
            if m.is_zero() {
                (Rat::zero(), Rat::zero())
            } else {
                (a.clone(), b.clone())
            }
        })
    }

    /// `∫_S f dλ`.
    pub fn integral_over(&self, s: &IntervalSet) -> Rat {
        self.restrict(s).integral()
    }

    /// Sup of |f| over [0,1): pieces are affine, extremes at piece ends.
    pub fn sup_abs(&self) -> Rat {
        let mut best = Rat::zero();
        for i in 0..self.pieces.len() {
            let lo = &self.breaks[i];
            let hi = if i + 1 < self.breaks.len() {
                self.breaks[i + 1].clone()
            } else {
                Rat::one()
            };
            let (a, b) = &self.pieces[i];
            for x in [lo, &hi] {
                let v = (a + b * x).abs();
                if v > best {
                    best = v;
                }
            }
        }
        best
    }

    /// Exact sublevel set `{x : f(x) < t}` (strict), as an `IntervalSet`.
    /// Boundary points are a null set; half-open spans absorb them.
    pub fn strict_sublevel(&self, t: &Rat) -> IntervalSet {
        self.region(|lo, hi, a, b| affine_strictly_below(lo, hi, a, b, t))
    }

    /// Exact superlevel set `{x : f(x) > t}` (strict).
    pub fn strict_superlevel(&self, t: &Rat) -> IntervalSet {
        self.region(|lo, hi, a, b| {
            let na = -(a.clone());
            let nb = -(b.clone());
            affine_strictly_below(lo, hi, &na, &nb, &-t.clone())
        })
    }

    fn region(
        &self,
        piece_region: impl Fn(&Rat, &Rat, &Rat, &Rat) -> Option<(Rat, Rat)>,
    ) -> IntervalSet {
        let mut spans = Vec::new();
        for i in 0..self.pieces.len() {
            let lo = &self.breaks[i];
            let hi = if i + 1 < self.breaks.len() {
                self.breaks[i + 1].clone()
            } else {
                Rat::one()
            };
            let (a, b) = &self.pieces[i];
            if let Some(span) = piece_region(lo, &hi, a, b) {
                spans.push(span);
            }
        }
        IntervalSet::from_spans(spans)
    }
}

/// Solves `a + bx < t` on `[lo, hi)`; returns the (possibly clipped) span.
pub(crate) fn affine_strictly_below(
    lo: &Rat,
    hi: &Rat,
    a: &Rat,
    b: &Rat,
    t: &Rat,
) -> Option<(Rat, Rat)> {
    if b.is_zero() {
        return if a < t {
            Some((lo.clone(), hi.clone()))
        } else {
            None
        };
    }
    let cross = (t - a) / b;
    let (s_lo, s_hi) = if b.is_positive() {
        (lo.clone(), cross.min(hi.clone()))
    } else {
        (cross.max(lo.clone()), hi.clone())
    };
    (s_lo < s_hi).then_some((s_lo, s_hi))
}
