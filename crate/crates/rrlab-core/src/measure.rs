//! Finite measures on `[0, 1]`: atoms plus a step-density part.
//!
//! This is the common shape of a disintegration fiber: off-diagonal
//! joinings give pure atoms, product mixtures add a constant density.
//! All integrals against the test observables are exact rationals.

use crate::functions::{Observable, PwAffine, StepFunction};
use crate::interval_set::IntervalSet;
use crate::rational::Rat;
use num_traits::{One, Signed, Zero};

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LineMeasure {
    /// Sorted by location, locations distinct, weights > 0.
    atoms: Vec<(Rat, Rat)>,
    /// Non-negative step density against Lebesgue.
    density: StepFunction,
}

impl LineMeasure {
    pub fn zero() -> Self {
        LineMeasure {
            atoms: Vec::new(),
            density: StepFunction::constant(Rat::zero()),
        }
    }

    /// Lebesgue measure on `[0, 1)`.
    pub fn lebesgue() -> Self {
        LineMeasure {
            atoms: Vec::new(),
            density: StepFunction::constant(Rat::one()),
        }
    }

    pub fn dirac(loc: Rat) -> Self {
        Self::from_parts(vec![(loc, Rat::one())], StepFunction::constant(Rat::zero()))
    }

    /// Builds from raw parts; merges duplicate atom locations, drops zero
    /// weights, and checks non-negativity.
    pub fn from_parts(mut atoms: Vec<(Rat, Rat)>, density: StepFunction) -> Self {
        assert!(density.is_non_negative(), "density must be non-negative");
        atoms.retain(|(_, w)| !w.is_zero());
        for (_, w) in &atoms {
            assert!(!w.is_negative(), "atom weights must be non-negative");
        }
        atoms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(Rat, Rat)> = Vec::with_capacity(atoms.len());
        for (loc, w) in atoms {
            match merged.last_mut() {
                Some((ploc, pw)) if *ploc == loc => *pw += w,
                _ => merged.push((loc, w)),
            }
        }
        LineMeasure {
            atoms: merged,
            density,
        }
    }

    pub fn atoms(&self) -> &[(Rat, Rat)] {
        &self.atoms
    }

    pub fn density(&self) -> &StepFunction {
        &self.density
    }

    pub fn total_mass(&self) -> Rat {
        let mut m = self.density.integral();
        for (_, w) in &self.atoms {
            m += w;
        }
        m
    }

    /// Mass the measure assigns to an interval set (half-open spans; an
    /// atom at a right endpoint is outside the span).
    pub fn mass_of(&self, s: &IntervalSet) -> Rat {
        let mut m = self.density.to_affine().integral_over(s);
        for (loc, w) in &self.atoms {
            if s.contains(loc) {
                m += w;
            }
        }
        m
    }

    /// `∫ f dm`, exact, for either observable kind.
    pub fn integrate(&self, f: &Observable) -> Rat {
        let aff = f.to_affine();
        self.integrate_affine(&aff, f)
    }

    /// Integration against a prepared affine view. For step observables the
    /// value at an atom uses the step convention (right-open pieces).
    pub fn integrate_affine(&self, aff: &PwAffine, f: &Observable) -> Rat {
        let mut total = Rat::zero();
        for (loc, w) in &self.atoms {
            let v = match f {
                Observable::Step(sf) => sf.eval(loc),
                Observable::Linear(pl) => pl.eval(loc),
            };
            total += v * w;
        }
        // Density part: ∫ f·density over [0,1). Affine x step products are
        // integrated piece by piece on the common refinement.
        let d = self.density.to_affine();
        total += product_integral(aff, &d);
        total
    }

    /// Scales all masses by a non-negative factor.
    pub fn scale(&self, c: &Rat) -> LineMeasure {
        assert!(!c.is_negative());
        LineMeasure::from_parts(
            self.atoms.iter().map(|(l, w)| (l.clone(), w * c)).collect(),
            scale_step(&self.density, c),
        )
    }

    /// Mixture: the sum of two measures.
    pub fn add(&self, other: &LineMeasure) -> LineMeasure {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        let density = self.density.to_affine().add(&other.density.to_affine());
        LineMeasure::from_parts(atoms, affine_to_step(&density))
    }

    /// Cumulative distribution F(t) = mass of [0, t], including atoms at t.
    /// Returned as (jump locations with sizes, density) for the metric
    /// module's CDF sweep.
    pub fn cdf_parts(&self) -> (&[(Rat, Rat)], &StepFunction) {
        (&self.atoms, &self.density)
    }
}

/// Exact `∫ f·g dλ` for piecewise-affine f and piecewise-constant-as-affine g
/// (slope of g pieces must be zero for the closed form used downstream to be
/// a polynomial of degree ≤ 2; general affine×affine is still exact here).
pub fn product_integral(f: &PwAffine, g: &PwAffine) -> Rat {
    let mut all: Vec<Rat> = f.breaks().to_vec();
    all.extend_from_slice(g.breaks());
    all.sort();
    all.dedup();
    let two = Rat::from_integer(2.into());
    let three = Rat::from_integer(3.into());
    let mut total = Rat::zero();
    let (mut i, mut j) = (0usize, 0usize);
    for idx in 0..all.len() {
        let lo = &all[idx];
        let hi = if idx + 1 < all.len() {
            all[idx + 1].clone()
        } else {
            Rat::one()
        };
        while i + 1 < f.breaks().len() && &f.breaks()[i + 1] <= lo {
            i += 1;
        }
        while j + 1 < g.breaks().len() && &g.breaks()[j + 1] <= lo {
            j += 1;
        }
        let (a1, b1) = &f.pieces()[i];
        let (a2, b2) = &g.pieces()[j];
        // ∫ (a1+b1 x)(a2+b2 x) dx over [lo, hi)
        let c0 = a1 * a2;
        let c1 = a1 * b2 + a2 * b1;
        let c2 = b1 * b2;
        let d1 = &hi - lo;
        let d2 = &hi * &hi - lo * lo;
        let d3 = &hi * &hi * &hi - lo * lo * lo;
        total += c0 * d1 + c1 * d2 / &two + c2 * d3 / &three;
    }
    total
}

fn scale_step(f: &StepFunction, c: &Rat) -> StepFunction {
    StepFunction::from_pieces(
        f.breaks().to_vec(),
        f.values().iter().map(|v| v * c).collect(),
    )
}

/// Converts a jump-only affine function (all slopes zero) back to a step
/// function; panics if any piece carries slope.
fn affine_to_step(f: &PwAffine) -> StepFunction {
    let values: Vec<Rat> = f
        .pieces()
        .iter()
        .map(|(a, b)| {
            assert!(b.is_zero(), "density must stay piecewise constant");
            a.clone()
        })
        .collect();
    StepFunction::from_pieces(f.breaks().to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::PiecewiseLinear;
    use crate::rational::{rat, rint};

    #[test]
    fn probability_normalization() {
        let m = LineMeasure::from_parts(
            vec![(rat(1, 3), rat(1, 2))],
            StepFunction::from_pieces(vec![rint(0), rat(1, 2)], vec![rint(1), rint(0)]),
        );
        assert_eq!(m.total_mass(), rint(1));
        let one = Observable::Step(StepFunction::constant(rint(1)));
        assert_eq!(m.integrate(&one), rint(1));
    }

    #[test]
    fn identity_against_lebesgue_and_dirac() {
        let id = Observable::Linear(PiecewiseLinear::identity());
        assert_eq!(LineMeasure::lebesgue().integrate(&id), rat(1, 2));
        assert_eq!(LineMeasure::dirac(rat(1, 4)).integrate(&id), rat(1, 4));
    }

    #[test]
    fn mass_of_sets() {
        let m = LineMeasure::from_parts(
            vec![(rat(1, 2), rat(1, 4))],
            scale_step(&StepFunction::constant(rint(1)), &rat(3, 4)),
        );
        let s = IntervalSet::interval(rint(0), rat(1, 2));
        assert_eq!(m.mass_of(&s), rat(3, 8));
        let s2 = IntervalSet::interval(rat(1, 2), rint(1));
        assert_eq!(m.mass_of(&s2), rat(3, 8) + rat(1, 4));
    }

    #[test]
    fn atom_merging() {
        let m = LineMeasure::from_parts(
            vec![(rat(1, 2), rat(1, 4)), (rat(1, 2), rat(1, 4))],
            StepFunction::constant(rint(0)),
        );
        assert_eq!(m.atoms().len(), 1);
        assert_eq!(m.total_mass(), rat(1, 2));
    }

    #[test]
    fn mixtures() {
        let m = LineMeasure::lebesgue()
            .scale(&rat(1, 2))
            .add(&LineMeasure::dirac(rat(1, 4)).scale(&rat(1, 2)));
        assert_eq!(m.total_mass(), rint(1));
        let id = Observable::Linear(PiecewiseLinear::identity());
        assert_eq!(m.integrate(&id), rat(1, 4) + rat(1, 8));
    }
}
