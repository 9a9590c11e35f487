//! Closed-form self-joinings and their fiber disintegrations.
//!
//! Three families, each with exactly computable fibers `sigma_x`:
//!
//! - [`Joining::OffDiagonal`]: a convex combination of graph joinings of
//!   powers, `sum p_m J(n_m)`; fibers are atom lists at `T^{n_m} x`.
//! - [`Joining::ProductMix`]: `alpha (lambda x lambda) + (1-alpha)` times an
//!   off-diagonal combination; fibers gain a constant density `alpha`.
//! - [`Joining::TwoAdic`]: the graph of the dyadic translation `x -> x + gamma`
//!   (odometer descriptors only). Fiber atoms are computed by exact digit
//!   arithmetic; set-level pullbacks use the power `T^{m_D}` that matches the
//!   translation on the first `D` digits, with certified defect `2^-D`.
//!
//! Operator and profile computations run against the cyclic stage-K
//! approximant, so every reported rational is exact for that system.

use crate::functions::{Observable, PwAffine, StepFunction};
use crate::interval_set::IntervalSet;
use crate::measure::LineMeasure;
use crate::rational::{format_rat, Rat};
use crate::system::BuiltSystem;
use crate::twoadic;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;

/// Default digit depth for two-adic set pullbacks; effective depth is
/// capped by the built stage count.
pub const DEFAULT_DIGITS: u32 = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Joining {
    /// `sum_m p_m J(n_m)`: weights non-negative, summing to one.
    OffDiagonal(Vec<(i64, Rat)>),
    /// `alpha (lambda x lambda) + (1 - alpha) sum_m p_m J(n_m)`.
    ProductMix { alpha: Rat, combo: Vec<(i64, Rat)> },
    /// Graph of the 2-adic translation by `gamma` (odd denominator).
    TwoAdic { gamma: Rat },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoiningError {
    BadWeights(String),
    BadAlpha(Rat),
    EvenDenominator(Rat),
    /// Two-adic joinings attach only to plain binary (odometer) descriptors.
    SystemMismatch(String),
}

impl fmt::Display for JoiningError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JoiningError::BadWeights(msg) => write!(f, "bad joining weights: {msg}"),
            JoiningError::BadAlpha(a) => write!(f, "alpha {} outside [0,1]", format_rat(a)),
            JoiningError::EvenDenominator(g) => {
                write!(f, "gamma {} has even denominator", format_rat(g))
            }
            JoiningError::SystemMismatch(msg) => write!(f, "joining/system mismatch: {msg}"),
        }
    }
}

impl std::error::Error for JoiningError {}

fn check_combo(terms: &[(i64, Rat)]) -> Result<(), JoiningError> {
    if terms.is_empty() {
        return Err(JoiningError::BadWeights("no terms".into()));
    }
    let mut total = Rat::zero();
    for (_, w) in terms {
        if w.is_negative() {
            return Err(JoiningError::BadWeights(format!(
                "negative weight {}",
                format_rat(w)
            )));
        }
        total += w;
    }
    if !total.is_one() {
        return Err(JoiningError::BadWeights(format!(
            "weights sum to {}, not 1",
            format_rat(&total)
        )));
    }
    Ok(())
}

impl Joining {
    pub fn off_diagonal(terms: Vec<(i64, Rat)>) -> Result<Self, JoiningError> {
        check_combo(&terms)?;
        Ok(Joining::OffDiagonal(terms))
    }

    /// The single graph joining `J(n)`.
    pub fn graph(n: i64) -> Self {
        Joining::OffDiagonal(vec![(n, Rat::one())])
    }

    pub fn product_mix(alpha: Rat, combo: Vec<(i64, Rat)>) -> Result<Self, JoiningError> {
        if alpha.is_negative() || alpha > Rat::one() {
            return Err(JoiningError::BadAlpha(alpha));
        }
        check_combo(&combo)?;
        Ok(Joining::ProductMix { alpha, combo })
    }

    /// The independent coupling `lambda x lambda`.
    pub fn product() -> Self {
        Joining::ProductMix {
            alpha: Rat::one(),
            combo: vec![(0, Rat::one())],
        }
    }

    pub fn two_adic(gamma: Rat) -> Result<Self, JoiningError> {
        if num_integer::Integer::is_even(gamma.denom()) {
            return Err(JoiningError::EvenDenominator(gamma));
        }
        Ok(Joining::TwoAdic { gamma })
    }

    /// Named presets used by the command line and the audit matrix.
    pub fn builtin(name: &str) -> Option<Joining> {
        let half = Rat::new(1.into(), 2.into());
        match name {
            "offdiag-1" => Some(Joining::graph(1)),
            "mix-0-3" => Some(Joining::OffDiagonal(vec![(0, half.clone()), (3, half)])),
            "productmix-third" => Some(Joining::ProductMix {
                alpha: Rat::new(1.into(), 3.into()),
                combo: vec![(0, half.clone()), (2, half)],
            }),
            "product" => Some(Joining::product()),
            "twoadic-neg-third" => Some(Joining::TwoAdic {
                gamma: Rat::new((-1).into(), 3.into()),
            }),
            _ => None,
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &[
            "offdiag-1",
            "mix-0-3",
            "productmix-third",
            "product",
            "twoadic-neg-third",
        ]
    }

    pub fn id(&self) -> String {
        match self {
            Joining::OffDiagonal(terms) => {
                let parts: Vec<String> = terms
                    .iter()
                    .map(|(n, w)| format!("{n}:{}", format_rat(w)))
                    .collect();
                format!("offdiag({})", parts.join(";"))
            }
            Joining::ProductMix { alpha, combo } => {
                let parts: Vec<String> = combo
                    .iter()
                    .map(|(n, w)| format!("{n}:{}", format_rat(w)))
                    .collect();
                format!("productmix({}|{})", format_rat(alpha), parts.join(";"))
            }
            Joining::TwoAdic { gamma } => format!("twoadic({})", format_rat(gamma)),
        }
    }

    /// Weight of the product (constant-density) part of the fibers.
    pub fn density_alpha(&self) -> Rat {
        match self {
            Joining::ProductMix { alpha, .. } => alpha.clone(),
            _ => Rat::zero(),
        }
    }

    pub fn validate_for(&self, sys: &BuiltSystem) -> Result<(), JoiningError> {
        if let Joining::TwoAdic { .. } = self {
            if !sys.descriptor.is_plain_binary(sys.depth()) {
                return Err(JoiningError::SystemMismatch(format!(
                    "two-adic joinings need a plain binary odometer, got `{}`",
                    sys.descriptor.name
                )));
            }
        }
        Ok(())
    }

    /// The atomic part of the fibers as cyclic-power terms `(power, weight)`.
    /// Product mixtures scale their combination by `1 - alpha`; the two-adic
    /// graph becomes its depth-`D` proxy power with weight one.
    pub fn atom_shifts(
        &self,
        sys: &BuiltSystem,
        digits: u32,
    ) -> Result<Vec<(i64, Rat)>, JoiningError> {
        self.validate_for(sys)?;
        match self {
            Joining::OffDiagonal(terms) => Ok(terms.clone()),
            Joining::ProductMix { alpha, combo } => {
                let scale = Rat::one() - alpha;
                Ok(combo.iter().map(|(n, w)| (*n, w * &scale)).collect())
            }
            Joining::TwoAdic { gamma } => Ok(vec![(proxy_power(sys, gamma, digits)?, Rat::one())]),
        }
    }
}

/// The power of the cyclic map matching the `gamma` translation on the
/// first `min(digits, K)` binary digits.
pub fn proxy_power(sys: &BuiltSystem, gamma: &Rat, digits: u32) -> Result<i64, JoiningError> {
    let depth = digits.min(sys.depth());
    let m = twoadic::two_adic_shift_mod(gamma, depth)
        .map_err(|e| JoiningError::EvenDenominator(e.0))?;
    let n = num_bigint::BigUint::from(sys.final_height());
    let reduced = m % n;
    Ok(reduced.to_i64().expect("tower height fits in i64"))
}

/// Certified sup-distance between the exact translation and its proxy.
pub fn proxy_defect(sys: &BuiltSystem, digits: u32) -> Rat {
    crate::rational::dyadic(digits.min(sys.depth()))
}

/// A disintegration fiber: a measure on `[0, 1]` plus the mass that could
/// not be resolved (zero for all cyclic computations).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiberMeasure {
    pub measure: LineMeasure,
    pub unresolved_mass: Rat,
}

impl FiberMeasure {
    pub fn total_mass(&self) -> Rat {
        self.measure.total_mass() + &self.unresolved_mass
    }
}

/// `sigma_x` at a point. Off-diagonal atoms sit at cyclic powers of `x`;
/// two-adic atoms are computed by exact digit arithmetic.
pub fn disintegrate(
    joining: &Joining,
    sys: &BuiltSystem,
    x: &Rat,
) -> Result<FiberMeasure, JoiningError> {
    joining.validate_for(sys)?;
    let measure = match joining {
        Joining::OffDiagonal(terms) => LineMeasure::from_parts(
            terms
                .iter()
                .map(|(n, w)| (sys.apply_power_cyclic(x, *n), w.clone()))
                .collect(),
            StepFunction::constant(Rat::zero()),
        ),
        Joining::ProductMix { alpha, combo } => {
            let scale = Rat::one() - alpha;
            LineMeasure::from_parts(
                combo
                    .iter()
                    .map(|(n, w)| (sys.apply_power_cyclic(x, *n), w * &scale))
                    .collect(),
                StepFunction::constant(alpha.clone()),
            )
        }
        Joining::TwoAdic { gamma } => {
            let y = twoadic::translate_point(x, gamma)
                .map_err(|e| JoiningError::EvenDenominator(e.0))?;
            LineMeasure::dirac(y)
        }
    };
    Ok(FiberMeasure {
        measure,
        unresolved_mass: Rat::zero(),
    })
}

/// `x -> sigma_x(S)` as an exact piecewise-constant function.
pub fn mass_profile(
    joining: &Joining,
    sys: &BuiltSystem,
    s: &IntervalSet,
    digits: u32,
) -> Result<PwAffine, JoiningError> {
    let shifts = joining.atom_shifts(sys, digits)?;
    let mut profile = PwAffine::constant(joining.density_alpha() * s.measure());
    for (n, w) in shifts {
        if w.is_zero() {
            continue;
        }
        let pre = sys.image_set_cyclic(s, -n);
        profile = profile.add(&StepFunction::indicator(&pre).to_affine().scale(&w));
    }
    Ok(profile)
}

/// The image of a test observable under the Markov operator of the joining:
/// `x -> integral of f against sigma_x`, with a certified defect bound for
/// the two-adic proxy (zero when `f` is dyadic-refinable at the proxy depth).
#[derive(Clone, Debug)]
pub struct OperatorImage {
    pub function: PwAffine,
    pub defect: Rat,
}

pub fn apply_operator(
    joining: &Joining,
    sys: &BuiltSystem,
    f: &Observable,
    digits: u32,
) -> Result<OperatorImage, JoiningError> {
    joining.validate_for(sys)?;
    let aff = f.to_affine();
    let shifts = joining.atom_shifts(sys, digits)?;
    let alpha = joining.density_alpha();
    let mut out = PwAffine::constant(&alpha * aff.integral());
    for (n, w) in &shifts {
        if w.is_zero() {
            continue;
        }
        out = out.add(&sys.pullback(&aff, *n).scale(w));
    }
    let defect = match joining {
        Joining::TwoAdic { .. } => operator_defect(sys, f, digits),
        _ => Rat::zero(),
    };
    Ok(OperatorImage {
        function: out,
        defect,
    })
}

/// Certified bound on the proxy error of the operator image.
fn operator_defect(sys: &BuiltSystem, f: &Observable, digits: u32) -> Rat {
    let eps = proxy_defect(sys, digits);
    match f {
        Observable::Linear(pl) => pl.lipschitz_constant() * eps,
        Observable::Step(sf) => {
            let depth = digits.min(sys.depth());
            if dyadic_refinable(sf.breaks(), depth) {
                Rat::zero()
            } else {
                let lo = sf.values().iter().min().cloned().unwrap_or_else(Rat::zero);
                let hi = sf.values().iter().max().cloned().unwrap_or_else(Rat::zero);
                let breaks = Rat::from_integer((sf.breaks().len() as i64).into());
                (hi - lo) * breaks * eps
            }
        }
    }
}

/// True when every breakpoint is a multiple of `2^-depth`.
pub fn dyadic_refinable(breaks: &[Rat], depth: u32) -> bool {
    let scale = Rat::from_integer(num_bigint::BigInt::one() << depth);
    breaks.iter().all(|b| (b * &scale).is_integer())
}

#[derive(Clone, Debug)]
pub struct MarginalRow {
    pub probe: IntervalSet,
    pub lhs: Rat,
    pub rhs: Rat,
    pub defect: Rat,
    pub pass: bool,
}

/// Checks `integral of sigma_x(B) dlambda(x) = lambda(B)` per probe,
/// exactly for combination and product fibers, with a certified defect
/// bound for the two-adic proxy on non-dyadic probes.
pub fn marginal_audit(
    joining: &Joining,
    sys: &BuiltSystem,
    probes: &[IntervalSet],
    digits: u32,
) -> Result<Vec<MarginalRow>, JoiningError> {
    let mut rows = Vec::with_capacity(probes.len());
    for probe in probes {
        let lhs = mass_profile(joining, sys, probe, digits)?.integral();
        let rhs = probe.measure();
        let defect = match joining {
            Joining::TwoAdic { .. } => {
                let depth = digits.min(sys.depth());
                let dyadic_probe = probe
                    .spans()
                    .iter()
                    .all(|(a, b)| dyadic_refinable(&[a.clone(), b.clone()], depth));
                if dyadic_probe {
                    Rat::zero()
                } else {
                    let pieces = Rat::from_integer((2 * probe.spans().len() as i64).into());
                    pieces * proxy_defect(sys, digits)
                }
            }
            _ => Rat::zero(),
        };
        let pass = (&lhs - &rhs).abs() <= defect;
        rows.push(MarginalRow {
            probe: probe.clone(),
            lhs,
            rhs,
            defect,
            pass,
        });
    }
    Ok(rows)
}
