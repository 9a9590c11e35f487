//! Koopman-combination approximation of the Markov operator of a joining.
//!
//! The pointwise coefficients at `x` in level `j` read the fiber through the
//! tower: `c_i(x)` is the fiber mass on level `a_i` with `a_i = i + j mod
//! n_k`. Freezing the coefficients at a well-chosen base point turns the
//! operator `f -> integral f d sigma_x` into a non-negative combination
//! `sum c_i f compose T^i` of Koopman powers; the audits in this module are
//! the quantitative estimates behind that approximation, each checked as an
//! exact rational inequality against the cyclic stage-K system.

use crate::functions::{Observable, PiecewiseLinear, PwAffine};
use crate::interval_set::IntervalSet;
use crate::joinings::{self, Joining, JoiningError};
use crate::metrics::PlaneTest;
use crate::rational::Rat;
use crate::system::BuiltSystem;
use crate::towers::{self, TowersError};
use num_traits::{One, Signed, Zero};
use std::fmt;

pub use crate::towers::GoodnessStats;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApproxError {
    /// The point sits outside the stage-k tower (spacer territory).
    OutsideTower {
        stage: u32,
        point: String,
    },
    /// The window constraint `-l <= i < n_k - l` of the invariance audit.
    RangeViolation {
        level: usize,
        power: i64,
    },
    /// Test function fails its precondition (not 1-Lipschitz).
    InvalidTest(String),
    Towers(TowersError),
    Joining(JoiningError),
}

impl fmt::Display for ApproxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApproxError::OutsideTower { stage, point } => {
                write!(f, "point {point} lies outside the stage-{stage} tower")
            }
            ApproxError::RangeViolation { level, power } => {
                write!(f, "power {power} outside the window at level {level}")
            }
            ApproxError::InvalidTest(msg) => write!(f, "invalid test function: {msg}"),
            ApproxError::Towers(e) => write!(f, "{e}"),
            ApproxError::Joining(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ApproxError {}

impl From<TowersError> for ApproxError {
    fn from(e: TowersError) -> Self {
        ApproxError::Towers(e)
    }
}

impl From<JoiningError> for ApproxError {
    fn from(e: JoiningError) -> Self {
        ApproxError::Joining(e)
    }
}

/// Fiber masses of the tower levels read off at a point, arranged as
/// Koopman coefficients.
#[derive(Clone, Debug)]
pub struct CoefficientProfile {
    pub stage: u32,
    pub point: Rat,
    pub level: usize,
    /// `c_i >= 0`; `sum c_i + residual + unresolved = 1`.
    pub coefficients: Vec<Rat>,
    /// Fiber mass outside the tower, `sigma_x(R_k complement)`.
    pub residual: Rat,
    /// Zero for the cyclic computations.
    pub unresolved: Rat,
}

impl CoefficientProfile {
    pub fn coefficient_sum(&self) -> Rat {
        self.coefficients.iter().sum()
    }
}

/// Fiber atoms with the product-part weight, shared by the profile readers.
fn fiber_parts(
    joining: &Joining,
    sys: &BuiltSystem,
    x: &Rat,
) -> Result<(Vec<(Rat, Rat)>, Rat), JoiningError> {
    let fiber = joinings::disintegrate(joining, sys, x)?;
    Ok((fiber.measure.atoms().to_vec(), joining.density_alpha()))
}

pub fn coefficients_at(
    joining: &Joining,
    sys: &BuiltSystem,
    k: u32,
    x: &Rat,
) -> Result<CoefficientProfile, ApproxError> {
    let stage = sys.stage(k);
    let level = stage
        .level_index(x)
        .ok_or_else(|| ApproxError::OutsideTower {
            stage: k,
            point: crate::rational::format_rat(x),
        })?;
    let n_k = stage.height;
    let (atoms, alpha) = fiber_parts(joining, sys, x)?;
    let mut coefficients = vec![Rat::zero(); n_k];
    let mut residual = Rat::zero();
    for (pos, w) in atoms {
        match stage.level_index(&pos) {
            Some(a) => {
                let i = (a + n_k - level) % n_k;
                coefficients[i] += w;
            }
            None => residual += w,
        }
    }
    if !alpha.is_zero() {
        let per_level = &alpha * stage.level_width();
        for c in coefficients.iter_mut() {
            *c += &per_level;
        }
        residual += &alpha * towers::tower_complement_mass(sys, k);
    }
    Ok(CoefficientProfile {
        stage: k,
        point: x.clone(),
        level,
        coefficients,
        residual,
        unresolved: Rat::zero(),
    })
}

/// Precomputed per-stage audit state: the tower triple and the fiber
/// statistic profiles, shared across many sample points.
pub struct StageAuditor<'a> {
    joining: &'a Joining,
    sys: &'a BuiltSystem,
    k: u32,
    triple: towers::TowerTriple,
    stats: towers::FiberStatistics,
}

impl<'a> StageAuditor<'a> {
    pub fn new(
        joining: &'a Joining,
        sys: &'a BuiltSystem,
        k: u32,
        digits: u32,
    ) -> Result<Self, ApproxError> {
        let triple = towers::tower_triple(sys, k)?;
        let stats = towers::fiber_statistics(joining, sys, k, &triple, digits)?;
        Ok(StageAuditor {
            joining,
            sys,
            k,
            triple,
            stats,
        })
    }

    pub fn triple(&self) -> &towers::TowerTriple {
        &self.triple
    }

    pub fn escape_rows(&self) -> Vec<EscapeRow> {
        let stage = self.sys.stage(self.k);
        let n_k = stage.height;
        let rhs = Rat::one() - self.triple.rk_hat.measure();
        let scale = Rat::from_integer((n_k as i64).into());
        (0..n_k)
            .map(|j| {
                let lhs = &scale
                    * self
                        .stats
                        .residual_profile
                        .integral_over(&stage.level_set(j));
                let pass = lhs <= rhs;
                EscapeRow {
                    level: j,
                    lhs,
                    rhs: rhs.clone(),
                    pass,
                }
            })
            .collect()
    }

    pub fn invariance(&self, x: &Rat, i: i64) -> Result<(Rat, Rat), ApproxError> {
        invariance_defect_with(self.joining, self.sys, self.k, x, i, &self.triple)
    }

    /// Pointwise operator bound using the cached statistics; `None` when the
    /// point is outside the hat tower (the bound's hypothesis).
    pub fn pointwise(
        &self,
        x: &Rat,
        f: &PiecewiseLinear,
        eps: &Rat,
    ) -> Result<Option<(Rat, Rat)>, ApproxError> {
        if f.lipschitz_constant() > Rat::one() {
            return Err(ApproxError::InvalidTest(
                "pointwise bound needs a 1-Lipschitz test".into(),
            ));
        }
        if !self.triple.rk_hat.contains(x) {
            return Ok(None);
        }
        let profile = coefficients_at(self.joining, self.sys, self.k, x)?;
        let at = towers::statistics_at(&self.stats, x);
        let fiber = joinings::disintegrate(self.joining, self.sys, x)?;
        let obs = Observable::Linear(f.clone());
        let operator_value = fiber.measure.integrate(&obs);
        let mut combo_value = Rat::zero();
        for (i, c) in profile.coefficients.iter().enumerate() {
            if !c.is_zero() {
                combo_value += c * f.eval(&self.sys.apply_power_cyclic(x, i as i64));
            }
        }
        let lhs = (operator_value - combo_value).abs();
        let sup = f.sup_norm();
        let rhs = eps + &sup * (&at.residual + &at.g_value + &at.h_value);
        Ok(Some((lhs, rhs)))
    }
}

/// Both sides of the coefficient-invariance estimate: moving the base point
/// by `T^i` inside the window changes the coefficient vector by at most
/// twice the fiber mass escaping the tilde tower.
pub fn invariance_defect(
    joining: &Joining,
    sys: &BuiltSystem,
    k: u32,
    x: &Rat,
    i: i64,
) -> Result<(Rat, Rat), ApproxError> {
    let triple = towers::tower_triple(sys, k)?;
    invariance_defect_with(joining, sys, k, x, i, &triple)
}

pub(crate) fn invariance_defect_with(
    joining: &Joining,
    sys: &BuiltSystem,
    k: u32,
    x: &Rat,
    i: i64,
    triple: &towers::TowerTriple,
) -> Result<(Rat, Rat), ApproxError> {
    let profile = coefficients_at(joining, sys, k, x)?;
    let level = profile.level as i64;
    let n_k = sys.stage(k).height as i64;
    if i < -level || i >= n_k - level {
        return Err(ApproxError::RangeViolation {
            level: profile.level,
            power: i,
        });
    }
    let shifted = coefficients_at(joining, sys, k, &sys.apply_power_cyclic(x, i))?;
    let mut lhs = Rat::zero();
    for (a, b) in profile.coefficients.iter().zip(shifted.coefficients.iter()) {
        lhs += (a - b).abs();
    }
    let tilde_c = triple.rk_tilde.complement_in_unit();
    let (atoms, alpha) = fiber_parts(joining, sys, x)?;
    let mut escape = &alpha * tilde_c.measure();
    for (pos, w) in atoms {
        if tilde_c.contains(&pos) {
            escape += w;
        }
    }
    let rhs = escape * Rat::from_integer(2.into());
    Ok((lhs, rhs))
}

/// Per-level check of the escape-integral estimate:
/// `n_k * integral over T^j A_k of sigma_x(R_k^c) <= lambda(R_k-hat ^c)`.
#[derive(Clone, Debug)]
pub struct EscapeRow {
    pub level: usize,
    pub lhs: Rat,
    pub rhs: Rat,
    pub pass: bool,
}

pub fn fiber_escape_check(
    joining: &Joining,
    sys: &BuiltSystem,
    k: u32,
    digits: u32,
) -> Result<Vec<EscapeRow>, ApproxError> {
    Ok(StageAuditor::new(joining, sys, k, digits)?.escape_rows())
}

/// Both sides of the pointwise operator bound at `x` for a 1-Lipschitz test:
/// `|A f(x) - sum c_i(x) f(T^i x)| <= eps + sup|f| (residual + g + h)`.
pub fn pointwise_bound_check(
    joining: &Joining,
    sys: &BuiltSystem,
    k: u32,
    x: &Rat,
    f: &PiecewiseLinear,
    eps: &Rat,
    digits: u32,
) -> Result<(Rat, Rat), ApproxError> {
    let auditor = StageAuditor::new(joining, sys, k, digits)?;
    auditor
        .pointwise(x, f, eps)?
        .ok_or_else(|| ApproxError::OutsideTower {
            stage: k,
            point: crate::rational::format_rat(x),
        })
}

/// The selected base point and its goodness score: the fraction of window
/// positions whose image lands in the diagnostic sets `G` and `V` of the
/// matching level.
#[derive(Clone, Debug)]
pub struct BasePointSelection {
    pub stage: u32,
    pub point: Rat,
    pub level: usize,
    pub score: Rat,
    /// Whether the score clears `1 - 13 sqrt(eps)` (compared exactly via
    /// `(1 - score)^2 < 169 eps`).
    pub threshold_met: bool,
}

/// Non-negative Koopman coefficients frozen at a base point.
#[derive(Clone, Debug)]
pub struct KoopmanCombination {
    pub stage: u32,
    pub coefficients: Vec<Rat>,
    pub base_point: Rat,
}

impl KoopmanCombination {
    pub fn coefficient_sum(&self) -> Rat {
        self.coefficients.iter().sum()
    }

    /// `sum c_i f compose T^i` as an exact piecewise function. When `f` is
    /// affine on every final level (breaks on tile boundaries), the dense
    /// part of the coefficient vector is a sliding window over level
    /// indices and the rest a sparse correction; otherwise a general
    /// per-tile accumulation runs.
    pub fn apply(&self, sys: &BuiltSystem, f: &Observable) -> PwAffine {
        let aff = f.to_affine();
        let stage = sys.final_stage();
        let n = stage.height;
        let n_k = self.coefficients.len();
        let fb = aff.breaks();

        let tile_aligned = fb.iter().all(|b| {
            b.is_zero()
                || stage
                    .level_index(b)
                    .is_some_and(|lvl| stage.levels[lvl].lo == *b)
        });
        if tile_aligned {
            // Per level q: f on that tile is A[q] + B[q] (x - lo_q).
            let mut a_of = vec![Rat::zero(); n];
            let mut b_of = vec![Rat::zero(); n];
            for (lo, _hi, level) in stage.spatial_tiles() {
                let pi = fb.partition_point(|b| b <= lo) - 1;
                let (a, b) = &aff.pieces()[pi];
                a_of[*level] = a + b * lo;
                b_of[*level] = b.clone();
            }
            // Uniform + sparse decomposition of the coefficients.
            let base = self
                .coefficients
                .iter()
                .min()
                .cloned()
                .unwrap_or_else(Rat::zero);
            let sparse: Vec<(usize, Rat)> = self
                .coefficients
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != base)
                .map(|(i, c)| (i, c - &base))
                .collect();
            // Doubled prefix sums for the uniform window.
            let mut pre_a = Vec::with_capacity(2 * n + 1);
            let mut pre_b = Vec::with_capacity(2 * n + 1);
            pre_a.push(Rat::zero());
            pre_b.push(Rat::zero());
            if !base.is_zero() {
                for qi in 0..2 * n {
                    let q = qi % n;
                    pre_a.push(&pre_a[qi] + &a_of[q]);
                    pre_b.push(&pre_b[qi] + &b_of[q]);
                }
            }
            let mut breaks = Vec::with_capacity(n);
            let mut pieces = Vec::with_capacity(n);
            for (lo, _hi, p) in stage.spatial_tiles() {
                let p = *p;
                let mut sum_a;
                let mut sum_b;
                if base.is_zero() {
                    sum_a = Rat::zero();
                    sum_b = Rat::zero();
                } else {
                    sum_a = &base * (&pre_a[p + n_k] - &pre_a[p]);
                    sum_b = &base * (&pre_b[p + n_k] - &pre_b[p]);
                }
                for (i, c) in &sparse {
                    let q = (p + i) % n;
                    sum_a += c * &a_of[q];
                    sum_b += c * &b_of[q];
                }
                // Source coordinates: value(x) = sum_a + sum_b (x - lo_p).
                breaks.push(lo.clone());
                pieces.push((&sum_a - &sum_b * lo, sum_b));
            }
            return PwAffine::from_pieces(breaks, pieces);
        }

        // General path: split each source tile at translated breakpoints.
        let nonzero: Vec<(usize, &Rat)> = self
            .coefficients
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .collect();
        let mut breaks = Vec::with_capacity(n);
        let mut pieces = Vec::with_capacity(n);
        for (lo, hi, p) in stage.spatial_tiles() {
            let mut cuts: Vec<Rat> = Vec::new();
            for (i, _) in &nonzero {
                let t = (p + i) % n;
                let tspan = &stage.levels[t];
                let delta = &tspan.lo - lo;
                let from = fb.partition_point(|b| b <= &tspan.lo);
                for b in &fb[from..] {
                    if *b >= tspan.hi {
                        break;
                    }
                    cuts.push(b - &delta);
                }
            }
            cuts.sort();
            cuts.dedup();
            let mut sub_lo = lo.clone();
            for idx in 0..=cuts.len() {
                let sub_hi = cuts.get(idx).unwrap_or(hi);
                if &sub_lo >= sub_hi {
                    continue;
                }
                let mut acc_a = Rat::zero();
                let mut acc_b = Rat::zero();
                for (i, c) in &nonzero {
                    let t = (p + i) % n;
                    let tspan = &stage.levels[t];
                    let delta = &tspan.lo - lo;
                    let probe = &sub_lo + &delta;
                    let pi = fb.partition_point(|b| b <= &probe) - 1;
                    let (a, b) = &aff.pieces()[pi];
                    acc_a += *c * (a + b * &delta);
                    acc_b += *c * b;
                }
                breaks.push(sub_lo.clone());
                pieces.push((acc_a, acc_b));
                sub_lo = sub_hi.clone();
            }
        }
        PwAffine::from_pieces(breaks, pieces)
    }
}

pub fn select_base_point(
    joining: &Joining,
    sys: &BuiltSystem,
    k: u32,
    eps: &Rat,
    grid: usize,
    digits: u32,
) -> Result<BasePointSelection, ApproxError> {
    let diag = towers::good_levels(joining, sys, k, eps, grid, digits)?;
    let n_k = sys.stage(k).height;
    let scale = Rat::from_integer((n_k as i64).into());
    let fine = sys.final_stage();
    let n_big = fine.height;
    let word = towers::stage_word(sys, k);
    let gv: Vec<IntervalSet> = diag.levels.iter().map(|r| r.gj.intersect(&r.vj)).collect();
    // Orbit points of a candidate share its within-tile offset, and the
    // grid offsets repeat per level, so membership of every orbit point in
    // the diagnostic set of its own level reduces to a (tile, grid index)
    // table with prefix sums over the doubled word.
    let sample = towers::witness_grid(sys, k, 0, grid);
    let mut prefix: Vec<Vec<u32>> = Vec::with_capacity(grid);
    for y0 in &sample {
        let q0 = fine.level_index(y0).expect("grid points sit inside tiles");
        let off = y0 - &fine.levels[q0].lo;
        let mut pre = Vec::with_capacity(2 * n_big + 1);
        pre.push(0u32);
        for qi in 0..2 * n_big {
            let q = qi % n_big;
            let hit = match word.level_of[q] {
                Some(lvl) => {
                    let point = &fine.levels[q].lo + &off;
                    gv[lvl].contains(&point)
                }
                None => false,
            };
            pre.push(pre[qi] + hit as u32);
        }
        prefix.push(pre);
    }
    // Window hits: positions where the word still follows the candidate's
    // arithmetic progression (so the landing level is the expected one)
    // and the orbit point lies in that level's diagnostic set. Walks whole
    // runs at a time, counting matched stretches via the prefix sums.
    let window_hits = |start: usize, t: usize| -> u32 {
        let mut hits = 0u32;
        let mut s = 0usize;
        while s < n_k {
            let q = (start + s) % n_big;
            match word.level_of[q] {
                None => s += 1,
                Some(actual) => {
                    let run = word.run(q).min(n_k - s);
                    if actual == s {
                        hits += prefix[t][start + s + run] - prefix[t][start + s];
                    }
                    s += run;
                }
            }
        }
        hits
    };
    // Deterministic tie-breaking: higher score, then V-membership of the
    // candidate, then lower level, then lower grid index.
    let mut best: Option<(Rat, bool, usize, usize, Rat)> = None;
    for level in 0..n_k {
        for (t, y) in towers::witness_grid(sys, k, level, grid)
            .into_iter()
            .enumerate()
        {
            let in_v = diag.levels[level].vj.contains(&y);
            let q0 = fine.level_index(&y).expect("inside a tile");
            // Window positions q0 - level .. q0 - level + n_k - 1, cyclic.
            let start = (q0 + n_big - level) % n_big;
            let hits = window_hits(start, t);
            let score = Rat::from_integer((hits as i64).into()) / &scale;
            let key = (
                score.clone(),
                in_v,
                std::cmp::Reverse(level),
                std::cmp::Reverse(t),
            );
            let better = match &best {
                Some((bs, bv, bl, bt, _)) => {
                    key > (
                        bs.clone(),
                        *bv,
                        std::cmp::Reverse(*bl),
                        std::cmp::Reverse(*bt),
                    )
                }
                None => true,
            };
            if better {
                best = Some((score, in_v, level, t, y));
            }
        }
    }
    let (score, _, level, _, point) = best.expect("witness grid is non-empty");
    let gap = Rat::one() - &score;
    let threshold_met = &gap * &gap < Rat::from_integer(169.into()) * eps;
    Ok(BasePointSelection {
        stage: k,
        point,
        level,
        score,
        threshold_met,
    })
}

pub fn build_combination(
    joining: &Joining,
    sys: &BuiltSystem,
    k: u32,
    eps: &Rat,
    grid: usize,
    digits: u32,
) -> Result<(BasePointSelection, KoopmanCombination), ApproxError> {
    let selection = select_base_point(joining, sys, k, eps, grid, digits)?;
    let profile = coefficients_at(joining, sys, k, &selection.point)?;
    Ok((
        selection,
        KoopmanCombination {
            stage: k,
            coefficients: profile.coefficients,
            base_point: profile.point,
        },
    ))
}

/// Squared L2 distance between the operator image and the Koopman
/// combination applied to `f`; exact for the cyclic system.
pub fn sot_error(
    combination: &KoopmanCombination,
    joining: &Joining,
    sys: &BuiltSystem,
    f: &Observable,
    digits: u32,
) -> Result<Rat, ApproxError> {
    let operator = joinings::apply_operator(joining, sys, f, digits)?;
    let combo = combination.apply(sys, f);
    Ok(operator.function.sub(&combo).integral_of_square())
}

/// `integral of F(x, T^n x) dlambda(x)` for a piecewise-bilinear plane test:
/// on each final level the graph is an affine segment, so the integrand is
/// piecewise quadratic and integrates exactly.
pub fn graph_integral(sys: &BuiltSystem, test: &PlaneTest, power: i64) -> Rat {
    let stage = sys.final_stage();
    let n = stage.height as i64;
    let shift = power.rem_euclid(n);
    let mut total = Rat::zero();
    for (lo, hi, level) in stage.spatial_tiles() {
        let target = ((*level as i64 + shift) % n) as usize;
        let delta = &stage.levels[target].lo - lo;
        total += segment_integral(test, lo, hi, &delta);
    }
    total
}

/// Integral of `F(x, x + delta)` over `[lo, hi)`, split at the cell grid.
fn segment_integral(test: &PlaneTest, lo: &Rat, hi: &Rat, delta: &Rat) -> Rat {
    let mut cuts: Vec<Rat> = vec![lo.clone(), hi.clone()];
    for xb in test.x_nodes() {
        if xb > lo && xb < hi {
            cuts.push(xb.clone());
        }
    }
    for yb in test.y_nodes() {
        let x = yb - delta;
        if &x > lo && &x < hi {
            cuts.push(x);
        }
    }
    cuts.sort();
    cuts.dedup();
    let two = Rat::from_integer(2.into());
    let three = Rat::from_integer(3.into());
    let mut total = Rat::zero();
    for w in cuts.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let mid = (a + b) / &two;
        let y_mid = &mid + delta;
        let i = cell_index(test.x_nodes(), &mid);
        let j = cell_index(test.y_nodes(), &y_mid);
        let (c00, c10, c01, c11) = test.cell_coeffs(i, j);
        // F(x, x + delta) = (c00 + c01 d) + (c10 + c01 + c11 d) x + c11 x^2.
        let q0 = &c00 + &c01 * delta;
        let q1 = &c10 + &c01 + &c11 * delta;
        let q2 = c11;
        let d1 = b - a;
        let d2 = b * b - a * a;
        let d3 = b * b * b - a * a * a;
        total += q0 * d1 + q1 * d2 / &two + q2 * d3 / &three;
    }
    total
}

fn cell_index(nodes: &[Rat], x: &Rat) -> usize {
    let i = nodes.partition_point(|n| n <= x);
    i.clamp(1, nodes.len() - 1) - 1
}

/// `integral F d sigma` for the plane joining itself, exact for combination
/// and product parts, proxy-exact (certified) for the two-adic graph.
pub fn plane_integral(
    joining: &Joining,
    sys: &BuiltSystem,
    test: &PlaneTest,
    digits: u32,
) -> Result<Rat, ApproxError> {
    let alpha = joining.density_alpha();
    let mut total = &alpha * test.double_integral();
    for (power, w) in joining.atom_shifts(sys, digits)? {
        if !w.is_zero() {
            total += w * graph_integral(sys, test, power);
        }
    }
    Ok(total)
}

/// Largest discrepancy over the test family between the joining's plane
/// integrals and those of the reconstructed combination of graph joinings.
pub fn weak_star_error(
    combination: &KoopmanCombination,
    joining: &Joining,
    sys: &BuiltSystem,
    tests: &[PlaneTest],
    digits: u32,
) -> Result<Rat, ApproxError> {
    let mut worst = Rat::zero();
    for test in tests {
        let lhs = plane_integral(joining, sys, test, digits)?;
        let mut rhs = Rat::zero();
        for (i, c) in combination.coefficients.iter().enumerate() {
            if !c.is_zero() {
                rhs += c * graph_integral(sys, test, i as i64);
            }
        }
        let gap = (lhs - rhs).abs();
        if gap > worst {
            worst = gap;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::StepFunction;
    use crate::interval_set::IntervalSet;
    use crate::joinings::DEFAULT_DIGITS;
    use crate::metrics;
    use crate::rational::{dyadic, rat, rint};
    use crate::system::{build, ConstructionDescriptor};

    fn odometer(depth: u32) -> BuiltSystem {
        build(&ConstructionDescriptor::odometer(depth), depth, 4096).unwrap()
    }

    #[test]
    fn identity_joining_profile() {
        let sys = odometer(6);
        let j = Joining::graph(0);
        let x = rat(1, 3);
        let p = coefficients_at(&j, &sys, 3, &x).unwrap();
        assert_eq!(p.coefficients[0], rint(1));
        assert!(p.coefficients[1..].iter().all(|c| c.is_zero()));
        assert_eq!(p.residual, rint(0));
    }

    #[test]
    fn product_profile_is_flat() {
        let sys = odometer(6);
        let p = coefficients_at(&Joining::product(), &sys, 3, &rat(1, 5)).unwrap();
        for c in &p.coefficients {
            assert_eq!(*c, dyadic(3));
        }
        assert_eq!(p.residual, rint(0));
        assert_eq!(p.coefficient_sum() + &p.residual, rint(1));
    }

    #[test]
    fn graph_three_profile_on_base() {
        // J(3) at a base point of stage 3 (n_k = 8): all mass on c_3.
        let sys = odometer(6);
        let j = Joining::graph(3);
        let x = rat(1, 64); // inside A_3 = [0, 1/8)
        let p = coefficients_at(&j, &sys, 3, &x).unwrap();
        assert_eq!(p.level, 0);
        assert_eq!(p.coefficients[3], rint(1));
        assert_eq!(p.coefficient_sum(), rint(1));
    }

    #[test]
    fn profile_outside_tower_errors() {
        let sys = build(&ConstructionDescriptor::rigid_spacered(4), 4, 4096).unwrap();
        // Points beyond the stage-1 tower mass live in spacer territory.
        let outside = rat(99, 100);
        assert!(matches!(
            coefficients_at(&Joining::graph(0), &sys, 1, &outside),
            Err(ApproxError::OutsideTower { .. })
        ));
    }

    #[test]
    fn invariance_zero_for_identity_power() {
        let sys = odometer(6);
        let j = Joining::builtin("mix-0-3").unwrap();
        let (lhs, rhs) = invariance_defect(&j, &sys, 3, &rat(1, 3), 0).unwrap();
        assert_eq!(lhs, rint(0));
        assert_eq!(rhs, rint(0)); // odometer tilde tower is full
    }

    #[test]
    fn invariance_window_enforced() {
        let sys = odometer(6);
        let j = Joining::graph(1);
        let x = rat(1, 64); // level 0 at stage 3
        assert!(matches!(
            invariance_defect(&j, &sys, 3, &x, -1),
            Err(ApproxError::RangeViolation { .. })
        ));
        assert!(invariance_defect(&j, &sys, 3, &x, 7).is_ok());
        assert!(matches!(
            invariance_defect(&j, &sys, 3, &x, 8),
            Err(ApproxError::RangeViolation { .. })
        ));
    }

    #[test]
    fn escape_rows_zero_on_odometer() {
        let sys = odometer(6);
        for name in ["offdiag-1", "mix-0-3", "productmix-third", "product"] {
            let j = Joining::builtin(name).unwrap();
            for row in fiber_escape_check(&j, &sys, 3, DEFAULT_DIGITS).unwrap() {
                assert_eq!(row.lhs, rint(0), "{name}");
                assert_eq!(row.rhs, rint(0), "{name}");
                assert!(row.pass);
            }
        }
    }

    #[test]
    fn escape_inequality_on_spacered() {
        let sys = build(&ConstructionDescriptor::rigid_spacered(5), 5, 4096).unwrap();
        for name in ["offdiag-1", "mix-0-3", "productmix-third", "product"] {
            let j = Joining::builtin(name).unwrap();
            for k in 1..=2u32 {
                for row in fiber_escape_check(&j, &sys, k, DEFAULT_DIGITS).unwrap() {
                    assert!(row.pass, "{name} k={k} level {}", row.level);
                }
            }
        }
    }

    #[test]
    fn pointwise_bound_identity_joining() {
        let sys = odometer(6);
        let f = PiecewiseLinear::identity();
        let (lhs, _rhs) = pointwise_bound_check(
            &Joining::graph(0),
            &sys,
            3,
            &rat(1, 3),
            &f,
            &dyadic(3),
            DEFAULT_DIGITS,
        )
        .unwrap();
        assert_eq!(lhs, rint(0));
    }

    #[test]
    fn pointwise_bound_product_joining() {
        // Flat coefficients average f over one point per level; the gap is
        // within-level variation, below the level width.
        let sys = odometer(6);
        let k = 3u32;
        let f = PiecewiseLinear::identity();
        for x in [rat(1, 3), rat(1, 7), rat(9, 16)] {
            let (lhs, rhs) = pointwise_bound_check(
                &Joining::product(),
                &sys,
                k,
                &x,
                &f,
                &dyadic(k),
                DEFAULT_DIGITS,
            )
            .unwrap();
            assert!(lhs <= dyadic(k));
            assert!(lhs <= rhs);
        }
    }

    #[test]
    fn product_selection_scores_one() {
        let sys = odometer(6);
        let sel =
            select_base_point(&Joining::product(), &sys, 2, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
        assert_eq!(sel.score, rint(1));
        assert_eq!(sel.level, 0);
        assert!(sel.threshold_met);
    }

    #[test]
    fn reconstruction_of_off_diagonal_mixture() {
        // sigma = 1/2 J(0) + 1/2 J(3) on the odometer: exact coefficients
        // and zero operator error on tower-refinable steps.
        let sys = odometer(7);
        let j = Joining::builtin("mix-0-3").unwrap();
        for k in 2..=4u32 {
            let (_, combo) = build_combination(&j, &sys, k, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
            assert_eq!(combo.coefficients[0], rat(1, 2), "k={k}");
            assert_eq!(combo.coefficients[3], rat(1, 2), "k={k}");
            assert_eq!(combo.coefficient_sum(), rint(1));
            let f = Observable::Step(StepFunction::indicator(&IntervalSet::interval(
                rint(0),
                dyadic(k),
            )));
            let err = sot_error(&combo, &j, &sys, &f, DEFAULT_DIGITS).unwrap();
            assert_eq!(err, rint(0), "k={k}");
        }
    }

    #[test]
    fn reconstruction_handles_negative_shifts() {
        // sigma = 1/3 J(-1) + 2/3 J(2): coefficient mass lands on the
        // residues of the shifts, and the operator error vanishes on
        // tower-refinable steps.
        let sys = odometer(7);
        let j = Joining::off_diagonal(vec![(-1, rat(1, 3)), (2, rat(2, 3))]).unwrap();
        for k in 2..=4u32 {
            let n_k = sys.stage(k).height;
            let (_, combo) = build_combination(&j, &sys, k, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
            assert_eq!(combo.coefficients[n_k - 1], rat(1, 3), "k={k}");
            assert_eq!(combo.coefficients[2], rat(2, 3), "k={k}");
            let f = Observable::Step(StepFunction::indicator(&sys.stage(k).level_set(1)));
            assert_eq!(
                sot_error(&combo, &j, &sys, &f, DEFAULT_DIGITS).unwrap(),
                rint(0),
                "k={k}"
            );
        }
    }

    #[test]
    fn graph_reconstruction_is_exact() {
        let sys = odometer(6);
        let j = Joining::graph(1);
        let (_, combo) = build_combination(&j, &sys, 3, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
        assert_eq!(combo.coefficients[1], rint(1));
        for f in [
            Observable::Linear(PiecewiseLinear::identity()),
            Observable::Step(StepFunction::indicator(&IntervalSet::interval(
                rat(1, 8),
                rat(3, 8),
            ))),
        ] {
            assert_eq!(
                sot_error(&combo, &j, &sys, &f, DEFAULT_DIGITS).unwrap(),
                rint(0)
            );
        }
    }

    #[test]
    fn product_sot_error_is_level_variation() {
        let sys = odometer(8);
        let f = Observable::Linear(PiecewiseLinear::identity());
        for k in 1..=5u32 {
            let (_, combo) =
                build_combination(&Joining::product(), &sys, k, &rat(1, 4), 4, DEFAULT_DIGITS)
                    .unwrap();
            let err = sot_error(&combo, &Joining::product(), &sys, &f, DEFAULT_DIGITS).unwrap();
            assert!(err <= dyadic(2 * k), "k={k}");
            assert!(err.is_positive(), "k={k}");
        }
    }

    #[test]
    fn weak_star_zero_for_self_reconstruction() {
        let sys = odometer(6);
        let j = Joining::graph(2);
        let (_, combo) = build_combination(&j, &sys, 3, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
        let tests = metrics::plane_test_family(2);
        let err = weak_star_error(&combo, &j, &sys, &tests, DEFAULT_DIGITS).unwrap();
        assert_eq!(err, rint(0));
    }

    #[test]
    fn two_adic_coefficient_lands_on_shift_mod() {
        let sys = odometer(8);
        let g = rat(-1, 3);
        let j = Joining::two_adic(g.clone()).unwrap();
        for k in 3..=5u32 {
            let (_, combo) = build_combination(&j, &sys, k, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
            let m = crate::twoadic::two_adic_shift_mod(&g, k).unwrap();
            let m: usize = m.to_string().parse().unwrap();
            assert_eq!(combo.coefficients[m], rint(1), "k={k}");
            assert_eq!(combo.coefficient_sum(), rint(1));
        }
    }

    #[test]
    fn operator_contracts() {
        // A 1 = 1, integral preserved, L2 non-expansive, on a deterministic
        // step suite across the shipped joinings.
        let sys = odometer(6);
        let steps: Vec<Observable> = (1..=6)
            .map(|d| {
                Observable::Step(StepFunction::indicator(&IntervalSet::interval(
                    rat(1, d + 1),
                    rat(1, d),
                )))
            })
            .collect();
        for name in Joining::builtin_names() {
            let j = Joining::builtin(name).unwrap();
            let one = Observable::Step(StepFunction::constant(rint(1)));
            let img = joinings::apply_operator(&j, &sys, &one, DEFAULT_DIGITS).unwrap();
            assert_eq!(img.function, PwAffine::constant(rint(1)), "{name}");
            for f in &steps {
                let img = joinings::apply_operator(&j, &sys, f, DEFAULT_DIGITS).unwrap();
                assert_eq!(img.function.integral(), f.to_affine().integral(), "{name}");
                assert!(
                    img.function.integral_of_square() <= f.to_affine().integral_of_square(),
                    "{name}"
                );
            }
        }
    }
}
