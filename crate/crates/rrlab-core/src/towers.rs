//! Tower statistics: return sets, rigidity conditions, level diagnostics.
//!
//! For the stage-k tower `R_k = union of T^i A_k`, two refinements are
//! computed: `R_k^` (hat), the tower over the base points that return after
//! `n_k` steps forward and backward, and `R_k~` (tilde), the tower over the
//! points returning after `n_k` and `2 n_k` steps both ways. All sets are
//! computed exactly against the cyclic stage-K approximant, so the reported
//! inclusion chain and masses are exact rationals with nothing unresolved.
//!
//! Level diagnostics quantify how constant the fiber map `x -> sigma_x` is
//! on each level in Kantorovich-Rubinstein distance: fibers of the shipped
//! joinings restricted to a final-stage tile are a fixed atom pattern rigidly
//! translated with `x`, so the KR distance is piecewise affine in the
//! translation and every sublevel set is an exact interval set.

use crate::functions::{affine_strictly_below, PwAffine};
use crate::interval_set::IntervalSet;
use crate::joinings::{self, Joining, JoiningError};
use crate::metrics;
use crate::rational::Rat;
use crate::system::BuiltSystem;
use num_traits::{One, Zero};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TowersError {
    StageOutOfRange {
        stage: u32,
        depth: u32,
    },
    /// The tilde tower needs `5 n_k <= n_K`; build deeper or lower k.
    DepthExceeded {
        stage: u32,
        needed: usize,
        available: usize,
    },
    Joining(JoiningError),
}

impl fmt::Display for TowersError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TowersError::StageOutOfRange { stage, depth } => {
                write!(f, "stage {stage} exceeds built depth {depth}")
            }
            TowersError::DepthExceeded {
                stage,
                needed,
                available,
            } => write!(
                f,
                "stage {stage} diagnostics need tower height {needed}, built {available}"
            ),
            TowersError::Joining(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TowersError {}

impl From<JoiningError> for TowersError {
    fn from(e: JoiningError) -> Self {
        TowersError::Joining(e)
    }
}

/// The three nested towers at stage k, exact for the cyclic approximant.
#[derive(Clone, Debug)]
pub struct TowerTriple {
    pub stage: u32,
    pub rk: IntervalSet,
    pub rk_hat: IntervalSet,
    pub rk_tilde: IntervalSet,
    /// Always zero: the cyclic map is total, so no mass is dropped.
    pub unresolved_mass: Rat,
}

fn ensure_stage(sys: &BuiltSystem, k: u32) -> Result<(), TowersError> {
    if k > sys.depth() {
        Err(TowersError::StageOutOfRange {
            stage: k,
            depth: sys.depth(),
        })
    } else {
        Ok(())
    }
}

fn ensure_window(sys: &BuiltSystem, k: u32) -> Result<(), TowersError> {
    ensure_stage(sys, k)?;
    let needed = 5 * sys.stage(k).height;
    let available = sys.final_height();
    if needed > available {
        Err(TowersError::DepthExceeded {
            stage: k,
            needed,
            available,
        })
    } else {
        Ok(())
    }
}

/// Union of the first `n` cyclic images of `core`.
fn tower_over(sys: &BuiltSystem, core: &IntervalSet, n: usize) -> IntervalSet {
    let mut spans = Vec::new();
    for i in 0..n {
        let img = sys.image_set_cyclic(core, i as i64);
        spans.extend(img.spans().iter().cloned());
    }
    IntervalSet::from_spans(spans)
}

pub fn tower_triple(sys: &BuiltSystem, k: u32) -> Result<TowerTriple, TowersError> {
    ensure_window(sys, k)?;
    let stage = sys.stage(k);
    let n = stage.height;
    let base = stage.base.to_set();
    let rk = stage.tower_set();

    let shift = n as i64;
    let mut hat_core = base.clone();
    for i in [-shift, shift] {
        hat_core = hat_core.intersect(&sys.image_set_cyclic(&base, i));
    }
    let rk_hat = tower_over(sys, &hat_core, n);

    let mut tilde_core = base.clone();
    for i in [-2 * shift, -shift, shift, 2 * shift] {
        tilde_core = tilde_core.intersect(&sys.image_set_cyclic(&base, i));
    }
    let rk_tilde = tower_over(sys, &tilde_core, n);

    Ok(TowerTriple {
        stage: k,
        rk,
        rk_hat,
        rk_tilde,
        unresolved_mass: Rat::zero(),
    })
}

/// Rigidity-condition report for one stage.
#[derive(Clone, Debug)]
pub struct ConditionReport {
    pub stage: u32,
    /// `n_k`.
    pub height: usize,
    /// `lambda(A_k)`.
    pub level_width: Rat,
    /// `lambda(R_k)`: mass of the stage-k tower in the normalized space.
    pub cond1_mass: Rat,
    /// Exhaustive pairwise disjointness of the levels.
    pub cond2_ok: bool,
    /// `lambda(T^{n_k} A_k intersect A_k) / lambda(A_k)`.
    pub cond3_ratio: Rat,
    /// Zero identically: the level interval itself is the metric ball.
    pub cond4_defect: Rat,
    /// The ball diameter achieved, `lambda(A_k)`.
    pub max_level_diameter: Rat,
    /// Tower-triple masses `(R_k, R_k^, R_k~)` when the depth allows them.
    pub triple_masses: Option<(Rat, Rat, Rat)>,
}

pub fn verify_conditions(
    sys: &BuiltSystem,
    stages: impl IntoIterator<Item = u32>,
) -> Result<Vec<ConditionReport>, TowersError> {
    let mut out = Vec::new();
    for k in stages {
        ensure_stage(sys, k)?;
        let stage = sys.stage(k);
        let n = stage.height;
        let base = stage.base.to_set();
        let width = stage.level_width();

        let cond1_mass = sys.stage_mass(k);
        debug_assert_eq!(cond1_mass, stage.tower_set().measure());

        let mut spans: Vec<(Rat, Rat)> = stage
            .levels
            .iter()
            .map(|s| (s.lo.clone(), s.hi.clone()))
            .collect();
        spans.sort();
        let cond2_ok = spans.windows(2).all(|w| w[0].1 <= w[1].0);

        let returned = sys
            .image_set_cyclic(&base, n as i64)
            .intersect(&base)
            .measure();
        let cond3_ratio = returned / &width;

        let triple_masses = tower_triple(sys, k)
            .ok()
            .map(|t| (t.rk.measure(), t.rk_hat.measure(), t.rk_tilde.measure()));

        out.push(ConditionReport {
            stage: k,
            height: n,
            level_width: width.clone(),
            cond1_mass,
            cond2_ok,
            cond3_ratio,
            cond4_defect: Rat::zero(),
            max_level_diameter: width,
            triple_masses,
        });
    }
    Ok(out)
}

/// Audit of the two tower window properties: every point of the hat tower
/// keeps its orbit inside `R_k` for `|i| < n_k`, every point of the tilde
/// tower for `|i| < 2 n_k`. This is the direction the integral estimates
/// consume (points of the towers are controllable along long orbit
/// segments); the reverse containment fails for spacered systems, where a
/// last-column point can see a full window inside `R_k` yet exit to a
/// spacer at step `n_k` exactly.
#[derive(Clone, Debug)]
pub struct InclusionAudit {
    pub stage: u32,
    pub hat_mass: Rat,
    /// Mass of `{x : T^i x in R_k for |i| < n_k}`.
    pub hat_window_mass: Rat,
    pub hat_holds: bool,
    pub tilde_mass: Rat,
    pub tilde_window_mass: Rat,
    pub tilde_holds: bool,
}

pub fn check_inclusions(sys: &BuiltSystem, k: u32) -> Result<InclusionAudit, TowersError> {
    let triple = tower_triple(sys, k)?;
    let n = sys.stage(k).height as i64;
    let stay = |radius: i64| -> IntervalSet {
        let mut acc = triple.rk.clone();
        for i in (1 - radius)..radius {
            if i == 0 {
                continue;
            }
            acc = acc.intersect(&sys.image_set_cyclic(&triple.rk, -i));
        }
        acc
    };
    let window_hat = stay(n);
    let window_tilde = stay(2 * n);
    Ok(InclusionAudit {
        stage: k,
        hat_mass: triple.rk_hat.measure(),
        hat_window_mass: window_hat.measure(),
        hat_holds: triple.rk_hat.is_subset_of(&window_hat),
        tilde_mass: triple.rk_tilde.measure(),
        tilde_window_mass: window_tilde.measure(),
        tilde_holds: triple.rk_tilde.is_subset_of(&window_tilde),
    })
}

/// Per-tile stage-k level numbers for the final-stage word, plus run
/// lengths of consecutive positions whose levels advance arithmetically.
pub struct StageWord {
    /// For final level index `p`: the stage-k level containing that tile.
    pub level_of: Vec<Option<usize>>,
    /// Maximal run starting at `p` following `+1 mod n_k`, capped at `n_K`.
    run_len: Vec<usize>,
    n_k: usize,
}

pub fn stage_word(sys: &BuiltSystem, k: u32) -> StageWord {
    let fine = sys.final_stage();
    let coarse = sys.stage(k);
    let n_big = fine.height;
    let n_k = coarse.height;
    let level_of: Vec<Option<usize>> = fine
        .levels
        .iter()
        .map(|s| coarse.level_index(&s.lo))
        .collect();
    let succ = |a: usize| (a + 1) % n_k;
    let mut run_len = vec![1usize; n_big];
    // Two backward passes resolve the circular recurrence, capped at n_big.
    for _ in 0..2 {
        for p in (0..n_big).rev() {
            let q = (p + 1) % n_big;
            run_len[p] = match (level_of[p], level_of[q]) {
                (Some(a), Some(b)) if succ(a) == b => (1 + run_len[q]).min(n_big),
                _ => 1,
            };
        }
    }
    StageWord {
        level_of,
        run_len,
        n_k,
    }
}

impl StageWord {
    /// Maximal arithmetic run starting at word position `p`.
    pub fn run(&self, p: usize) -> usize {
        self.run_len[p]
    }

    /// Does the orbit position `p + i` still carry the level expected from
    /// arithmetic progression started at `p`?
    fn matches(&self, p: usize, i: usize, n_big: usize) -> bool {
        match (self.level_of[p], self.level_of[(p + i) % n_big]) {
            (Some(j), Some(a)) => a == (j + i) % self.n_k,
            _ => false,
        }
    }

    /// Number of window positions `i in [0, n_k)` where the progression from
    /// `p` is broken; run-compressed walk.
    fn misaligned_count(&self, p: usize, n_big: usize) -> usize {
        let n_k = self.n_k;
        let mut bad = 0usize;
        let mut i = 0usize;
        while i < n_k {
            let q = (p + i) % n_big;
            if self.level_of[q].is_none() {
                bad += 1;
                i += 1;
                continue;
            }
            let run = self.run_len[q].min(n_k - i);
            if !self.matches(p, i, n_big) {
                bad += run;
            }
            i += run;
        }
        bad
    }
}

/// The three fiber statistics of a joining at stage k, as exact piecewise
/// functions of the base point, plus the tower-escape profile.
#[derive(Clone, Debug)]
pub struct FiberStatistics {
    /// `x -> sigma_x(R_k~ complement)`.
    pub f_profile: PwAffine,
    /// `x -> sigma_x(union of levels minus their balls)`; identically zero
    /// with the level-interval ball choice, computed literally.
    pub g_profile: PwAffine,
    /// `x -> sum of fiber masses on levels misaligned with the orbit window`.
    pub h_profile: PwAffine,
    /// `x -> sigma_x(R_k complement)`.
    pub residual_profile: PwAffine,
}

pub fn fiber_statistics(
    joining: &Joining,
    sys: &BuiltSystem,
    k: u32,
    triple: &TowerTriple,
    digits: u32,
) -> Result<FiberStatistics, TowersError> {
    let f_profile =
        joinings::mass_profile(joining, sys, &triple.rk_tilde.complement_in_unit(), digits)?;
    let g_profile = joinings::mass_profile(joining, sys, &IntervalSet::empty(), digits)?;
    let residual_profile =
        joinings::mass_profile(joining, sys, &triple.rk.complement_in_unit(), digits)?;

    // h: per final tile p, atoms landing on a misaligned level contribute
    // their weight; the product part contributes alpha*lambda(A_k) per
    // misaligned window position.
    let word = stage_word(sys, k);
    let fine = sys.final_stage();
    let n_big = fine.height;
    let shifts = joining.atom_shifts(sys, digits)?;
    let alpha = joining.density_alpha();
    let level_width = sys.stage(k).level_width();
    let mut value_of_tile: Vec<Rat> = vec![Rat::zero(); n_big];
    for (p, slot) in value_of_tile.iter_mut().enumerate() {
        let Some(j) = word.level_of[p] else {
            continue; // outside the stage-k tower; h is unused there
        };
        let mut h = Rat::zero();
        if !alpha.is_zero() {
            let bad = word.misaligned_count(p, n_big);
            h += &alpha * &level_width * Rat::from_integer((bad as i64).into());
        }
        for (power, w) in &shifts {
            let q = (p as i64 + power).rem_euclid(n_big as i64) as usize;
            if let Some(a) = word.level_of[q] {
                // The atom sits on level a; window position i = a - j mod n_k.
                let i = (a + word.n_k - j) % word.n_k;
                if !word.matches(p, i, n_big) {
                    h += w;
                }
            }
        }
        *slot = h;
    }
    let mut breaks = Vec::with_capacity(n_big);
    let mut pieces = Vec::with_capacity(n_big);
    for (lo, _hi, level) in fine.spatial_tiles() {
        breaks.push(lo.clone());
        pieces.push((value_of_tile[*level].clone(), Rat::zero()));
    }
    let h_profile = PwAffine::from_pieces(breaks, pieces);

    Ok(FiberStatistics {
        f_profile,
        g_profile,
        h_profile,
        residual_profile,
    })
}

/// Atom pattern of the fibers over one final-stage tile: offsets relative
/// to the base point, with weights (the product part is omitted; it cancels
/// in every fiber-to-fiber distance).
fn tile_atom_offsets(
    sys: &BuiltSystem,
    shifts: &[(i64, Rat)],
    tile_level: usize,
) -> Vec<(Rat, Rat)> {
    let fine = sys.final_stage();
    let n = fine.height as i64;
    let lo = &fine.levels[tile_level].lo;
    shifts
        .iter()
        .map(|(power, w)| {
            let target = ((tile_level as i64 + power.rem_euclid(n)) % n) as usize;
            (&fine.levels[target].lo - lo, w.clone())
        })
        .collect()
}

/// `d(s) = W1(moving translated by s, anchor)` as affine segments
/// `(lo, hi, value_lo, value_hi)` covering `[s_lo, s_hi]`.
fn kr_translate_segments(
    moving: &[(Rat, Rat)],
    anchor: &[(Rat, Rat)],
    s_lo: &Rat,
    s_hi: &Rat,
) -> Vec<(Rat, Rat, Rat, Rat)> {
    let mut cuts: Vec<Rat> = vec![s_lo.clone(), s_hi.clone()];
    for (pos, _) in anchor {
        for (off, _) in moving {
            let c = pos - off;
            if &c > s_lo && &c < s_hi {
                cuts.push(c);
            }
        }
    }
    cuts.sort();
    cuts.dedup();
    let eval = |s: &Rat| -> Rat {
        let translated: Vec<(Rat, Rat)> =
            moving.iter().map(|(off, w)| (off + s, w.clone())).collect();
        metrics::w1_atomic(&translated, anchor)
    };
    let mut segments = Vec::with_capacity(cuts.len().saturating_sub(1));
    for w in cuts.windows(2) {
        segments.push((w[0].clone(), w[1].clone(), eval(&w[0]), eval(&w[1])));
    }
    segments
}

/// Measure of `{s in segs : d(s) < bound}`, plus the sublevel spans.
fn sublevel_spans(segments: &[(Rat, Rat, Rat, Rat)], bound: &Rat) -> Vec<(Rat, Rat)> {
    let mut spans = Vec::new();
    for (lo, hi, v_lo, v_hi) in segments {
        if hi <= lo {
            continue;
        }
        // Affine through (lo, v_lo), (hi, v_hi).
        let slope = (v_hi - v_lo) / (hi - lo);
        let intercept = v_lo - &slope * lo;
        if let Some(span) = affine_strictly_below(lo, hi, &intercept, &slope, bound) {
            spans.push(span);
        }
    }
    spans
}

/// Diagnostics of one level: goodness witness, and the two diagnostic
/// subsets (near-constant-fiber members and small-statistic members).
#[derive(Clone, Debug)]
pub struct LevelReport {
    pub level: usize,
    pub good: bool,
    /// Best witness from the deterministic grid (first maximizer).
    pub witness: Option<Rat>,
    /// Mass of `{x in level : d(sigma_x, sigma_witness) < eps}`.
    pub good_mass: Rat,
    pub vj: IntervalSet,
    pub gj: IntervalSet,
}

#[derive(Clone, Debug)]
pub struct LevelDiagnostics {
    pub stage: u32,
    pub eps: Rat,
    pub levels: Vec<LevelReport>,
    pub good_fraction: Rat,
}

/// Deterministic witness candidates: odd multiples of `w/(2 grid)` above
/// the level's left endpoint.
pub fn witness_grid(sys: &BuiltSystem, k: u32, level: usize, grid: usize) -> Vec<Rat> {
    let stage = sys.stage(k);
    let w = stage.level_width();
    let lo = &stage.levels[level].lo;
    (0..grid)
        .map(|t| lo + &w * Rat::new((2 * t as i64 + 1).into(), (2 * grid as i64).into()))
        .collect()
}

pub fn good_levels(
    joining: &Joining,
    sys: &BuiltSystem,
    k: u32,
    eps: &Rat,
    grid: usize,
    digits: u32,
) -> Result<LevelDiagnostics, TowersError> {
    let triple = tower_triple(sys, k)?;
    let stats = fiber_statistics(joining, sys, k, &triple, digits)?;
    let v_all = stats
        .f_profile
        .strict_sublevel(eps)
        .intersect(&stats.g_profile.strict_sublevel(eps))
        .intersect(&stats.h_profile.strict_sublevel(eps));

    let stage = sys.stage(k);
    let n_k = stage.height;
    let width = stage.level_width();
    let shifts = joining.atom_shifts(sys, digits)?;
    let fine = sys.final_stage();
    let two_eps = eps + eps;
    let g_threshold = (Rat::one() - &two_eps) * &width;
    let good_needed = (Rat::one() - eps) * &width;

    // Final-word tiles grouped by their stage-k level.
    let word = stage_word(sys, k);
    let mut tiles_of_level: Vec<Vec<usize>> = vec![Vec::new(); n_k];
    for (p, lvl) in word.level_of.iter().enumerate() {
        if let Some(j) = lvl {
            tiles_of_level[*j].push(p);
        }
    }

    let mut levels = Vec::with_capacity(n_k);
    let mut good_count = 0usize;
    for (j, tiles) in tiles_of_level.iter().enumerate() {
        let level_set = stage.level_set(j);
        let vj = v_all.intersect(&level_set);

        // Tiles whose fibers share an atom-offset pattern are
        // interchangeable; the cyclic powers have few distinct offsets, so
        // the groups stay small and all distance work happens per group.
        let groups = offset_groups(sys, &shifts, tiles);

        // Witness search over the deterministic grid.
        let mut best: Option<(Rat, Rat)> = None; // (good mass, witness)
        for y in witness_grid(sys, k, j, grid) {
            let anchor: Vec<(Rat, Rat)> = shifts
                .iter()
                .map(|(power, w)| (sys.apply_power_cyclic(&y, *power), w.clone()))
                .collect();
            let mut mass = Rat::zero();
            for group in &groups {
                // d(x) = W1(atoms at x + offsets, anchor) for every x in the
                // group's tiles; one sublevel computation per group.
                let spans =
                    distance_sublevel(&group.offsets, &anchor, &group.x_lo, &group.x_hi, eps);
                let sub = IntervalSet::from_spans(spans);
                mass += sub.intersect(&group.support).measure();
            }
            let better = match &best {
                Some((m, _)) => mass > *m,
                None => true,
            };
            if better {
                best = Some((mass, y));
            }
        }
        let (good_mass, witness) = best
            .map(|(m, y)| (m, Some(y)))
            .unwrap_or((Rat::zero(), None));
        let good = good_mass >= good_needed;

        // G_j: x with most of the level 2eps-close to sigma_x; empty when
        // the level is not good. Working per group pair, the section mass
        // contributed by all of group b to a point of group a is a sum of
        // overlap trapezoids, one per tile of b, swept in one pass.
        let gj = if good {
            let mut rho = PwAffine::zero();
            for ga in &groups {
                let mut events: Vec<(Rat, Rat, Rat)> = Vec::new();
                for gb in &groups {
                    // d(sigma_x, sigma_y) = g(y - x), shared across the pair.
                    let s_lo = &gb.x_lo - &ga.x_hi;
                    let s_hi = &gb.x_hi - &ga.x_lo;
                    let spans =
                        translate_sublevel(&gb.offsets, &ga.offsets, &s_lo, &s_hi, &two_eps);
                    for (sa, sb) in &spans {
                        for &q in &gb.tiles {
                            let q_lo = &fine.levels[q].lo;
                            let q_hi = &fine.levels[q].hi;
                            for (start, end, va, vb) in
                                trapezoid_pieces(sa, sb, q_lo, q_hi, &ga.x_lo, &ga.x_hi)
                            {
                                events.push((start, va.clone(), vb.clone()));
                                events.push((end, -va, -vb));
                            }
                        }
                    }
                }
                rho = rho.add(&sweep_sum(events).restrict(&ga.support));
            }
            rho.strict_superlevel(&g_threshold).intersect(&level_set)
        } else {
            IntervalSet::empty()
        };

        if good {
            good_count += 1;
        }
        levels.push(LevelReport {
            level: j,
            good,
            witness,
            good_mass,
            vj,
            gj,
        });
    }
    Ok(LevelDiagnostics {
        stage: k,
        eps: eps.clone(),
        levels,
        good_fraction: Rat::new((good_count as i64).into(), (n_k as i64).into()),
    })
}

/// Tiles of one level bucketed by their fiber atom-offset vector.
struct OffsetGroup {
    offsets: Vec<(Rat, Rat)>,
    tiles: Vec<usize>,
    support: IntervalSet,
    x_lo: Rat,
    x_hi: Rat,
}

fn offset_groups(sys: &BuiltSystem, shifts: &[(i64, Rat)], tiles: &[usize]) -> Vec<OffsetGroup> {
    use std::collections::HashMap;
    let fine = sys.final_stage();
    let mut index: HashMap<Vec<(Rat, Rat)>, usize> = HashMap::new();
    let mut groups: Vec<OffsetGroup> = Vec::new();
    for &p in tiles {
        let offsets = tile_atom_offsets(sys, shifts, p);
        let slot = *index.entry(offsets.clone()).or_insert_with(|| {
            groups.push(OffsetGroup {
                offsets,
                tiles: Vec::new(),
                support: IntervalSet::empty(),
                x_lo: Rat::zero(),
                x_hi: Rat::zero(),
            });
            groups.len() - 1
        });
        groups[slot].tiles.push(p);
    }
    for g in &mut groups {
        let spans: Vec<(Rat, Rat)> = g
            .tiles
            .iter()
            .map(|&p| (fine.levels[p].lo.clone(), fine.levels[p].hi.clone()))
            .collect();
        g.support = IntervalSet::from_spans(spans);
        g.x_lo = g.support.spans().first().unwrap().0.clone();
        g.x_hi = g.support.spans().last().unwrap().1.clone();
    }
    groups
}

/// `{x in [lo, hi] : W1(atoms at x + offsets, anchor) < bound}` as spans;
/// single atoms short-circuit to one interval.
fn distance_sublevel(
    offsets: &[(Rat, Rat)],
    anchor: &[(Rat, Rat)],
    lo: &Rat,
    hi: &Rat,
    bound: &Rat,
) -> Vec<(Rat, Rat)> {
    if offsets.len() == 1 {
        let (off, w) = &offsets[0];
        let (pos, _) = &anchor[0];
        if w.is_zero() {
            return vec![(lo.clone(), hi.clone())];
        }
        let center = pos - off;
        let radius = bound / w;
        let a = (&center - &radius).max(lo.clone());
        let b = (&center + &radius).min(hi.clone());
        return if a < b { vec![(a, b)] } else { Vec::new() };
    }
    let segs = kr_translate_segments(offsets, anchor, lo, hi);
    sublevel_spans(&segs, bound)
}

/// `{s in [s_lo, s_hi] : W1(moving + s, anchor) < bound}` for two offset
/// patterns (the translation-difference form of the fiber distance).
fn translate_sublevel(
    moving: &[(Rat, Rat)],
    anchor: &[(Rat, Rat)],
    s_lo: &Rat,
    s_hi: &Rat,
    bound: &Rat,
) -> Vec<(Rat, Rat)> {
    if moving.len() == 1 {
        let (off_m, w) = &moving[0];
        let (off_a, _) = &anchor[0];
        if w.is_zero() {
            return vec![(s_lo.clone(), s_hi.clone())];
        }
        // w |s + off_m - off_a| < bound
        let delta = off_m - off_a;
        let radius = bound / w;
        let a = (-&delta - &radius).max(s_lo.clone());
        let b = (-&delta + &radius).min(s_hi.clone());
        return if a < b { vec![(a, b)] } else { Vec::new() };
    }
    let segs = kr_translate_segments(moving, anchor, s_lo, s_hi);
    sublevel_spans(&segs, bound)
}

/// Affine pieces of `x -> |(x + [sa, sb)) intersect [q_lo, q_hi)|` clipped
/// to `[p_lo, p_hi)`: a trapezoid with unit slopes, returned as
/// `(start, end, intercept, slope)` segments (zero pieces omitted).
fn trapezoid_pieces(
    sa: &Rat,
    sb: &Rat,
    q_lo: &Rat,
    q_hi: &Rat,
    p_lo: &Rat,
    p_hi: &Rat,
) -> Vec<(Rat, Rat, Rat, Rat)> {
    let x1 = q_lo - sb; // overlap starts growing
    let x2a = q_lo - sa;
    let x2b = q_hi - sb;
    let (x2, x3) = if x2a <= x2b { (x2a, x2b) } else { (x2b, x2a) };
    let x4 = q_hi - sa; // overlap gone
    let plateau = (sb - sa).min(q_hi - q_lo);
    let one = Rat::one();
    let zero = Rat::zero();
    let raw = [
        // (segment start, segment end, intercept, slope) in global coords.
        (x1.clone(), x2.clone(), -x1.clone(), one.clone()),
        (x2.clone(), x3.clone(), plateau.clone(), zero.clone()),
        (x3.clone(), x4.clone(), &plateau + &x3, -one),
    ];
    let mut out = Vec::with_capacity(3);
    for (s, e, a, b) in raw {
        let cs = s.max(p_lo.clone());
        let ce = e.min(p_hi.clone());
        if cs < ce {
            out.push((cs, ce, a, b));
        }
    }
    out
}

/// Sums affine segments given as paired `(position, +intercept, +slope)` /
/// `(position, -intercept, -slope)` events into one piecewise function.
fn sweep_sum(mut events: Vec<(Rat, Rat, Rat)>) -> PwAffine {
    events.sort_by(|a, b| a.0.cmp(&b.0));
    let mut breaks: Vec<Rat> = vec![Rat::zero()];
    let mut pieces: Vec<(Rat, Rat)> = vec![(Rat::zero(), Rat::zero())];
    let mut acc_a = Rat::zero();
    let mut acc_b = Rat::zero();
    let mut i = 0usize;
    while i < events.len() {
        let pos = events[i].0.clone();
        while i < events.len() && events[i].0 == pos {
            acc_a += &events[i].1;
            acc_b += &events[i].2;
            i += 1;
        }
        if pos >= Rat::one() {
            break;
        }
        if pos == *breaks.last().unwrap() {
            let last = pieces.len() - 1;
            pieces[last] = (acc_a.clone(), acc_b.clone());
        } else {
            breaks.push(pos);
            pieces.push((acc_a.clone(), acc_b.clone()));
        }
    }
    PwAffine::from_pieces(breaks, pieces)
}

/// `x -> |(x + [sa, sb)) intersect [q_lo, q_hi)|` restricted to `[p_lo, p_hi)`.
#[cfg(test)]
fn overlap_trapezoid(
    sa: &Rat,
    sb: &Rat,
    q_lo: &Rat,
    q_hi: &Rat,
    p_lo: &Rat,
    p_hi: &Rat,
) -> PwAffine {
    let mut events = Vec::new();
    for (start, end, a, b) in trapezoid_pieces(sa, sb, q_lo, q_hi, p_lo, p_hi) {
        events.push((start, a.clone(), b.clone()));
        events.push((end, -a, -b));
    }
    sweep_sum(events)
}

/// Convenience: the indicator-of-tower complement mass, `1 - lambda(R_k)`.
pub fn tower_complement_mass(sys: &BuiltSystem, k: u32) -> Rat {
    Rat::one() - sys.stage_mass(k)
}

/// The three goodness statistics and the tower-escape mass of a fiber at a
/// point (used by the pointwise operator audits).
#[derive(Clone, Debug)]
pub struct GoodnessStats {
    /// Fiber mass outside the tilde tower.
    pub f_value: Rat,
    /// Fiber mass on levels stripped of their balls; identically zero here.
    pub g_value: Rat,
    /// Fiber mass on levels misaligned with the orbit window.
    pub h_value: Rat,
    /// Fiber mass outside the tower.
    pub residual: Rat,
}

pub fn statistics_at(stats: &FiberStatistics, x: &Rat) -> GoodnessStats {
    GoodnessStats {
        f_value: stats.f_profile.eval(x),
        g_value: stats.g_profile.eval(x),
        h_value: stats.h_profile.eval(x),
        residual: stats.residual_profile.eval(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{dyadic, rat, rint};
    use crate::system::{build, ConstructionDescriptor};

    fn make(d: &ConstructionDescriptor, depth: u32) -> BuiltSystem {
        build(d, depth, 4096).unwrap()
    }

    #[test]
    fn odometer_towers_are_full() {
        let sys = make(&ConstructionDescriptor::odometer(8), 8);
        for k in 1..=5u32 {
            let t = tower_triple(&sys, k).unwrap();
            assert_eq!(t.rk, IntervalSet::unit(), "k={k}");
            assert_eq!(t.rk_hat, IntervalSet::unit(), "k={k}");
            assert_eq!(t.rk_tilde, IntervalSet::unit(), "k={k}");
            assert_eq!(t.unresolved_mass, rint(0));
        }
    }

    #[test]
    fn stage_zero_tower_is_everything() {
        let sys = make(&ConstructionDescriptor::odometer(4), 4);
        let t = tower_triple(&sys, 0).unwrap();
        assert_eq!(t.rk, IntervalSet::unit());
    }

    #[test]
    fn nesting_chain_exact() {
        for d in [
            ConstructionDescriptor::odometer(8),
            ConstructionDescriptor::rigid_spacered(5),
            ConstructionDescriptor::chacon(7),
        ] {
            let depth = d.max_stage;
            let sys = make(&d, depth);
            for k in 0..depth {
                if let Ok(t) = tower_triple(&sys, k) {
                    assert!(t.rk_tilde.is_subset_of(&t.rk_hat), "{} k={k}", d.name);
                    assert!(t.rk_hat.is_subset_of(&t.rk), "{} k={k}", d.name);
                }
            }
        }
    }

    #[test]
    fn hat_mass_lower_bound() {
        // lambda(R_k^) >= lambda(R_k) - 2 n_k lambda(A_k minus T^{n_k} A_k),
        // checked exactly per stage.
        for d in [
            ConstructionDescriptor::rigid_spacered(5),
            ConstructionDescriptor::chacon(7),
        ] {
            let sys = make(&d, d.max_stage);
            for k in 1..d.max_stage {
                let Ok(t) = tower_triple(&sys, k) else {
                    continue;
                };
                let stage = sys.stage(k);
                let base = stage.base.to_set();
                let ret = sys.image_set_cyclic(&base, stage.height as i64);
                let defect = base.subtract(&ret).measure();
                let bound = t.rk.measure() - rint(2 * stage.height as i64) * defect;
                assert!(t.rk_hat.measure() >= bound, "{} k={k}", d.name);
            }
        }
    }

    #[test]
    fn odometer_conditions_exact() {
        let sys = make(&ConstructionDescriptor::odometer(8), 8);
        let reports = verify_conditions(&sys, 1..=5).unwrap();
        for r in &reports {
            assert_eq!(r.cond1_mass, rint(1));
            assert!(r.cond2_ok);
            assert_eq!(r.cond3_ratio, rint(1));
            assert_eq!(r.cond4_defect, rint(0));
            assert_eq!(r.max_level_diameter, dyadic(r.stage));
        }
    }

    #[test]
    fn spacered_return_ratio_closed_form() {
        let d = ConstructionDescriptor::rigid_spacered(6);
        let sys = make(&d, 6);
        let reports = verify_conditions(&sys, 1..=5).unwrap();
        for r in &reports {
            let rk = d.cuts_at(r.stage).unwrap() as i64;
            assert_eq!(r.cond3_ratio, rat(rk - 1, rk), "k={}", r.stage);
        }
    }

    #[test]
    fn chacon_ratio_stays_away_from_one() {
        let d = ConstructionDescriptor::chacon(7);
        let sys = make(&d, 7);
        let reports = verify_conditions(&sys, 1..=6).unwrap();
        for r in &reports {
            assert!(r.cond3_ratio <= rat(3, 4), "k={}", r.stage);
        }
    }

    #[test]
    fn inclusions_hold() {
        for d in [
            ConstructionDescriptor::odometer(7),
            ConstructionDescriptor::rigid_spacered(4),
            ConstructionDescriptor::chacon(6),
        ] {
            let sys = make(&d, d.max_stage);
            for k in 1..=2u32 {
                if let Ok(audit) = check_inclusions(&sys, k) {
                    assert!(audit.hat_holds, "{} k={k}", d.name);
                    assert!(audit.tilde_holds, "{} k={k}", d.name);
                }
            }
        }
    }

    #[test]
    fn odometer_inclusion_is_equality() {
        let sys = make(&ConstructionDescriptor::odometer(7), 7);
        let audit = check_inclusions(&sys, 2).unwrap();
        assert_eq!(audit.hat_mass, rint(1));
        assert_eq!(audit.hat_window_mass, rint(1));
        assert_eq!(audit.tilde_mass, rint(1));
    }

    #[test]
    fn spacered_window_containment_is_strict() {
        // The last column of the base keeps its window inside R_k yet falls
        // onto a spacer at step n_k, so the window set exceeds the hat tower.
        let sys = make(&ConstructionDescriptor::rigid_spacered(4), 4);
        let audit = check_inclusions(&sys, 1).unwrap();
        assert!(audit.hat_holds);
        assert!(audit.hat_mass < audit.hat_window_mass);
    }

    #[test]
    fn depth_guard_fires() {
        let sys = make(&ConstructionDescriptor::odometer(4), 4);
        assert!(matches!(
            tower_triple(&sys, 4),
            Err(TowersError::DepthExceeded { .. })
        ));
    }

    #[test]
    fn product_joining_every_level_good() {
        // All fibers identical: zero KR distance, every level good for any
        // positive eps; V is everything inside the tower.
        let sys = make(&ConstructionDescriptor::odometer(6), 6);
        let diag = good_levels(
            &Joining::product(),
            &sys,
            2,
            &rat(1, 8),
            4,
            joinings::DEFAULT_DIGITS,
        )
        .unwrap();
        assert_eq!(diag.good_fraction, rint(1));
        for lr in &diag.levels {
            assert!(lr.good);
            assert_eq!(lr.good_mass, dyadic(2));
            assert_eq!(lr.vj.measure(), dyadic(2));
            assert_eq!(lr.gj.measure(), dyadic(2));
        }
    }

    #[test]
    fn identity_joining_good_when_eps_exceeds_level_width() {
        // J(0): fibers are point masses at x, so d(sigma_x, sigma_y) = |x-y|.
        let sys = make(&ConstructionDescriptor::odometer(6), 6);
        let k = 3u32;
        let diag = good_levels(
            &Joining::graph(0),
            &sys,
            k,
            &dyadic(k), // eps = level width: whole level within eps of witness
            8,
            joinings::DEFAULT_DIGITS,
        )
        .unwrap();
        assert_eq!(diag.good_fraction, rint(1));
        // At eps = half the level width the grid witness still covers
        // (1 - eps) of the level at this stage.
        let diag2 = good_levels(
            &Joining::graph(0),
            &sys,
            k,
            &dyadic(k + 1),
            8,
            joinings::DEFAULT_DIGITS,
        )
        .unwrap();
        assert_eq!(diag2.good_fraction, rint(1));
    }

    #[test]
    fn trapezoid_shape() {
        // Overlap of x + [0, 1/4) with [1/2, 3/4) for x in [0, 1):
        // rises from x = 1/4, plateau 1/4 at x = 1/2, gone at x = 3/4.
        let f = overlap_trapezoid(
            &rint(0),
            &rat(1, 4),
            &rat(1, 2),
            &rat(3, 4),
            &rint(0),
            &rint(1),
        );
        assert_eq!(f.eval(&rat(1, 4)), rint(0));
        assert_eq!(f.eval(&rat(3, 8)), rat(1, 8));
        assert_eq!(f.eval(&rat(1, 2)), rat(1, 4));
        assert_eq!(f.eval(&rat(5, 8)), rat(1, 8));
        assert_eq!(f.eval(&rat(3, 4)), rint(0));
    }
}
