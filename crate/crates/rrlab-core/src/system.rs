//! Cutting-and-stacking construction of rank-one systems.
//!
//! A [`ConstructionDescriptor`] gives the cut counts `r_k >= 2` and spacer
//! counts per column; [`build`] realizes stages `0..=K` as interval towers
//! over a growing ambient interval and then rescales every endpoint so the
//! final space is exactly `[0, 1)` with Lebesgue a probability measure.
//!
//! Two evaluation semantics coexist on the built system:
//!
//! - the *partial* map ([`BuiltSystem::apply_power`], [`BuiltSystem::image_set`]):
//!   the transformation as actually determined by the stage-K data, undefined
//!   past the top level, with certified unresolved mass;
//! - the *cyclic* stage-K approximant ([`BuiltSystem::apply_power_cyclic`],
//!   [`BuiltSystem::image_set_cyclic`]): the top level wraps to the base, a
//!   total measure-preserving interval exchange. Tower statistics and
//!   operator computations run on this approximant, where every set query is
//!   exact; the two maps agree off a single level of mass `lambda(A_K)`.

use crate::functions::PwAffine;
use crate::interval_set::IntervalSet;
use crate::rational::{denominator_bits, format_rat, Rat};
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Cut counts per stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CutRule {
    Const(u32),
    /// `r_k = mul*k + add`.
    Affine {
        mul: u32,
        add: u32,
    },
    List(Vec<u32>),
}

impl CutRule {
    fn at(&self, k: u32) -> Option<u32> {
        match self {
            CutRule::Const(r) => Some(*r),
            CutRule::Affine { mul, add } => Some(mul * k + add),
            CutRule::List(rs) => rs.get(k as usize).copied(),
        }
    }
}

/// Spacer formula; explicit table entries override it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpacerRule {
    None,
    /// `count` spacers above the last column at every stage.
    LastColumn(u32),
    /// `count` spacers above column `r_k / 2` at every stage.
    MiddleColumn(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstructionDescriptor {
    pub name: String,
    pub cuts: CutRule,
    pub spacer_rule: SpacerRule,
    /// Explicit `(stage, column) -> count` entries; override the rule.
    pub spacer_overrides: BTreeMap<(u32, u32), u32>,
    pub max_stage: u32,
}

impl ConstructionDescriptor {
    /// Binary odometer: cut in two, no spacers. `T^{n_k} A_k = A_k` exactly.
    pub fn odometer(max_stage: u32) -> Self {
        ConstructionDescriptor {
            name: "odometer".into(),
            cuts: CutRule::Const(2),
            spacer_rule: SpacerRule::None,
            spacer_overrides: BTreeMap::new(),
            max_stage,
        }
    }

    /// `r_k = k + 2` with one spacer on the last column: rigid with
    /// return ratio `(r_k - 1)/r_k` at stage k.
    pub fn rigid_spacered(max_stage: u32) -> Self {
        ConstructionDescriptor {
            name: "rigid-spacered".into(),
            cuts: CutRule::Affine { mul: 1, add: 2 },
            spacer_rule: SpacerRule::LastColumn(1),
            spacer_overrides: BTreeMap::new(),
            max_stage,
        }
    }

    /// Cut in three with one spacer on the middle column: weakly mixing,
    /// not rigid; the negative control.
    pub fn chacon(max_stage: u32) -> Self {
        ConstructionDescriptor {
            name: "chacon".into(),
            cuts: CutRule::Const(3),
            spacer_rule: SpacerRule::MiddleColumn(1),
            spacer_overrides: BTreeMap::new(),
            max_stage,
        }
    }

    pub fn builtin(name: &str, max_stage: u32) -> Option<Self> {
        match name {
            "odometer" => Some(Self::odometer(max_stage)),
            "rigid-spacered" => Some(Self::rigid_spacered(max_stage)),
            "chacon" => Some(Self::chacon(max_stage)),
            _ => None,
        }
    }

    pub fn cuts_at(&self, k: u32) -> Result<u32, BuildError> {
        match self.cuts.at(k) {
            Some(r) if r >= 2 => Ok(r),
            Some(r) => Err(BuildError::BadDescriptor(format!(
                "stage {k}: cut count {r} < 2"
            ))),
            None => Err(BuildError::BadDescriptor(format!(
                "stage {k}: no cut count listed"
            ))),
        }
    }

    pub fn spacers_at(&self, k: u32, column: u32, r_k: u32) -> u32 {
        if let Some(&s) = self.spacer_overrides.get(&(k, column)) {
            return s;
        }
        match self.spacer_rule {
            SpacerRule::None => 0,
            SpacerRule::LastColumn(s) if column == r_k - 1 => s,
            SpacerRule::MiddleColumn(s) if column == r_k / 2 => s,
            _ => 0,
        }
    }

    /// True when every stage below `upto` cuts in two with no spacers;
    /// the digit identification behind the two-adic joining needs this.
    pub fn is_plain_binary(&self, upto: u32) -> bool {
        (0..upto)
            .all(|k| self.cuts.at(k) == Some(2) && (0..2).all(|c| self.spacers_at(k, c, 2) == 0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildError {
    BadDescriptor(String),
    /// A stage's interval widths exceeded the configured denominator cap.
    DepthExceeded {
        stage: u32,
        bits: u64,
        cap: u64,
    },
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::BadDescriptor(msg) => write!(f, "bad descriptor: {msg}"),
            BuildError::DepthExceeded { stage, bits, cap } => write!(
                f,
                "stage {stage} needs {bits}-bit denominators, cap is {cap}"
            ),
        }
    }
}

impl std::error::Error for BuildError {}

/// Half-open interval `[lo, hi)`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Span {
    pub lo: Rat,
    pub hi: Rat,
}

impl Span {
    pub fn width(&self) -> Rat {
        &self.hi - &self.lo
    }

    pub fn contains(&self, x: &Rat) -> bool {
        &self.lo <= x && x < &self.hi
    }

    pub fn to_set(&self) -> IntervalSet {
        IntervalSet::interval(self.lo.clone(), self.hi.clone())
    }
}

/// One stage of the construction: the tower `A_k, T A_k, ..., T^{n_k-1} A_k`.
#[derive(Clone, Debug)]
pub struct TowerStage {
    pub stage: u32,
    /// `n_k`.
    pub height: usize,
    /// `A_k`; equals `levels[0]`.
    pub base: Span,
    /// `levels[i] = T^i A_k`, each a single interval.
    pub levels: Vec<Span>,
    /// Ambient length `L_k` in raw (pre-normalization) units; the tower
    /// occupies `[0, L_k/L_K)` after normalization.
    pub ambient_length: Rat,
    /// The map off the top level: `levels[i] -> levels[i+1]` translations.
    pub partial_map: Vec<MapPiece>,
    /// Level spans sorted by position for point location.
    index: Vec<(Rat, Rat, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapPiece {
    pub domain: Span,
    pub offset: Rat,
}

impl TowerStage {
    /// Level number of `x`, or `None` when `x` lies outside the tower
    /// (inside spacer territory added by later stages).
    pub fn level_index(&self, x: &Rat) -> Option<usize> {
        locate(&self.index, x)
    }

    pub fn level_set(&self, i: usize) -> IntervalSet {
        self.levels[i].to_set()
    }

    /// `lambda(A_k)` in normalized units.
    pub fn level_width(&self) -> Rat {
        self.base.width()
    }

    /// The tower `R_k` as a set; the levels tile `[0, L_k/L_K)`.
    pub fn tower_set(&self) -> IntervalSet {
        IntervalSet::from_spans(
            self.levels
                .iter()
                .map(|s| (s.lo.clone(), s.hi.clone()))
                .collect(),
        )
    }

    /// Level spans in spatial order as `(lo, hi, level index)`.
    pub fn spatial_tiles(&self) -> &[(Rat, Rat, usize)] {
        &self.index
    }
}

fn locate(index: &[(Rat, Rat, usize)], x: &Rat) -> Option<usize> {
    let pos = index.partition_point(|(lo, _, _)| lo <= x);
    if pos == 0 {
        return None;
    }
    let (_, hi, level) = &index[pos - 1];
    (x < hi).then_some(*level)
}

fn build_index(levels: &[Span]) -> Vec<(Rat, Rat, usize)> {
    let mut index: Vec<(Rat, Rat, usize)> = levels
        .iter()
        .enumerate()
        .map(|(i, s)| (s.lo.clone(), s.hi.clone(), i))
        .collect();
    index.sort_by(|a, b| a.0.cmp(&b.0));
    index
}

/// The full construction to depth `K`, in normalized coordinates.
#[derive(Clone, Debug)]
pub struct BuiltSystem {
    pub descriptor: ConstructionDescriptor,
    stages: Vec<TowerStage>,
    /// Final raw ambient length `L_K`; all reported measures are already
    /// divided by it because coordinates are rescaled.
    pub normalization: Rat,
}

pub fn build(
    descriptor: &ConstructionDescriptor,
    depth: u32,
    den_cap_bits: u64,
) -> Result<BuiltSystem, BuildError> {
    if depth > descriptor.max_stage {
        return Err(BuildError::BadDescriptor(format!(
            "requested depth {depth} exceeds descriptor max_stage {}",
            descriptor.max_stage
        )));
    }
    let one = Rat::one();
    let mut stages: Vec<(Vec<Span>, Rat)> = Vec::with_capacity(depth as usize + 1);
    stages.push((
        vec![Span {
            lo: Rat::zero(),
            hi: one.clone(),
        }],
        one.clone(),
    ));
    for k in 0..depth {
        let r = descriptor.cuts_at(k)?;
        let (prev_levels, prev_ambient) = &stages[k as usize];
        let width = prev_levels[0].width() / Rat::from_integer(r.into());
        let bits = denominator_bits(&width);
        if bits > den_cap_bits {
            return Err(BuildError::DepthExceeded {
                stage: k + 1,
                bits,
                cap: den_cap_bits,
            });
        }
        let mut levels = Vec::with_capacity(prev_levels.len() * r as usize + 4);
        let mut cursor = prev_ambient.clone();
        for c in 0..r {
            let shift = &width * Rat::from_integer(c.into());
            for lv in prev_levels {
                let lo = &lv.lo + &shift;
                let hi = &lo + &width;
                levels.push(Span { lo, hi });
            }
            for _ in 0..descriptor.spacers_at(k, c, r) {
                let hi = &cursor + &width;
                levels.push(Span {
                    lo: cursor.clone(),
                    hi: hi.clone(),
                });
                cursor = hi;
            }
        }
        stages.push((levels, cursor));
    }

    let norm = stages.last().unwrap().1.clone();
    let mut out = Vec::with_capacity(stages.len());
    for (k, (mut levels, ambient_raw)) in stages.into_iter().enumerate() {
        if !norm.is_one() {
            for s in &mut levels {
                s.lo = &s.lo / &norm;
                s.hi = &s.hi / &norm;
            }
        }
        let partial_map = levels
            .windows(2)
            .map(|w| MapPiece {
                domain: w[0].clone(),
                offset: &w[1].lo - &w[0].lo,
            })
            .collect();
        let index = build_index(&levels);
        out.push(TowerStage {
            stage: k as u32,
            height: levels.len(),
            base: levels[0].clone(),
            levels,
            ambient_length: ambient_raw,
            partial_map,
            index,
        });
    }
    Ok(BuiltSystem {
        descriptor: descriptor.clone(),
        stages: out,
        normalization: norm,
    })
}

impl BuiltSystem {
    /// The deepest built stage `K`.
    pub fn depth(&self) -> u32 {
        (self.stages.len() - 1) as u32
    }

    pub fn stage(&self, k: u32) -> &TowerStage {
        &self.stages[k as usize]
    }

    pub fn final_stage(&self) -> &TowerStage {
        self.stages.last().unwrap()
    }

    /// Height of the deepest tower, `n_K`.
    pub fn final_height(&self) -> usize {
        self.final_stage().height
    }

    /// `lambda(A_K)`: the mass on which the partial and cyclic maps differ.
    pub fn blind_mass(&self) -> Rat {
        self.final_stage().level_width()
    }

    /// Mass of the stage-k tower in the normalized space, `L_k / L_K`.
    pub fn stage_mass(&self, k: u32) -> Rat {
        &self.stage(k).ambient_length / &self.normalization
    }

    fn locate_final(&self, x: &Rat) -> usize {
        self.final_stage()
            .level_index(x)
            .expect("final-stage levels tile [0,1)")
    }

    /// `T^i x` under the partial map: `None` when the orbit needs data
    /// beyond stage K (it crosses the top level forward or the base
    /// backward).
    pub fn apply_power(&self, x: &Rat, i: i64) -> Option<Rat> {
        let stage = self.final_stage();
        let level = self.locate_final(x) as i64;
        let target = level.checked_add(i)?;
        if target < 0 || target >= stage.height as i64 {
            return None;
        }
        let delta = x - &stage.levels[level as usize].lo;
        Some(&stage.levels[target as usize].lo + delta)
    }

    /// `T^i x` under the cyclic stage-K approximant: level arithmetic
    /// modulo `n_K`, total for every `i`.
    pub fn apply_power_cyclic(&self, x: &Rat, i: i64) -> Rat {
        let stage = self.final_stage();
        let n = stage.height as i64;
        let level = self.locate_final(x) as i64;
        let target = (level + i.rem_euclid(n)).rem_euclid(n) as usize;
        let delta = x - &stage.levels[level as usize].lo;
        &stage.levels[target].lo + delta
    }

    /// Splits `s` into maximal sub-spans of single final-stage levels,
    /// returned as `(level, offset within level, width)`.
    fn decompose(&self, s: &IntervalSet) -> Vec<(usize, Rat, Rat)> {
        let stage = self.final_stage();
        let mut out = Vec::new();
        for (a, b) in s.spans() {
            let mut cur = a.clone();
            while &cur < b {
                let level = self.locate_final(&cur);
                let span = &stage.levels[level];
                let hi = span.hi.clone().min(b.clone());
                out.push((level, &cur - &span.lo, &hi - &cur));
                cur = hi;
            }
        }
        out
    }

    /// Exact image of the resolvable part of `s` under `T^i`, plus the
    /// unresolved mass (the part whose orbit leaves the stage-K data).
    /// `measure(image) + unresolved = measure(s)`.
    pub fn image_set(&self, s: &IntervalSet, i: i64) -> (IntervalSet, Rat) {
        let stage = self.final_stage();
        let n = stage.height as i64;
        let mut spans = Vec::new();
        let mut unresolved = Rat::zero();
        for (level, delta, width) in self.decompose(s) {
            let target = level as i64 + i;
            if target < 0 || target >= n {
                unresolved += width;
            } else {
                let lo = &stage.levels[target as usize].lo + &delta;
                let hi = &lo + &width;
                spans.push((lo, hi));
            }
        }
        (IntervalSet::from_spans(spans), unresolved)
    }

    /// Exact pullback `f compose T_c^i` through the cyclic map: on each
    /// final level the value is `f` on the shifted level, translated back.
    pub fn pullback(&self, f: &PwAffine, i: i64) -> PwAffine {
        let stage = self.final_stage();
        let n = stage.height as i64;
        let shift = i.rem_euclid(n);
        let fb = f.breaks();
        let mut breaks = Vec::new();
        let mut pieces = Vec::new();
        for (lo, _hi, level) in stage.spatial_tiles() {
            let target = ((*level as i64 + shift) % n) as usize;
            let tspan = &stage.levels[target];
            let delta = &tspan.lo - lo;
            let mut pi = fb.partition_point(|b| b <= &tspan.lo) - 1;
            let mut cursor = tspan.lo.clone();
            while cursor < tspan.hi {
                let piece_end = if pi + 1 < fb.len() {
                    fb[pi + 1].clone()
                } else {
                    Rat::one()
                };
                let end = piece_end.min(tspan.hi.clone());
                let (a, b) = &f.pieces()[pi];
                breaks.push(&cursor - &delta);
                pieces.push((a + b * &delta, b.clone()));
                cursor = end;
                pi += 1;
            }
        }
        PwAffine::from_pieces(breaks, pieces)
    }

    /// Exact image under the cyclic approximant; total, measure-preserving.
    pub fn image_set_cyclic(&self, s: &IntervalSet, i: i64) -> IntervalSet {
        let stage = self.final_stage();
        let n = stage.height as i64;
        let shift = i.rem_euclid(n);
        let mut spans = Vec::new();
        for (level, delta, width) in self.decompose(s) {
            let target = ((level as i64 + shift) % n) as usize;
            let lo = &stage.levels[target].lo + &delta;
            let hi = &lo + &width;
            spans.push((lo, hi));
        }
        IntervalSet::from_spans(spans)
    }
}

impl fmt::Display for BuiltSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} built to stage {} (n_K = {}, normalization {})",
            self.descriptor.name,
            self.depth(),
            self.final_height(),
            format_rat(&self.normalization)
        )
    }
}
