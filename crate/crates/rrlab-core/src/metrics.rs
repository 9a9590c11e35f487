//! Kantorovich-Rubinstein (Wasserstein-1) distances, exact.
//!
//! On the line the closed form `integral of |F_mu - F_nu|` applies: both
//! CDFs are piecewise affine with rational jumps, so the integral splits at
//! sign changes and evaluates exactly. On the square the ground metric is
//! taxicab (costs stay rational) and the distance is an exact minimum-cost
//! transport, solved by successive shortest paths; a brute-force matcher
//! for tiny equal-weight instances serves as the independent oracle.

use crate::functions::PiecewiseLinear;
use crate::measure::LineMeasure;
use crate::rational::{rat, Rat};
use num_traits::{One, Signed, Zero};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    /// Unequal total masses: the 1-Lipschitz supremum is infinite.
    MassMismatch {
        lhs: Rat,
        rhs: Rat,
    },
    SizeExceeded {
        atoms: usize,
        cap: usize,
    },
    /// The exhaustive solver only covers tiny instances.
    ExhaustiveUnavailable(String),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::MassMismatch { lhs, rhs } => write!(
                f,
                "total masses differ: {} vs {}",
                crate::rational::format_rat(lhs),
                crate::rational::format_rat(rhs)
            ),
            MetricsError::SizeExceeded { atoms, cap } => {
                write!(f, "{atoms} atoms exceed the cap {cap}")
            }
            MetricsError::ExhaustiveUnavailable(msg) => {
                write!(f, "exhaustive solver unavailable: {msg}")
            }
        }
    }
}

impl std::error::Error for MetricsError {}

/// Exact W1 between two finite atomic measures of equal total mass:
/// merged-position sweep of `integral |F_a - F_b|`.
pub fn w1_atomic(a: &[(Rat, Rat)], b: &[(Rat, Rat)]) -> Rat {
    let mut events: Vec<(Rat, Rat)> = Vec::with_capacity(a.len() + b.len());
    for (pos, w) in a {
        events.push((pos.clone(), w.clone()));
    }
    for (pos, w) in b {
        events.push((pos.clone(), -w.clone()));
    }
    events.sort_by(|x, y| x.0.cmp(&y.0));
    let mut total = Rat::zero();
    let mut diff = Rat::zero();
    let mut prev: Option<Rat> = None;
    for (pos, delta) in events {
        if let Some(p) = prev {
            if pos > p {
                total += diff.abs() * (&pos - &p);
            }
        }
        diff += delta;
        prev = Some(pos);
    }
    total
}

/// Exact W1 on the line via the CDF closed form; errors when the total
/// masses differ.
pub fn kr_line(mu: &LineMeasure, nu: &LineMeasure) -> Result<Rat, MetricsError> {
    let m1 = mu.total_mass();
    let m2 = nu.total_mass();
    if m1 != m2 {
        return Err(MetricsError::MassMismatch { lhs: m1, rhs: m2 });
    }
    // Delta F = F_mu - F_nu is piecewise affine with jumps at atoms. Sweep
    // merged breakpoints over [0, 1]; between events Delta F is affine
    // (slope = density difference), so the integral of |Delta F| splits at
    // its root.
    let mut cuts: Vec<Rat> = vec![Rat::zero(), Rat::one()];
    for (pos, _) in mu.atoms().iter().chain(nu.atoms().iter()) {
        cuts.push(pos.clone());
    }
    for b in mu
        .density()
        .breaks()
        .iter()
        .chain(nu.density().breaks().iter())
    {
        cuts.push(b.clone());
    }
    cuts.sort();
    cuts.dedup();
    let mut total = Rat::zero();
    let mut delta = Rat::zero(); // F_mu(t) - F_nu(t) carried across cuts
    for w in cuts.windows(2) {
        let (lo, hi) = (&w[0], &w[1]);
        // Atoms exactly at lo enter the CDF difference at lo.
        for (pos, wgt) in mu.atoms() {
            if pos == lo {
                delta += wgt;
            }
        }
        for (pos, wgt) in nu.atoms() {
            if pos == lo {
                delta -= wgt;
            }
        }
        let slope = mu.density().eval(lo) - nu.density().eval(lo);
        // integral over [lo, hi) of |delta + slope (t - lo)| dt
        let len = hi - lo;
        let end = &delta + &slope * &len;
        if delta.is_zero() && end.is_zero() {
            // identically zero piece
        } else if !delta.is_negative() && !end.is_negative()
            || !delta.is_positive() && !end.is_positive()
        {
            // No sign change: trapezoid of |values|.
            total += (delta.abs() + end.abs()) * &len / rat(2, 1);
        } else {
            // One sign change at t* = lo - delta/slope.
            let root = -&delta / &slope;
            total += (delta.abs() * &root + end.abs() * (&len - &root)) / rat(2, 1);
        }
        delta = end;
    }
    Ok(total)
}

/// Atoms in the unit square with non-negative weights.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PlaneAtomicMeasure {
    pub atoms: Vec<((Rat, Rat), Rat)>,
}

impl PlaneAtomicMeasure {
    pub fn new(atoms: Vec<((Rat, Rat), Rat)>) -> Self {
        let atoms = atoms.into_iter().filter(|(_, w)| !w.is_zero()).collect();
        PlaneAtomicMeasure { atoms }
    }

    pub fn total_mass(&self) -> Rat {
        self.atoms.iter().map(|(_, w)| w).sum()
    }
}

/// Taxicab ground distance; keeps every transport cost rational.
fn d1(p: &(Rat, Rat), q: &(Rat, Rat)) -> Rat {
    (&p.0 - &q.0).abs() + (&p.1 - &q.1).abs()
}

pub const DEFAULT_ATOM_CAP: usize = 512;

/// Exact optimal transport cost between plane atomic measures under the
/// taxicab metric: successive shortest augmenting paths with potentials,
/// all arithmetic rational.
pub fn kr_square(
    mu: &PlaneAtomicMeasure,
    nu: &PlaneAtomicMeasure,
    atom_cap: usize,
) -> Result<Rat, MetricsError> {
    let m1 = mu.total_mass();
    let m2 = nu.total_mass();
    if m1 != m2 {
        return Err(MetricsError::MassMismatch { lhs: m1, rhs: m2 });
    }
    let atoms = mu.atoms.len() + nu.atoms.len();
    if atoms > atom_cap {
        return Err(MetricsError::SizeExceeded {
            atoms,
            cap: atom_cap,
        });
    }
    if mu.atoms.is_empty() {
        return Ok(Rat::zero());
    }
    let ns = mu.atoms.len();
    let nt = nu.atoms.len();
    let cost: Vec<Vec<Rat>> = mu
        .atoms
        .iter()
        .map(|(p, _)| nu.atoms.iter().map(|(q, _)| d1(p, q)).collect())
        .collect();
    let mut supply: Vec<Rat> = mu.atoms.iter().map(|(_, w)| w.clone()).collect();
    let mut demand: Vec<Rat> = nu.atoms.iter().map(|(_, w)| w.clone()).collect();
    let mut flow: Vec<Vec<Rat>> = vec![vec![Rat::zero(); nt]; ns];
    // Node potentials keeping all residual reduced costs non-negative:
    // forward (i -> j): c_ij + ps[i] - pt[j] >= 0, zero on flow arcs.
    let mut ps = vec![Rat::zero(); ns];
    let mut pt = vec![Rat::zero(); nt];
    while supply.iter().any(|s| !s.is_zero()) {
        // Dijkstra over the residual graph with reduced costs; the bipartite
        // graph is complete, so every node is reached.
        let mut dist_s: Vec<Option<Rat>> = (0..ns)
            .map(|i| (!supply[i].is_zero()).then(Rat::zero))
            .collect();
        let mut dist_t: Vec<Option<Rat>> = vec![None; nt];
        let mut done_s = vec![false; ns];
        let mut done_t = vec![false; nt];
        // Parent of a sink is the source that relaxed it; parent of a
        // source is the sink whose residual back-arc relaxed it.
        let mut par_t: Vec<usize> = vec![usize::MAX; nt];
        let mut par_s: Vec<usize> = vec![usize::MAX; ns];
        loop {
            // Pick the unfinished node with the smallest distance.
            let mut pick: Option<(bool, usize, Rat)> = None; // (is_sink, idx, dist)
            for i in 0..ns {
                if !done_s[i] {
                    if let Some(d) = &dist_s[i] {
                        if pick.as_ref().is_none_or(|(_, _, best)| d < best) {
                            pick = Some((false, i, d.clone()));
                        }
                    }
                }
            }
            for j in 0..nt {
                if !done_t[j] {
                    if let Some(d) = &dist_t[j] {
                        if pick.as_ref().is_none_or(|(_, _, best)| d < best) {
                            pick = Some((true, j, d.clone()));
                        }
                    }
                }
            }
            let Some((is_sink, idx, d)) = pick else { break };
            if is_sink {
                done_t[idx] = true;
                // Residual back-arcs j -> i exist where flow[i][j] > 0.
                for i in 0..ns {
                    if done_s[i] || flow[i][idx].is_zero() {
                        continue;
                    }
                    let rc = &pt[idx] - &ps[i] - &cost[i][idx];
                    debug_assert!(!rc.is_negative());
                    let nd = &d + &rc;
                    if dist_s[i].as_ref().is_none_or(|cur| nd < *cur) {
                        dist_s[i] = Some(nd);
                        par_s[i] = idx;
                    }
                }
            } else {
                done_s[idx] = true;
                for j in 0..nt {
                    if done_t[j] {
                        continue;
                    }
                    let rc = &cost[idx][j] + &ps[idx] - &pt[j];
                    debug_assert!(!rc.is_negative());
                    let nd = &d + &rc;
                    if dist_t[j].as_ref().is_none_or(|cur| nd < *cur) {
                        dist_t[j] = Some(nd);
                        par_t[j] = idx;
                    }
                }
            }
        }
        // Cheapest sink still demanding mass.
        let target = (0..nt)
            .filter(|&j| !demand[j].is_zero())
            .min_by(|&a, &b| dist_t[a].as_ref().unwrap().cmp(dist_t[b].as_ref().unwrap()))
            .expect("feasible instance has a demanding sink");
        // Walk the augmenting path back to a seeded source (no parent).
        let mut path: Vec<(usize, usize, bool)> = Vec::new(); // (i, j, forward)
        let mut j = target;
        let start = loop {
            let i = par_t[j];
            path.push((i, j, true));
            if par_s[i] == usize::MAX {
                break i;
            }
            let jj = par_s[i];
            path.push((i, jj, false));
            j = jj;
        };
        // Bottleneck: source supply, sink demand, and back-arc flows.
        let mut amount = supply[start].clone().min(demand[target].clone());
        for (i, j, forward) in &path {
            if !forward {
                amount = amount.min(flow[*i][*j].clone());
            }
        }
        debug_assert!(amount.is_positive());
        supply[start] -= &amount;
        demand[target] -= &amount;
        for (i, j, forward) in &path {
            if *forward {
                flow[*i][*j] += &amount;
            } else {
                flow[*i][*j] -= &amount;
            }
        }
        // Potential update keeps reduced costs non-negative next round.
        for i in 0..ns {
            if let Some(d) = &dist_s[i] {
                ps[i] += d;
            }
        }
        for j in 0..nt {
            if let Some(d) = &dist_t[j] {
                pt[j] += d;
            }
        }
    }
    let mut total = Rat::zero();
    for i in 0..ns {
        for j in 0..nt {
            if !flow[i][j].is_zero() {
                total += &flow[i][j] * &cost[i][j];
            }
        }
    }
    Ok(total)
}

/// Exhaustive exact solver for tiny instances: equal counts with equal
/// weights are matched over all permutations; any instance with at most
/// five atoms a side is solved by exhaustive greedy branching.
pub fn kr_square_exhaustive(
    mu: &PlaneAtomicMeasure,
    nu: &PlaneAtomicMeasure,
) -> Result<Rat, MetricsError> {
    let m1 = mu.total_mass();
    let m2 = nu.total_mass();
    if m1 != m2 {
        return Err(MetricsError::MassMismatch { lhs: m1, rhs: m2 });
    }
    let ns = mu.atoms.len();
    let nt = nu.atoms.len();
    if ns == nt && ns <= 8 && equal_weights(mu) && equal_weights(nu) {
        // Equal-weight case: optimal transport is an optimal assignment.
        let w = mu.atoms[0].1.clone();
        let mut perm: Vec<usize> = (0..nt).collect();
        let mut best: Option<Rat> = None;
        permute(&mut perm, 0, &mut |p| {
            let mut c = Rat::zero();
            for (i, &j) in p.iter().enumerate() {
                c += d1(&mu.atoms[i].0, &nu.atoms[j].0);
            }
            c *= &w;
            if best.as_ref().is_none_or(|b| c < *b) {
                best = Some(c);
            }
        });
        return Ok(best.unwrap_or_else(Rat::zero));
    }
    if ns <= 5 && nt <= 5 {
        let supply: Vec<Rat> = mu.atoms.iter().map(|(_, w)| w.clone()).collect();
        let demand: Vec<Rat> = nu.atoms.iter().map(|(_, w)| w.clone()).collect();
        let mut best: Option<Rat> = None;
        branch_flows(mu, nu, supply, demand, Rat::zero(), &mut best);
        return Ok(best.unwrap_or_else(Rat::zero));
    }
    Err(MetricsError::ExhaustiveUnavailable(format!(
        "{ns} x {nt} instance with unequal weights"
    )))
}

fn equal_weights(m: &PlaneAtomicMeasure) -> bool {
    m.atoms.windows(2).all(|w| w[0].1 == w[1].1)
}

fn permute(perm: &mut Vec<usize>, at: usize, visit: &mut impl FnMut(&[usize])) {
    if at == perm.len() {
        visit(perm);
        return;
    }
    for i in at..perm.len() {
        perm.swap(at, i);
        permute(perm, at + 1, visit);
        perm.swap(at, i);
    }
}

/// Enumerates extreme flows: route the first remaining supply into every
/// sink with demand, recursing. Every basic feasible flow is reachable, so
/// the minimum over leaves is the exact optimum.
fn branch_flows(
    mu: &PlaneAtomicMeasure,
    nu: &PlaneAtomicMeasure,
    supply: Vec<Rat>,
    demand: Vec<Rat>,
    acc: Rat,
    best: &mut Option<Rat>,
) {
    if let Some(b) = best {
        if acc >= *b {
            return; // cost only grows
        }
    }
    let Some(i) = supply.iter().position(|s| !s.is_zero()) else {
        if best.as_ref().is_none_or(|b| acc < *b) {
            *best = Some(acc);
        }
        return;
    };
    for j in 0..demand.len() {
        if demand[j].is_zero() {
            continue;
        }
        let amount = supply[i].clone().min(demand[j].clone());
        let mut s2 = supply.clone();
        let mut d2 = demand.clone();
        s2[i] -= &amount;
        d2[j] -= &amount;
        let step = d1(&mu.atoms[i].0, &nu.atoms[j].0) * &amount;
        branch_flows(mu, nu, s2, d2, &acc + &step, best);
    }
}

/// The deterministic 1-Lipschitz test family on the line: the centered
/// identity, unit-slope hats peaking at `i/n`, and capped distance
/// functions, all with sup norm at most 1.
pub fn lipschitz_family(n: usize) -> Vec<PiecewiseLinear> {
    assert!(n >= 1);
    let one = Rat::one();
    let half = rat(1, 2);
    let mut fs = Vec::new();
    // f(x) = x - 1/2 (already within [-1/2, 1/2]).
    fs.push(PiecewiseLinear::from_nodes(vec![
        (Rat::zero(), -half.clone()),
        (one.clone(), half.clone()),
    ]));
    for i in 0..=n {
        let c = rat(i as i64, n as i64);
        // Hat peaking at c with unit slopes, height 1/2.
        fs.push(hat_at(&c, &half));
        // Capped distance: min(|x - c|, 1/2).
        fs.push(capped_distance(&c, &half));
    }
    fs
}

fn hat_at(c: &Rat, height: &Rat) -> PiecewiseLinear {
    let zero = Rat::zero();
    let one = Rat::one();
    let mut nodes: Vec<(Rat, Rat)> = Vec::new();
    let left = c - height;
    let right = c + height;
    nodes.push((zero.clone(), peak_eval(&zero, c, height)));
    for p in [left, c.clone(), right] {
        if p > zero && p < one {
            nodes.push((p.clone(), peak_eval(&p, c, height)));
        }
    }
    nodes.push((one.clone(), peak_eval(&one, c, height)));
    nodes.dedup_by(|a, b| a.0 == b.0);
    PiecewiseLinear::from_nodes(nodes)
}

fn peak_eval(x: &Rat, c: &Rat, height: &Rat) -> Rat {
    let v = height - (x - c).abs();
    if v.is_negative() {
        Rat::zero()
    } else {
        v
    }
}

fn capped_distance(c: &Rat, cap: &Rat) -> PiecewiseLinear {
    let zero = Rat::zero();
    let one = Rat::one();
    let eval = |x: &Rat| -> Rat {
        let v = (x - c).abs();
        if v > *cap {
            cap.clone()
        } else {
            v
        }
    };
    let mut nodes: Vec<(Rat, Rat)> = Vec::new();
    nodes.push((zero.clone(), eval(&zero)));
    for p in [c - cap, c.clone(), c + cap] {
        if p > zero && p < one {
            nodes.push((p.clone(), eval(&p)));
        }
    }
    nodes.push((one.clone(), eval(&one)));
    nodes.dedup_by(|a, b| a.0 == b.0);
    PiecewiseLinear::from_nodes(nodes)
}

/// Piecewise-bilinear test function on the unit square with rational grid
/// nodes; 1-Lipschitz for the taxicab metric when both partial slopes stay
/// within [-1, 1].
#[derive(Clone, Debug)]
pub struct PlaneTest {
    pub name: String,
    x_nodes: Vec<Rat>,
    y_nodes: Vec<Rat>,
    /// values[i][j] at (x_nodes[i], y_nodes[j]).
    values: Vec<Vec<Rat>>,
}

impl PlaneTest {
    /// Separable product `f(x) g(y)` of piecewise-linear factors.
    pub fn product(name: &str, f: &PiecewiseLinear, g: &PiecewiseLinear) -> Self {
        let x_nodes: Vec<Rat> = f.nodes().iter().map(|(x, _)| x.clone()).collect();
        let y_nodes: Vec<Rat> = g.nodes().iter().map(|(y, _)| y.clone()).collect();
        let values = f
            .nodes()
            .iter()
            .map(|(_, fv)| g.nodes().iter().map(|(_, gv)| fv * gv).collect())
            .collect();
        PlaneTest {
            name: name.into(),
            x_nodes,
            y_nodes,
            values,
        }
    }

    /// Separable average `(f(x) + g(y))/2`.
    pub fn average(name: &str, f: &PiecewiseLinear, g: &PiecewiseLinear) -> Self {
        let x_nodes: Vec<Rat> = f.nodes().iter().map(|(x, _)| x.clone()).collect();
        let y_nodes: Vec<Rat> = g.nodes().iter().map(|(y, _)| y.clone()).collect();
        let half = rat(1, 2);
        let values = f
            .nodes()
            .iter()
            .map(|(_, fv)| g.nodes().iter().map(|(_, gv)| (fv + gv) * &half).collect())
            .collect();
        PlaneTest {
            name: name.into(),
            x_nodes,
            y_nodes,
            values,
        }
    }

    pub fn eval(&self, x: &Rat, y: &Rat) -> Rat {
        let (i, j) = (cell_of(&self.x_nodes, x), cell_of(&self.y_nodes, y));
        let (c00, c10, c01, c11) = self.cell_coeffs(i, j);
        c00 + c10 * x + c01 * y + c11 * x * y
    }

    /// Bilinear coefficients of cell (i, j) in global coordinates:
    /// `F = c00 + c10 x + c01 y + c11 x y`.
    pub fn cell_coeffs(&self, i: usize, j: usize) -> (Rat, Rat, Rat, Rat) {
        let (x0, x1) = (&self.x_nodes[i], &self.x_nodes[i + 1]);
        let (y0, y1) = (&self.y_nodes[j], &self.y_nodes[j + 1]);
        let dx = x1 - x0;
        let dy = y1 - y0;
        let v00 = &self.values[i][j];
        let v10 = &self.values[i + 1][j];
        let v01 = &self.values[i][j + 1];
        let v11 = &self.values[i + 1][j + 1];
        let ax = (v10 - v00) / &dx; // d/dx at y = y0
        let ay = (v01 - v00) / &dy; // d/dy at x = x0
        let axy = ((v11 - v10) - (v01 - v00)) / (&dx * &dy);
        // F = v00 + ax (x-x0) + ay (y-y0) + axy (x-x0)(y-y0)
        let c11 = axy.clone();
        let c10 = &ax - &axy * y0;
        let c01 = &ay - &axy * x0;
        let c00 = v00 - &ax * x0 - &ay * y0 + &axy * x0 * y0;
        (c00, c10, c01, c11)
    }

    pub fn x_nodes(&self) -> &[Rat] {
        &self.x_nodes
    }

    pub fn y_nodes(&self) -> &[Rat] {
        &self.y_nodes
    }

    /// Exact double integral over the unit square.
    pub fn double_integral(&self) -> Rat {
        let mut total = Rat::zero();
        let quarter = rat(1, 4);
        for i in 0..self.x_nodes.len() - 1 {
            let dx = &self.x_nodes[i + 1] - &self.x_nodes[i];
            for j in 0..self.y_nodes.len() - 1 {
                let dy = &self.y_nodes[j + 1] - &self.y_nodes[j];
                // Bilinear cell mean = average of corner values.
                let mean = (&self.values[i][j]
                    + &self.values[i + 1][j]
                    + &self.values[i][j + 1]
                    + &self.values[i + 1][j + 1])
                    * &quarter;
                total += mean * &dx * &dy;
            }
        }
        total
    }

    /// Largest absolute partial slopes (x then y), exact.
    pub fn max_slopes(&self) -> (Rat, Rat) {
        let mut sx = Rat::zero();
        let mut sy = Rat::zero();
        for i in 0..self.x_nodes.len() - 1 {
            let dx = &self.x_nodes[i + 1] - &self.x_nodes[i];
            for j in 0..self.y_nodes.len() - 1 {
                let dy = &self.y_nodes[j + 1] - &self.y_nodes[j];
                let edges_x = [
                    (&self.values[i][j], &self.values[i + 1][j]),
                    (&self.values[i][j + 1], &self.values[i + 1][j + 1]),
                ];
                for (a, b) in edges_x {
                    let s = ((b - a) / &dx).abs();
                    if s > sx {
                        sx = s;
                    }
                }
                let edges_y = [
                    (&self.values[i][j], &self.values[i][j + 1]),
                    (&self.values[i + 1][j], &self.values[i + 1][j + 1]),
                ];
                for (a, b) in edges_y {
                    let s = ((b - a) / &dy).abs();
                    if s > sy {
                        sy = s;
                    }
                }
            }
        }
        (sx, sy)
    }
}

fn cell_of(nodes: &[Rat], x: &Rat) -> usize {
    let i = nodes.partition_point(|n| n <= x);
    i.clamp(1, nodes.len() - 1) - 1
}

/// Deterministic plane test family: products and averages of line hats.
pub fn plane_test_family(n: usize) -> Vec<PlaneTest> {
    let hats = lipschitz_family(n.max(1));
    let mut out = Vec::new();
    let take = hats.len().min(3);
    for (i, f) in hats.iter().take(take).enumerate() {
        for (j, g) in hats.iter().take(take).enumerate() {
            out.push(PlaneTest::product(&format!("prod_{i}_{j}"), f, g));
            out.push(PlaneTest::average(&format!("avg_{i}_{j}"), f, g));
        }
    }
    out
}

/// Discretizes a joining onto the stage-k level-cell grid: the atom for
/// cell `(i, j)` sits at the cell center and carries the joining's mass of
/// `level_i x level_j`. The d1 diameter of a cell bounds the discretization
/// error.
pub fn discretize_joining(
    joining: &crate::joinings::Joining,
    sys: &crate::system::BuiltSystem,
    k: u32,
    digits: u32,
) -> Result<PlaneAtomicMeasure, crate::joinings::JoiningError> {
    let stage = sys.stage(k);
    let n_k = stage.height;
    let alpha = joining.density_alpha();
    let shifts = joining.atom_shifts(sys, digits)?;
    let width = stage.level_width();
    let half = rat(1, 2);
    let center = |lvl: usize| -> Rat { &stage.levels[lvl].lo + &width * &half };
    let mut atoms: Vec<((Rat, Rat), Rat)> = Vec::new();
    // Product part: alpha * lambda(level_i) * lambda(level_j) per cell.
    if !alpha.is_zero() {
        let cell_mass = &alpha * &width * &width;
        for i in 0..n_k {
            for j in 0..n_k {
                atoms.push(((center(i), center(j)), cell_mass.clone()));
            }
        }
    }
    // Atomic part: mass of level_i mapped into level_j under each shift.
    for (power, w) in &shifts {
        if w.is_zero() {
            continue;
        }
        for i in 0..n_k {
            let img = sys.image_set_cyclic(&stage.level_set(i), *power);
            for j in 0..n_k {
                let m = img.intersect(&stage.level_set(j)).measure();
                if !m.is_zero() {
                    atoms.push(((center(i), center(j)), w * &m));
                }
            }
        }
    }
    // Merge duplicates.
    atoms.sort_by(|a, b| a.0.cmp(&b.0));
    let mut merged: Vec<((Rat, Rat), Rat)> = Vec::new();
    for (pos, w) in atoms {
        match merged.last_mut() {
            Some((p, pw)) if *p == pos => *pw += w,
            _ => merged.push((pos, w)),
        }
    }
    Ok(PlaneAtomicMeasure::new(merged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{Observable, StepFunction};
    use crate::rational::rint;

    #[test]
    fn dirac_distance_is_separation() {
        let d = kr_line(
            &LineMeasure::dirac(rat(1, 3)),
            &LineMeasure::dirac(rat(3, 4)),
        )
        .unwrap();
        assert_eq!(d, rat(5, 12));
    }

    #[test]
    fn identical_measures_are_at_distance_zero() {
        let m = LineMeasure::from_parts(
            vec![(rat(1, 4), rat(1, 2))],
            StepFunction::from_pieces(vec![rint(0), rat(1, 2)], vec![rint(1), rint(0)]),
        );
        assert_eq!(kr_line(&m, &m).unwrap(), rint(0));
    }

    #[test]
    fn lebesgue_to_center_dirac() {
        // W1(lambda, delta_{1/2}) = 1/4.
        let d = kr_line(&LineMeasure::lebesgue(), &LineMeasure::dirac(rat(1, 2))).unwrap();
        assert_eq!(d, rat(1, 4));
    }

    #[test]
    fn mass_mismatch_rejected() {
        let err = kr_line(&LineMeasure::lebesgue(), &LineMeasure::zero());
        assert!(matches!(err, Err(MetricsError::MassMismatch { .. })));
    }

    #[test]
    fn atomic_sweep_agrees_with_general() {
        let a = vec![(rat(1, 8), rat(1, 3)), (rat(1, 2), rat(2, 3))];
        let b = vec![(rat(1, 4), rat(1, 2)), (rat(7, 8), rat(1, 2))];
        let via_atoms = w1_atomic(&a, &b);
        let ma = LineMeasure::from_parts(a, StepFunction::constant(rint(0)));
        let mb = LineMeasure::from_parts(b, StepFunction::constant(rint(0)));
        assert_eq!(via_atoms, kr_line(&ma, &mb).unwrap());
    }

    #[test]
    fn square_examples() {
        let single = |x: Rat, y: Rat| PlaneAtomicMeasure::new(vec![((x, y), rint(1))]);
        assert_eq!(
            kr_square_exhaustive(&single(rint(0), rint(0)), &single(rat(1, 2), rat(1, 4))).unwrap(),
            rat(3, 4)
        );
        // Crossed pairs: both matchings cost 1.
        let mu = PlaneAtomicMeasure::new(vec![
            ((rint(0), rint(0)), rat(1, 2)),
            ((rint(1), rint(1)), rat(1, 2)),
        ]);
        let nu = PlaneAtomicMeasure::new(vec![
            ((rint(0), rint(1)), rat(1, 2)),
            ((rint(1), rint(0)), rat(1, 2)),
        ]);
        assert_eq!(kr_square_exhaustive(&mu, &nu).unwrap(), rint(1));
        assert_eq!(kr_square(&mu, &nu, DEFAULT_ATOM_CAP).unwrap(), rint(1));
    }

    #[test]
    fn family_members_are_one_lipschitz() {
        for f in lipschitz_family(4) {
            assert!(f.lipschitz_constant() <= rint(1));
            assert!(f.sup_norm() <= rint(1));
        }
        // n = 1 contains x - 1/2.
        let fam = lipschitz_family(1);
        assert_eq!(fam[0].eval(&rat(1, 2)), rint(0));
        assert_eq!(fam[0].eval(&rint(1)), rat(1, 2));
    }

    #[test]
    fn hat_peak_value() {
        let fam = lipschitz_family(4);
        // Hat centered at 1/2 evaluates to its height there.
        let hat = fam
            .iter()
            .find(|f| f.eval(&rat(1, 2)) == rat(1, 2) && f.eval(&rint(0)) == rint(0))
            .expect("centered hat present");
        assert_eq!(hat.eval(&rat(1, 2)), rat(1, 2));
    }

    #[test]
    fn duality_bound_on_line() {
        // |integral f d(mu - nu)| <= W1(mu, nu) for 1-Lipschitz f.
        let mu = LineMeasure::from_parts(
            vec![(rat(1, 8), rat(1, 2)), (rat(3, 4), rat(1, 2))],
            StepFunction::constant(rint(0)),
        );
        let nu = LineMeasure::lebesgue();
        let d = kr_line(&mu, &nu).unwrap();
        for f in lipschitz_family(4) {
            let obs = Observable::Linear(f);
            let gap = (mu.integrate(&obs) - nu.integrate(&obs)).abs();
            assert!(gap <= d);
        }
    }

    #[test]
    fn plane_test_properties() {
        for t in plane_test_family(2) {
            let (sx, sy) = t.max_slopes();
            assert!(sx <= rint(1), "{}", t.name);
            assert!(sy <= rint(1), "{}", t.name);
        }
        // Product of the identity-like hats has computable integral.
        let fam = lipschitz_family(1);
        let t = PlaneTest::product("id2", &fam[0], &fam[0]);
        // integral (x-1/2)(y-1/2) = 0 by symmetry.
        assert_eq!(t.double_integral(), rint(0));
        assert_eq!(t.eval(&rint(0), &rint(0)), rat(1, 4));
    }
}
