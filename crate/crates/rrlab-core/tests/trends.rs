//! Convergence-trend and cross-route checks that complement the per-op
//! unit tests: operator errors shrinking in the stage, good-level fractions
//! climbing, the fiber-distance bound on operator values, and the
//! discretized-transport route agreeing with the test-function route.

use num_traits::{Signed, Zero};
use rrlab_core::approx;
use rrlab_core::functions::{Observable, PiecewiseLinear};
use rrlab_core::joinings::{self, Joining, DEFAULT_DIGITS};
use rrlab_core::metrics;
use rrlab_core::rational::{rat, rint, Rat};
use rrlab_core::system::{build, BuiltSystem, ConstructionDescriptor};
use rrlab_core::towers;

fn odometer(depth: u32) -> BuiltSystem {
    build(&ConstructionDescriptor::odometer(depth), depth, 4096).unwrap()
}

#[test]
fn product_mixture_operator_error_decreases() {
    let f = Observable::Linear(PiecewiseLinear::identity());
    let j = Joining::builtin("productmix-third").unwrap();
    let sys = odometer(9);
    let mut prev: Option<Rat> = None;
    for k in 2..=6u32 {
        let (_, combo) =
            approx::build_combination(&j, &sys, k, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
        let err = approx::sot_error(&combo, &j, &sys, &f, DEFAULT_DIGITS).unwrap();
        if let Some(p) = &prev {
            assert!(err < *p, "error rose at k={k}");
        }
        prev = Some(err);
    }
    // Same trend on a spacered construction.
    let rs = build(&ConstructionDescriptor::rigid_spacered(5), 5, 4096).unwrap();
    let mut prev: Option<Rat> = None;
    for k in 1..=3u32 {
        let (_, combo) =
            approx::build_combination(&j, &rs, k, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
        let err = approx::sot_error(&combo, &j, &rs, &f, DEFAULT_DIGITS).unwrap();
        if let Some(p) = &prev {
            assert!(err < *p, "error rose at k={k}");
        }
        prev = Some(err);
    }
}

#[test]
fn two_adic_operator_error_non_increasing() {
    let f = Observable::Linear(PiecewiseLinear::identity());
    let j = Joining::builtin("twoadic-neg-third").unwrap();
    let sys = odometer(9);
    let mut prev: Option<Rat> = None;
    for k in 3..=6u32 {
        let (_, combo) =
            approx::build_combination(&j, &sys, k, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
        let err = approx::sot_error(&combo, &j, &sys, &f, DEFAULT_DIGITS).unwrap();
        if let Some(p) = &prev {
            assert!(err <= *p, "error rose at k={k}");
        }
        prev = Some(err);
    }
}

#[test]
fn two_adic_plane_error_strictly_smaller_deeper() {
    let j = Joining::builtin("twoadic-neg-third").unwrap();
    let sys = odometer(9);
    let tests = metrics::plane_test_family(2);
    let (_, c3) = approx::build_combination(&j, &sys, 3, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
    let (_, c6) = approx::build_combination(&j, &sys, 6, &rat(1, 4), 4, DEFAULT_DIGITS).unwrap();
    let w3 = approx::weak_star_error(&c3, &j, &sys, &tests, DEFAULT_DIGITS).unwrap();
    let w6 = approx::weak_star_error(&c6, &j, &sys, &tests, DEFAULT_DIGITS).unwrap();
    assert!(w6 < w3);
}

#[test]
fn two_adic_base_point_scores_high() {
    let j = Joining::builtin("twoadic-neg-third").unwrap();
    let sys = odometer(7);
    let sel = approx::select_base_point(&j, &sys, 4, &rat(1, 4), 8, DEFAULT_DIGITS).unwrap();
    assert!(sel.score >= rint(1) - rat(1, 4));
    assert!(sel.threshold_met);
}

#[test]
fn good_level_fraction_climbs_with_stage() {
    let jm = Joining::builtin("mix-0-3").unwrap();
    let eps = rat(1, 4);
    let ch = build(&ConstructionDescriptor::chacon(5), 5, 4096).unwrap();
    let mut prev = Rat::zero();
    for k in 1..=3u32 {
        let diag = towers::good_levels(&jm, &ch, k, &eps, 8, DEFAULT_DIGITS).unwrap();
        assert!(diag.good_fraction >= prev, "fraction fell at k={k}");
        prev = diag.good_fraction.clone();
    }
    // Past the threshold the fraction clears the target proportion.
    assert!(prev >= rint(1) - &eps);
    let rs = build(&ConstructionDescriptor::rigid_spacered(5), 5, 4096).unwrap();
    let mut prev = Rat::zero();
    for k in 1..=3u32 {
        let diag = towers::good_levels(&jm, &rs, k, &eps, 8, DEFAULT_DIGITS).unwrap();
        assert!(diag.good_fraction >= prev, "fraction fell at k={k}");
        prev = diag.good_fraction.clone();
    }
    assert_eq!(prev, rint(1));
}

#[test]
fn escape_integral_closed_form_for_product() {
    // Constant fibers make the escape integrand constant, so each level's
    // side is exactly n_k lambda(A_k) lambda(R_k complement).
    let rs = build(&ConstructionDescriptor::rigid_spacered(5), 5, 4096).unwrap();
    let prod = Joining::product();
    for k in 1..=2u32 {
        let rows = approx::fiber_escape_check(&prod, &rs, k, DEFAULT_DIGITS).unwrap();
        let stage = rs.stage(k);
        let residual_mass = rint(1) - rs.stage_mass(k);
        let want = rint(stage.height as i64) * stage.level_width() * &residual_mass;
        for row in rows {
            assert_eq!(row.lhs, want, "k={k} level {}", row.level);
            assert!(row.pass);
        }
    }
}

#[test]
fn operator_gap_bounded_by_fiber_distance() {
    // For 1-Lipschitz tests, |A f(x) - A f(y)| never exceeds the
    // Kantorovich-Rubinstein distance between the two fibers.
    let sys = odometer(7);
    let fam = metrics::lipschitz_family(4);
    let points = [rat(1, 5), rat(3, 7), rat(11, 16), rat(2, 3)];
    for name in ["offdiag-1", "mix-0-3", "productmix-third", "product"] {
        let j = Joining::builtin(name).unwrap();
        for a in &points {
            for b in &points {
                let fa = joinings::disintegrate(&j, &sys, a).unwrap();
                let fb = joinings::disintegrate(&j, &sys, b).unwrap();
                let d = metrics::kr_line(&fa.measure, &fb.measure).unwrap();
                for f in &fam {
                    let obs = Observable::Linear(f.clone());
                    let gap = (fa.measure.integrate(&obs) - fb.measure.integrate(&obs)).abs();
                    assert!(gap <= d, "{name}");
                }
            }
        }
    }
}

#[test]
fn discretized_transport_route_cross_checks() {
    let sys = odometer(8);
    // A graph joining against its own reconstruction discretizes to the
    // same atoms: zero transport cost.
    let j2 = Joining::graph(2);
    let a = metrics::discretize_joining(&j2, &sys, 3, DEFAULT_DIGITS).unwrap();
    let b = metrics::discretize_joining(&j2, &sys, 3, DEFAULT_DIGITS).unwrap();
    assert_eq!(
        metrics::kr_square(&a, &b, metrics::DEFAULT_ATOM_CAP).unwrap(),
        rint(0)
    );
    // The two-adic graph versus its matching power: the discretized
    // transport distance shrinks with the stage.
    let jt = Joining::builtin("twoadic-neg-third").unwrap();
    let mut prev: Option<Rat> = None;
    for k in 3..=5u32 {
        let m = rrlab_core::twoadic::two_adic_shift_mod(&rat(-1, 3), k).unwrap();
        let m: i64 = m.to_string().parse().unwrap();
        let lhs = metrics::discretize_joining(&jt, &sys, k, DEFAULT_DIGITS).unwrap();
        let rhs = metrics::discretize_joining(&Joining::graph(m), &sys, k, DEFAULT_DIGITS).unwrap();
        let d = metrics::kr_square(&lhs, &rhs, metrics::DEFAULT_ATOM_CAP).unwrap();
        if let Some(p) = &prev {
            assert!(&d <= p, "discretized distance rose at k={k}");
        }
        prev = Some(d);
    }
}
