//! Property tests for the exact substrate and the operator layer.

use num_traits::Signed;
use proptest::prelude::*;
use rrlab_core::functions::{Observable, StepFunction};
use rrlab_core::interval_set::IntervalSet;
use rrlab_core::joinings::{self, Joining, DEFAULT_DIGITS};
use rrlab_core::measure::LineMeasure;
use rrlab_core::metrics;
use rrlab_core::rational::{rat, rint, Rat};
use rrlab_core::system::{build, BuiltSystem, ConstructionDescriptor};

fn arb_rat() -> impl Strategy<Value = Rat> {
    (0i64..512, 1i64..64).prop_map(|(n, d)| rat(n % d, d))
}

fn arb_set() -> impl Strategy<Value = IntervalSet> {
    prop::collection::vec((arb_rat(), arb_rat()), 0..5).prop_map(|pairs| {
        IntervalSet::from_spans(
            pairs
                .into_iter()
                .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
                .collect(),
        )
    })
}

fn arb_step() -> impl Strategy<Value = StepFunction> {
    (
        prop::collection::btree_set((1i64..32, 32i64..33), 0..5),
        prop::collection::vec((-8i64..8, 1i64..5), 1..7),
    )
        .prop_map(|(cuts, raw_values)| {
            let mut breaks: Vec<Rat> = vec![rint(0)];
            breaks.extend(cuts.into_iter().map(|(n, d)| rat(n, d)));
            breaks.sort();
            breaks.dedup();
            let values: Vec<Rat> = (0..breaks.len())
                .map(|i| {
                    let (n, d) = raw_values[i % raw_values.len()];
                    rat(n, d)
                })
                .collect();
            StepFunction::from_pieces(breaks, values)
        })
}

fn odometer(depth: u32) -> BuiltSystem {
    build(&ConstructionDescriptor::odometer(depth), depth, 4096).unwrap()
}

fn chacon(depth: u32) -> BuiltSystem {
    build(&ConstructionDescriptor::chacon(depth), depth, 4096).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn canonicalization_is_idempotent(s in arb_set()) {
        let again = IntervalSet::from_spans(s.spans().to_vec());
        prop_assert_eq!(again, s);
    }

    #[test]
    fn inclusion_exclusion_exact(a in arb_set(), b in arb_set()) {
        let lhs = a.union(&b).measure() + a.intersect(&b).measure();
        prop_assert_eq!(lhs, a.measure() + b.measure());
    }

    #[test]
    fn subtract_partitions(a in arb_set(), b in arb_set()) {
        let inter = a.intersect(&b);
        let diff = a.subtract(&b);
        prop_assert_eq!(inter.measure() + diff.measure(), a.measure());
        prop_assert!(diff.intersect(&b).is_empty());
    }

    #[test]
    fn translation_preserves_measure(s in arb_set(), t in (0i64..16, 16i64..17)) {
        let t = rat(t.0, t.1) - rat(1, 2);
        if let Ok(img) = s.translate(&t) {
            prop_assert_eq!(img.measure(), s.measure());
        }
    }

    #[test]
    fn integration_is_bilinear(f in arb_step(), g in arb_step(), a in -4i64..4, b in -4i64..4) {
        let m = LineMeasure::lebesgue();
        let fa = f.to_affine().scale(&rint(a));
        let gb = g.to_affine().scale(&rint(b));
        let combo = fa.add(&gb);
        let lhs = combo.integral();
        let rhs = rint(a) * f.integral() + rint(b) * g.integral();
        prop_assert_eq!(lhs, rhs);
        // And against an atomic measure.
        let m2 = LineMeasure::dirac(rat(1, 3));
        let obs_f = Observable::Step(f.clone());
        let obs_g = Observable::Step(g.clone());
        let direct = rint(a) * m2.integrate(&obs_f) + rint(b) * m2.integrate(&obs_g);
        prop_assert_eq!(combo.eval(&rat(1, 3)), direct);
        let _ = m;
    }

    #[test]
    fn cyclic_power_law(x in arb_rat(), i in -40i64..40, j in -40i64..40) {
        let sys = odometer(5);
        let a = sys.apply_power_cyclic(&sys.apply_power_cyclic(&x, i), j);
        let b = sys.apply_power_cyclic(&x, i + j);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn image_mass_bookkeeping(s in arb_set(), i in -30i64..30) {
        let sys = chacon(4);
        let (img, unresolved) = sys.image_set(&s, i);
        prop_assert_eq!(img.measure() + &unresolved, s.measure());
        let bound = rint(i.unsigned_abs().min(sys.final_height() as u64) as i64)
            * sys.blind_mass();
        prop_assert!(unresolved <= bound);
        let cyc = sys.image_set_cyclic(&s, i);
        prop_assert_eq!(cyc.measure(), s.measure());
    }

    #[test]
    fn partial_agrees_with_cyclic_when_defined(x in arb_rat(), i in -20i64..20) {
        let sys = odometer(5);
        if let Some(y) = sys.apply_power(&x, i) {
            prop_assert_eq!(y, sys.apply_power_cyclic(&x, i));
        }
    }

    #[test]
    fn point_image_lies_in_set_image(x in arb_rat(), w in 1i64..64, i in -20i64..20) {
        let sys = chacon(4);
        let hi = (&x + rat(1, w * 64)).min(rat(1, 1));
        let s = IntervalSet::interval(x.clone(), hi);
        if s.is_empty() {
            return Ok(());
        }
        let (img, _) = sys.image_set(&s, i);
        if let Some(y) = sys.apply_power(&x, i) {
            prop_assert!(img.contains(&y));
        }
        let cyc = sys.image_set_cyclic(&s, i);
        prop_assert!(cyc.contains(&sys.apply_power_cyclic(&x, i)));
    }

    #[test]
    fn profile_is_stochastic(x in arb_rat(), n1 in -6i64..6, n2 in -6i64..6, w in 1i64..8) {
        let sys = odometer(6);
        let j = Joining::off_diagonal(vec![
            (n1, rat(w, 8)),
            (n2, rat(8 - w, 8)),
        ]).unwrap();
        let p = rrlab_core::approx::coefficients_at(&j, &sys, 3, &x).unwrap();
        for c in &p.coefficients {
            prop_assert!(!c.is_negative());
        }
        let total = p.coefficient_sum() + &p.residual + &p.unresolved;
        prop_assert_eq!(total, rint(1));
    }

    #[test]
    fn kr_line_is_a_metric(
        a in prop::collection::vec((arb_rat(), 1i64..5), 1..4),
        b in prop::collection::vec((arb_rat(), 1i64..5), 1..4),
        c in prop::collection::vec((arb_rat(), 1i64..5), 1..4),
    ) {
        let normalize = |atoms: Vec<(Rat, i64)>| {
            let total: i64 = atoms.iter().map(|(_, w)| w).sum();
            LineMeasure::from_parts(
                atoms.into_iter().map(|(p, w)| (p, rat(w, total))).collect(),
                StepFunction::constant(rint(0)),
            )
        };
        let (ma, mb, mc) = (normalize(a), normalize(b), normalize(c));
        let dab = metrics::kr_line(&ma, &mb).unwrap();
        let dba = metrics::kr_line(&mb, &ma).unwrap();
        prop_assert_eq!(&dab, &dba);
        prop_assert!(!dab.is_negative());
        let dac = metrics::kr_line(&ma, &mc).unwrap();
        let dbc = metrics::kr_line(&mb, &mc).unwrap();
        prop_assert!(dac <= &dab + &dbc);
        prop_assert_eq!(metrics::kr_line(&ma, &ma).unwrap(), rint(0));
    }

    #[test]
    fn duality_bound(f_idx in 0usize..8, a in prop::collection::vec((arb_rat(), 1i64..5), 1..4)) {
        let total: i64 = a.iter().map(|(_, w)| w).sum();
        let mu = LineMeasure::from_parts(
            a.into_iter().map(|(p, w)| (p, rat(w, total))).collect(),
            StepFunction::constant(rint(0)),
        );
        let nu = LineMeasure::lebesgue();
        let d = metrics::kr_line(&mu, &nu).unwrap();
        let fam = metrics::lipschitz_family(3);
        let f = Observable::Linear(fam[f_idx % fam.len()].clone());
        let gap = (mu.integrate(&f) - nu.integrate(&f)).abs();
        prop_assert!(gap <= d);
    }

    #[test]
    fn operator_contraction(f in arb_step(), name_idx in 0usize..5) {
        let sys = odometer(5);
        let name = Joining::builtin_names()[name_idx];
        let j = Joining::builtin(name).unwrap();
        let obs = Observable::Step(f);
        let img = joinings::apply_operator(&j, &sys, &obs, DEFAULT_DIGITS).unwrap();
        let aff = obs.to_affine();
        prop_assert_eq!(img.function.integral(), aff.integral());
        prop_assert!(img.function.integral_of_square() <= aff.integral_of_square());
    }
}
