use hkgeom::bessel::{besq_transition, hyp0f1};
use hkgeom::io::{measure_from_csv, measure_from_json, measure_to_csv};
use hkgeom::let_solver::{hk_sq_scaled, verify_optimality};
use hkgeom::measure::hellinger_sq;
use hkgeom::random_measures::{lambda_measure, sample_batch, substream, BaseMeasure, IntensityParams, Law};
use hkgeom::regularize::{mollify, MollifierConfig};
use hkgeom::transport::wasserstein_sq;
use hkgeom::{ghk_sq, hk_sq, solve_let, DiscreteMeasure, LetKind, LetProblem};
use proptest::prelude::*;

fn measure(dim: usize, max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((prop::collection::vec(-2.0..2.0f64, dim), 0.05..5.0f64), 1..=max_atoms).prop_map(
        move |atoms| {
            let (points, weights) = atoms.into_iter().unzip();
            DiscreteMeasure::new(dim, points, weights).unwrap()
        },
    )
}

fn pair(max_atoms: usize) -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure)> {
    (1..=2usize).prop_flat_map(move |d| (measure(d, max_atoms), measure(d, max_atoms)))
}

fn hk(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    hk_sq(a, b, 1e-10).unwrap().max(0.0).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hk_is_a_metric(
        (a, b, c) in (1..=2usize).prop_flat_map(|d| (measure(d, 4), measure(d, 4), measure(d, 4)))
    ) {
        let (ab, ba) = (hk(&a, &b), hk(&b, &a));
        prop_assert!((ab - ba).abs() <= 1e-7);
        prop_assert!(ab <= hk(&a, &c) + hk(&c, &b) + 1e-7);
        prop_assert!(hk(&a, &a) <= 1e-6);
    }

    #[test]
    fn distances_are_one_homogeneous((a, b) in pair(4), c in 0.1..10.0f64) {
        let (sa, sb) = (a.scale(c).unwrap(), b.scale(c).unwrap());
        for f in [hk_sq, ghk_sq] {
            let base = f(&a, &b, 1e-10).unwrap();
            let scaled = f(&sa, &sb, 1e-10).unwrap();
            prop_assert!((scaled - c * base).abs() <= 1e-7 * (1.0 + c * base));
        }
    }

    /// `HK <= He` pointwise, and `HK <= W` on equal masses.
    #[test]
    fn hk_is_below_its_limits((a, b) in pair(4)) {
        let v = hk_sq(&a, &b, 1e-10).unwrap();
        prop_assert!(v <= hellinger_sq(&a, &b).unwrap() + 1e-8);
        prop_assert!(v <= a.total_mass() + b.total_mass() + 1e-8);
        let b_eq = b.scale(a.total_mass() / b.total_mass()).unwrap();
        prop_assert!(hk_sq(&a, &b_eq, 1e-10).unwrap() <= wasserstein_sq(&a, &b_eq).unwrap() + 1e-8);
    }

    #[test]
    fn dilation_ladder_is_monotone((a, b) in pair(3)) {
        let mut prev = 0.0;
        for lambda in [0.5, 1.0, 2.0, 4.0] {
            let v = hk_sq_scaled(&a, &b, lambda, 1e-10).unwrap();
            prop_assert!(v >= prev - 1e-8 * (1.0 + prev));
            prev = v;
        }
    }

    #[test]
    fn solver_certifies_its_solution((a, b) in pair(6), ghk in any::<bool>()) {
        let kind = if ghk { LetKind::Ghk } else { LetKind::Hk };
        let p = LetProblem::euclidean(&a, &b, kind, 1.0).unwrap();
        let s = solve_let(&p, 1e-9).unwrap();
        prop_assert!(s.gap.abs() <= 1e-9 * (1.0 + s.primal_value.abs()));
        prop_assert!(verify_optimality(&p, &s, 1e-6).passed);
        prop_assert!(s.plan.iter().flatten().all(|&x| x >= 0.0));
    }

    #[test]
    fn csv_and_json_roundtrip(m in (1..=3usize).prop_flat_map(|d| measure(d, 6))) {
        let mut buf = Vec::new();
        measure_to_csv(&m, &mut buf).unwrap();
        prop_assert_eq!(&measure_from_csv(buf.as_slice()).unwrap(), &m);
        let json = serde_json::to_string(&m).unwrap();
        prop_assert_eq!(&measure_from_json(&json).unwrap(), &m);
    }

    #[test]
    fn decomposition_recomposes(m in measure(2, 6)) {
        let back = m.decompose().recompose();
        prop_assert!((back.total_mass() - m.total_mass()).abs() <= 1e-12 * m.total_mass());
        let x = m.points()[0].clone();
        prop_assert!((back.atom_mass(&x) - m.atom_mass(&x)).abs() <= 1e-12 * m.total_mass());
    }

    #[test]
    fn mollification_adds_eps_mass(m in measure(1, 4), eps in 0.3..1.0f64) {
        let cfg = MollifierConfig::auto(eps, 1, Some(0.05)).unwrap();
        let t = mollify(&m, &cfg).unwrap();
        prop_assert!((t.total_mass() - m.total_mass() - eps).abs() <= 1e-9 * (1.0 + m.total_mass()));
        let reach = hkgeom::regularize::support_radius(eps) + 0.05;
        prop_assert!(t.points().iter().all(|p| p[0].abs() <= reach + 1e-9));
    }

    #[test]
    fn lambda_theta_is_homogeneous(theta in 0.2..4.0f64, c in 0.1..10.0f64, r in 0.1..10.0f64) {
        let lhs = lambda_measure(theta, 0.0, r / c);
        let rhs = c.powf(-theta) * lambda_measure(theta, 0.0, r);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs);
    }

    #[test]
    fn besq_transition_is_nonnegative_and_seeded(theta in 0.0..3.0f64, x0 in 0.0..3.0f64, seed in any::<u64>()) {
        let a = besq_transition(theta, x0, 0.5, &mut substream(seed, 0)).unwrap();
        let b = besq_transition(theta, x0, 0.5, &mut substream(seed, 0)).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn hyp0f1_at_zero_is_one(a in 0.1..5.0f64) {
        prop_assert_eq!(hyp0f1(a, 0.0, 1e-15).unwrap(), 1.0);
    }
}

#[test]
fn batches_are_reproducible() {
    let params = IntensityParams::new(1.5, BaseMeasure::unit_ball(2)).unwrap();
    for law in [Law::Df, Law::Gamma, Law::Mlp] {
        let a = sample_batch(&params, law, Some((1.0, 3.0)), 20, 5).unwrap();
        let b = sample_batch(&params, law, Some((1.0, 3.0)), 20, 5).unwrap();
        assert_eq!(a.measures, b.measures);
        assert_eq!(a.weights, b.weights);
        let c = sample_batch(&params, law, Some((1.0, 3.0)), 20, 6).unwrap();
        assert_ne!(a.measures, c.measures);
    }
}

#[test]
fn ghk_single_atom_grid() {
    for &(a, b, d) in &[(1.0, 1.0, 0.0), (0.2, 3.0, 0.7), (5.0, 0.5, 2.5), (1.0, 1.0, 6.0)] {
        let mu0 = DiscreteMeasure::on_line(&[0.0], &[a]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[d], &[b]).unwrap();
        let exact = a + b - 2.0 * f64::sqrt(a * b) * (-d * d / 2.0).exp();
        assert!((ghk_sq(&mu0, &mu1, 1e-12).unwrap() - exact).abs() <= 1e-10 * (1.0 + exact));
    }
}
