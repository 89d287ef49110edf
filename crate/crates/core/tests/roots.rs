use dispersa::coeffs::{moment_check, parse_coefficient, psi, PsiFunction};
use dispersa::symbol::{CoeffTerm, OperatorSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn term(nu: [u32; 2], j: usize, src: &str) -> CoeffTerm<f64> {
    CoeffTerm { nu: nu.to_vec(), j, expr: parse_coefficient(src).unwrap() }
}

fn wave_gauss() -> OperatorSpec<f64> {
    OperatorSpec::new(2, 2, vec![term([2, 0], 0, "-(1+exp(-t^2))"), term([0, 2], 0, "-(1+exp(-t^2))")]).unwrap()
}

/// τ(τ² − (1 + e^{−t²}/2)|ξ|²)
fn triple() -> OperatorSpec<f64> {
    OperatorSpec::new(3, 2, vec![term([2, 0], 1, "-(1+0.5*exp(-t^2))"), term([0, 2], 1, "-(1+0.5*exp(-t^2))")]).unwrap()
}

/// τ⁴ − b(t)|ξ|²τ² + 4|ξ|⁴ with b = 5 + e^{−t²}
fn bi_wave() -> OperatorSpec<f64> {
    OperatorSpec::new(
        4,
        2,
        vec![
            term([2, 0], 2, "-(5+exp(-t^2))"),
            term([0, 2], 2, "-(5+exp(-t^2))"),
            term([4, 0], 0, "4"),
            term([2, 2], 0, "8"),
            term([0, 4], 0, "4"),
        ],
    )
    .unwrap()
}

fn random_xi(rng: &mut impl Rng) -> Vec<f64> {
    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r: f64 = rng.gen_range(0.5..2.0);
    vec![r * a.cos(), r * a.sin()]
}

#[test]
fn root_derivative_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for op in [wave_gauss(), triple(), bi_wave()] {
        for _ in 0..100 {
            let t = rng.gen_range(0.2..2.5);
            let xi = random_xi(&mut rng);
            let k = rng.gen_range(0..op.m);
            let d = op.root_time_derivative(t, &xi, k).unwrap();
            let fd = (op.characteristic_roots(t + h, &xi).unwrap()[k] - op.characteristic_roots(t - h, &xi).unwrap()[k]) / (2.0 * h);
            // the middle root of the triple operator is identically zero
            let scale = if fd.abs() < 1e-9 { 1.0 } else { fd.abs() };
            worst = worst.max((d - fd).abs() / scale);
        }
    }
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn roots_approach_limits_at_tail_rate() {
    // Ψ = 2|t|/(1+t²)², ∫_T^∞ Ψ = 1/(1+T²)
    let op = OperatorSpec::<f64>::new(2, 1, vec![CoeffTerm { nu: vec![2], j: 0, expr: parse_coefficient("-(4 + 1/(1+t^2))").unwrap() }]).unwrap();
    let lim = op.limiting_roots().unwrap();
    let plus = lim.plus_roots(&[1.0]).unwrap();
    let psi = PsiFunction::new(&op);
    let mut ratios = Vec::new();
    for big_t in [10.0f64, 20.0, 40.0] {
        let r = op.characteristic_roots(big_t, &[1.0]).unwrap();
        let tail = psi.tail(big_t, false, 1e-12);
        assert!((tail * (1.0 + big_t * big_t) - 1.0).abs() < 1e-6);
        ratios.push((r[0] - plus[0]).abs() / tail);
    }
    // exact ratio tends to 1/4
    assert!(ratios.iter().all(|c| *c <= 0.25 + 1e-6), "{ratios:?}");
}

#[test]
fn psi_vanishes_only_for_constant_operators() {
    let c = OperatorSpec::<f64>::constant(2, 2, &[(vec![2, 0], 0, -1.0), (vec![0, 2], 0, -1.0)]).unwrap();
    assert!(PsiFunction::new(&c).is_zero());
    assert!(!PsiFunction::new(&wave_gauss()).is_zero());
    assert_eq!(psi(&c, 3.0), 0.0);
}

#[test]
fn moment_values_increase_with_order() {
    for src in ["exp(-t^2)", "1/(1+t^2)^2", "t^2*exp(-t^2)"] {
        let e = parse_coefficient::<f64>(src).unwrap();
        let v: Vec<f64> = (0..3).map(|r| moment_check(&e, r, 1e-8).value).collect();
        assert!(v[0] <= v[1] && v[1] <= v[2], "{src}: {v:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn product_identity(t in -5.0f64..5.0, tau in -4.0f64..4.0, a in 0.0f64..6.283, r in 0.2f64..3.0, which in 0usize..3) {
        let op = [wave_gauss(), triple(), bi_wave()][which].clone();
        let xi = [r * a.cos(), r * a.sin()];
        let roots = op.characteristic_roots(t, &xi).unwrap();
        let prod: f64 = roots.iter().map(|p| tau - p).product();
        let direct = op.eval_symbol(t, tau, &xi);
        // relative to the size of the individual terms
        let scale = roots.iter().map(|p| tau.abs() + p.abs()).product::<f64>();
        prop_assert!((prod - direct).abs() <= 1e-8 * scale, "{prod} vs {direct}");
    }

    #[test]
    fn roots_are_homogeneous(t in -5.0f64..5.0, a in 0.0f64..6.283, r in 0.2f64..3.0) {
        let op = bi_wave();
        let xi = [r * a.cos(), r * a.sin()];
        let base = op.characteristic_roots(t, &xi).unwrap();
        for s in [0.5, 2.0, 10.0] {
            let scaled = op.characteristic_roots(t, &[s * xi[0], s * xi[1]]).unwrap();
            for (p, q) in base.iter().zip(&scaled) {
                prop_assert!((q - s * p).abs() <= 1e-10 * (s * p).abs());
            }
        }
    }

    #[test]
    fn branches_do_not_swap_along_paths(t0 in -3.0f64..3.0, a in 0.0f64..6.283) {
        let op = triple();
        let mut prev = op.characteristic_roots(t0, &[a.cos(), a.sin()]).unwrap();
        for i in 1..=50 {
            let s = t0 + 0.02 * i as f64;
            let b = a + 0.01 * i as f64;
            let cur = op.characteristic_roots(s, &[b.cos(), b.sin()]).unwrap();
            for (p, q) in prev.iter().zip(&cur) {
                // separation on the unit sphere is at least 2
                prop_assert!((p - q).abs() < 1.0);
            }
            prev = cur;
        }
    }

    #[test]
    fn coefficient_derivative_matches_differences(t in -50.0f64..50.0, which in 0usize..4) {
        let src = ["1 + 0.5*exp(-t^2)", "1/(1+t^2)", "(t-1)/(2+t^2)", "t^3*exp(-t^2/8)"][which];
        let e = parse_coefficient::<f64>(src).unwrap();
        let h = 1e-5 * (1.0 + t.abs());
        let fd = (e.eval(t + h).unwrap() - e.eval(t - h).unwrap()) / (2.0 * h);
        let d = e.eval_derivative(t).unwrap();
        prop_assert!((d - fd).abs() <= 1e-6 * d.abs().max(1e-3), "{src} at {t}: {d} vs {fd}");
    }

    #[test]
    fn psi_is_nonnegative(t in -50.0f64..50.0) {
        prop_assert!(psi(&bi_wave(), t) >= 0.0);
        prop_assert!(psi(&wave_gauss(), t) >= 0.0);
    }
}
