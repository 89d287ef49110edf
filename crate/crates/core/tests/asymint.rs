use dispersa::asymint::*;
use dispersa::coeffs::{parse_coefficient, PsiFunction};
use dispersa::spectral::{CouplingField, Diagonalizer};
use dispersa::symbol::{CoeffTerm, OperatorSpec};
use num_complex::Complex;
use proptest::prelude::*;

fn wave(expr: &str) -> OperatorSpec<f64> {
    let term = |nu: Vec<u32>| CoeffTerm { nu, j: 0, expr: parse_coefficient(expr).unwrap() };
    OperatorSpec::new(2, 2, vec![term(vec![2, 0]), term(vec![0, 2])]).unwrap()
}

fn triple() -> OperatorSpec<f64> {
    // τ(τ² − (1 + e^{−t²}/2)|ξ|²)
    let term = |nu: Vec<u32>| CoeffTerm { nu, j: 1, expr: parse_coefficient("-(1+0.5*exp(-t^2))").unwrap() };
    OperatorSpec::new(3, 2, vec![term(vec![2, 0]), term(vec![0, 2])]).unwrap()
}

fn check_reconstruction(op: &OperatorSpec<f64>, xi: [f64; 2], data: &[Complex<f64>], t: f64) {
    let f = CouplingField::new(op, &xi, -40.0, 40.0, 1e-11).unwrap();
    let tr = integrate_z(&f, 40.0, 1e-11).unwrap();
    let psi = PsiFunction::new(op);
    let p = extract_profile(&f, tr, &psi, 1e-8).unwrap();
    let n0 = f.diag.at_unit(0.0, f.xhat()).unwrap().n.to_complex();
    assert_eq!(p.q(0.0), n0);
    let d = Diagonalizer::unchecked(op);
    let direct = integrate_direct(op, &xi, data, t, 1e-12).unwrap();
    let scale = direct.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for l in 0..op.m {
        let u = reconstruct_hat_u(&p, &d, &f.phases, data, l, t).unwrap();
        assert!((u - direct[l]).norm() <= 1e-6 * scale, "xi={xi:?} t={t} l={l}: {u} vs {}", direct[l]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reconstruction_matches_direct_integration(
        angle in 0.0..std::f64::consts::TAU,
        r in 0.3f64..5.0,
        t in -30.0f64..30.0,
        re in proptest::collection::vec(-1.0f64..1.0, 3),
        im in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        let xi = [r * angle.cos(), r * angle.sin()];
        let data: Vec<Complex<f64>> = re.iter().zip(&im).map(|(a, b)| Complex::new(*a, *b)).collect();
        check_reconstruction(&wave("-(1+exp(-t^2))"), xi, &data[..2], t);
        check_reconstruction(&triple(), xi, &data, t);
    }
}

#[test]
fn derivative_probe_constant_coefficients() {
    let op = OperatorSpec::<f64>::constant(2, 2, &[(vec![2, 0], 0, -1.0), (vec![0, 2], 0, -1.0)]).unwrap();
    let xis: Vec<Vec<f64>> = [1.0, 2.0, 4.0].iter().map(|r| vec![*r, 0.0]).collect();
    let rep = derivative_bounds_probe(&op, &xis, &[1, 0], 20.0, &[2.0, 5.0], 1e-10).unwrap();
    for row in &rep.rows {
        assert_eq!(row.d_eps, 0.0);
    }
    assert_eq!(rep.eps_constant, 0.0);
}

#[test]
fn derivative_probe_bounded_at_high_frequency() {
    let op = wave("-(1+exp(-t^2))");
    let xis: Vec<Vec<f64>> = [1.0, 2.0, 4.0, 8.0].iter().map(|r| vec![r * 0.6, r * 0.8]).collect();
    let rep = derivative_bounds_probe(&op, &xis, &[1, 0], 40.0, &[2.0, 5.0, 10.0], 1e-10).unwrap();
    assert!(rep.alpha_constant.is_finite() && rep.eps_constant.is_finite());
    let dmax = rep.rows.iter().map(|r| r.d_alpha).fold(0.0, f64::max);
    assert!(dmax < 10.0, "{rep:?}");
}

#[test]
fn derivative_probe_low_frequency_scaling() {
    let op = wave("-(1+exp(-t^2))");
    let xis = vec![vec![0.1, 0.0], vec![0.2, 0.0]];
    let rep = derivative_bounds_probe(&op, &xis, &[1, 0], 40.0, &[2.0, 5.0], 1e-10).unwrap();
    let ratio = rep.rows[0].d_alpha / rep.rows[1].d_alpha;
    assert!(ratio > 2.0 / 3.0 && ratio < 6.0, "ratio {ratio}");
}

#[test]
fn derivative_probe_rejects_divergent_moments() {
    // (1+|t|)² |a'| ~ 2/|t| is not integrable
    let op = wave("-(1+1/(1+t^2))");
    let rep = derivative_bounds_probe(&op, &[vec![1.0, 1.0]], &[1, 1], 40.0, &[2.0], 1e-10);
    assert!(matches!(rep, Err(dispersa::Error::DivergentMoment { .. })));
}
