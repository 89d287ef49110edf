use dispersa::coeffs::{parse_coefficient, psi};
use dispersa::linalg::Mat;
use dispersa::spectral::{build_companion, build_diagonalizer, CouplingField};
use dispersa::symbol::{hyperbolicity_certificate, linspace, CoeffTerm, OperatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn term(nu: [u32; 2], j: usize, src: &str) -> CoeffTerm<f64> {
    CoeffTerm { nu: nu.to_vec(), j, expr: parse_coefficient(src).unwrap() }
}

fn operators() -> Vec<OperatorSpec<f64>> {
    vec![
        OperatorSpec::new(2, 2, vec![term([2, 0], 0, "-(1+exp(-t^2))"), term([0, 2], 0, "-(1+exp(-t^2))")]).unwrap(),
        OperatorSpec::new(3, 2, vec![term([2, 0], 1, "-(1+0.5*exp(-t^2))"), term([0, 2], 1, "-(1+0.5*exp(-t^2))")]).unwrap(),
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
        .unwrap(),
    ]
}

fn diag_of(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), v.len(), |i, j| if i == j { v[i] } else { 0.0 })
}

#[test]
fn diagonalizer_identities_on_random_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for op in operators() {
        let rf = hyperbolicity_certificate(&op, &linspace(-10.0, 10.0, 201), 32).unwrap();
        let cs = build_companion(&op);
        let d = build_diagonalizer(cs, &rf);
        for _ in 0..500 {
            let t: f64 = rng.gen_range(-10.0..10.0);
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r: f64 = rng.gen_range(0.1..10.0);
            let xi = [r * a.cos(), r * a.sin()];
            let p = d.at(t, &xi).unwrap();
            let h = cs.h(t, &xi).unwrap();
            let lhs = p.n.matmul(&h);
            let rhs = diag_of(&p.roots).matmul(&p.n);
            let hn = h.max_abs::<f64>();
            assert!(lhs.sub(&rhs).max_abs::<f64>() <= 1e-9 * hn, "m={} t={t}", op.m);
            let id = p.n.matmul(&p.n_inv).sub(&Mat::identity(op.m));
            assert!(id.max_abs::<f64>() <= 1e-10);
            assert!(p.det().abs() >= d.det_lower_bound, "m={} det={} bound={} sep={}", op.m, p.det(), d.det_lower_bound, rf.separation);
        }
    }
}

#[test]
fn coupling_is_controlled_by_psi() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for op in operators() {
        let mut c_max: f64 = 0.0;
        for _ in 0..200 {
            let t: f64 = rng.gen_range(-4.0..4.0);
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let xi = [a.cos(), a.sin()];
            let f = CouplingField::new(&op, &xi, t.min(0.0), t.max(0.0), 1e-10).unwrap();
            let norm = f.eval(t).unwrap().norm_fro::<f64>();
            let p = psi(&op, t);
            if p > 1e-12 {
                c_max = c_max.max(norm / p);
            } else {
                assert!(norm < 1e-10);
            }
        }
        // one constant covers every sample
        assert!(c_max.is_finite() && c_max < 10.0, "m={} c={c_max}", op.m);
    }
}

#[test]
fn coupling_frequency_derivative_growth() {
    // |∂_ξ C| ≤ c |ξ|^{-1} (1+|t|) Ψ(t) for |μ| = 1
    let op = &operators()[0];
    let mut c_max: f64 = 0.0;
    for r in [0.5, 1.0, 2.0, 4.0] {
        for t in [0.3, 0.8, 1.5, 2.5] {
            let h = 1e-5 * r;
            let at = |x: f64| CouplingField::new(op, &[x, 0.3 * r], 0.0, t, 1e-12).unwrap().eval(t).unwrap();
            let d = at(r + h).sub(&at(r - h)).scale(num_complex::Complex::new(0.5 / h, 0.0));
            let bound = (1.0 + t) * psi(op, t) / r;
            c_max = c_max.max(d.max_abs::<f64>() / bound);
        }
    }
    assert!(c_max.is_finite() && c_max < 10.0, "{c_max}");
}
