use dispersa::cauchy::*;
use dispersa::coeffs::parse_coefficient;
use dispersa::oscillatory::geometric_grid;
use dispersa::symbol::{hyperbolicity_certificate, linspace, CoeffTerm, OperatorSpec, RootField};
use dispersa::Error;
use num_complex::Complex;
use std::f64::consts::PI;

fn wave(n: usize, expr: &str) -> OperatorSpec<f64> {
    let coeffs = (0..n)
        .map(|d| {
            let mut nu = vec![0; n];
            nu[d] = 2;
            CoeffTerm { nu, j: 0, expr: parse_coefficient(expr).unwrap() }
        })
        .collect();
    OperatorSpec::new(2, n, coeffs).unwrap()
}

fn certified(op: &OperatorSpec<f64>, t_max: f64) -> RootField<f64> {
    hyperbolicity_certificate(op, &linspace(0.0, t_max, 101), 16).unwrap()
}

fn bump(n: usize, width: f64) -> CauchyData<f64> {
    CauchyData::new(vec![DataProfile::gaussian(vec![0.0; n], width), DataProfile::Zero])
}

fn auto_grid(rf: &RootField<f64>, data: &CauchyData<f64>, points: usize, t_max: f64) -> SpectralGrid<f64> {
    let probe = SpectralGrid::new(rf.op.n, 8, 1.0).unwrap();
    SpectralGrid::auto(rf.op.n, points, rf.bound_constant, t_max, data.radius(&probe)).unwrap()
}

fn l2(grid: &SpectralGrid<f64>, v: &[Complex<f64>]) -> f64 {
    (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / grid.box_size.powi(grid.n as i32)).sqrt()
}

#[test]
fn time_zero_returns_the_data() {
    let rf = certified(&wave(2, "-(1+exp(-t^2))"), 10.0);
    let data = CauchyData::new(vec![DataProfile::gaussian(vec![1.0, -2.0], 1.5), DataProfile::gaussian(vec![0.0, 0.5], 2.0)]);
    let grid = auto_grid(&rf, &data, 256, 10.0);
    for method in [Method::Asymptotic, Method::DirectOde] {
        let sol = solve(&rf, &grid, &data, &[0.0, 2.0], method, 1e-8).unwrap();
        for l in 0..2 {
            assert_eq!(sol.hat(0, l), sol.data_hat[l]);
        }
    }
}

#[test]
fn dalembert_translation_in_one_dimension() {
    let rf = certified(&wave(1, "-1"), 40.0);
    let data = bump(1, 1.0);
    let grid = auto_grid(&rf, &data, 1024, 40.0);
    let sol = solve(&rf, &grid, &data, &[15.0, 40.0], Method::Asymptotic, 1e-10).unwrap();
    for (ti, t) in [15.0, 40.0].into_iter().enumerate() {
        let u = sol.field(ti, 0);
        let err: f64 = u
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = grid.x(i)[0];
                let exact = 0.5 * ((-(x - t) * (x - t) / 2.0).exp() + (-(x + t) * (x + t) / 2.0).exp());
                (v - exact).powi(2) * grid.dx()
            })
            .sum();
        assert!(err.sqrt() <= 1e-6, "t={t} {}", err.sqrt());
    }
}

#[test]
fn direct_and_asymptotic_methods_agree() {
    let rf = certified(&wave(2, "-(1+exp(-t^2))"), 30.0);
    let data = bump(2, 3.0);
    let grid = auto_grid(&rf, &data, 256, 30.0);
    let a = solve(&rf, &grid, &data, &[30.0], Method::Asymptotic, 1e-10).unwrap();
    let d = solve(&rf, &grid, &data, &[30.0], Method::DirectOde, 1e-10).unwrap();
    for l in 0..2 {
        let (ha, hd) = (a.hat(0, l), d.hat(0, l));
        let keep = |v: &[Complex<f64>]| -> Vec<Complex<f64>> {
            v.iter().enumerate().map(|(i, z)| if dispersa::scalar::norm2(&grid.xi(i)) >= 0.5 { *z } else { Complex::new(0.0, 0.0) }).collect()
        };
        let diff: Vec<Complex<f64>> = keep(&ha).iter().zip(keep(&hd)).map(|(x, y)| x - y).collect();
        let rel = l2(&grid, &diff) / l2(&grid, &keep(&ha));
        assert!(rel <= 1e-5, "l={l} rel={rel:e}");
    }
}

#[test]
fn real_displacement_data_gives_real_fields() {
    let rf = certified(&wave(2, "-(1+exp(-t^2))"), 20.0);
    let data = CauchyData::new(vec![DataProfile::gaussian(vec![2.0, -1.0], 1.0), DataProfile::Zero]);
    let grid = auto_grid(&rf, &data, 512, 20.0);
    let sol = solve(&rf, &grid, &data, &[5.0, 20.0], Method::Asymptotic, 1e-9).unwrap();
    for ti in 0..2 {
        let z = sol.field_complex(ti, 0);
        let peak = z.iter().fold(0.0f64, |m, v| m.max(v.re.abs()));
        let imag = z.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
        assert!(imag <= 1e-12 * peak, "{imag:e} vs {peak:e}");
    }
}

#[test]
fn solutions_stay_in_the_cone() {
    let rf = certified(&wave(2, "-(1+exp(-t^2))"), 20.0);
    let data = CauchyData::new(vec![DataProfile::gaussian(vec![2.0, -1.0], 1.0), DataProfile::gaussian(vec![0.0, 0.0], 1.5)]);
    let grid = auto_grid(&rf, &data, 512, 20.0);
    let sol = solve(&rf, &grid, &data, &[20.0], Method::Asymptotic, 1e-9).unwrap();
    let probe = SpectralGrid::new(2, 8, 1.0).unwrap();
    let radius = (rf.bound_constant * 20.0 + data.radius(&probe)) * 1.05;
    for l in 0..2 {
        let u = modulus(&sol.field_complex(0, l));
        let leak = cone_leakage(&grid, &u, &[0.0, 0.0], radius);
        assert!(leak <= 1e-6, "l={l} leak={leak:e}");
    }
}

#[test]
fn undersized_box_and_coarse_grid_are_rejected() {
    let rf = certified(&wave(2, "-1"), 20.0);
    let data = bump(2, 1.0);
    let small = SpectralGrid::new(2, 64, 30.0).unwrap();
    assert!(matches!(solve(&rf, &small, &data, &[20.0], Method::Asymptotic, 1e-8), Err(Error::BoxTooSmall { .. })));
    let coarse = auto_grid(&rf, &data, 64, 20.0);
    assert!(matches!(solve(&rf, &coarse, &data, &[20.0], Method::Asymptotic, 1e-8), Err(Error::Unresolved { .. })));
    assert!(matches!(solve(&rf, &coarse, &data, &[30.0], Method::Asymptotic, 1e-8), Err(Error::InvalidInput(_))));
}

#[test]
fn lq_norm_examples() {
    let grid = SpectralGrid::new(2, 256, 40.0).unwrap();
    let sample = |w: f64| -> Vec<f64> {
        let p = DataProfile::gaussian(vec![0.0, 0.0], w);
        (0..grid.len()).map(|i| p.value(&grid.x(i)).unwrap()).collect()
    };
    let g = sample(1.0);
    assert!((lq_norm(&grid, &g, 2.0).unwrap() - PI.sqrt()).abs() <= 1e-10);
    assert!((lq_norm(&grid, &g, f64::INFINITY).unwrap() - 1.0).abs() <= 1e-15);
    let s = 1.7;
    let gs = sample(s);
    for q in [1.0, 1.5, 2.0, 4.0] {
        let ratio = lq_norm(&grid, &gs, q).unwrap() / lq_norm(&grid, &g, q).unwrap();
        assert!((ratio / s.powf(2.0 / q) - 1.0).abs() <= 1e-10, "q={q}");
    }
}

#[test]
fn sobolev_norm_examples() {
    let grid = SpectralGrid::new(2, 256, 40.0).unwrap();
    let g = CauchyData::new(vec![DataProfile::gaussian(vec![0.0, 0.0], 1.0)]);
    let values: Vec<f64> = (0..grid.len()).map(|i| g.profiles[0].value(&grid.x(i)).unwrap()).collect();
    let h0 = sobolev_data_norm(&grid, &g, 0.0, true).unwrap()[0];
    assert!((h0 / lq_norm(&grid, &values, 2.0).unwrap() - 1.0).abs() <= 1e-10);
    // ∫|ξ|² e^{−|ξ|²} dξ = π
    let h1 = sobolev_data_norm(&grid, &g, 1.0, true).unwrap()[0];
    assert!((h1 - PI.sqrt()).abs() <= 1e-10, "{h1}");
    // Δg sampled from (|x|² − 2) e^{−|x|²/2}
    let lap: Vec<Complex<f64>> = (0..grid.len())
        .map(|i| {
            let x = grid.x(i);
            let r2 = x[0] * x[0] + x[1] * x[1];
            Complex::new((r2 - 2.0) * (-r2 / 2.0).exp(), 0.0)
        })
        .collect();
    let lap_hat = grid.analyze(&lap);
    let g_hat = &g.spectra(&grid).unwrap()[0];
    for s in [-0.5, 0.0, 1.0, 2.5] {
        let a = sobolev_spectrum_norm(&grid, &lap_hat, s, true).unwrap();
        let b = sobolev_spectrum_norm(&grid, g_hat, s + 2.0, true).unwrap();
        assert!((a / b - 1.0).abs() <= 1e-8, "s={s}");
    }
}

#[test]
fn zone_supports() {
    for r in [0.0, 0.1, 0.3, 0.5] {
        assert_eq!(zone_weights(r, 0.0), [1.0, 0.0, 0.0]);
    }
    for t in [5.0, 50.0] {
        for r in [1.0 / (1.0 + t), 0.5, 3.0] {
            assert_eq!(zone_weights(r, t)[0], 0.0);
        }
    }
    let grid = SpectralGrid::new(2, 128, 60.0).unwrap();
    let spec = &bump(2, 1.0).spectra(&grid).unwrap()[0];
    for t in [0.0, 0.5, 10.0] {
        assert!(zone_split(&grid, spec, t).partition_defect <= 1e-15);
    }
}

#[test]
fn energy_type_norm_does_not_decay() {
    let op = wave(2, "-1");
    let rf = certified(&op, 100.0);
    let data = bump(2, 3.0);
    let grid = auto_grid(&rf, &data, 512, 100.0);
    let mut opts = DecayOptions::new(2.0, 2.0, PredictedRate::Convex { gamma: 2 });
    opts.zones = false;
    let r = decay_experiment(&rf, &grid, &data, &geometric_grid(10.0, 100.0, 12), &opts).unwrap();
    let fit = r.fit("full").unwrap();
    assert!(fit.fitted_slope.abs() <= 0.02, "{}", fit.fitted_slope);
    assert!(r.verdict);
}

#[test]
fn small_time_ratio_is_bounded() {
    let rf = certified(&wave(2, "-1"), 1.0);
    let data = bump(2, 1.0);
    let grid = auto_grid(&rf, &data, 256, 1.0);
    let r = small_time_check(&rf, &grid, &data, &geometric_grid(0.01, 1.0, 10), 1.0, f64::INFINITY, 0, 1e-9).unwrap();
    assert!(r.bounded, "{} vs {}", r.constant, r.reference);
}

#[test]
fn data_configs_round_trip() {
    let text = r#"{"profiles":[{"kind":"gaussian","center":[0,0],"width":1.75},{"kind":"zero"}]}"#;
    let d: CauchyData<f64> = serde_json::from_str(text).unwrap();
    assert_eq!(d, bump(2, 1.75));
    let back: CauchyData<f64> = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
    assert_eq!(back, d);
}
