use dispersa::asymint::{eps_ratios, extract_profile, integrate_z};
use dispersa::coeffs::PsiFunction;
use dispersa::linalg::Mat;
use dispersa::spectral::{build_companion, energy_check, CouplingField, Diagonalizer};
use dispersa::symbol::linspace;
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::random_frequencies;
use crate::config::OperatorSource;
use crate::output::{num, Output};
use crate::Run;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    operator: OperatorSource,
    xi: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_random_xi")]
    random_xi: usize,
    #[serde(default = "default_t_max")]
    t_max: f64,
    #[serde(default = "default_tail_tol")]
    tail_tol: f64,
    #[serde(default = "default_eps_times")]
    eps_times: Vec<f64>,
    #[serde(default = "default_dump_points")]
    dump_points: usize,
    /// Random data per frequency for the energy bound; 0 skips it.
    #[serde(default)]
    energy_samples: usize,
}

fn default_random_xi() -> usize {
    8
}
fn default_t_max() -> f64 {
    40.0
}
fn default_tail_tol() -> f64 {
    1e-8
}
fn default_eps_times() -> Vec<f64> {
    vec![5.0, 10.0, 20.0, 40.0]
}
fn default_dump_points() -> usize {
    161
}

#[derive(Serialize)]
struct Profile {
    xi: Vec<f64>,
    alpha_plus: Vec<Vec<[f64; 2]>>,
    alpha_minus: Vec<Vec<[f64; 2]>>,
    trunc_time: f64,
    trunc_error_bound: f64,
    coupling_constant: f64,
    sup_ratio: Option<f64>,
    energy_holds: Option<bool>,
    energy_margin: Option<f64>,
}

#[derive(Serialize)]
struct Report {
    frequencies: usize,
    /// Largest `|ε(t)| / ∫_t^∞ Ψ` over all frequencies and times.
    sup_ratio: f64,
    bounded: bool,
    /// Points where both `ε` and the `Ψ` tail underflow.
    underflow_points: usize,
    energy_holds: Option<bool>,
    profiles: Vec<Profile>,
}

fn matrix(m: &Mat<Complex<f64>>) -> Vec<Vec<[f64; 2]>> {
    (0..m.rows).map(|i| (0..m.cols).map(|j| { let z = m.data[i * m.cols + j]; [z.re, z.im] }).collect()).collect()
}

struct Done {
    profile: Profile,
    eps_rows: Vec<Vec<String>>,
    ratio_rows: Vec<Vec<String>>,
    underflow: usize,
}

pub fn run(ctx: &Run, out: &mut Output) -> anyhow::Result<()> {
    let cfg: Config = ctx.config.parse()?;
    let op = cfg.operator.load(&ctx.config.dir)?;
    let tol = ctx.tol.unwrap_or(1e-10);
    let xis = cfg.xi.clone().unwrap_or_else(|| random_frequencies(op.n, cfg.random_xi, 0.5, 8.0, ctx.seed));
    let psi = PsiFunction::new(&op);
    let dump = linspace(-cfg.t_max, cfg.t_max, cfg.dump_points.max(2));
    let m = op.m;

    let done = xis
        .par_iter()
        .enumerate()
        .map(|(i, xi)| -> anyhow::Result<Done> {
            anyhow::ensure!(xi.len() == op.n, "frequency {xi:?} does not have {} components", op.n);
            let field = CouplingField::new(&op, xi, -cfg.t_max, cfg.t_max, tol)?;
            let traj = integrate_z(&field, cfg.t_max, tol)?;
            let p = extract_profile(&field, traj, &psi, cfg.tail_tol)?;
            let mut eps_rows = Vec::with_capacity(dump.len());
            for &t in &dump {
                let e = p.eps(t);
                let mut row = vec![i.to_string(), num(t)];
                for z in &e.data {
                    row.push(num(z.re));
                    row.push(num(z.im));
                }
                eps_rows.push(row);
            }
            let times: Vec<f64> = cfg.eps_times.iter().filter(|t| t.abs() < cfg.t_max).copied().collect();
            let ratios = eps_ratios(&p, &psi, &times)?;
            let mut underflow = 0;
            let mut sup: Option<f64> = None;
            let ratio_rows = ratios
                .iter()
                .map(|r| {
                    match r.ratio {
                        Some(v) => sup = Some(sup.map_or(v, |s| s.max(v))),
                        None => underflow += 1,
                    }
                    vec![i.to_string(), num(r.t), num(r.eps), num(r.psi_tail), r.ratio.map(num).unwrap_or_default()]
                })
                .collect();
            let (mut energy_holds, mut energy_margin) = (None, None);
            if cfg.energy_samples > 0 {
                let diag = Diagonalizer::unchecked(&op);
                let seed = ctx.seed.wrapping_add(i as u64);
                let rep = energy_check(build_companion(&op), &diag, xi, cfg.t_max, cfg.energy_samples, seed, tol)?;
                energy_holds = Some(rep.holds);
                energy_margin = Some(rep.min_margin);
            }
            let profile = Profile {
                xi: xi.clone(),
                alpha_plus: matrix(&p.alpha_plus),
                alpha_minus: matrix(&p.alpha_minus),
                trunc_time: p.trunc_time,
                trunc_error_bound: p.trunc_error_bound,
                coupling_constant: p.coupling_constant,
                sup_ratio: sup,
                energy_holds,
                energy_margin,
            };
            Ok(Done { profile, eps_rows, ratio_rows, underflow })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut header = vec!["xi_index".to_string(), "t".to_string()];
    for a in 0..m {
        for b in 0..m {
            header.push(format!("eps{a}{b}_re"));
            header.push(format!("eps{a}{b}_im"));
        }
    }
    let eps_rows: Vec<Vec<String>> = done.iter().flat_map(|d| d.eps_rows.clone()).collect();
    out.csv("eps.csv", &header, &eps_rows)?;
    let ratio_header: Vec<String> = ["xi_index", "t", "eps", "psi_tail", "ratio"].iter().map(|s| s.to_string()).collect();
    let ratio_rows: Vec<Vec<String>> = done.iter().flat_map(|d| d.ratio_rows.clone()).collect();
    out.csv("ratios.csv", &ratio_header, &ratio_rows)?;

    let sup_ratio = done.iter().filter_map(|d| d.profile.sup_ratio).fold(0.0, f64::max);
    let energy_holds =
        if cfg.energy_samples > 0 { Some(done.iter().all(|d| d.profile.energy_holds == Some(true))) } else { None };
    let report = Report {
        frequencies: done.len(),
        sup_ratio,
        bounded: sup_ratio.is_finite(),
        underflow_points: done.iter().map(|d| d.underflow).sum(),
        energy_holds,
        profiles: done.into_iter().map(|d| d.profile).collect(),
    };
    println!("asymint: {} frequencies, sup eps ratio {:.4e}", report.frequencies, report.sup_ratio);
    out.json("report.json", &report)?;
    Ok(())
}
