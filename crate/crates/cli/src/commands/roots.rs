use dispersa::symbol::{hyperbolicity_certificate, linspace, min_gap};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::random_frequencies;
use crate::config::{CertificateConfig, OperatorSource};
use crate::output::{indexed, num, Output};
use crate::Run;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    operator: OperatorSource,
    #[serde(default = "default_t_range")]
    t_range: [f64; 2],
    #[serde(default)]
    certificate: CertificateConfig,
    /// Frequencies for the table; random ones are drawn when absent.
    xi: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_random_xi")]
    random_xi: usize,
    #[serde(default = "default_check_times")]
    check_times: usize,
    #[serde(default = "default_fd_step")]
    fd_step: f64,
}

fn default_t_range() -> [f64; 2] {
    [-10.0, 10.0]
}
fn default_random_xi() -> usize {
    8
}
fn default_check_times() -> usize {
    11
}
fn default_fd_step() -> f64 {
    1e-5
}

#[derive(Serialize)]
struct Certificate {
    hyperbolic: bool,
    separation: f64,
    bound_constant: f64,
    t_samples: usize,
    directions: usize,
    /// Largest `|∂_tφ − FD| / max(1, |∂_tφ|)` over the table.
    max_derivative_error: f64,
}

pub fn run(ctx: &Run, out: &mut Output) -> anyhow::Result<()> {
    let cfg: Config = ctx.config.parse()?;
    let op = cfg.operator.load(&ctx.config.dir)?;
    let [t0, t1] = cfg.t_range;
    let t_grid = linspace(t0, t1, cfg.certificate.t_samples.max(2));
    let rf = hyperbolicity_certificate(&op, &t_grid, cfg.certificate.sphere_samples)?;

    let xis = cfg.xi.clone().unwrap_or_else(|| random_frequencies(op.n, cfg.random_xi, 0.5, 2.0, ctx.seed));
    let times = linspace(t0, t1, cfg.check_times.max(1));
    let h = cfg.fd_step;
    let jobs: Vec<(f64, &Vec<f64>)> = times.iter().flat_map(|&t| xis.iter().map(move |x| (t, x))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(t, xi)| -> anyhow::Result<(Vec<String>, f64)> {
            anyhow::ensure!(xi.len() == op.n, "frequency {xi:?} does not have {} components", op.n);
            let roots = op.characteristic_roots(t, xi)?;
            let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            let up = op.characteristic_roots(t + h, xi)?;
            let down = op.characteristic_roots(t - h, xi)?;
            let mut row: Vec<String> = std::iter::once(num(t)).chain(xi.iter().map(|&x| num(x))).collect();
            row.extend(roots.iter().map(|&x| num(x)));
            row.push(num(min_gap(&roots) / r));
            let mut worst = 0.0f64;
            let mut exact = Vec::with_capacity(op.m);
            let mut fd = Vec::with_capacity(op.m);
            for k in 0..op.m {
                let d = op.root_time_derivative(t, xi, k)?;
                let f = (up[k] - down[k]) / (2.0 * h);
                worst = worst.max((d - f).abs() / d.abs().max(1.0));
                exact.push(num(d));
                fd.push(num(f));
            }
            row.extend(exact);
            row.extend(fd);
            Ok((row, worst))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut header = vec!["t".to_string()];
    header.extend(indexed("xi", op.n));
    header.extend(indexed("root", op.m));
    header.push("separation".into());
    header.extend(indexed("droot", op.m));
    header.extend(indexed("droot_fd", op.m));
    let max_err = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let table: Vec<Vec<String>> = rows.into_iter().map(|r| r.0).collect();
    out.csv("roots.csv", &header, &table)?;
    out.json(
        "certificate.json",
        &Certificate {
            hyperbolic: true,
            separation: rf.separation,
            bound_constant: rf.bound_constant,
            t_samples: t_grid.len(),
            directions: rf.directions.len(),
            max_derivative_error: max_err,
        },
    )?;
    println!("hyperbolic: separation {:.6}, bound {:.6}, derivative check {:.2e}", rf.separation, rf.bound_constant, max_err);
    Ok(())
}
