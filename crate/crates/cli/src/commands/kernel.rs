use dispersa::oscillatory::{dispersive_kernel, fit_envelope, split_kernel, KernelSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{OperatorSource, Samples};
use crate::output::{indexed, num, Output};
use crate::Run;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    operator: OperatorSource,
    /// Output derivative order `l` and data slot `k`.
    #[serde(default)]
    l: usize,
    #[serde(default)]
    k: usize,
    #[serde(default = "default_r_min")]
    r_min: f64,
    #[serde(default = "default_r_max")]
    r_max: f64,
    times: Samples,
    /// Evaluation points; when absent, points along `direction` at `|x| = speed·t·s` for each `s` in `ray`.
    x: Option<Vec<Vec<f64>>>,
    direction: Option<Vec<f64>>,
    #[serde(default = "default_ray")]
    ray: Vec<f64>,
    split_radius: Option<f64>,
    /// Expected slope of `sup_x |K(t, x)|`; `−(n−1)/2` when absent.
    predicted_slope: Option<f64>,
    points_per_period: Option<f64>,
}

fn default_r_min() -> f64 {
    0.5
}
fn default_r_max() -> f64 {
    4.0
}
fn default_ray() -> Vec<f64> {
    vec![0.0, 0.5, 0.9, 1.0, 1.1]
}

#[derive(Serialize)]
struct Envelope {
    predicted_slope: f64,
    fitted_slope: Option<f64>,
    sup_constant: Option<f64>,
    times: usize,
}

pub fn run(ctx: &Run, out: &mut Output) -> anyhow::Result<()> {
    let cfg: Config = ctx.config.parse()?;
    let op = cfg.operator.load(&ctx.config.dir)?;
    let n = op.n;
    let mut spec = KernelSpec::new(op, cfg.r_min, cfg.r_max)?;
    anyhow::ensure!(cfg.l < spec.op.m && cfg.k < spec.op.m, "l and k must be below m = {}", spec.op.m);
    spec.l = cfg.l;
    spec.k = cfg.k;
    if let Some(t) = ctx.tol {
        spec.tol = t;
    }
    if let Some(p) = cfg.points_per_period {
        spec.points_per_period = p;
    }
    let times = cfg.times.values()?;
    let dir = match &cfg.direction {
        Some(d) => {
            let s = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            anyhow::ensure!(d.len() == n && s > 0.0, "direction must be a nonzero {n}-vector");
            d.iter().map(|x| x / s).collect()
        }
        None => {
            let mut e = vec![0.0; n];
            e[0] = 1.0;
            e
        }
    };
    let jobs: Vec<(f64, Vec<f64>)> = times
        .iter()
        .flat_map(|&t| {
            let pts: Vec<Vec<f64>> = match &cfg.x {
                Some(xs) => xs.clone(),
                None => cfg.ray.iter().map(|s| dir.iter().map(|d| d * s * spec.speed * t).collect()).collect(),
            };
            pts.into_iter().map(move |x| (t, x))
        })
        .collect();
    let values = jobs
        .par_iter()
        .map(|(t, x)| -> anyhow::Result<Vec<f64>> {
            anyhow::ensure!(x.len() == n, "point {x:?} does not have {n} components");
            match cfg.split_radius {
                Some(r) => {
                    let (a, b) = split_kernel(&spec, *t, x, r)?;
                    let z = a + b;
                    Ok(vec![z.norm(), z.re, z.im, a.norm(), b.norm()])
                }
                None => {
                    let z = dispersive_kernel(&spec, *t, x)?;
                    Ok(vec![z.norm(), z.re, z.im])
                }
            }
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", n));
    header.extend(["abs", "re", "im"].iter().map(|s| s.to_string()));
    if cfg.split_radius.is_some() {
        header.extend(["stationary_abs", "nonstationary_abs"].iter().map(|s| s.to_string()));
    }
    let rows: Vec<Vec<String>> = jobs
        .iter()
        .zip(&values)
        .map(|((t, x), v)| std::iter::once(*t).chain(x.iter().copied()).chain(v.iter().copied()).map(num).collect())
        .collect();
    out.csv("kernel.csv", &header, &rows)?;

    let sups: Vec<f64> = times
        .iter()
        .map(|&t| jobs.iter().zip(&values).filter(|(j, _)| j.0 == t).map(|(_, v)| v[0]).fold(0.0, f64::max))
        .collect();
    let sup_rows: Vec<Vec<String>> = times.iter().zip(&sups).map(|(t, s)| vec![num(*t), num(*s)]).collect();
    out.csv("sup.csv", &["t".to_string(), "sup_abs".to_string()], &sup_rows)?;

    let predicted = cfg.predicted_slope.unwrap_or(-((n - 1) as f64) / 2.0);
    let (lo, hi) = times.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let fit = if times.len() >= 8 { Some(fit_envelope(&times, &sups, predicted, (lo, hi))?) } else { None };
    let env = Envelope {
        predicted_slope: predicted,
        fitted_slope: fit.as_ref().map(|f| f.fitted_slope),
        sup_constant: fit.as_ref().map(|f| f.sup_constant),
        times: times.len(),
    };
    if let Some(s) = env.fitted_slope {
        println!("kernel: sup slope {s:+.4} (predicted {predicted:+.4})");
    }
    out.json("envelope.json", &env)?;
    Ok(())
}
