use dispersa::oscillatory::{eval_model, fit_envelope, fresnel_closed_form, Cutoff, ModelIntegral};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Samples;
use crate::output::{num, Output};
use crate::Run;

#[derive(Deserialize, Clone, Copy)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CutoffConfig {
    Gaussian { radius: f64 },
    FlatTop { delta: f64 },
}

impl From<CutoffConfig> for Cutoff<f64> {
    fn from(c: CutoffConfig) -> Self {
        match c {
            CutoffConfig::Gaussian { radius } => Cutoff::Gaussian { radius },
            CutoffConfig::FlatTop { delta } => Cutoff::FlatTop { delta },
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    #[serde(default = "default_dim")]
    dim: usize,
    gamma: usize,
    /// Radial coefficients `a_0, a_1, …`; `ρ^γ` when absent.
    coeffs: Option<Vec<f64>>,
    #[serde(default)]
    anisotropy: f64,
    #[serde(default)]
    nu: f64,
    #[serde(default = "default_cutoff")]
    cutoff: CutoffConfig,
    lambdas: Samples,
    window: Option<[f64; 2]>,
    points_per_period: Option<f64>,
    budget: Option<usize>,
    #[serde(default = "default_tolerance")]
    tolerance: f64,
}

fn default_dim() -> usize {
    1
}
fn default_cutoff() -> CutoffConfig {
    CutoffConfig::FlatTop { delta: 4.0 }
}
fn default_tolerance() -> f64 {
    0.03
}

#[derive(Serialize)]
struct Verdict {
    dim: usize,
    gamma: usize,
    predicted_slope: f64,
    fitted_slope: f64,
    intercept: f64,
    sup_constant: f64,
    window: (f64, f64),
    points: usize,
    tolerance: f64,
    pass: bool,
    /// Largest relative deviation from `√(π/(1−iλ))`, for the Gaussian quadratic model.
    fresnel_error: Option<f64>,
}

pub fn run(ctx: &Run, out: &mut Output) -> anyhow::Result<()> {
    let cfg: Config = ctx.config.parse()?;
    let mut mi = ModelIntegral::power(cfg.dim, cfg.gamma, cfg.cutoff.into());
    if let Some(c) = &cfg.coeffs {
        mi.coeffs = c.clone();
    }
    mi.anisotropy = cfg.anisotropy;
    if let Some(p) = cfg.points_per_period {
        mi.points_per_period = p;
    }
    if let Some(b) = cfg.budget {
        mi.budget = b;
    }
    mi.check_conditions(cfg.nu)?;
    let lambdas = cfg.lambdas.values()?;
    let values = lambdas.par_iter().map(|&l| eval_model(&mi, l, cfg.nu)).collect::<Result<Vec<_>, _>>()?;

    let header: Vec<String> = ["lambda", "abs", "arg"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> =
        lambdas.iter().zip(&values).map(|(l, z)| vec![num(*l), num(z.norm()), num(z.arg())]).collect();
    out.csv("model.csv", &header, &rows)?;

    let predicted = -(cfg.dim as f64) / cfg.gamma as f64;
    let lo = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let window = cfg.window.map_or((lo, hi), |w| (w[0], w[1]));
    let mags: Vec<f64> = values.iter().map(|z| z.norm()).collect();
    let fit = fit_envelope(&lambdas, &mags, predicted, window)?;
    let quadratic = cfg.coeffs.is_none() && cfg.gamma == 2 && cfg.dim == 1 && cfg.nu == 0.0;
    let fresnel_error = match cfg.cutoff {
        CutoffConfig::Gaussian { .. } if quadratic => Some(
            lambdas
                .iter()
                .zip(&values)
                .map(|(l, z)| {
                    let exact = fresnel_closed_form(*l);
                    (z - exact).norm() / exact.norm()
                })
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    let verdict = Verdict {
        dim: cfg.dim,
        gamma: cfg.gamma,
        predicted_slope: predicted,
        fitted_slope: fit.fitted_slope,
        intercept: fit.intercept,
        sup_constant: fit.sup_constant,
        window: fit.window,
        points: fit.lambdas.len(),
        tolerance: cfg.tolerance,
        pass: (fit.fitted_slope - predicted).abs() <= cfg.tolerance,
        fresnel_error,
    };
    println!("vdc: slope {:.5} (predicted {:.5}), pass {}", verdict.fitted_slope, predicted, verdict.pass);
    out.json("envelope.json", &verdict)?;
    Ok(())
}
