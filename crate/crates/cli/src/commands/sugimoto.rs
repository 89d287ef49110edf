use anyhow::bail;
use dispersa::geometry::{limiting_branch_indices, linear_shift, sugimoto_indices, BranchReport, ChartOptions, ContactReport, HomogeneousPhase};
use serde::{Deserialize, Serialize};

use crate::config::OperatorSource;
use crate::output::Output;
use crate::Run;

#[derive(Deserialize, Clone, Copy, Default)]
#[serde(rename_all = "snake_case")]
enum Side {
    #[default]
    Plus,
    Minus,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    /// A phase in the variables `xi1, …, xin`.
    expression: Option<String>,
    n: Option<usize>,
    /// Alternatively, the limiting root branches of an operator.
    operator: Option<OperatorSource>,
    #[serde(default)]
    side: Side,
    branch: Option<usize>,
    #[serde(default = "default_sphere")]
    sphere_samples: usize,
    #[serde(default = "default_planes")]
    plane_samples: usize,
    #[serde(default = "default_gamma_max")]
    gamma_max: usize,
}

fn default_sphere() -> usize {
    64
}
fn default_planes() -> usize {
    8
}
fn default_gamma_max() -> usize {
    8
}

#[derive(Serialize)]
struct Branches {
    side: &'static str,
    gamma: usize,
    gamma0: usize,
    convex: bool,
    branches: Vec<BranchReport<f64>>,
}

fn summary(r: &ContactReport<f64>) {
    println!("convex: {}, gamma: {}, gamma0: {}", r.convex, r.gamma, r.gamma0);
}

pub fn run(ctx: &Run, out: &mut Output) -> anyhow::Result<()> {
    let cfg: Config = ctx.config.parse()?;
    let opts = ChartOptions::default();
    let index = |phase: &HomogeneousPhase<f64>| {
        sugimoto_indices(phase, cfg.sphere_samples, cfg.plane_samples, cfg.gamma_max, &opts)
    };
    match (&cfg.expression, &cfg.operator) {
        (Some(src), None) => {
            let Some(n) = cfg.n else { bail!("an expression phase needs the dimension n") };
            let phase = HomogeneousPhase::from_expr(src, n)?;
            let report = index(&phase)?;
            summary(&report);
            out.json("contact.json", &report)?;
        }
        (None, Some(source)) => {
            let op = source.load(&ctx.config.dir)?;
            let limit = op.limiting_roots()?;
            let plus = matches!(cfg.side, Side::Plus);
            if let Some(k) = cfg.branch {
                if k >= op.m {
                    bail!("branch {k} out of range for m = {}", op.m);
                }
                let b = linear_shift(&limit, plus, k)?;
                let report = index(&b.phase)?;
                summary(&report);
                out.json("contact.json", &report)?;
            } else {
                let branches = limiting_branch_indices(&limit, plus, cfg.sphere_samples, cfg.plane_samples, cfg.gamma_max, &opts)?;
                let kept: Vec<&ContactReport<f64>> = branches.iter().filter_map(|b| b.report.as_ref()).collect();
                if kept.is_empty() {
                    bail!("no sign-definite branch on this side");
                }
                let agg = Branches {
                    side: if plus { "plus" } else { "minus" },
                    gamma: kept.iter().map(|r| r.gamma).max().unwrap_or(2),
                    gamma0: kept.iter().map(|r| r.gamma0).max().unwrap_or(2),
                    convex: kept.iter().all(|r| r.convex),
                    branches,
                };
                println!("convex: {}, gamma: {}, gamma0: {}", agg.convex, agg.gamma, agg.gamma0);
                out.json("branches.json", &agg)?;
            }
        }
        _ => bail!("give exactly one of `expression` or `operator`"),
    }
    Ok(())
}
