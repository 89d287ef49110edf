use anyhow::bail;
use dispersa::cauchy::{decay_experiment, small_time_check, CauchyData, DecayOptions, Method, PredictedRate, SpectralGrid, ZoneFit};
use dispersa::symbol::{hyperbolicity_certificate, linspace};
use serde::{Deserialize, Serialize};

use crate::config::{exponent, optional_exponent, CertificateConfig, OperatorSource, Samples};
use crate::output::{num, Output};
use crate::Run;

#[derive(Deserialize)]
#[serde(untagged)]
enum BoxSize {
    Auto(String),
    Fixed(f64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridConfig {
    points: usize,
    #[serde(rename = "box", default = "default_box")]
    box_size: BoxSize,
}

fn default_box() -> BoxSize {
    BoxSize::Auto("auto".into())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SmallTimeConfig {
    times: Samples,
    #[serde(default, deserialize_with = "optional_exponent")]
    p: Option<f64>,
    #[serde(default, deserialize_with = "optional_exponent")]
    q: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    operator: OperatorSource,
    grid: GridConfig,
    data: CauchyData<f64>,
    times: Samples,
    #[serde(deserialize_with = "exponent")]
    p: f64,
    #[serde(deserialize_with = "exponent")]
    q: f64,
    #[serde(default)]
    l: usize,
    #[serde(default = "default_method")]
    method: Method,
    #[serde(default = "default_zones")]
    zones: bool,
    #[serde(default = "default_predicted")]
    predicted: PredictedRate,
    window: Option<[f64; 2]>,
    tolerance: Option<f64>,
    #[serde(default)]
    certificate: CertificateConfig,
    small_time: Option<SmallTimeConfig>,
}

fn default_method() -> Method {
    Method::Asymptotic
}
fn default_zones() -> bool {
    true
}
fn default_predicted() -> PredictedRate {
    PredictedRate::Convex { gamma: 2 }
}

#[derive(Serialize)]
struct SmallTimeVerdict {
    order: f64,
    surrogate: f64,
    constant: f64,
    reference: f64,
    bounded: bool,
}

#[derive(Serialize)]
struct Verdict<'a> {
    n: usize,
    #[serde(serialize_with = "crate::output::exponent")]
    p: f64,
    #[serde(serialize_with = "crate::output::exponent")]
    q: f64,
    l: usize,
    moment_order: u32,
    box_size: f64,
    points: usize,
    unique_frequencies: usize,
    bound_constant: f64,
    separation: f64,
    fits: Vec<FitSummary<'a>>,
    partition_defect: f64,
    small_time: Option<SmallTimeVerdict>,
    verdict: bool,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    zone: &'a str,
    predicted_slope: f64,
    fitted_slope: f64,
    pass: bool,
    points: usize,
}

impl<'a> From<&'a ZoneFit<f64>> for FitSummary<'a> {
    fn from(z: &'a ZoneFit<f64>) -> Self {
        FitSummary {
            zone: &z.zone,
            predicted_slope: z.predicted_slope,
            fitted_slope: z.fitted_slope,
            pass: z.pass,
            points: z.fit.lambdas.len(),
        }
    }
}

pub fn run(ctx: &Run, out: &mut Output) -> anyhow::Result<()> {
    let cfg: Config = ctx.config.parse()?;
    let op = cfg.operator.load(&ctx.config.dir)?;
    let times = cfg.times.values()?;
    let small_times = match &cfg.small_time {
        Some(s) => s.times.values()?,
        None => Vec::new(),
    };
    let t_max = times.iter().chain(&small_times).copied().fold(0.0, f64::max);
    let t_grid = linspace(0.0, t_max, cfg.certificate.t_samples.max(2));
    let rf = hyperbolicity_certificate(&op, &t_grid, cfg.certificate.sphere_samples)?;

    let grid = match cfg.grid.box_size {
        BoxSize::Fixed(l) => SpectralGrid::new(op.n, cfg.grid.points, l)?,
        BoxSize::Auto(ref s) if s == "auto" => {
            if !cfg.data.is_closed_form() {
                bail!("sampled data need an explicit box size");
            }
            let probe = SpectralGrid::new(op.n, 8, 1.0)?;
            SpectralGrid::auto(op.n, cfg.grid.points, rf.bound_constant, t_max, cfg.data.radius(&probe))?
        }
        BoxSize::Auto(ref s) => bail!("box must be a number or \"auto\", got {s:?}"),
    };

    let mut opts = DecayOptions::new(cfg.p, cfg.q, cfg.predicted);
    opts.l = cfg.l;
    opts.method = cfg.method;
    opts.zones = cfg.zones;
    if let Some([a, b]) = cfg.window {
        opts.window = (a, b);
    }
    if let Some(t) = cfg.tolerance {
        opts.tolerance = t;
    }
    if let Some(t) = ctx.tol {
        opts.ode_tol = t;
    }
    let report = decay_experiment(&rf, &grid, &cfg.data, &times, &opts)?;

    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let header: Vec<String> = ["t", "full", "u1", "u2", "u3"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> =
        report.rows.iter().map(|r| vec![num(r.t), num(r.full), opt(r.u1), opt(r.u2), opt(r.u3)]).collect();
    out.csv("decay.csv", &header, &rows)?;

    let small_time = match &cfg.small_time {
        Some(s) => {
            let (p, q) = (s.p.unwrap_or(cfg.p), s.q.unwrap_or(cfg.q));
            let st = small_time_check(&rf, &grid, &cfg.data, &small_times, p, q, cfg.l, opts.ode_tol)?;
            let header: Vec<String> = ["t", "norm", "ratio"].iter().map(|s| s.to_string()).collect();
            let rows: Vec<Vec<String>> = st.rows.iter().map(|r| vec![num(r.t), num(r.norm), num(r.ratio)]).collect();
            out.csv("small_time.csv", &header, &rows)?;
            Some(SmallTimeVerdict {
                order: st.order,
                surrogate: st.surrogate,
                constant: st.constant,
                reference: st.reference,
                bounded: st.bounded,
            })
        }
        None => None,
    };

    for f in &report.fits {
        println!("{:>4}: slope {:+.4} (predicted {:+.4}) {}", f.zone, f.fitted_slope, f.predicted_slope, if f.pass { "pass" } else { "fail" });
    }
    let verdict = Verdict {
        n: report.n,
        p: report.p,
        q: report.q,
        l: report.l,
        moment_order: report.moment_order,
        box_size: report.box_size,
        points: report.points,
        unique_frequencies: report.unique_frequencies,
        bound_constant: rf.bound_constant,
        separation: rf.separation,
        fits: report.fits.iter().map(FitSummary::from).collect(),
        partition_defect: report.partition_defect,
        small_time,
        verdict: report.verdict,
    };
    out.json("verdict.json", &verdict)?;
    Ok(())
}
