//! Level sets `{φ = 1}` of degree-one homogeneous functions: graph charts,
//! contact orders and the convex / non-convex Sugimoto indices.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{self, Dialect, Node};
use crate::linalg::{symmetric_eigenvalues, Mat};
use crate::scalar::{norm2, Real};
use crate::symbol::{sphere_samples, LimitRoots};

type PhaseFn<T> = dyn Fn(&[T]) -> Result<T> + Send + Sync;

/// A positive function on `ℝⁿ \ {0}`, homogeneous of degree one.
#[derive(Clone)]
pub struct HomogeneousPhase<T> {
    pub n: usize,
    pub source: String,
    f: Arc<PhaseFn<T>>,
}

impl<T> fmt::Debug for HomogeneousPhase<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HomogeneousPhase").field("n", &self.n).field("source", &self.source).finish()
    }
}

impl<T: Real> HomogeneousPhase<T> {
    pub fn from_fn(n: usize, source: impl Into<String>, f: impl Fn(&[T]) -> Result<T> + Send + Sync + 'static) -> Self {
        HomogeneousPhase { n, source: source.into(), f: Arc::new(f) }
    }

    /// Parse an expression in `xi1..xin` and check homogeneity and positivity.
    pub fn from_expr(source: &str, n: usize) -> Result<Self> {
        if !(2..=3).contains(&n) {
            return Err(Error::InvalidInput(format!("phase dimension must be 2 or 3, got {n}")));
        }
        let ast: Node<T> = expr::parse(source, Dialect::Phase { n })?;
        let p = Self::from_fn(n, source, move |x: &[T]| ast.eval(x));
        p.validate()?;
        Ok(p)
    }

    pub fn eval(&self, xi: &[T]) -> Result<T> {
        (self.f)(xi)
    }

    /// Check `φ(sξ) = sφ(ξ)` and `φ > 0` on sampled directions.
    pub fn validate(&self) -> Result<()> {
        let dirs: Vec<Vec<T>> = sphere_samples(self.n, if self.n == 2 { 64 } else { 6 });
        let mut defect = T::zero();
        for d in &dirs {
            let v = self.eval(d)?;
            if !(v > T::zero()) {
                return Err(Error::NotPositive { direction: d.iter().map(|x| x.f64()).collect() });
            }
            for s in [0.5, 2.0, 3.7] {
                let s = T::lit(s);
                let sd: Vec<T> = d.iter().map(|x| *x * s).collect();
                defect = defect.max((self.eval(&sd)? - s * v).abs() / (s * v));
            }
        }
        if defect > T::lit(1e-10) {
            return Err(Error::NotHomogeneous { defect: defect.f64() });
        }
        Ok(())
    }

    /// `φ ∘ R` for an `n×n` matrix `R`.
    pub fn composed(&self, r: Mat<T>) -> Self {
        let f = self.f.clone();
        Self::from_fn(self.n, format!("({})∘R", self.source), move |x: &[T]| f(&r.matvec(x)))
    }

    /// `s φ`.
    pub fn scaled(&self, s: T) -> Self {
        let f = self.f.clone();
        Self::from_fn(self.n, format!("{}*({})", s, self.source), move |x: &[T]| Ok(f(x)? * s))
    }

    /// Central-difference gradient (fourth order).
    pub fn gradient(&self, xi: &[T]) -> Result<Vec<T>> {
        let h = norm2(xi) * T::lit(1e-3);
        let mut g = Vec::with_capacity(self.n);
        let mut p = xi.to_vec();
        for i in 0..self.n {
            let mut val = |d: T| -> Result<T> {
                p[i] = xi[i] + d;
                self.eval(&p)
            };
            let two = T::lit(2.0);
            let v = (T::lit(8.0) * (val(h)? - val(-h)?) - (val(two * h)? - val(-two * h)?)) / (T::lit(12.0) * h);
            p[i] = xi[i];
            g.push(v);
        }
        Ok(g)
    }
}

/// `σ = d / φ(d)`.
pub fn trace_point<T: Real>(phase: &HomogeneousPhase<T>, direction: &[T]) -> Result<Vec<T>> {
    let v = phase.eval(direction)?;
    if !(v > T::zero()) {
        return Err(Error::NotPositive { direction: direction.iter().map(|x| x.f64()).collect() });
    }
    Ok(direction.iter().map(|x| *x / v).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct ChartOptions<T> {
    /// Half-width of the interpolation window relative to `|σ|`.
    pub delta: T,
    pub degree: usize,
    /// Noise threshold for the normalized Taylor coefficients `|h^(k)/k!| |σ|^{k-1}`.
    pub threshold: T,
    pub convexity_tol: T,
}

impl<T: Real> Default for ChartOptions<T> {
    fn default() -> Self {
        ChartOptions { delta: T::lit(0.25), degree: 14, threshold: T::lit(1e-5), convexity_tol: T::lit(1e-8) }
    }
}

/// Local graph of `Σ_φ` over the tangent plane at `σ`, with the normal as the last axis.
#[derive(Debug, Clone)]
pub struct GraphChart<'a, T> {
    pub phase: &'a HomogeneousPhase<T>,
    pub sigma: Vec<T>,
    pub normal: Vec<T>,
    /// Orthonormal basis of the tangent plane.
    pub tangents: Vec<Vec<T>>,
    pub height: T,
}

pub fn graph_chart<'a, T: Real>(phase: &'a HomogeneousPhase<T>, sigma: &[T]) -> Result<GraphChart<'a, T>> {
    let g = phase.gradient(sigma)?;
    let gn = norm2(&g);
    let sig = || Error::ChartBreakdown { sigma: sigma.iter().map(|x| x.f64()).collect() };
    if !(gn > T::zero()) || !gn.is_finite() {
        return Err(sig());
    }
    let nu: Vec<T> = g.iter().map(|x| *x / gn).collect();
    let height: T = sigma.iter().zip(&nu).map(|(a, b)| *a * *b).sum();
    // Euler: ∇φ(σ)·σ = 1 > 0, so the normal points outward
    if !(height > T::zero()) {
        return Err(sig());
    }
    let tangents = match phase.n {
        2 => vec![vec![-nu[1], nu[0]]],
        _ => {
            let k = (0..3).min_by(|&a, &b| nu[a].abs().partial_cmp(&nu[b].abs()).unwrap()).unwrap();
            let mut e1 = vec![T::zero(); 3];
            e1[k] = T::one();
            let d = nu[k];
            for i in 0..3 {
                e1[i] -= d * nu[i];
            }
            let n1 = norm2(&e1);
            e1.iter_mut().for_each(|x| *x /= n1);
            let e2 = vec![
                nu[1] * e1[2] - nu[2] * e1[1],
                nu[2] * e1[0] - nu[0] * e1[2],
                nu[0] * e1[1] - nu[1] * e1[0],
            ];
            vec![e1, e2]
        }
    };
    Ok(GraphChart { phase, sigma: sigma.to_vec(), normal: nu, tangents, height })
}

impl<'a, T: Real> GraphChart<'a, T> {
    fn sigma_err(&self) -> Error {
        Error::ChartBreakdown { sigma: self.sigma.iter().map(|x| x.f64()).collect() }
    }

    /// Height `h` with `φ(σ_T + Σ y_i e_i + h ν) = 1`, where `σ_T` is the tangential part of `σ`.
    pub fn h(&self, y: &[T]) -> Result<T> {
        let n = self.phase.n;
        let mut base = self.sigma.clone();
        for (yi, e) in y.iter().zip(&self.tangents) {
            for i in 0..n {
                base[i] += *yi * e[i];
            }
        }
        self.solve_along_normal(&base).map(|s| self.height + s)
    }

    /// Height of the section curve in the plane spanned by `u` and the normal.
    pub fn section_h(&self, u: &[T], y: T) -> Result<T> {
        let base: Vec<T> = self.sigma.iter().zip(u).map(|(s, d)| *s + y * *d).collect();
        self.solve_along_normal(&base).map(|s| self.height + s)
    }

    fn solve_along_normal(&self, base: &[T]) -> Result<T> {
        let scale = norm2(&self.sigma);
        let at = |s: T| -> Result<T> {
            let p: Vec<T> = base.iter().zip(&self.normal).map(|(b, v)| *b + s * *v).collect();
            self.phase.eval(&p)
        };
        let mut s = T::zero();
        let d = scale * T::lit(1e-6);
        for _ in 0..60 {
            let f = at(s)? - T::one();
            let df = (at(s + d)? - at(s - d)?) / (d + d);
            if !(df > T::lit(1e-8)) {
                return Err(self.sigma_err());
            }
            let step = f / df;
            s -= step;
            if step.abs() <= T::epsilon() * T::lit(4.0) * scale {
                return Ok(s);
            }
            if s.abs() > scale {
                return Err(self.sigma_err());
            }
        }
        Ok(s)
    }

    /// Taylor coefficients `h^(k)(0)/k!`, `k = 0..=degree`, of the section in direction `u`.
    pub fn section_taylor(&self, u: &[T], opts: &ChartOptions<T>) -> Result<Vec<T>> {
        let delta = opts.delta * norm2(&self.sigma);
        let d = opts.degree;
        let np = d + 1;
        let pi = std::f64::consts::PI;
        let xs: Vec<f64> = (0..np).map(|i| (pi * (i as f64 + 0.5) / np as f64).cos()).collect();
        let vals = xs.iter().map(|x| self.section_h(u, delta * T::lit(*x))).collect::<Result<Vec<T>>>()?;
        // Chebyshev coefficients on [-1, 1]
        let mut c = vec![T::zero(); np];
        for (k, ck) in c.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (i, v) in vals.iter().enumerate() {
                acc += *v * T::lit((pi * k as f64 * (i as f64 + 0.5) / np as f64).cos());
            }
            *ck = acc * T::lit(2.0 / np as f64);
        }
        c[0] *= T::lit(0.5);
        // monomial coefficients through the three-term recurrence
        let mut tm = vec![vec![0.0f64; np]; np];
        tm[0][0] = 1.0;
        if np > 1 {
            tm[1][1] = 1.0;
        }
        for k in 2..np {
            for j in 0..np {
                let up = if j > 0 { 2.0 * tm[k - 1][j - 1] } else { 0.0 };
                tm[k][j] = up - tm[k - 2][j];
            }
        }
        let mut out = vec![T::zero(); np];
        let mut dp = T::one();
        for j in 0..np {
            let mut a = T::zero();
            for k in 0..np {
                if tm[k][j] != 0.0 {
                    a += c[k] * T::lit(tm[k][j]);
                }
            }
            out[j] = a / dp;
            dp *= delta;
        }
        Ok(out)
    }
}

/// Order of contact between `Σ_φ ∩ P` and its tangent line at `σ`, where `P` is spanned by
/// the normal and the tangent direction `u`.
pub fn contact_order<T: Real>(
    phase: &HomogeneousPhase<T>,
    sigma: &[T],
    u: &[T],
    gamma_max: usize,
    opts: &ChartOptions<T>,
) -> Result<usize> {
    let chart = graph_chart(phase, sigma)?;
    let u = project_tangent(&chart, u);
    order_from_taylor(&chart.section_taylor(&u, opts)?, norm2(sigma), gamma_max, opts.threshold)
        .ok_or_else(|| Error::OrderExceeds { gamma_max, sigma: sigma.iter().map(|x| x.f64()).collect() })
}

fn project_tangent<T: Real>(chart: &GraphChart<'_, T>, u: &[T]) -> Vec<T> {
    let d: T = u.iter().zip(&chart.normal).map(|(a, b)| *a * *b).sum();
    let mut v: Vec<T> = u.iter().zip(&chart.normal).map(|(a, b)| *a - d * *b).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

fn normalized<T: Real>(taylor: &[T], r: T, k: usize) -> T {
    taylor[k].abs() * r.powi(k as i32 - 1)
}

fn order_from_taylor<T: Real>(taylor: &[T], r: T, gamma_max: usize, threshold: T) -> Option<usize> {
    (2..=gamma_max.min(taylor.len() - 1)).find(|&k| normalized(taylor, r, k) > threshold)
}

#[derive(Debug, Clone, Serialize)]
pub struct PointReport<T> {
    pub sigma: Vec<T>,
    pub orders: Vec<usize>,
    /// Largest eigenvalue of the chart Hessian (≤ tolerance for a convex level set).
    pub max_curvature: T,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContactReport<T> {
    pub convex: bool,
    pub gamma: usize,
    pub gamma0: usize,
    pub points: Vec<PointReport<T>>,
}

/// Sample `Σ_φ` and aggregate contact orders into `γ` (sup sup) and `γ₀` (sup inf).
pub fn sugimoto_indices<T: Real>(
    phase: &HomogeneousPhase<T>,
    sphere_samples_k: usize,
    plane_samples: usize,
    gamma_max: usize,
    opts: &ChartOptions<T>,
) -> Result<ContactReport<T>> {
    let points = match phase.n {
        2 => planar_points(phase, sphere_samples_k.max(8), gamma_max, opts)?,
        3 => sphere_samples::<T>(3, sphere_samples_k.max(2))
            .par_iter()
            .map(|d| spatial_point(phase, d, plane_samples.max(4), gamma_max, opts))
            .collect::<Result<Vec<_>>>()?,
        n => return Err(Error::InvalidInput(format!("dimension {n} not supported"))),
    };
    let gamma = points.iter().flat_map(|p| p.orders.iter().copied()).max().unwrap_or(2);
    let gamma0 = points.iter().map(|p| p.orders.iter().copied().min().unwrap_or(2)).max().unwrap_or(2);
    let convex = points.iter().all(|p| p.max_curvature <= opts.convexity_tol);
    Ok(ContactReport { convex, gamma, gamma0, points })
}

fn spatial_point<T: Real>(
    phase: &HomogeneousPhase<T>,
    dir: &[T],
    planes: usize,
    gamma_max: usize,
    opts: &ChartOptions<T>,
) -> Result<PointReport<T>> {
    let sigma = trace_point(phase, dir)?;
    let chart = graph_chart(phase, &sigma)?;
    let r = norm2(&sigma);
    let (e1, e2) = (&chart.tangents[0], &chart.tangents[1]);
    let dirn = |a: T| -> Vec<T> { (0..3).map(|i| a.cos() * e1[i] + a.sin() * e2[i]).collect() };
    let mut orders = Vec::with_capacity(planes);
    for p in 0..planes {
        let a = T::PI() * T::from_usize_lossy(p) / T::from_usize_lossy(planes);
        let tay = chart.section_taylor(&dirn(a), opts)?;
        orders.push(
            order_from_taylor(&tay, r, gamma_max, opts.threshold)
                .ok_or_else(|| Error::OrderExceeds { gamma_max, sigma: sigma.iter().map(|x| x.f64()).collect() })?,
        );
    }
    // Hessian from the sections at 0, π/4, π/2
    let second = |a: T| -> Result<T> { Ok(chart.section_taylor(&dirn(a), opts)?[2] * T::lit(2.0)) };
    let h11 = second(T::zero())?;
    let h22 = second(T::FRAC_PI_2())?;
    let h12 = second(T::FRAC_PI_4())? - (h11 + h22) * T::lit(0.5);
    let hm = Mat { rows: 2, cols: 2, data: vec![h11, h12, h12, h22] };
    let max_curvature = symmetric_eigenvalues(&hm)[1] * r;
    Ok(PointReport { sigma, orders, max_curvature })
}

fn planar_points<T: Real>(
    phase: &HomogeneousPhase<T>,
    k: usize,
    gamma_max: usize,
    opts: &ChartOptions<T>,
) -> Result<Vec<PointReport<T>>> {
    let angle_dir = |a: T| vec![a.cos(), a.sin()];
    // signed normalized h''/2 and the full Taylor data at an angle
    let eval = |a: T| -> Result<(Vec<T>, Vec<T>)> {
        let sigma = trace_point(phase, &angle_dir(a))?;
        let chart = graph_chart(phase, &sigma)?;
        let tay = chart.section_taylor(&chart.tangents[0], opts)?;
        Ok((sigma, tay))
    };
    let curv = |sigma: &[T], tay: &[T]| tay[2] * norm2(sigma);
    let angles: Vec<T> = (0..k).map(|i| T::lit(2.0) * T::PI() * T::from_usize_lossy(i) / T::from_usize_lossy(k)).collect();
    let base = angles.par_iter().map(|&a| eval(a)).collect::<Result<Vec<_>>>()?;
    let kappa: Vec<T> = base.iter().map(|(s, t)| curv(s, t)).collect();
    let kmax = kappa.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let mut extra = Vec::new();
    let step = T::lit(2.0) * T::PI() / T::from_usize_lossy(k);
    for i in 0..k {
        let prev = kappa[(i + k - 1) % k];
        let next = kappa[(i + 1) % k];
        let cur = kappa[i];
        let a = angles[i];
        if cur.signum() != next.signum() && cur != T::zero() && next != T::zero() {
            // inflection: bisect the sign change
            let (mut lo, mut hi) = (a, a + step);
            let s_lo = cur.signum();
            for _ in 0..60 {
                let mid = (lo + hi) * T::lit(0.5);
                let (s, t) = eval(mid)?;
                if curv(&s, &t).signum() == s_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            extra.push((lo + hi) * T::lit(0.5));
        } else if cur.abs() <= prev.abs() && cur.abs() < next.abs() && cur.abs() < T::lit(1e-2) * kmax && cur != T::zero() {
            // near-flat point: golden-section search on |κ|
            let g = T::lit(0.618_033_988_749_894_8);
            let (mut lo, mut hi) = (a - step, a + step);
            let f = |x: T| -> Result<T> {
                let (s, t) = eval(x)?;
                Ok(curv(&s, &t).abs())
            };
            let mut x1 = hi - g * (hi - lo);
            let mut x2 = lo + g * (hi - lo);
            let (mut f1, mut f2) = (f(x1)?, f(x2)?);
            for _ in 0..80 {
                if f1 <= f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - g * (hi - lo);
                    f1 = f(x1)?;
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + g * (hi - lo);
                    f2 = f(x2)?;
                }
                if hi - lo < T::lit(1e-12) {
                    break;
                }
            }
            extra.push((lo + hi) * T::lit(0.5));
        }
    }
    let extra_data = extra.iter().map(|&a| eval(a)).collect::<Result<Vec<_>>>()?;
    base.into_iter()
        .chain(extra_data)
        .map(|(sigma, tay)| {
            let r = norm2(&sigma);
            let order = order_from_taylor(&tay, r, gamma_max, opts.threshold)
                .ok_or_else(|| Error::OrderExceeds { gamma_max, sigma: sigma.iter().map(|x| x.f64()).collect() })?;
            let max_curvature = tay[2] * T::lit(2.0) * r;
            Ok(PointReport { sigma, orders: vec![order], max_curvature })
        })
        .collect()
}

/// A limiting root branch after subtracting the mid-gap linear function.
#[derive(Debug, Clone)]
pub struct ShiftedBranch<T> {
    pub branch: usize,
    /// Coefficients of the subtracted linear function `α(ξ) = a·ξ`.
    pub shift: Vec<T>,
    /// `-1` when the branch was negated to make it positive.
    pub sign: T,
    pub phase: HomogeneousPhase<T>,
}

/// `±(φ_k − α)` for the limiting operator on one side, positive on the sphere.
pub fn linear_shift<T: Real>(limit: &LimitRoots<T>, plus: bool, k: usize) -> Result<ShiftedBranch<T>> {
    let op = limit.side(plus).clone();
    let m = op.m;
    let n = op.n;
    if k >= m {
        return Err(Error::InvalidInput(format!("branch {k} out of range for m = {m}")));
    }
    let roots = {
        let op = op.clone();
        move |xi: &[T]| -> Result<Vec<T>> {
            let r = norm2(xi);
            let xhat: Vec<T> = xi.iter().map(|x| *x / r).collect();
            Ok(op.roots_unit(T::zero(), &xhat)?.into_iter().map(|v| v * r).collect())
        }
    };
    let mid = |rs: &[T]| if m % 2 == 0 { (rs[m / 2 - 1] + rs[m / 2]) * T::lit(0.5) } else { rs[(m - 1) / 2] };
    // linear fit through the coordinate axes, kept only if exact on the samples
    let mut a = vec![T::zero(); n];
    for (i, ai) in a.iter_mut().enumerate() {
        let mut e = vec![T::zero(); n];
        e[i] = T::one();
        *ai = mid(&roots(&e)?);
    }
    let dirs: Vec<Vec<T>> = sphere_samples(n, if n == 2 { 64 } else { 6 });
    for d in &dirs {
        let lin: T = a.iter().zip(d).map(|(x, y)| *x * *y).sum();
        if (mid(&roots(d)?) - lin).abs() > T::lit(1e-9) {
            a.iter_mut().for_each(|x| *x = T::zero());
            break;
        }
    }
    let shifted = {
        let a = a.clone();
        let roots = roots.clone();
        move |xi: &[T]| -> Result<T> {
            let lin: T = a.iter().zip(xi).map(|(x, y)| *x * *y).sum();
            Ok(roots(xi)?[k] - lin)
        }
    };
    let vals = dirs.iter().map(|d| shifted(d)).collect::<Result<Vec<T>>>()?;
    let tol = T::lit(1e-9);
    let sign = if vals.iter().all(|v| *v > tol) {
        T::one()
    } else if vals.iter().all(|v| *v < -tol) {
        -T::one()
    } else {
        return Err(Error::NotSignDefinite { branch: k });
    };
    let phase = HomogeneousPhase::from_fn(n, format!("limit branch {k} ({})", if plus { "+" } else { "-" }), move |xi: &[T]| {
        Ok(sign * shifted(xi)?)
    });
    Ok(ShiftedBranch { branch: k, shift: a, sign, phase })
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchReport<T> {
    pub branch: usize,
    pub sign: T,
    pub report: Option<ContactReport<T>>,
    /// Why the branch was left out of the aggregate.
    pub excluded: Option<String>,
}

/// Indices of every limiting branch on one side, with non-definite branches excluded.
pub fn limiting_branch_indices<T: Real>(
    limit: &LimitRoots<T>,
    plus: bool,
    sphere_k: usize,
    planes: usize,
    gamma_max: usize,
    opts: &ChartOptions<T>,
) -> Result<Vec<BranchReport<T>>> {
    let m = limit.side(plus).m;
    (0..m)
        .map(|k| match linear_shift(limit, plus, k) {
            Ok(b) => Ok(BranchReport {
                branch: k,
                sign: b.sign,
                report: Some(sugimoto_indices(&b.phase, sphere_k, planes, gamma_max, opts)?),
                excluded: None,
            }),
            Err(e @ Error::NotSignDefinite { .. }) => {
                Ok(BranchReport { branch: k, sign: T::zero(), report: None, excluded: Some(e.to_string()) })
            }
            Err(e) => Err(e),
        })
        .collect()
}
