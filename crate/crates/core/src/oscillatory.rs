//! Oscillatory integrals: van der Corput model integrals, the dispersive kernel
//! of the solution operator, and power-law envelope fits.

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymint::representation_at;
use crate::error::{Error, Result};
use crate::quad::gauss_legendre;
use crate::scalar::{c0, norm2, Real};
use crate::spectral::phases;
use crate::symbol::OperatorSpec;

/// Smooth step: 1 for `u ≤ 0`, 0 for `u ≥ 1`, built from `exp(−1/x)`.
pub fn smooth_step<T: Real>(u: T) -> T {
    if u <= T::zero() {
        return T::one();
    }
    if u >= T::one() {
        return T::zero();
    }
    let g = |x: T| (-T::one() / x).exp();
    let a = g(T::one() - u);
    a / (a + g(u))
}

/// `≡ 1` for `|ρ| ≤ inner`, `≡ 0` for `|ρ| ≥ outer`, smooth in between.
pub fn plateau<T: Real>(rho: T, inner: T, outer: T) -> T {
    smooth_step((rho.abs() - inner) / (outer - inner))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub enum Cutoff<T> {
    /// `e^{−ρ²}` truncated at `|ρ| = radius`.
    Gaussian { radius: T },
    /// `≡ 1` on `|ρ| ≤ δ/4`, supported in `|ρ| ≤ δ/2`.
    FlatTop { delta: T },
}

impl<T: Real> Cutoff<T> {
    pub fn eval(&self, rho: T) -> T {
        match *self {
            Cutoff::Gaussian { radius } => {
                if rho.abs() > radius {
                    T::zero()
                } else {
                    (-rho * rho).exp()
                }
            }
            Cutoff::FlatTop { delta } => plateau(rho, delta * T::lit(0.25), delta * T::lit(0.5)),
        }
    }

    pub fn support(&self) -> T {
        match *self {
            Cutoff::Gaussian { radius } => radius,
            Cutoff::FlatTop { delta } => delta * T::lit(0.5),
        }
    }

    /// Points where the cutoff is not analytic, plus the largest panel width it tolerates.
    fn breaks(&self) -> (Vec<T>, T) {
        match *self {
            Cutoff::Gaussian { .. } => (vec![T::zero()], T::lit(0.5)),
            Cutoff::FlatTop { delta } => {
                let q = delta * T::lit(0.25);
                (vec![T::zero(), q, -q], q * T::lit(0.125))
            }
        }
    }
}

/// `I(λ, ν) = ∫ e^{iλF(x, ν)} χ(|x|) dx` over `ℝ^N`, `N ∈ {1, 2}`, with amplitude 1.
///
/// `F(ρ, ω, ν) = (1 + β cos 2ω) Σ_j a_j ρ^j + ν ρ^{γ+1}`; for `N = 1` the angle is absent
/// and `ρ` runs over the real line.
#[derive(Debug, Clone, Serialize)]
pub struct ModelIntegral<T> {
    pub dim: usize,
    pub gamma: usize,
    /// `a_0, a_1, …`; the conditions ask `a_0 = a_1 = 0`.
    pub coeffs: Vec<T>,
    pub anisotropy: T,
    pub cutoff: Cutoff<T>,
    pub points_per_period: T,
    pub budget: usize,
}

impl<T: Real> ModelIntegral<T> {
    /// `F = ρ^γ`.
    pub fn power(dim: usize, gamma: usize, cutoff: Cutoff<T>) -> Self {
        let mut coeffs = vec![T::zero(); gamma + 1];
        coeffs[gamma] = T::one();
        ModelIntegral { dim, gamma, coeffs, anisotropy: T::zero(), cutoff, points_per_period: T::lit(20.0), budget: 10_000_000 }
    }

    fn radial(&self, rho: T, nu: T) -> (T, T) {
        let mut f = T::zero();
        let mut df = T::zero();
        let mut p = T::one();
        for (j, a) in self.coeffs.iter().enumerate() {
            if j > 0 {
                df += *a * T::from_usize_lossy(j) * p;
                p *= rho;
            }
            f += *a * p;
        }
        let g = self.gamma as i32;
        (f + nu * rho.powi(g + 1), df + nu * T::from_usize_lossy(self.gamma + 1) * rho.powi(g))
    }

    /// Checks (F1) `a_0 = a_1 = 0`, (F2) `Σ_{j≥2}|a_j(ω)| ≥ c > 0` and (F3) `|∂_ρF|` increasing on the support.
    pub fn check_conditions(&self, nu: T) -> Result<T> {
        let z = |k: usize| self.coeffs.get(k).copied().unwrap_or(T::zero());
        if z(0) != T::zero() || z(1) != T::zero() {
            return Err(Error::InvalidInput("phase must vanish to second order at the origin".into()));
        }
        let s: T = self.coeffs.iter().skip(2).take(self.gamma - 1).map(|a| a.abs()).sum();
        let c = s * (T::one() - self.anisotropy.abs());
        if !(c > T::zero()) {
            return Err(Error::InvalidInput("phase is flat beyond order gamma".into()));
        }
        let r = self.cutoff.support();
        let mut prev = T::zero();
        for i in 1..=200 {
            let rho = r * T::from_usize_lossy(i) / T::lit(200.0);
            let d = self.radial(rho, nu).1.abs();
            if d < prev {
                return Err(Error::InvalidInput(format!("|dF/drho| decreases near rho = {}", rho)));
            }
            prev = d;
        }
        Ok(c)
    }
}

/// Gauss–Legendre 16 panels on `[a, b]` with widths set by the local oscillation frequency.
fn oscillation_panels<T: Real>(a: T, b: T, w_max: T, ppp: T, freq: impl Fn(T) -> T) -> Vec<(T, T)> {
    let mut out = Vec::new();
    let mut x = a;
    let per_panel = T::lit(16.0) / ppp * T::lit(2.0) * T::PI();
    while x < b {
        let mut w = w_max.min(b - x);
        for _ in 0..4 {
            let f = freq(x).max(freq(x + w)).max(freq(x + w * T::lit(0.5)));
            let allowed = if f > T::zero() { per_panel / f } else { w_max };
            if allowed >= w {
                break;
            }
            w = allowed.min(b - x);
        }
        let hi = if b - (x + w) < w * T::lit(1e-9) { b } else { x + w };
        out.push((x, hi));
        x = hi;
    }
    out
}

fn gl16<T: Real>() -> (Vec<T>, Vec<T>) {
    gauss_legendre(16)
}

fn sum_panels<T: Real>(panels: &[(T, T)], nodes: &(Vec<T>, Vec<T>), mut f: impl FnMut(T) -> Complex<T>) -> Complex<T> {
    let mut acc = c0::<T>();
    for &(a, b) in panels {
        let h = (b - a) * T::lit(0.5);
        let m = (a + b) * T::lit(0.5);
        let mut s = c0::<T>();
        for (x, w) in nodes.0.iter().zip(&nodes.1) {
            s = s + f(m + h * *x) * *w;
        }
        acc = acc + s * h;
    }
    acc
}

fn breakpoints<T: Real>(cut: &Cutoff<T>, lo: T, hi: T) -> Vec<T> {
    let (mut b, _) = cut.breaks();
    b.retain(|x| *x > lo && *x < hi);
    b.push(lo);
    b.push(hi);
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.dedup();
    b
}

fn radial_panels<T: Real>(mi: &ModelIntegral<T>, lo: T, hi: T, scale: T, lambda: T, nu: T) -> Vec<(T, T)> {
    let (_, w_max) = mi.cutoff.breaks();
    let bp = breakpoints(&mi.cutoff, lo, hi);
    let mut panels = Vec::new();
    for w in bp.windows(2) {
        panels.extend(oscillation_panels(w[0], w[1], w_max, mi.points_per_period, |r| {
            lambda * scale * mi.radial(r, nu).1.abs()
        }));
    }
    panels
}

pub fn eval_model<T: Real>(mi: &ModelIntegral<T>, lambda: T, nu: T) -> Result<Complex<T>> {
    if lambda < T::zero() {
        return Err(Error::InvalidInput("lambda must be non-negative".into()));
    }
    let nodes = gl16::<T>();
    let r = mi.cutoff.support();
    let integrand = |rho: T, amp: T| -> Complex<T> {
        let (f, _) = mi.radial(rho, nu);
        Complex::from_polar(mi.cutoff.eval(rho), lambda * amp * f)
    };
    match mi.dim {
        1 => {
            let panels = radial_panels(mi, -r, r, T::one(), lambda, nu);
            let needed = panels.len() * 16;
            if needed > mi.budget {
                return Err(Error::ResolutionCap { needed, budget: mi.budget });
            }
            Ok(sum_panels(&panels, &nodes, |x| integrand(x, T::one())))
        }
        2 => {
            let beta = mi.anisotropy;
            let fmax = (0..=200)
                .map(|i| mi.radial(r * T::from_usize_lossy(i) / T::lit(200.0), T::zero()).0.abs())
                .fold(T::zero(), T::max);
            let two_pi = T::lit(2.0) * T::PI();
            let ang = if beta == T::zero() {
                vec![(T::zero(), two_pi)]
            } else {
                oscillation_panels(T::zero(), two_pi, T::lit(0.25), mi.points_per_period, |_| {
                    lambda * T::lit(2.0) * beta.abs() * fmax
                })
            };
            let radial_max = radial_panels(mi, T::zero(), r, T::one() + beta.abs(), lambda, nu).len();
            let needed = ang.len() * 16 * radial_max * 16;
            if needed > mi.budget {
                return Err(Error::ResolutionCap { needed, budget: mi.budget });
            }
            Ok(sum_panels(&ang, &nodes, |om| {
                let s = T::one() + beta * (om + om).cos();
                let panels = radial_panels(mi, T::zero(), r, s.abs(), lambda, nu);
                let radial = |rho: T| -> Complex<T> {
                    let (f, _) = mi.radial(rho, nu);
                    let g = f - nu * rho.powi(mi.gamma as i32 + 1);
                    Complex::from_polar(mi.cutoff.eval(rho) * rho, lambda * (s * g + nu * rho.powi(mi.gamma as i32 + 1)))
                };
                sum_panels(&panels, &nodes, radial)
            }))
        }
        d => Err(Error::InvalidInput(format!("model integrals support N = 1 or 2, got {d}"))),
    }
}

/// `√(π / (1 − iλ))`, the value of `∫ e^{iλρ²} e^{−ρ²} dρ`.
pub fn fresnel_closed_form<T: Real>(lambda: T) -> Complex<T> {
    (Complex::new(T::PI(), T::zero()) / Complex::new(T::one(), -lambda)).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeFit<T> {
    pub lambdas: Vec<T>,
    pub magnitudes: Vec<T>,
    pub fitted_slope: T,
    pub intercept: T,
    pub predicted_power: T,
    /// `sup x^{−p} |I(x)|` over the window, `p` the predicted power.
    pub sup_constant: T,
    pub window: (T, T),
}

/// Least-squares slope of `log |I|` against `log x` inside `window`.
pub fn fit_envelope<T: Real>(xs: &[T], values: &[T], predicted_power: T, window: (T, T)) -> Result<EnvelopeFit<T>> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut lambdas = Vec::new();
    let mut mags = Vec::new();
    let slack = T::lit(1e-9);
    for (x, y) in xs.iter().zip(values) {
        if *x >= window.0 * (T::one() - slack) && *x <= window.1 * (T::one() + slack) {
            if !(*y > T::zero()) {
                return Err(Error::NonPositiveMagnitude { at: x.f64() });
            }
            lx.push(x.ln());
            ly.push(y.ln());
            lambdas.push(*x);
            mags.push(*y);
        }
    }
    if lx.len() < 8 {
        return Err(Error::FitWindow { points: lx.len(), needed: 8 });
    }
    let n = T::from_usize_lossy(lx.len());
    let mx = lx.iter().copied().sum::<T>() / n;
    let my = ly.iter().copied().sum::<T>() / n;
    let sxy: T = lx.iter().zip(&ly).map(|(a, b)| (*a - mx) * (*b - my)).sum();
    let sxx: T = lx.iter().map(|a| (*a - mx) * (*a - mx)).sum();
    let slope = sxy / sxx;
    let sup_constant = lambdas.iter().zip(&mags).map(|(x, y)| *y * x.powf(-predicted_power)).fold(T::zero(), T::max);
    Ok(EnvelopeFit {
        lambdas,
        magnitudes: mags,
        fitted_slope: slope,
        intercept: my - slope * mx,
        predicted_power,
        sup_constant,
        window,
    })
}

/// `n` geometrically spaced points from `a` to `b`.
pub fn geometric_grid<T: Real>(a: T, b: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![a];
    }
    let r = (b / a).ln();
    (0..n)
        .map(|i| {
            if i == n - 1 {
                b
            } else {
                a * (r * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1)).exp()
            }
        })
        .collect()
}

/// The windowed kernel `∫ e^{ix·ξ} D_t^l û_k(t, ξ) w(|ξ|) dξ` of the solution operator,
/// where `û_k` is the response to data `f̂_k = 1` and `w` a smooth annulus window.
#[derive(Debug, Clone)]
pub struct KernelSpec<T> {
    pub op: OperatorSpec<T>,
    pub l: usize,
    pub k: usize,
    pub r_min: T,
    pub r_max: T,
    pub tol: T,
    pub points_per_period: T,
    pub budget: usize,
    /// Root bound `sup |∇φ|` used for panel counts.
    pub speed: T,
    pub isotropic: bool,
}

impl<T: Real> KernelSpec<T> {
    pub fn new(op: OperatorSpec<T>, r_min: T, r_max: T) -> Result<Self> {
        if op.n > 2 {
            return Err(Error::InvalidInput("kernel quadrature supports n ≤ 2".into()));
        }
        if !(r_min > T::zero() && r_max > r_min && r_max.is_finite()) {
            return Err(Error::InvalidInput("window must satisfy 0 < r_min < r_max < ∞".into()));
        }
        let times: Vec<T> = (0..=40).map(|i| T::from_usize_lossy(i) * T::lit(2.5) - T::lit(50.0)).collect();
        let mut speed = T::zero();
        for d in crate::symbol::sphere_samples::<T>(op.n, 32) {
            for &t in &times {
                for v in op.roots_unit(t, &d)? {
                    speed = speed.max(v.abs());
                }
            }
        }
        let isotropic = op.n == 1 || op.is_isotropic(&times);
        Ok(KernelSpec {
            op,
            l: 0,
            k: 0,
            r_min,
            r_max,
            tol: T::lit(1e-10),
            points_per_period: T::lit(20.0),
            budget: 10_000_000,
            speed,
            isotropic,
        })
    }

    /// Smooth annulus window: 1 on the middle of `[r_min, r_max]`, 0 outside.
    pub fn window(&self, r: T) -> T {
        let a = (self.r_max - self.r_min) * T::lit(0.2);
        smooth_step((self.r_min + a - r) / a) * smooth_step((r - self.r_max + a) / a)
    }
}

/// Per-branch amplitudes `e^{iθ_j} n^{lj} Q_{jk} |ξ|^{l−k}` and phase gradients at one frequency.
fn branch_data<T: Real>(spec: &KernelSpec<T>, t: T, xi: &[T], grad: bool) -> Result<(Vec<Complex<T>>, Vec<Vec<T>>)> {
    let m = spec.op.m;
    let rep = representation_at(&spec.op, xi, t, spec.tol)?;
    let amps = (0..m).map(|j| rep.branch_term(spec.l, j, spec.k)).collect();
    let mut grads = vec![vec![T::zero(); spec.op.n]; m];
    if grad {
        // ∇_ξ θ_j is homogeneous of degree 0; central differences in ξ
        let h = norm2(xi) * T::lit(1e-5);
        for i in 0..spec.op.n {
            let mut p = xi.to_vec();
            let mut q = xi.to_vec();
            p[i] += h;
            q[i] -= h;
            let tp = phases(&spec.op, t, &p, T::lit(1e-12))?;
            let tq = phases(&spec.op, t, &q, T::lit(1e-12))?;
            for j in 0..m {
                grads[j][i] = (tp[j] - tq[j]) / (h + h);
            }
        }
    }
    Ok((amps, grads))
}

/// `I(t, x)`, optionally split by a cutoff `κ` of radius `split` around the stationary set.
fn kernel_parts<T: Real>(spec: &KernelSpec<T>, t: T, x: &[T], split: Option<T>) -> Result<(Complex<T>, Complex<T>)> {
    let n = spec.op.n;
    let m = spec.op.m;
    if x.len() != n {
        return Err(Error::InvalidInput("point has the wrong dimension".into()));
    }
    let nodes = gl16::<T>();
    let xn = norm2(x);
    let rfreq = xn + t.abs() * spec.speed;
    let w_max = (spec.r_max - spec.r_min) * T::lit(0.05);
    let rpanels = oscillation_panels(spec.r_min, spec.r_max, w_max, spec.points_per_period, |_| rfreq);
    let kappa = |j_grad: &[T]| -> T {
        match split {
            None => T::one(),
            Some(r) => {
                let v: Vec<T> = x.iter().zip(j_grad).map(|(a, b)| (*a + *b) / t).collect();
                plateau(norm2(&v), r * T::lit(0.5), r)
            }
        }
    };
    let want_grad = split.is_some();
    let radial_nodes: Vec<(T, T)> = rpanels
        .iter()
        .flat_map(|&(a, b)| {
            let h = (b - a) * T::lit(0.5);
            let c = (a + b) * T::lit(0.5);
            nodes.0.iter().zip(&nodes.1).map(move |(x, w)| (c + h * *x, *w * h)).collect::<Vec<_>>()
        })
        .collect();
    let two_pi = T::lit(2.0) * T::PI();
    let ang_nodes_at = |r: T| -> Vec<(T, T)> {
        let afreq = xn * r + if spec.isotropic { T::zero() } else { t.abs() * spec.speed * r };
        oscillation_panels(T::zero(), two_pi, T::lit(0.4), spec.points_per_period, |_| afreq)
            .iter()
            .flat_map(|&(a, b)| {
                let h = (b - a) * T::lit(0.5);
                let c = (a + b) * T::lit(0.5);
                nodes.0.iter().zip(&nodes.1).map(move |(x, w)| (c + h * *x, *w * h)).collect::<Vec<_>>()
            })
            .collect()
    };
    let needed: usize = if n == 2 {
        radial_nodes.iter().map(|&(r, _)| ang_nodes_at(r).len()).sum()
    } else {
        2 * radial_nodes.len()
    };
    if needed > spec.budget {
        return Err(Error::ResolutionCap { needed, budget: spec.budget });
    }
    let point = |xi: &[T], w: T, amps: &[Complex<T>], grads: &[Vec<T>]| -> (Complex<T>, Complex<T>) {
        let phase: T = xi.iter().zip(x).map(|(a, b)| *a * *b).sum();
        let e = Complex::from_polar(w, phase);
        let mut tot = c0::<T>();
        let mut one = c0::<T>();
        for j in 0..m {
            let v = e * amps[j];
            tot = tot + v;
            one = one + v * kappa(&grads[j]);
        }
        (tot, one)
    };
    let per_radius = |&(r, wr): &(T, T)| -> Result<(Complex<T>, Complex<T>)> {
        let wr = wr * spec.window(r);
        if wr == T::zero() {
            return Ok((c0(), c0()));
        }
        let mut acc = (c0::<T>(), c0::<T>());
        if n == 1 {
            for s in [T::one(), -T::one()] {
                let xi = [s * r];
                let (a, g) = branch_data(spec, t, &xi, want_grad)?;
                let (p, q) = point(&xi, wr, &a, &g);
                acc = (acc.0 + p, acc.1 + q);
            }
            return Ok(acc);
        }
        let iso = if spec.isotropic { Some(branch_data(spec, t, &[r, T::zero()], want_grad)?) } else { None };
        for (om, wa) in ang_nodes_at(r) {
            let (c, s) = (om.cos(), om.sin());
            let xi = [r * c, r * s];
            let (a, g) = match &iso {
                Some((a, g)) => {
                    // rotate the gradients of the reference ray
                    let g = g.iter().map(|v| vec![v[0] * c - v[1] * s, v[0] * s + v[1] * c]).collect();
                    (a.clone(), g)
                }
                None => branch_data(spec, t, &xi, want_grad)?,
            };
            let (p, q) = point(&xi, wr * wa * r, &a, &g);
            acc = (acc.0 + p, acc.1 + q);
        }
        Ok(acc)
    };
    let parts = radial_nodes.par_iter().map(per_radius).collect::<Result<Vec<_>>>()?;
    let (mut tot, mut one) = (c0::<T>(), c0::<T>());
    for (p, q) in parts {
        tot = tot + p;
        one = one + q;
    }
    Ok((tot, one))
}

pub fn dispersive_kernel<T: Real>(spec: &KernelSpec<T>, t: T, x: &[T]) -> Result<Complex<T>> {
    if t == T::zero() {
        return Err(Error::InvalidInput("kernel requires t ≠ 0".into()));
    }
    Ok(kernel_parts(spec, t, x, None)?.0)
}

/// `(I₁, I₂)`: stationary-region and non-stationary parts of the kernel.
pub fn split_kernel<T: Real>(spec: &KernelSpec<T>, t: T, x: &[T], r: T) -> Result<(Complex<T>, Complex<T>)> {
    if t == T::zero() || !(r > T::zero()) {
        return Err(Error::InvalidInput("split requires t ≠ 0 and r > 0".into()));
    }
    let (tot, one) = kernel_parts(spec, t, x, Some(r))?;
    Ok((one, tot - one))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoffs() {
        assert_eq!(smooth_step(0.0f64), 1.0);
        assert_eq!(smooth_step(1.0f64), 0.0);
        assert!((smooth_step(0.5f64) - 0.5).abs() < 1e-15);
        assert_eq!(plateau(0.3f64, 0.5, 1.0), 1.0);
        assert_eq!(plateau(-1.2f64, 0.5, 1.0), 0.0);
    }

    #[test]
    fn fresnel() {
        let mi = ModelIntegral::power(1, 2, Cutoff::Gaussian { radius: 6.0f64 });
        for lam in [0.0, 1.0, 10.0, 100.0] {
            let v = eval_model(&mi, lam, 0.0).unwrap();
            let want = fresnel_closed_form(lam);
            assert!((v.norm() - want.norm()).abs() < 1e-8, "{lam}: {v} {want}");
            assert!((v - want).norm() < 1e-8);
        }
        assert!((eval_model(&mi, 0.0, 0.0).unwrap().re - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        let mut big = mi.clone();
        big.budget = 1000;
        assert!(matches!(eval_model(&big, 1e4, 0.0), Err(Error::ResolutionCap { .. })));
    }

    #[test]
    fn polar_model() {
        let mi = ModelIntegral::power(2, 2, Cutoff::Gaussian { radius: 6.0f64 });
        // ∫ e^{iλ|x|²} e^{−|x|²} dx = π / (1 − iλ)
        let v = eval_model(&mi, 3.0, 0.0).unwrap();
        let want = Complex::new(std::f64::consts::PI, 0.0) / Complex::new(1.0, -3.0);
        assert!((v - want).norm() < 1e-10, "{v} {want}");
    }

    #[test]
    fn envelope() {
        let xs = geometric_grid(10.0f64, 1000.0, 12);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-0.5)).collect();
        let f = fit_envelope(&xs, &ys, -0.5, (10.0, 1000.0)).unwrap();
        assert!((f.fitted_slope + 0.5).abs() < 1e-12 && (f.sup_constant - 3.0).abs() < 1e-12);
        let c = vec![2.0; 12];
        assert!(fit_envelope(&xs, &c, 0.0, (10.0, 1000.0)).unwrap().fitted_slope.abs() < 1e-14);
        assert!(matches!(fit_envelope(&xs[..1], &ys[..1], -0.5, (10.0, 1000.0)), Err(Error::FitWindow { .. })));
        let mut z = ys.clone();
        z[3] = 0.0;
        assert!(matches!(fit_envelope(&xs, &z, -0.5, (10.0, 1000.0)), Err(Error::NonPositiveMagnitude { .. })));
    }
}
