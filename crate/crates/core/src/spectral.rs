//! First-order reduction, the diagonalizer `N`, phases and the coupling matrix.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::ode::{integrate, OdeOptions};
use crate::quad::{adaptive_simpson_vec, gk_adaptive};
use crate::scalar::{cis, cnorm2, norm2, Real};
use crate::symbol::{OperatorSpec, RootField};

pub(crate) fn unit<T: Real>(xi: &[T]) -> Result<(Vec<T>, T)> {
    let r = norm2(xi);
    if r == T::zero() || !r.is_finite() {
        return Err(Error::InvalidInput("frequency must be nonzero".into()));
    }
    Ok((xi.iter().map(|x| *x / r).collect(), r))
}

/// `D_t v = H(t, ξ)|ξ| v` with `v_j = |ξ|^{m-1-j} D_t^j v`.
#[derive(Debug, Clone, Copy)]
pub struct CompanionSystem<'a, T> {
    pub op: &'a OperatorSpec<T>,
}

pub fn build_companion<T: Real>(op: &OperatorSpec<T>) -> CompanionSystem<'_, T> {
    CompanionSystem { op }
}

impl<'a, T: Real> CompanionSystem<'a, T> {
    /// Companion matrix with ones on the superdiagonal and last row `-H_m, …, -H_1`.
    pub fn h(&self, t: T, xi: &[T]) -> Result<Mat<T>> {
        let (xhat, _) = unit(xi)?;
        Ok(self.h_unit(t, &xhat))
    }

    pub fn h_unit(&self, t: T, xhat: &[T]) -> Mat<T> {
        let m = self.op.m;
        let hs = self.op.h(t, xhat);
        let mut a = Mat::zeros(m, m);
        for i in 0..m - 1 {
            a[(i, i + 1)] = T::one();
        }
        for j in 0..m {
            a[(m - 1, j)] = -hs[m - 1 - j];
        }
        a
    }

    /// Diagonal matrix of the roots at `ξ/|ξ|`.
    pub fn d(&self, t: T, xi: &[T]) -> Result<Mat<T>> {
        let (xhat, _) = unit(xi)?;
        let r = self.op.roots_unit(t, &xhat)?;
        let mut d = Mat::zeros(r.len(), r.len());
        for (k, v) in r.into_iter().enumerate() {
            d[(k, k)] = v;
        }
        Ok(d)
    }
}

/// `N`, `N⁻¹` and `∂_t N` at one point `(t, ξ̂)`.
#[derive(Debug, Clone)]
pub struct DiagonalizerPoint<T> {
    pub roots: Vec<T>,
    pub droots: Vec<T>,
    pub n: Mat<T>,
    pub n_inv: Mat<T>,
    pub dn: Mat<T>,
}

impl<T: Real> DiagonalizerPoint<T> {
    /// `(∂_t N) N⁻¹`.
    pub fn dn_n_inv(&self) -> Mat<T> {
        self.dn.matmul(&self.n_inv)
    }

    pub fn det(&self) -> T {
        // |det N| equals the Vandermonde product of the roots
        let m = self.roots.len();
        let mut d = T::one();
        for k in 0..m {
            for l in k + 1..m {
                d *= self.roots[k] - self.roots[l];
            }
        }
        d
    }
}

/// Left eigenvectors of the companion matrix, rows normalized so the last entry is 1.
#[derive(Debug, Clone, Copy)]
pub struct Diagonalizer<'a, T> {
    pub op: &'a OperatorSpec<T>,
    /// `separation^{m(m-1)/2}`, a lower bound for `|det N|` on the certified samples.
    pub det_lower_bound: T,
}

pub fn build_diagonalizer<'a, T: Real>(cs: CompanionSystem<'a, T>, roots: &RootField<T>) -> Diagonalizer<'a, T> {
    let m = cs.op.m;
    // a few ulps of slack for the rounding in the root solver
    let slack = T::one() - T::lit(64.0) * T::epsilon() * T::from_usize_lossy(m * m);
    Diagonalizer { op: cs.op, det_lower_bound: roots.separation.powi((m * (m - 1) / 2) as i32) * slack }
}

impl<'a, T: Real> Diagonalizer<'a, T> {
    pub fn unchecked(op: &'a OperatorSpec<T>) -> Self {
        Diagonalizer { op, det_lower_bound: T::zero() }
    }

    pub fn at(&self, t: T, xi: &[T]) -> Result<DiagonalizerPoint<T>> {
        let (xhat, _) = unit(xi)?;
        self.at_unit(t, &xhat)
    }

    pub fn at_unit(&self, t: T, xhat: &[T]) -> Result<DiagonalizerPoint<T>> {
        let roots = self.op.roots_unit(t, xhat)?;
        Ok(self.from_roots(t, xhat, roots))
    }

    pub fn from_roots(&self, t: T, xhat: &[T], roots: Vec<T>) -> DiagonalizerPoint<T> {
        let op = self.op;
        let m = op.m;
        let droots = if op.is_constant() { vec![T::zero(); m] } else { op.root_derivatives_unit(t, xhat, &roots) };
        let mut hs = vec![T::one()];
        hs.extend(op.h(t, xhat));
        let mut dhs = vec![T::zero()];
        if op.is_constant() {
            dhs.extend(std::iter::repeat(T::zero()).take(m));
        } else {
            dhs.extend(op.dh(t, xhat));
        }
        let mut n = Mat::zeros(m, m);
        let mut dn = Mat::zeros(m, m);
        for k in 0..m {
            let lam = roots[k];
            let dlam = droots[k];
            // powers of λ up to m-1
            let mut pw = vec![T::one(); m];
            for e in 1..m {
                pw[e] = pw[e - 1] * lam;
            }
            for j in 0..m {
                let mut w = T::zero();
                let mut dw = T::zero();
                for i in 0..m - j {
                    let e = m - 1 - j - i;
                    w += hs[i] * pw[e];
                    dw += dhs[i] * pw[e];
                    if e > 0 {
                        dw += hs[i] * T::from_usize_lossy(e) * pw[e - 1] * dlam;
                    }
                }
                n[(k, j)] = w;
                dn[(k, j)] = dw;
            }
        }
        let mut n_inv = Mat::zeros(m, m);
        for k in 0..m {
            let lam = roots[k];
            let mut dp = T::one();
            for (r, mu) in roots.iter().enumerate() {
                if r != k {
                    dp *= lam - *mu;
                }
            }
            let mut p = T::one();
            for i in 0..m {
                n_inv[(i, k)] = p / dp;
                p *= lam;
            }
        }
        DiagonalizerPoint { roots, droots, n, n_inv, dn }
    }

    pub fn n(&self, t: T, xi: &[T]) -> Result<Mat<T>> {
        Ok(self.at(t, xi)?.n)
    }

    pub fn n_inv(&self, t: T, xi: &[T]) -> Result<Mat<T>> {
        Ok(self.at(t, xi)?.n_inv)
    }
}

/// Cached `Θ_j(t) = ∫_0^t φ_j(s; ξ̂) ds` along one ray; `θ_j(t; ξ) = |ξ| Θ_j(t)`.
#[derive(Debug, Clone)]
pub struct PhaseAccumulator<'a, T> {
    pub op: &'a OperatorSpec<T>,
    pub xhat: Vec<T>,
    pub quadrature_tol: T,
    constant_roots: Option<Vec<T>>,
    forward: PhaseTable<T>,
    backward: PhaseTable<T>,
}

#[derive(Debug, Clone, Default)]
struct PhaseTable<T> {
    t: Vec<T>,
    theta: Vec<Vec<T>>,
    phi: Vec<Vec<T>>,
    dphi: Vec<Vec<T>>,
}

impl<'a, T: Real> PhaseAccumulator<'a, T> {
    /// Build the cache on `[t_min, t_max]` (which must contain 0).
    pub fn new(op: &'a OperatorSpec<T>, xi: &[T], t_min: T, t_max: T, tol: T) -> Result<Self> {
        let (xhat, _) = unit(xi)?;
        let m = op.m;
        if op.is_constant() {
            let r = op.roots_unit(T::zero(), &xhat)?;
            return Ok(PhaseAccumulator {
                op,
                xhat,
                quadrature_tol: tol,
                constant_roots: Some(r),
                forward: PhaseTable::default(),
                backward: PhaseTable::default(),
            });
        }
        let _ = m;
        let forward = build_table(op, &xhat, t_max.max(T::zero()), tol)?;
        let backward = build_table(op, &xhat, t_min.min(T::zero()), tol)?;
        Ok(PhaseAccumulator { op, xhat, quadrature_tol: tol, constant_roots: None, forward, backward })
    }

    /// `Θ_j(t)` for the unit direction.
    pub fn theta_unit(&self, t: T) -> Result<Vec<T>> {
        if let Some(r) = &self.constant_roots {
            return Ok(r.iter().map(|p| *p * t).collect());
        }
        let table = if t >= T::zero() { &self.forward } else { &self.backward };
        let n = table.t.len();
        let last = table.t[n - 1];
        if (t - last) * sgn(last) > T::zero() || n == 1 {
            // beyond the cache: integrate from the last node
            let extra = simpson_roots(self.op, &self.xhat, last, t, self.quadrature_tol)?;
            return Ok(table.theta[n - 1].iter().zip(extra).map(|(a, b)| *a + b).collect());
        }
        let key = |x: T| x.abs();
        let i = table.t.partition_point(|&s| key(s) <= key(t)).saturating_sub(1).min(n - 2);
        Ok(quintic(table, i, t))
    }

    /// `θ_j(t; ξ) = |ξ| Θ_j(t)`.
    pub fn theta(&self, t: T, r: T) -> Result<Vec<T>> {
        Ok(self.theta_unit(t)?.into_iter().map(|x| x * r).collect())
    }
}

fn sgn<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

fn quintic<T: Real>(tb: &PhaseTable<T>, i: usize, t: T) -> Vec<T> {
    let (t0, t1) = (tb.t[i], tb.t[i + 1]);
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let l = T::lit;
    let p0 = T::one() - l(10.0) * s3 + l(15.0) * s4 - l(6.0) * s5;
    let p1 = s - l(6.0) * s3 + l(8.0) * s4 - l(3.0) * s5;
    let p2 = l(0.5) * (s2 - l(3.0) * s3 + l(3.0) * s4 - s5);
    let p3 = l(0.5) * (s3 - l(2.0) * s4 + s5);
    let p4 = -l(4.0) * s3 + l(7.0) * s4 - l(3.0) * s5;
    let p5 = l(10.0) * s3 - l(15.0) * s4 + l(6.0) * s5;
    (0..tb.theta[i].len())
        .map(|j| {
            p0 * tb.theta[i][j]
                + p1 * h * tb.phi[i][j]
                + p2 * h * h * tb.dphi[i][j]
                + p3 * h * h * tb.dphi[i + 1][j]
                + p4 * h * tb.phi[i + 1][j]
                + p5 * tb.theta[i + 1][j]
        })
        .collect()
}

fn simpson_roots<T: Real>(op: &OperatorSpec<T>, xhat: &[T], a: T, b: T, tol: T) -> Result<Vec<T>> {
    if a == b {
        return Ok(vec![T::zero(); op.m]);
    }
    let mut fail = None;
    let (lo, hi, s) = if a < b { (a, b, T::one()) } else { (b, a, -T::one()) };
    let r = adaptive_simpson_vec(
        |x| match op.roots_unit(x, xhat) {
            Ok(v) => v,
            Err(e) => {
                fail.get_or_insert(e);
                vec![T::zero(); op.m]
            }
        },
        lo,
        hi,
        tol,
        40,
    );
    if let Some(e) = fail {
        return Err(e);
    }
    if !r.converged {
        return Err(Error::Quadrature { a: lo.f64(), b: hi.f64() });
    }
    Ok(r.value.into_iter().map(|v| v * s).collect())
}

fn build_table<T: Real>(op: &OperatorSpec<T>, xhat: &[T], t_end: T, tol: T) -> Result<PhaseTable<T>> {
    let point = |t: T| -> Result<(Vec<T>, Vec<T>)> {
        let r = op.roots_unit(t, xhat)?;
        let d = op.root_derivatives_unit(t, xhat, &r);
        Ok((r, d))
    };
    let (p0, d0) = point(T::zero())?;
    let mut tb = PhaseTable { t: vec![T::zero()], theta: vec![vec![T::zero(); op.m]], phi: vec![p0], dphi: vec![d0] };
    let dir = sgn(t_end);
    let mut h = T::lit(0.125);
    let h_max = T::lit(4.0);
    let cell_tol = tol * T::lit(0.01);
    let mut t = T::zero();
    while (t_end - t) * dir > T::zero() {
        let step = h.min((t_end - t).abs());
        let t1 = t + dir * step;
        let (p1, d1) = point(t1)?;
        let last = tb.t.len() - 1;
        let inc = simpson_roots(op, xhat, t, t1, cell_tol)?;
        let th1: Vec<T> = tb.theta[last].iter().zip(&inc).map(|(a, b)| *a + *b).collect();
        // interpolation check at the midpoint
        let mid = t + dir * step * T::lit(0.5);
        let half = simpson_roots(op, xhat, t, mid, cell_tol)?;
        let mut trial = tb.clone_tail(last);
        trial.t.push(t1);
        trial.theta.push(th1.clone());
        trial.phi.push(p1.clone());
        trial.dphi.push(d1.clone());
        let pred = quintic(&trial, 0, mid);
        let err = pred
            .iter()
            .zip(&half)
            .zip(&tb.theta[last])
            .fold(T::zero(), |e, ((p, hv), th0)| e.max((*p - (*th0 + *hv)).abs()));
        if err > tol && step > T::lit(1e-6) {
            h = step * T::lit(0.5);
            continue;
        }
        tb.t.push(t1);
        tb.theta.push(th1);
        tb.phi.push(p1);
        tb.dphi.push(d1);
        t = t1;
        if err < tol * T::lit(0.02) {
            h = (step * T::lit(2.0)).min(h_max);
        }
    }
    Ok(tb)
}

impl<T: Real> PhaseTable<T> {
    fn clone_tail(&self, i: usize) -> PhaseTable<T> {
        PhaseTable {
            t: vec![self.t[i]],
            theta: vec![self.theta[i].clone()],
            phi: vec![self.phi[i].clone()],
            dphi: vec![self.dphi[i].clone()],
        }
    }
}

/// Phases `θ_j(t; ξ)` by direct adaptive quadrature (no cache).
pub fn phases<T: Real>(op: &OperatorSpec<T>, t: T, xi: &[T], tol: T) -> Result<Vec<T>> {
    let (xhat, r) = unit(xi)?;
    if op.is_constant() {
        let roots = op.roots_unit(T::zero(), &xhat)?;
        return Ok(roots.into_iter().map(|p| p * t * r).collect());
    }
    Ok(simpson_roots(op, &xhat, T::zero(), t, tol)?.into_iter().map(|x| x * r).collect())
}

/// Coupling matrix `C = Φ⁻¹ (D_t N) N⁻¹ Φ` along one ray.
#[derive(Debug, Clone)]
pub struct CouplingField<'a, T> {
    pub diag: Diagonalizer<'a, T>,
    pub phases: PhaseAccumulator<'a, T>,
    pub r: T,
}

impl<'a, T: Real> CouplingField<'a, T> {
    pub fn new(op: &'a OperatorSpec<T>, xi: &[T], t_min: T, t_max: T, tol: T) -> Result<Self> {
        let (_, r) = unit(xi)?;
        Ok(CouplingField {
            diag: Diagonalizer::unchecked(op),
            phases: PhaseAccumulator::new(op, xi, t_min, t_max, tol)?,
            r,
        })
    }

    /// Same ray at another radius; the phase cache is reused.
    pub fn with_radius(&self, r: T) -> Self {
        CouplingField { diag: self.diag, phases: self.phases.clone(), r }
    }

    pub fn xhat(&self) -> &[T] {
        &self.phases.xhat
    }

    /// Real matrix `(∂_t N) N⁻¹` (phase-free part of `C` up to the factor `-i`).
    pub fn kernel(&self, t: T) -> Result<Mat<T>> {
        Ok(self.diag.at_unit(t, &self.phases.xhat)?.dn_n_inv())
    }

    pub fn eval(&self, t: T) -> Result<Mat<Complex<T>>> {
        let m = self.diag.op.m;
        if self.diag.op.is_constant() {
            return Ok(Mat::zeros(m, m));
        }
        let k = self.kernel(t)?;
        let th = self.phases.theta(t, self.r)?;
        let mut c = Mat::zeros(m, m);
        for j in 0..m {
            for l in 0..m {
                // -i e^{-i(θ_j - θ_l)} k_{jl}
                let z = cis(-(th[j] - th[l])) * k[(j, l)];
                c[(j, l)] = Complex::new(z.im, -z.re);
            }
        }
        Ok(c)
    }
}

/// `C(t; ξ)` at one point, computing phases by direct quadrature.
pub fn coupling<T: Real>(op: &OperatorSpec<T>, t: T, xi: &[T], tol: T) -> Result<Mat<Complex<T>>> {
    let lo = t.min(T::zero());
    let hi = t.max(T::zero());
    CouplingField::new(op, xi, lo, hi, tol)?.eval(t)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport<T> {
    pub xi: Vec<T>,
    pub samples: usize,
    /// `∫_0^{t_max} ‖∂_t N‖` (Frobenius).
    pub exponent: T,
    /// A priori constant `C` in `|v(t)|² ≤ C |v(0)|² exp(2∫_0^t ‖∂_t N‖)`.
    pub constant: T,
    /// Smallest ratio bound / observed over data and output times (≥ 1 means the bound held).
    pub min_margin: T,
    /// Largest relative drift of `|N v|` (zero in exact arithmetic for constant coefficients).
    pub conserved_drift: T,
    pub holds: bool,
}

/// Integrate the companion system for random data and check the Gronwall bound.
pub fn energy_check<T: Real>(
    cs: CompanionSystem<'_, T>,
    diag: &Diagonalizer<'_, T>,
    xi: &[T],
    t_max: T,
    samples: usize,
    seed: u64,
    tol: T,
) -> Result<EnergyReport<T>> {
    let (xhat, r) = unit(xi)?;
    let m = cs.op.m;
    let outputs = 50;
    let times: Vec<T> =
        (1..=outputs).map(|k| t_max * T::from_usize_lossy(k) / T::from_usize_lossy(outputs)).collect();
    // cumulative exponent and the a priori constant
    let dn_norm = |s: T| -> T {
        diag.at_unit(s, &xhat).map(|p| p.dn.norm_fro::<T>()).unwrap_or(T::nan())
    };
    let mut expo = vec![T::zero(); outputs + 1];
    let mut prev = T::zero();
    for (k, &t) in times.iter().enumerate() {
        let q = gk_adaptive(dn_norm, prev, t, T::lit(1e-12), T::lit(1e-10), 500);
        expo[k + 1] = expo[k] + q.value;
        prev = t;
    }
    let n0 = diag.at_unit(T::zero(), &xhat)?;
    let n0_norm: T = n0.n.norm_fro();
    let mut k_sup = n0.n_inv.norm_fro::<T>();
    for &t in &times {
        k_sup = k_sup.max(diag.at_unit(t, &xhat)?.n_inv.norm_fro());
        let mid = t - t_max / T::from_usize_lossy(2 * outputs);
        k_sup = k_sup.max(diag.at_unit(mid, &xhat)?.n_inv.norm_fro());
    }
    let total = expo[outputs];
    let constant = (k_sup * n0_norm).powi(2) * (T::lit(2.0) * (k_sup - T::one()).max(T::zero()) * total).exp();
    if !constant.is_finite() || !total.is_finite() {
        return Err(Error::BoundViolation("energy exponent is not finite".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_margin = T::infinity();
    let mut drift = T::zero();
    let opts = OdeOptions::with_tol(tol);
    for _ in 0..samples {
        let v0: Vec<Complex<T>> = (0..m)
            .map(|_| Complex::new(T::lit(rng.gen_range(-1.0..1.0)), T::lit(rng.gen_range(-1.0..1.0))))
            .collect();
        let rhs = |t: T, v: &[Complex<T>], dv: &mut [Complex<T>]| {
            let hs = cs.op.h(t, &xhat);
            // ∂_t v = i|ξ| H v
            for i in 0..m - 1 {
                dv[i] = Complex::new(-v[i + 1].im, v[i + 1].re) * r;
            }
            let mut last = Complex::new(T::zero(), T::zero());
            for j in 0..m {
                last = last - v[j] * hs[m - 1 - j];
            }
            dv[m - 1] = Complex::new(-last.im, last.re) * r;
        };
        let sol = integrate(rhs, T::zero(), &v0, t_max, &times, &opts, false)?;
        let v0n = cnorm2(&v0);
        let w0 = cnorm2(&n0.n.to_complex().matvec(&v0));
        for (k, (v, &t)) in sol.at_stops.iter().zip(&times).enumerate() {
            let vn = cnorm2(v);
            let bound = constant * v0n * v0n * (T::lit(2.0) * expo[k + 1]).exp();
            min_margin = min_margin.min(bound / (vn * vn));
            if cs.op.is_constant() {
                let nt = diag.at_unit(t, &xhat)?;
                let wn = cnorm2(&nt.n.to_complex().matvec(v));
                drift = drift.max((wn - w0).abs() / w0);
            }
        }
    }
    Ok(EnergyReport {
        xi: xi.to_vec(),
        samples,
        exponent: total,
        constant,
        min_margin,
        conserved_drift: drift,
        holds: min_margin >= T::one(),
    })
}
