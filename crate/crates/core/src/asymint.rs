//! Levinson-type asymptotic integration of the diagonalized system.
//!
//! With `v = N⁻¹ Φ z` the companion system becomes `D_t z = C z`. The matrix
//! solution `Q` with `Q(0) = N(0)` has limits `α_± = Q(±∞)` and the error
//! `ε = Q − α_±` decays like the tail integral of `Ψ`.

use std::sync::OnceLock;

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::{moment_check, PsiFunction};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::ode::{integrate, DenseOutput, OdeOptions};
use crate::quad::gk_adaptive_vec;
use crate::scalar::{c0, norm2, Real};
use crate::spectral::{unit, CouplingField, Diagonalizer, PhaseAccumulator};
use crate::symbol::OperatorSpec;

fn mat_from_row<T: Real>(m: usize, y: &[Complex<T>]) -> Mat<Complex<T>> {
    Mat { rows: m, cols: m, data: y.to_vec() }
}

/// `i C Q` written into `out` (row-major `m×m`).
fn i_c_times<T: Real>(c: &Mat<Complex<T>>, q: &[Complex<T>], out: &mut [Complex<T>]) {
    let m = c.rows;
    for i in 0..m {
        for j in 0..m {
            let mut acc = c0::<T>();
            for k in 0..m {
                acc = acc + c[(i, k)] * q[k * m + j];
            }
            out[i * m + j] = Complex::new(-acc.im, acc.re);
        }
    }
}

/// Dense solution `Q(t)` of `D_t z = C z` on `[-t_max, t_max]`.
#[derive(Debug, Clone)]
pub struct ZTrajectory<T> {
    pub xi: Vec<T>,
    pub m: usize,
    pub t_max: T,
    pub n0: Mat<Complex<T>>,
    pub forward: DenseOutput<T>,
    pub backward: DenseOutput<T>,
    pub steps: usize,
}

impl<T: Real> ZTrajectory<T> {
    pub fn q(&self, t: T) -> Mat<Complex<T>> {
        let d = if t >= T::zero() { &self.forward } else { &self.backward };
        mat_from_row(self.m, &d.eval(t))
    }

    fn ends(&self) -> (Mat<Complex<T>>, Mat<Complex<T>>) {
        (mat_from_row(self.m, self.forward.y.last().unwrap()), mat_from_row(self.m, self.backward.y.last().unwrap()))
    }
}

/// Propagate `Q` from `t0` to `t1` with the embedded Runge–Kutta pair.
pub fn propagate_z<T: Real>(
    field: &CouplingField<'_, T>,
    t0: T,
    q0: &Mat<Complex<T>>,
    t1: T,
    tol: T,
    record: bool,
) -> Result<(Mat<Complex<T>>, Option<DenseOutput<T>>, usize)> {
    let m = q0.rows;
    if field.diag.op.is_constant() {
        let dense = record.then(|| DenseOutput {
            t: vec![t0, t1],
            y: vec![q0.data.clone(), q0.data.clone()],
            f: vec![vec![c0(); m * m]; 2],
        });
        return Ok((q0.clone(), dense, 0));
    }
    let mut fail: Option<Error> = None;
    let rhs = |t: T, y: &[Complex<T>], dy: &mut [Complex<T>]| match field.eval(t) {
        Ok(c) => i_c_times(&c, y, dy),
        Err(e) => {
            fail.get_or_insert(e);
            dy.iter_mut().for_each(|z| *z = c0());
        }
    };
    let sol = integrate(rhs, t0, &q0.data, t1, &[], &OdeOptions::with_tol(tol), record)?;
    if let Some(e) = fail {
        return Err(e);
    }
    Ok((mat_from_row(m, &sol.y), sol.dense, sol.steps))
}

/// `Q` at each of `stops` (ordered away from `t0`), starting from `Q(t0) = q0`.
pub fn propagate_z_stops<T: Real>(
    field: &CouplingField<'_, T>,
    t0: T,
    q0: &Mat<Complex<T>>,
    stops: &[T],
    tol: T,
) -> Result<Vec<Mat<Complex<T>>>> {
    let m = q0.rows;
    let Some(&t1) = stops.last() else { return Ok(Vec::new()) };
    if field.diag.op.is_constant() {
        return Ok(vec![q0.clone(); stops.len()]);
    }
    let mut fail: Option<Error> = None;
    let rhs = |t: T, y: &[Complex<T>], dy: &mut [Complex<T>]| match field.eval(t) {
        Ok(c) => i_c_times(&c, y, dy),
        Err(e) => {
            fail.get_or_insert(e);
            dy.iter_mut().for_each(|z| *z = c0());
        }
    };
    let sol = integrate(rhs, t0, &q0.data, t1, stops, &OdeOptions::with_tol(tol), false)?;
    if let Some(e) = fail {
        return Err(e);
    }
    Ok(sol.at_stops.iter().map(|y| mat_from_row(m, y)).collect())
}

/// Solve the `z`-system from `Q(0) = N(0; ξ)` out to `±t_max`.
pub fn integrate_z<T: Real>(field: &CouplingField<'_, T>, t_max: T, tol: T) -> Result<ZTrajectory<T>> {
    if !(t_max > T::zero()) {
        return Err(Error::InvalidInput("t_max must be positive".into()));
    }
    let xhat = field.xhat().to_vec();
    let m = field.diag.op.m;
    let n0 = field.diag.at_unit(T::zero(), &xhat)?.n.to_complex();
    let (_, fwd, s1) = propagate_z(field, T::zero(), &n0, t_max, tol, true)?;
    let (_, bwd, s2) = propagate_z(field, T::zero(), &n0, -t_max, tol, true)?;
    let xi = xhat.iter().map(|x| *x * field.r).collect();
    Ok(ZTrajectory { xi, m, t_max, n0, forward: fwd.unwrap(), backward: bwd.unwrap(), steps: s1 + s2 })
}

/// `α_±`, the error function `ε` and the truncation certificate.
#[derive(Debug, Clone)]
pub struct AsymptoticProfile<'a, T> {
    pub alpha_plus: Mat<Complex<T>>,
    pub alpha_minus: Mat<Complex<T>>,
    pub xi: Vec<T>,
    pub trunc_time: T,
    pub trunc_error_bound: T,
    /// Sampled `sup ‖C(t)‖ / Ψ(t)`.
    pub coupling_constant: T,
    pub q_sup: T,
    pub trajectory: ZTrajectory<T>,
    pub field: &'a CouplingField<'a, T>,
}

impl<'a, T: Real> AsymptoticProfile<'a, T> {
    /// `Q(t) = α_± + ε(t)` on the branch selected by the sign of `t`.
    pub fn q(&self, t: T) -> Mat<Complex<T>> {
        self.trajectory.q(t)
    }

    pub fn alpha(&self, t: T) -> &Mat<Complex<T>> {
        if t >= T::zero() {
            &self.alpha_plus
        } else {
            &self.alpha_minus
        }
    }

    /// `ε(t) = Q(t) − α_±` from the dense trajectory.
    pub fn eps(&self, t: T) -> Mat<Complex<T>> {
        if self.field.diag.op.is_constant() {
            let m = self.trajectory.m;
            return Mat::zeros(m, m);
        }
        self.q(t).sub(self.alpha(t))
    }

    /// `ε(t) = −i∫_t^{±t_max} C Q ds` by quadrature, accurate relative to `|ε|`
    /// even where `Q(t) − α` would cancel to roundoff.
    pub fn eps_tail(&self, t: T) -> Result<Mat<Complex<T>>> {
        let m = self.trajectory.m;
        let end = if t >= T::zero() { self.trunc_time } else { -self.trunc_time };
        if t.abs() >= self.trunc_time || self.field.diag.op.is_constant() {
            return Ok(Mat::zeros(m, m));
        }
        let mut fail = None;
        let f = |s: T| {
            let mut out = vec![c0(); m * m];
            match self.field.eval(s) {
                Ok(c) => i_c_times(&c, &self.q(s).data, &mut out),
                Err(e) => {
                    fail.get_or_insert(e);
                }
            }
            out
        };
        let (a, b, sign) = if t < end { (t, end, -T::one()) } else { (end, t, T::one()) };
        let r = gk_adaptive_vec(f, a, b, T::zero(), T::lit(1e-9), 4000);
        if let Some(e) = fail {
            return Err(e);
        }
        Ok(mat_from_row(m, &r.value).scale(Complex::new(sign, T::zero())))
    }
}

/// Build the profile, checking that the truncation error is below `tail_tol`.
pub fn extract_profile<'a, T: Real>(
    field: &'a CouplingField<'a, T>,
    trajectory: ZTrajectory<T>,
    psi: &PsiFunction<T>,
    tail_tol: T,
) -> Result<AsymptoticProfile<'a, T>> {
    let t_max = trajectory.t_max;
    let (ap, am) = trajectory.ends();
    let mut q_sup = T::zero();
    for d in [&trajectory.forward, &trajectory.backward] {
        for y in &d.y {
            q_sup = q_sup.max(mat_from_row(trajectory.m, y).norm_fro());
        }
    }
    let mut c_sup = T::zero();
    if !psi.is_zero() {
        let samples = 400;
        for k in 0..=samples {
            let t = -t_max + T::lit(2.0) * t_max * T::from_usize_lossy(k) / T::from_usize_lossy(samples);
            let p = psi.eval(t);
            if p > T::lit(1e-200) {
                let cn: T = field.eval(t)?.norm_fro();
                c_sup = c_sup.max(cn / p);
            }
        }
    }
    let qtol = tail_tol * T::lit(1e-3);
    let tail = psi.tail(t_max, false, qtol).max(psi.tail(-t_max, true, qtol));
    let bound = q_sup * c_sup * tail;
    if bound > tail_tol {
        let mut t = t_max;
        while t < T::lit(1e7) {
            t = t + t;
            let tl = psi.tail(t, false, qtol).max(psi.tail(-t, true, qtol));
            if q_sup * c_sup * tl <= tail_tol {
                break;
            }
        }
        return Err(Error::TailNotConverged { required_t_max: t.f64() });
    }
    Ok(AsymptoticProfile {
        alpha_plus: ap,
        alpha_minus: am,
        xi: trajectory.xi.clone(),
        trunc_time: t_max,
        trunc_error_bound: bound,
        coupling_constant: c_sup,
        q_sup,
        trajectory,
        field,
    })
}

/// One row of the `|ε(t)| / ∫_t^∞ Ψ` table.
#[derive(Debug, Clone, Serialize)]
pub struct EpsRatio<T> {
    pub t: T,
    pub eps: T,
    pub psi_tail: T,
    /// `None` when both numerator and tail underflow.
    pub ratio: Option<T>,
}

pub fn eps_ratios<T: Real>(profile: &AsymptoticProfile<'_, T>, psi: &PsiFunction<T>, times: &[T]) -> Result<Vec<EpsRatio<T>>> {
    times
        .iter()
        .map(|&t| {
            let e = profile.eps_tail(t)?.max_abs();
            let tail = psi.tail(t, t < T::zero(), T::lit(1e-300));
            let ratio = if tail > T::min_positive_value() {
                Some(e / tail)
            } else if e == T::zero() {
                None
            } else {
                Some(T::infinity())
            };
            Ok(EpsRatio { t, eps: e, psi_tail: tail, ratio })
        })
        .collect()
}

const CHEB_P: usize = 24;

/// Cumulative integration matrix on Chebyshev–Lobatto nodes of `[-1, 1]`.
fn cheb_integration() -> &'static (Vec<f64>, Vec<Vec<f64>>) {
    static S: OnceLock<(Vec<f64>, Vec<Vec<f64>>)> = OnceLock::new();
    S.get_or_init(|| {
        let p = CHEB_P;
        let pi = std::f64::consts::PI;
        let x: Vec<f64> = (0..=p).map(|i| -(pi * i as f64 / p as f64).cos()).collect();
        let tk = |k: usize, x: f64| (k as f64 * x.acos()).cos();
        let mut s = vec![vec![0.0; p + 1]; p + 1];
        for j in 0..=p {
            // coefficients of the interpolant of e_j
            let wj = if j == 0 || j == p { 0.5 } else { 1.0 };
            let mut c: Vec<f64> = (0..=p).map(|k| 2.0 / p as f64 * wj * tk(k, x[j])).collect();
            c[0] *= 0.5;
            c[p] *= 0.5;
            // antiderivative coefficients
            let mut b = vec![0.0; p + 2];
            for k in 0..=p {
                match k {
                    0 => b[1] += c[0],
                    1 => b[2] += c[1] / 4.0,
                    _ => {
                        b[k + 1] += c[k] / (2.0 * (k + 1) as f64);
                        b[k - 1] -= c[k] / (2.0 * (k - 1) as f64);
                    }
                }
            }
            let f = |x: f64| b.iter().enumerate().map(|(k, bk)| bk * tk(k, x)).sum::<f64>();
            let f0 = f(-1.0);
            for i in 0..=p {
                s[i][j] = f(x[i]) - f0;
            }
        }
        (x, s)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardResult<T> {
    pub q: Mat<Complex<T>>,
    /// `‖P_terms(t) N(0)‖`, the first omitted term.
    pub remainder_estimate: T,
    /// `∫_0^t ‖C‖`.
    pub coupling_l1: T,
}

/// Truncated Dyson series `(Σ_{k<terms} P_k(t)) N(0)` with `P_k = i∫_0 C P_{k−1}`.
pub fn picard_compare<T: Real>(field: &CouplingField<'_, T>, t: T, terms: usize) -> Result<PicardResult<T>> {
    if terms == 0 {
        return Err(Error::InvalidInput("terms must be at least 1".into()));
    }
    let op = field.diag.op;
    let m = op.m;
    let xhat = field.xhat().to_vec();
    let n0 = field.diag.at_unit(T::zero(), &xhat)?.n.to_complex();
    if op.is_constant() || t == T::zero() {
        return Ok(PicardResult { q: n0, remainder_estimate: T::zero(), coupling_l1: T::zero() });
    }
    let (x, s) = cheb_integration();
    let p = CHEB_P;
    let r0 = op.roots_unit(T::zero(), &xhat)?;
    let r1 = op.roots_unit(t, &xhat)?;
    let spread = (r0[0] - r0[m - 1]).max(r1[0] - r1[m - 1]) * field.r;
    let width = T::lit(0.5).min(T::lit(6.0) / spread.max(T::lit(1e-12)));
    let panels = (t.abs() / width).ceil().to_usize().unwrap_or(1).max(1);
    let hw = t / T::from_usize_lossy(panels) * T::lit(0.5);
    // C at all nodes, panel by panel
    let mut cs = Vec::with_capacity(panels);
    let mut l1 = T::zero();
    for k in 0..panels {
        let a = t * T::from_usize_lossy(k) / T::from_usize_lossy(panels);
        let mut row = Vec::with_capacity(p + 1);
        for xi in x.iter() {
            row.push(field.eval(a + hw * (T::lit(*xi) + T::one()))?);
        }
        for j in 0..=p {
            let nrm: T = row[j].norm_fro();
            l1 += nrm * T::lit(s[p][j]) * hw.abs();
        }
        cs.push(row);
    }
    let ident = Mat::<Complex<T>>::identity(m);
    let mut prev: Vec<Vec<Mat<Complex<T>>>> = vec![vec![ident.clone(); p + 1]; panels];
    let mut total = ident;
    let mut last_term = Mat::zeros(m, m);
    for k in 1..=terms {
        let mut carry = Mat::zeros(m, m);
        let mut next = Vec::with_capacity(panels);
        for (pc, pp) in cs.iter().zip(&prev) {
            let g: Vec<Mat<Complex<T>>> = pc
                .iter()
                .zip(pp)
                .map(|(c, q)| c.matmul(q).scale(Complex::new(T::zero(), T::one())))
                .collect();
            let mut vals = Vec::with_capacity(p + 1);
            for i in 0..=p {
                let mut acc = carry.clone();
                for (j, gj) in g.iter().enumerate() {
                    let w = T::lit(s[i][j]) * hw;
                    if w != T::zero() {
                        acc = acc.add(&gj.scale(Complex::new(w, T::zero())));
                    }
                }
                vals.push(acc);
            }
            carry = vals[p].clone();
            next.push(vals);
        }
        if k < terms {
            total = total.add(&carry);
        } else {
            last_term = carry;
        }
        prev = next;
    }
    let remainder_estimate = last_term.matmul(&n0).norm_fro();
    Ok(PicardResult { q: total.matmul(&n0), remainder_estimate, coupling_l1: l1 })
}

/// `D_t^l û(t, ξ)` from the asymptotic representation.
pub fn reconstruct_hat_u<T: Real>(
    profile: &AsymptoticProfile<'_, T>,
    diag: &Diagonalizer<'_, T>,
    ph: &PhaseAccumulator<'_, T>,
    data_hat: &[Complex<T>],
    l: usize,
    t: T,
) -> Result<Complex<T>> {
    let m = diag.op.m;
    if l >= m || data_hat.len() != m {
        return Err(Error::InvalidInput(format!("need l < {m} and {m} data values")));
    }
    let (xhat, r) = unit(&profile.xi)?;
    if t == T::zero() {
        // θ(0) = 0 and Q(0) = N(0), so the sum collapses to the data
        return Ok(data_hat[l]);
    }
    let n_inv = diag.at_unit(t, &xhat)?.n_inv;
    let th = ph.theta(t, r)?;
    let alpha = profile.alpha(t);
    let eps = profile.eps(t);
    let mut sum = c0::<T>();
    for k in 0..m {
        let w = r.powi(l as i32 - k as i32);
        for j in 0..m {
            let amp = alpha[(j, k)] + eps[(j, k)];
            sum = sum + Complex::from_polar(n_inv[(l, j)] * w, th[j]) * amp * data_hat[k];
        }
    }
    Ok(sum)
}

/// Terms of the representation at one `(t, ξ)`: `Q(t) = α_± + ε(t)`, phases and `N⁻¹`.
#[derive(Debug, Clone, Serialize)]
pub struct RepresentationKernel<T> {
    pub xi: Vec<T>,
    pub t: T,
    pub theta: Vec<T>,
    pub amplitude: Mat<Complex<T>>,
    pub n_inv: Mat<T>,
    pub r: T,
}

impl<T: Real> RepresentationKernel<T> {
    /// `e^{iθ_j} n^{lj} Q_{jk} |ξ|^{l−k}`.
    pub fn branch_term(&self, l: usize, j: usize, k: usize) -> Complex<T> {
        let w = self.r.powi(l as i32 - k as i32) * self.n_inv[(l, j)];
        Complex::from_polar(w, self.theta[j]) * self.amplitude[(j, k)]
    }

    /// `D_t^l û(t, ξ)` for data `f̂_k`.
    pub fn hat_u(&self, l: usize, data_hat: &[Complex<T>]) -> Complex<T> {
        let m = self.theta.len();
        let mut s = c0::<T>();
        for (k, f) in data_hat.iter().enumerate() {
            for j in 0..m {
                s = s + self.branch_term(l, j, k) * *f;
            }
        }
        s
    }
}

/// Propagate the `z`-system from 0 to `t` and collect the representation terms.
pub fn representation_at<T: Real>(op: &OperatorSpec<T>, xi: &[T], t: T, tol: T) -> Result<RepresentationKernel<T>> {
    let field = CouplingField::new(op, xi, t.min(T::zero()), t.max(T::zero()), tol * T::lit(0.1))?;
    let xhat = field.xhat().to_vec();
    let d0 = field.diag.at_unit(T::zero(), &xhat)?;
    let (q, _, _) = propagate_z(&field, T::zero(), &d0.n.to_complex(), t, tol, false)?;
    let n_inv = if t == T::zero() { d0.n_inv } else { field.diag.at_unit(t, &xhat)?.n_inv };
    Ok(RepresentationKernel { xi: xi.to_vec(), t, theta: field.phases.theta(t, field.r)?, amplitude: q, n_inv, r: field.r })
}

/// Direct integration of `L(t, D_t, ξ) û = 0` with `D_t^k û(0) = f̂_k`; returns `D_t^l û(t)` for all `l`.
pub fn integrate_direct<T: Real>(op: &OperatorSpec<T>, xi: &[T], data_hat: &[Complex<T>], t: T, tol: T) -> Result<Vec<Complex<T>>> {
    let m = op.m;
    let (xhat, r) = unit(xi)?;
    let rp: Vec<T> = (1..=m).map(|i| r.powi(i as i32)).collect();
    // ∂_t y_k = i y_{k+1},  ∂_t y_{m-1} = i D_t^m û = -i Σ_i |ξ|^i h_i y_{m-i}
    let rhs = |s: T, y: &[Complex<T>], dy: &mut [Complex<T>]| {
        for k in 0..m - 1 {
            dy[k] = Complex::new(-y[k + 1].im, y[k + 1].re);
        }
        let h = op.h(s, &xhat);
        let mut acc = c0::<T>();
        for i in 1..=m {
            acc = acc + y[m - i] * (h[i - 1] * rp[i - 1]);
        }
        dy[m - 1] = Complex::new(acc.im, -acc.re);
    };
    Ok(integrate(rhs, T::zero(), data_hat, t, &[], &OdeOptions::with_tol(tol), false)?.y)
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeRow<T> {
    pub xi_norm: T,
    pub d_alpha: T,
    pub d_eps: T,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeReport<T> {
    pub order: usize,
    pub rows: Vec<DerivativeRow<T>>,
    /// `sup |∂^μ α| · min(1, |ξ|)^{|μ|}`.
    pub alpha_constant: T,
    /// `sup |∂^μ ε| · min(1, |ξ|)^{|μ|} / exp(∫(1+|s|)^{|μ|} Ψ)`.
    pub eps_constant: T,
    pub exponent: T,
}

/// Finite-difference `∂_ξ^μ` of `α_+` and `ε_+` over a set of frequencies.
pub fn derivative_bounds_probe<T: Real>(
    op: &OperatorSpec<T>,
    xis: &[Vec<T>],
    mu: &[u32],
    t_max: T,
    eps_times: &[T],
    tol: T,
) -> Result<DerivativeReport<T>> {
    let order: usize = mu.iter().map(|&x| x as usize).sum();
    if !(1..=2).contains(&order) || mu.len() != op.n {
        return Err(Error::InvalidInput("derivative order must be 1 or 2".into()));
    }
    for (i, c) in op.coeffs.iter().enumerate() {
        let rep = moment_check(&c.expr, order as u32, T::lit(1e-6));
        if !rep.converged {
            return Err(Error::DivergentMoment { index: i });
        }
    }
    let psi = PsiFunction::new(op);
    let weight = |s: T| (T::one() + s.abs()).powi(order as i32) * psi.eval(s);
    let exponent = crate::quad::gk_adaptive(weight, T::zero(), t_max, T::lit(1e-10), T::lit(1e-10), 4000).value;
    // stencil offsets per axis
    let mut axes = Vec::new();
    for (a, &k) in mu.iter().enumerate() {
        for _ in 0..k {
            axes.push(a);
        }
    }
    let sample = |xi: &[T]| -> Result<(Mat<Complex<T>>, Vec<Mat<Complex<T>>>)> {
        let field = CouplingField::new(op, xi, T::zero(), t_max, T::lit(1e-11))?;
        let m = op.m;
        let n0 = field.diag.at_unit(T::zero(), field.xhat())?.n.to_complex();
        let (_, dense, _) = propagate_z(&field, T::zero(), &n0, t_max, tol, true)?;
        let dense = dense.unwrap();
        let alpha = mat_from_row(m, dense.y.last().unwrap());
        let eps = eps_times.iter().map(|&t| mat_from_row(m, &dense.eval(t)).sub(&alpha)).collect();
        Ok((alpha, eps))
    };
    let rows: Vec<Result<DerivativeRow<T>>> = xis
        .par_iter()
        .map(|xi| {
            let rn = norm2(xi);
            let h = rn * if order == 1 { T::lit(1e-3) } else { T::lit(1e-2) };
            // central differences: tensor stencil over the chosen axes
            let stencil: Vec<(Vec<T>, T)> = if order == 1 {
                let mut p = xi.clone();
                let mut q = xi.clone();
                p[axes[0]] += h;
                q[axes[0]] -= h;
                vec![(p, T::one() / (T::lit(2.0) * h)), (q, -T::one() / (T::lit(2.0) * h))]
            } else if axes[0] == axes[1] {
                let mut p = xi.clone();
                let mut q = xi.clone();
                p[axes[0]] += h;
                q[axes[0]] -= h;
                let w = T::one() / (h * h);
                vec![(p, w), (xi.clone(), -T::lit(2.0) * w), (q, w)]
            } else {
                let w = T::one() / (T::lit(4.0) * h * h);
                let mut v = Vec::new();
                for (sa, sb, s) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    let mut p = xi.clone();
                    p[axes[0]] += T::lit(sa) * h;
                    p[axes[1]] += T::lit(sb) * h;
                    v.push((p, T::lit(s) * w));
                }
                v
            };
            let m = op.m;
            let mut da = Mat::zeros(m, m);
            let mut de = vec![Mat::zeros(m, m); eps_times.len()];
            for (p, w) in stencil {
                let (a, e) = sample(&p)?;
                let wc = Complex::new(w, T::zero());
                da = da.add(&a.scale(wc));
                for (acc, ek) in de.iter_mut().zip(e) {
                    *acc = acc.add(&ek.scale(wc));
                }
            }
            let d_eps = de.iter().map(|x| x.max_abs()).fold(T::zero(), T::max);
            Ok(DerivativeRow { xi_norm: rn, d_alpha: da.max_abs(), d_eps })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut alpha_constant = T::zero();
    let mut eps_constant = T::zero();
    for r in &rows {
        let s = r.xi_norm.min(T::one()).powi(order as i32);
        alpha_constant = alpha_constant.max(r.d_alpha * s);
        eps_constant = eps_constant.max(r.d_eps * s / exponent.exp());
    }
    if !alpha_constant.is_finite() || !eps_constant.is_finite() {
        return Err(Error::BoundViolation("derivative envelope is not finite".into()));
    }
    Ok(DerivativeReport { order, rows, alpha_constant, eps_constant, exponent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::parse_coefficient;
    use crate::symbol::CoeffTerm;

    fn wave(expr: &str) -> OperatorSpec<f64> {
        OperatorSpec::new(
            2,
            2,
            vec![
                CoeffTerm { nu: vec![2, 0], j: 0, expr: parse_coefficient(expr).unwrap() },
                CoeffTerm { nu: vec![0, 2], j: 0, expr: parse_coefficient(expr).unwrap() },
            ],
        )
        .unwrap()
    }

    #[test]
    fn constant_profile() {
        let c = OperatorSpec::<f64>::constant(2, 2, &[(vec![2, 0], 0, -4.0), (vec![0, 2], 0, -4.0)]).unwrap();
        let f = CouplingField::new(&c, &[1.0, 1.0], -10.0, 10.0, 1e-10).unwrap();
        let tr = integrate_z(&f, 10.0, 1e-10).unwrap();
        let psi = PsiFunction::new(&c);
        let p = extract_profile(&f, tr, &psi, 1e-8).unwrap();
        assert_eq!(p.alpha_plus, p.trajectory.n0);
        assert_eq!(p.eps(3.0).max_abs(), 0.0);
        let pic = picard_compare(&f, 5.0, 4).unwrap();
        assert_eq!(pic.q, p.trajectory.n0);
        // cos(c|ξ|t) f̂0
        let d = Diagonalizer::unchecked(&c);
        let data = [Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)];
        let u = reconstruct_hat_u(&p, &d, &f.phases, &data, 0, 1.3).unwrap();
        let want = (2.0 * 2f64.sqrt() * 1.3).cos();
        assert!((u.re - want).abs() < 1e-13 && u.im.abs() < 1e-13);
    }

    #[test]
    fn wave_profile() {
        let w = wave("-(1+exp(-t^2))");
        let f = CouplingField::new(&w, &[1.0, 0.0], -60.0, 60.0, 1e-11).unwrap();
        let tr = integrate_z(&f, 60.0, 1e-10).unwrap();
        let q40 = tr.q(40.0);
        for t in [45.0, 50.0, 60.0] {
            assert!(tr.q(t).sub(&q40).max_abs() <= 1e-10);
        }
        let psi = PsiFunction::new(&w);
        let p = extract_profile(&f, tr, &psi, 1e-8).unwrap();
        let rows = eps_ratios(&p, &psi, &[2.0, 5.0, 10.0, 20.0, 40.0]).unwrap();
        let sup = rows.iter().filter_map(|r| r.ratio).fold(0.0, f64::max);
        assert!(sup.is_finite() && sup > 0.0, "{rows:?}");
        // picard vs integration at t = 5
        let pic = picard_compare(&f, 5.0, 8).unwrap();
        assert!(pic.q.sub(&p.q(5.0)).max_abs() < 1e-8, "{pic:?}");
        let one = picard_compare(&f, 0.0, 1).unwrap();
        assert_eq!(one.q, p.trajectory.n0);
        // reconstruction against direct integration
        let d = Diagonalizer::unchecked(&w);
        let data = [Complex::new(0.3, -0.2), Complex::new(1.1, 0.4)];
        for t in [0.0, -7.0, 30.0] {
            let direct = integrate_direct(&w, &[1.0, 0.0], &data, t, 1e-12).unwrap();
            for l in 0..2 {
                let u = reconstruct_hat_u(&p, &d, &f.phases, &data, l, t).unwrap();
                assert!((u - direct[l]).norm() <= 1e-7 * direct[l].norm(), "{t} {l}: {u} {}", direct[l]);
            }
        }
    }

    #[test]
    fn asymmetric_limits_differ() {
        let w = wave("-(1+1/(1+(t-3)^2))");
        let f = CouplingField::new(&w, &[1.0, 0.0], -2000.0, 2000.0, 1e-10).unwrap();
        let tr = integrate_z(&f, 2000.0, 1e-10).unwrap();
        let psi = PsiFunction::new(&w);
        let p = extract_profile(&f, tr, &psi, 1e-4).unwrap();
        assert!(p.alpha_plus.sub(&p.alpha_minus).max_abs() > 1e-2);
        let tr = integrate_z(&f, 20.0, 1e-10).unwrap();
        assert!(matches!(extract_profile(&f, tr, &psi, 1e-6), Err(Error::TailNotConverged { .. })));
    }

    #[test]
    fn reversibility() {
        let w = wave("-(1+exp(-t^2))");
        let f = CouplingField::new(&w, &[0.6, 0.8], 0.0, 20.0, 1e-11).unwrap();
        let n0 = f.diag.at_unit(0.0, f.xhat()).unwrap().n.to_complex();
        let (q, _, _) = propagate_z(&f, 0.0, &n0, 20.0, 1e-11, false).unwrap();
        let (back, _, _) = propagate_z(&f, 20.0, &q, 0.0, 1e-11, false).unwrap();
        assert!(back.sub(&n0).max_abs() < 1e-8);
    }
}
