//! The operator `L(t, D_t, D_x)`, its characteristic roots and their limits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::{moment_check, parse_coefficient, CoeffExpr};
use crate::error::{Error, Result};
use crate::linalg::{monic_eval, monic_roots};
use crate::quad::gk_adaptive;
use crate::scalar::{norm2, Real};

/// Imaginary parts below this multiple of |ξ| are rounding noise.
pub const IMAG_TOL: f64 = 1e-9;
/// Root gaps below this multiple of |ξ| count as a collision.
pub const COLLISION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTerm<T> {
    pub nu: Vec<u32>,
    pub j: usize,
    pub expr: CoeffExpr<T>,
}

impl<T> CoeffTerm<T> {
    pub fn order(&self) -> usize {
        self.nu.iter().map(|&k| k as usize).sum()
    }
}

/// Homogeneous operator `τ^m + Σ a_{ν,j}(t) ξ^ν τ^j` with `|ν| + j = m`, `j ≤ m-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec<T> {
    pub m: usize,
    pub n: usize,
    pub coeffs: Vec<CoeffTerm<T>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffEntry {
    pub nu: Vec<u32>,
    pub j: usize,
    pub expr: String,
}

/// On-disk operator description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorFile {
    pub m: usize,
    pub n: usize,
    pub coeffs: Vec<CoeffEntry>,
}

#[inline]
fn monomial<T: Real>(nu: &[u32], xi: &[T]) -> T {
    nu.iter().zip(xi).fold(T::one(), |acc, (&k, &x)| acc * x.powi(k as i32))
}

impl<T: Real> OperatorSpec<T> {
    pub fn new(m: usize, n: usize, mut coeffs: Vec<CoeffTerm<T>>) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidOperator(format!("order m = {m} must be at least 2")));
        }
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidOperator(format!("dimension n = {n} must be 1, 2 or 3")));
        }
        if coeffs.is_empty() {
            return Err(Error::InvalidOperator("empty coefficient table".into()));
        }
        for c in &coeffs {
            if c.nu.len() != n {
                return Err(Error::InvalidOperator(format!("multi-index {:?} has length != n = {n}", c.nu)));
            }
            if c.j >= m || c.order() + c.j != m {
                return Err(Error::InvalidOperator(format!(
                    "term (nu = {:?}, j = {}) is not of homogeneous degree {m} with j <= m-1",
                    c.nu, c.j
                )));
            }
            for k in -40..=40 {
                let t = T::from_i32(k).unwrap() * T::lit(2.5);
                c.expr.eval(t).and(c.expr.eval_derivative(t)).map_err(|e| {
                    Error::InvalidOperator(format!("coefficient `{}` is not finite: {e}", c.expr.source))
                })?;
            }
        }
        coeffs.sort_by(|a, b| (a.j, &a.nu).cmp(&(b.j, &b.nu)));
        for w in coeffs.windows(2) {
            if w[0].j == w[1].j && w[0].nu == w[1].nu {
                return Err(Error::InvalidOperator(format!("duplicate term (nu = {:?}, j = {})", w[0].nu, w[0].j)));
            }
        }
        Ok(OperatorSpec { m, n, coeffs })
    }

    pub fn from_file(file: &OperatorFile) -> Result<Self> {
        let coeffs = file
            .coeffs
            .iter()
            .map(|c| Ok(CoeffTerm { nu: c.nu.clone(), j: c.j, expr: parse_coefficient(&c.expr)? }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.m, file.n, coeffs)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: OperatorFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidOperator(format!("operator JSON: {e}")))?;
        Self::from_file(&file)
    }

    pub fn to_file(&self) -> OperatorFile {
        OperatorFile {
            m: self.m,
            n: self.n,
            coeffs: self
                .coeffs
                .iter()
                .map(|c| CoeffEntry { nu: c.nu.clone(), j: c.j, expr: c.expr.source.clone() })
                .collect(),
        }
    }

    /// Constant-coefficient operator from `(ν, j, value)` triples.
    pub fn constant(m: usize, n: usize, terms: &[(Vec<u32>, usize, T)]) -> Result<Self> {
        let coeffs = terms
            .iter()
            .map(|(nu, j, v)| CoeffTerm { nu: nu.clone(), j: *j, expr: CoeffExpr::constant(*v) })
            .collect();
        Self::new(m, n, coeffs)
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().all(|c| c.expr.is_constant())
    }

    /// `[h_1, …, h_m]` at `(t, ξ)`, where `h_k = Σ_{|ν|=k} a_{ν,m-k}(t) ξ^ν`.
    pub fn h(&self, t: T, xi: &[T]) -> Vec<T> {
        let mut h = vec![T::zero(); self.m];
        for c in &self.coeffs {
            h[self.m - c.j - 1] += c.expr.value(t) * monomial(&c.nu, xi);
        }
        h
    }

    /// `∂_t` of [`h`](Self::h).
    pub fn dh(&self, t: T, xi: &[T]) -> Vec<T> {
        let mut h = vec![T::zero(); self.m];
        for c in &self.coeffs {
            h[self.m - c.j - 1] += c.expr.deriv(t) * monomial(&c.nu, xi);
        }
        h
    }

    pub fn eval_symbol(&self, t: T, tau: T, xi: &[T]) -> T {
        let h = self.h(t, xi);
        monic_eval(&h, tau).0
    }

    /// Roots for a unit direction, sorted strictly decreasing.
    pub fn roots_unit(&self, t: T, xhat: &[T]) -> Result<Vec<T>> {
        let h = self.h(t, xhat);
        roots_of_monic(&h).map_err(|e| locate(e, t, xhat))
    }

    /// Characteristic roots `φ_1 > … > φ_m` at `(t, ξ)`, `ξ ≠ 0`.
    pub fn characteristic_roots(&self, t: T, xi: &[T]) -> Result<Vec<T>> {
        let r = norm2(xi);
        if r == T::zero() {
            return Err(Error::InvalidInput("characteristic roots need xi != 0".into()));
        }
        let xhat: Vec<T> = xi.iter().map(|x| *x / r).collect();
        Ok(self.roots_unit(t, &xhat)?.into_iter().map(|p| p * r).collect())
    }

    /// Closed-form `∂_t φ_k` for a unit direction given the roots there.
    pub fn root_derivatives_unit(&self, t: T, xhat: &[T], roots: &[T]) -> Vec<T> {
        let dh = self.dh(t, xhat);
        let m = self.m;
        (0..m)
            .map(|k| {
                let lam = roots[k];
                // Σ_i h_i' λ^{m-i}
                let mut num = T::zero();
                for (i, d) in dh.iter().enumerate() {
                    num += *d * lam.powi((m - i - 1) as i32);
                }
                let mut den = T::one();
                for (r, mu) in roots.iter().enumerate() {
                    if r != k {
                        den *= lam - *mu;
                    }
                }
                -num / den
            })
            .collect()
    }

    /// `∂_t φ_k(t; ξ)` from the closed formula with symbolic `a'`.
    pub fn root_time_derivative(&self, t: T, xi: &[T], k: usize) -> Result<T> {
        let r = norm2(xi);
        if r == T::zero() {
            return Err(Error::InvalidInput("root derivative needs xi != 0".into()));
        }
        let xhat: Vec<T> = xi.iter().map(|x| *x / r).collect();
        let roots = self.roots_unit(t, &xhat)?;
        if k >= self.m {
            return Err(Error::InvalidInput(format!("root index {k} out of range")));
        }
        Ok(self.root_derivatives_unit(t, &xhat, &roots)[k] * r)
    }

    /// Limits `a^± = a(0) + ∫_0^{±∞} a'` and the limiting operators.
    pub fn limiting_roots(&self) -> Result<LimitRoots<T>> {
        let tol = T::lit(1e-10);
        for (i, c) in self.coeffs.iter().enumerate() {
            if !moment_check(&c.expr, 0, T::lit(1e-8)).converged {
                return Err(Error::DivergentMoment { index: i });
            }
        }
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        let mut limit_coeffs = Vec::new();
        for c in &self.coeffs {
            let a0 = c.expr.value(T::zero());
            let (ap, am) = if c.expr.is_constant() {
                (a0, a0)
            } else {
                (a0 + signed_tail(&c.expr, false, tol), a0 + signed_tail(&c.expr, true, tol))
            };
            plus.push((c.nu.clone(), c.j, ap));
            minus.push((c.nu.clone(), c.j, am));
            limit_coeffs.push(LimitCoeff { nu: c.nu.clone(), j: c.j, plus: ap, minus: am });
        }
        Ok(LimitRoots {
            plus: OperatorSpec::constant(self.m, self.n, &plus)?,
            minus: OperatorSpec::constant(self.m, self.n, &minus)?,
            limit_coeffs,
        })
    }

    /// Whether every `h_k(t; ξ̂)` is independent of the direction, tested on samples.
    pub fn is_isotropic(&self, times: &[T]) -> bool {
        if self.n == 1 {
            return false;
        }
        let dirs = sphere_samples::<T>(self.n, 8);
        for &t in times {
            let h0 = self.h(t, &dirs[0]);
            for d in &dirs[1..] {
                let h = self.h(t, d);
                for (a, b) in h0.iter().zip(&h) {
                    if (*a - *b).abs() > T::lit(1e-13) * (T::one() + a.abs()) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn locate(e: Error, t: impl Real, xi: &[impl Real]) -> Error {
    let xi: Vec<f64> = xi.iter().map(|x| x.f64()).collect();
    match e {
        Error::NonHyperbolic { imag, .. } => Error::NonHyperbolic { t: t.f64(), xi, imag },
        Error::RootCollision { gap, .. } => Error::RootCollision { t: t.f64(), xi, gap },
        e => e,
    }
}

/// Real, simple roots of `τ^m + h_1 τ^{m-1} + … + h_m`, sorted decreasing, for
/// a unit-normalized symbol.
pub fn roots_of_monic<T: Real>(h: &[T]) -> Result<Vec<T>> {
    let eig = monic_roots(h).ok_or(Error::NonHyperbolic { t: 0.0, xi: vec![], imag: f64::NAN })?;
    let imag_tol = T::lit(IMAG_TOL);
    let coll = T::lit(COLLISION_TOL);
    let mut roots = Vec::with_capacity(eig.len());
    for z in &eig {
        if z.im.abs() > imag_tol {
            if z.im.abs() < coll {
                return Err(Error::RootCollision { t: 0.0, xi: vec![], gap: (z.im.abs() * T::lit(2.0)).f64() });
            }
            return Err(Error::NonHyperbolic { t: 0.0, xi: vec![], imag: z.im.abs().f64() });
        }
        roots.push(z.re);
    }
    roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let gap = min_gap(&roots);
    if gap < coll {
        return Err(Error::RootCollision { t: 0.0, xi: vec![], gap: gap.f64() });
    }
    for r in roots.iter_mut() {
        let (p, dp) = monic_eval(h, *r);
        if dp != T::zero() {
            let step = p / dp;
            if step.abs() < T::lit(0.25) * gap {
                *r -= step;
            }
        }
    }
    Ok(roots)
}

pub fn min_gap<T: Real>(sorted_desc: &[T]) -> T {
    sorted_desc.windows(2).map(|w| w[0] - w[1]).fold(T::infinity(), T::min)
}

/// Signed `∫_0^{±∞} a'` on doubling windows with geometric tail extrapolation.
fn signed_tail<T: Real>(expr: &CoeffExpr<T>, toward_minus: bool, tol: T) -> T {
    let sgn = if toward_minus { -T::one() } else { T::one() };
    let f = |s: T| expr.deriv(s);
    let piece = |a: T, b: T| {
        let (lo, hi, s) = if a <= b { (a, b, T::one()) } else { (b, a, -T::one()) };
        s * gk_adaptive(f, lo, hi, tol * T::lit(1e-2), T::lit(1e-13), 4000).value
    };
    let mut total = piece(T::zero(), sgn);
    let mut w = T::one();
    let mut prev = T::infinity();
    while w < T::lit(1048576.0) {
        let inc = piece(sgn * w, sgn * (w + w));
        total += inc;
        w = w + w;
        let a = inc.abs();
        if w >= T::lit(64.0) && a < tol {
            if a > T::zero() && prev.is_finite() && a < prev {
                let rho = a / prev;
                total += inc * rho / (T::one() - rho);
            }
            break;
        }
        prev = a;
    }
    total
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitCoeff<T> {
    pub nu: Vec<u32>,
    pub j: usize,
    pub plus: T,
    pub minus: T,
}

/// Limiting constant-coefficient operators `L^±` and their roots.
#[derive(Debug, Clone)]
pub struct LimitRoots<T> {
    pub plus: OperatorSpec<T>,
    pub minus: OperatorSpec<T>,
    pub limit_coeffs: Vec<LimitCoeff<T>>,
}

impl<T: Real> LimitRoots<T> {
    pub fn plus_roots(&self, xi: &[T]) -> Result<Vec<T>> {
        self.plus.characteristic_roots(T::zero(), xi)
    }

    pub fn minus_roots(&self, xi: &[T]) -> Result<Vec<T>> {
        self.minus.characteristic_roots(T::zero(), xi)
    }

    pub fn side(&self, plus: bool) -> &OperatorSpec<T> {
        if plus {
            &self.plus
        } else {
            &self.minus
        }
    }
}

/// Quasi-uniform unit vectors: both signs for n = 1, `k` angles for n = 2,
/// a Fibonacci lattice of `2k²` points for n = 3.
pub fn sphere_samples<T: Real>(n: usize, k: usize) -> Vec<Vec<T>> {
    match n {
        1 => vec![vec![T::one()], vec![-T::one()]],
        2 => (0..k)
            .map(|i| {
                let a = T::lit(2.0) * T::PI() * T::from_usize_lossy(i) / T::from_usize_lossy(k);
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let total = 2 * k * k;
            let golden = T::PI() * (T::lit(3.0) - T::lit(5.0).sqrt());
            (0..total)
                .map(|i| {
                    let z = T::one() - T::lit(2.0) * (T::from_usize_lossy(i) + T::lit(0.5)) / T::from_usize_lossy(total);
                    let r = (T::one() - z * z).max(T::zero()).sqrt();
                    let a = golden * T::from_usize_lossy(i);
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
    }
}

/// Sampled certificate of strict hyperbolicity.
#[derive(Debug, Clone)]
pub struct RootField<T> {
    pub op: OperatorSpec<T>,
    /// Sampled lower bound of root gaps on the unit sphere.
    pub separation: T,
    /// Sampled `C` with `|φ_k| ≤ C|ξ|`.
    pub bound_constant: T,
    pub t_grid: Vec<T>,
    pub directions: Vec<Vec<T>>,
}

impl<T: Real> RootField<T> {
    pub fn roots(&self, t: T, xi: &[T]) -> Result<Vec<T>> {
        self.op.characteristic_roots(t, xi)
    }
}

pub fn hyperbolicity_certificate<T: Real>(
    op: &OperatorSpec<T>,
    t_grid: &[T],
    sphere_samples_per_dim: usize,
) -> Result<RootField<T>> {
    if sphere_samples_per_dim < 8 {
        return Err(Error::InvalidInput("sphere_samples must be at least 8 per angular dimension".into()));
    }
    let directions = sphere_samples::<T>(op.n, sphere_samples_per_dim);
    let per_t: Vec<Result<(T, T)>> = t_grid
        .par_iter()
        .map(|&t| {
            let mut sep = T::infinity();
            let mut bound = T::zero();
            for d in &directions {
                let r = op.roots_unit(t, d)?;
                sep = sep.min(min_gap(&r));
                bound = bound.max(r.iter().fold(T::zero(), |m, x| m.max(x.abs())));
            }
            Ok((sep, bound))
        })
        .collect();
    let mut separation = T::infinity();
    let mut bound_constant = T::zero();
    for r in per_t {
        let (s, b) = r?;
        separation = separation.min(s);
        bound_constant = bound_constant.max(b);
    }
    Ok(RootField { op: op.clone(), separation, bound_constant, t_grid: t_grid.to_vec(), directions })
}

/// Evenly spaced grid helper.
pub fn linspace<T: Real>(a: T, b: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn wave_gauss(n: usize) -> OperatorSpec<f64> {
        let mut nu = vec![0u32; n];
        let mut coeffs = Vec::new();
        for i in 0..n {
            nu.iter_mut().for_each(|x| *x = 0);
            nu[i] = 2;
            coeffs.push(CoeffTerm { nu: nu.clone(), j: 0, expr: parse_coefficient("-(1+exp(-t^2))").unwrap() });
        }
        OperatorSpec::new(2, n, coeffs).unwrap()
    }

    #[test]
    fn symbol_values() {
        let w = OperatorSpec::<f64>::constant(2, 1, &[(vec![2], 0, -1.0)]).unwrap();
        assert_eq!(w.eval_symbol(0.0, 2.0, &[1.0]), 3.0);
        let tri = OperatorSpec::<f64>::constant(3, 2, &[(vec![2, 0], 1, -1.0), (vec![0, 2], 1, -1.0)]).unwrap();
        assert_eq!(tri.eval_symbol(0.0, 1.0, &[1.0, 0.0]), 0.0);
        assert_eq!(wave_gauss(1).eval_symbol(0.0, 0.0, &[1.0]), -2.0);
    }

    #[test]
    fn roots_examples() {
        let w = OperatorSpec::<f64>::constant(2, 2, &[(vec![2, 0], 0, -4.0), (vec![0, 2], 0, -4.0)]).unwrap();
        let r = w.characteristic_roots(0.0, &[1.0, 0.0]).unwrap();
        assert!((r[0] - 2.0).abs() < 1e-14 && (r[1] + 2.0).abs() < 1e-14);
        let tri = OperatorSpec::<f64>::constant(3, 2, &[(vec![2, 0], 1, -1.0), (vec![0, 2], 1, -1.0)]).unwrap();
        let r = tri.characteristic_roots(0.0, &[3.0, 4.0]).unwrap();
        for (a, b) in r.iter().zip([5.0, 0.0, -5.0]) {
            assert!((a - b).abs() < 1e-12, "{r:?}");
        }
        let dbl = OperatorSpec::<f64>::constant(2, 2, &[(vec![1, 0], 1, -2.0), (vec![2, 0], 0, 1.0), (vec![0, 2], 0, 1.0)])
            .unwrap();
        // (τ - ξ1)^2 + ξ2^2 at ξ = e1 is a double root
        assert!(matches!(dbl.characteristic_roots(0.0, &[1.0, 0.0]), Err(Error::RootCollision { .. })));
        let ell = OperatorSpec::<f64>::constant(2, 1, &[(vec![2], 0, 1.0)]).unwrap();
        assert!(matches!(ell.characteristic_roots(0.0, &[1.0]), Err(Error::NonHyperbolic { .. })));
    }

    #[test]
    fn derivative_and_limits() {
        let w = wave_gauss(2);
        let d = w.root_time_derivative(1.0, &[1.0, 0.0], 0).unwrap();
        let c = (1.0 + (-1.0f64).exp()).sqrt();
        assert!((d - (-(-1.0f64).exp() / c)).abs() < 1e-14);
        assert_eq!(w.root_time_derivative(0.0, &[1.0, 0.0], 0).unwrap(), 0.0);
        let lim = w.limiting_roots().unwrap();
        let p = lim.plus_roots(&[0.6, 0.8]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9 && (p[1] + 1.0).abs() < 1e-9, "{p:?}");
        let slow = OperatorSpec::<f64>::new(
            2,
            1,
            vec![CoeffTerm { nu: vec![2], j: 0, expr: parse_coefficient("-(4 + 1/(1+t^2))").unwrap() }],
        )
        .unwrap();
        let lim = slow.limiting_roots().unwrap();
        assert!((lim.limit_coeffs[0].plus + 4.0).abs() < 1e-9, "{:?}", lim.limit_coeffs);
        assert!((lim.plus_roots(&[1.0]).unwrap()[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn certificate() {
        let w = wave_gauss(2);
        let rf = hyperbolicity_certificate(&w, &linspace(-20.0, 20.0, 81), 16).unwrap();
        assert!((rf.separation - 2.0).abs() < 1e-9, "{}", rf.separation);
        assert!((rf.bound_constant - 2f64.sqrt()).abs() < 1e-12);
        let c = OperatorSpec::<f64>::constant(2, 2, &[(vec![2, 0], 0, -1.0), (vec![0, 2], 0, -1.0)]).unwrap();
        let rf = hyperbolicity_certificate(&c, &[0.0], 8).unwrap();
        assert!((rf.separation - 2.0).abs() < 1e-14 && (rf.bound_constant - 1.0).abs() < 1e-14);
        let dbl = OperatorSpec::<f64>::constant(2, 2, &[(vec![1, 0], 1, -2.0), (vec![2, 0], 0, 1.0), (vec![0, 2], 0, 1.0)])
            .unwrap();
        let err = hyperbolicity_certificate(&dbl, &[0.0], 8).unwrap_err();
        assert!(matches!(err, Error::RootCollision { .. } | Error::NonHyperbolic { .. }));
        assert!(hyperbolicity_certificate(&w, &[0.0], 4).is_err());
    }
}
