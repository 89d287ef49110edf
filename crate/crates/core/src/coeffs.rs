//! Time-dependent coefficients with exact derivatives, L¹ moment checks and Ψ.

use serde::Serialize;

use crate::error::Result;
use crate::expr::{self, Dialect, Node};
use crate::quad::gk_adaptive;
use crate::scalar::Real;
use crate::symbol::OperatorSpec;

/// A coefficient `a(t)` with its derivative differentiated once at parse time.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffExpr<T> {
    pub source: String,
    pub ast: Node<T>,
    pub derivative_ast: Node<T>,
}

pub fn parse_coefficient<T: Real>(source: &str) -> Result<CoeffExpr<T>> {
    let ast = expr::parse(source, Dialect::Coefficient)?;
    let derivative_ast = ast.derivative(0);
    Ok(CoeffExpr { source: source.to_string(), ast, derivative_ast })
}

impl<T: Real> CoeffExpr<T> {
    pub fn constant(c: T) -> Self {
        CoeffExpr { source: format!("{c}"), ast: Node::Const(c), derivative_ast: Node::Const(T::zero()) }
    }

    pub fn eval(&self, t: T) -> Result<T> {
        self.ast.eval(&[t])
    }

    pub fn eval_derivative(&self, t: T) -> Result<T> {
        self.derivative_ast.eval(&[t])
    }

    /// Unchecked evaluation for hot loops; callers validate the operator once up front.
    #[inline]
    pub fn value(&self, t: T) -> T {
        self.ast.eval_raw(&[t])
    }

    #[inline]
    pub fn deriv(&self, t: T) -> T {
        self.derivative_ast.eval_raw(&[t])
    }

    pub fn is_constant(&self) -> bool {
        !self.ast.has_var()
    }
}

pub fn eval<T: Real>(expr: &CoeffExpr<T>, t: T) -> Result<T> {
    expr.eval(t)
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport<T> {
    pub order: u32,
    pub value: T,
    pub converged: bool,
    pub tail_bound: T,
    /// Final half-width of the integration window.
    pub window: T,
}

#[derive(Debug, Clone, Copy)]
pub struct MomentOptions<T> {
    pub tol: T,
    pub cap: T,
    /// Windows are doubled at least up to this half-width before convergence is declared.
    pub min_window: T,
}

impl<T: Real> MomentOptions<T> {
    pub fn new(tol: T) -> Self {
        MomentOptions { tol, cap: T::lit(1048576.0), min_window: T::lit(64.0) }
    }
}

/// Estimate `∫ (1+|t|)^r |a'(t)| dt` on doubling windows.
pub fn moment_check<T: Real>(expr: &CoeffExpr<T>, r: u32, tol: T) -> MomentReport<T> {
    moment_check_with(expr, r, &MomentOptions::new(tol))
}

pub fn moment_check_with<T: Real>(expr: &CoeffExpr<T>, r: u32, opts: &MomentOptions<T>) -> MomentReport<T> {
    if expr.is_constant() {
        return MomentReport { order: r, value: T::zero(), converged: true, tail_bound: T::zero(), window: T::zero() };
    }
    let weight = |t: T| {
        let d = expr.deriv(t);
        let v = (T::one() + t.abs()).powi(r as i32) * d.abs();
        if v.is_finite() {
            v
        } else {
            T::zero()
        }
    };
    let qtol = opts.tol * T::lit(0.01);
    let piece = |a: T, b: T| gk_adaptive(weight, a, b, qtol, T::lit(1e-12), 2000).value;
    let mut half = T::one();
    let mut value = piece(-half, half);
    let mut prev_inc = T::infinity();
    loop {
        let inc = piece(half, half + half) + piece(-(half + half), -half);
        value += inc;
        half = half + half;
        let tail = if inc == T::zero() {
            T::zero()
        } else if prev_inc.is_finite() && inc < prev_inc {
            let rho = inc / prev_inc;
            inc * rho / (T::one() - rho)
        } else {
            T::infinity()
        };
        if half >= opts.min_window && inc < opts.tol && tail < opts.tol {
            return MomentReport { order: r, value: value + tail, converged: true, tail_bound: tail, window: half };
        }
        if half >= opts.cap {
            return MomentReport { order: r, value, converged: false, tail_bound: tail.max(inc), window: half };
        }
        prev_inc = inc;
    }
}

/// Ψ(t) = Σ |a'_{ν,j}(t)| over all coefficients of an operator.
#[derive(Debug, Clone)]
pub struct PsiFunction<T> {
    pub terms: Vec<CoeffExpr<T>>,
}

impl<T: Real> PsiFunction<T> {
    pub fn new(op: &OperatorSpec<T>) -> Self {
        PsiFunction { terms: op.coeffs.iter().map(|c| c.expr.clone()).collect() }
    }

    pub fn eval(&self, t: T) -> T {
        self.terms.iter().map(|e| e.deriv(t).abs()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|e| e.is_constant())
    }

    /// `∫_a^b Ψ` by adaptive Gauss–Kronrod.
    pub fn integral(&self, a: T, b: T, tol: T) -> T {
        if self.is_zero() || a == b {
            return T::zero();
        }
        gk_adaptive(|s| self.eval(s), a, b, tol, T::lit(1e-12), 4000).value
    }

    /// `∫_t^∞ Ψ` (or `∫_{-∞}^t` for `toward_minus`) on doubling windows.
    pub fn tail(&self, t: T, toward_minus: bool, tol: T) -> T {
        if self.is_zero() {
            return T::zero();
        }
        let sgn = if toward_minus { -T::one() } else { T::one() };
        let mut a = t;
        let mut w = T::one();
        let mut total = T::zero();
        let mut quiet = 0;
        while w < T::lit(2097152.0) {
            let b = a + sgn * w;
            let (lo, hi) = if toward_minus { (b, a) } else { (a, b) };
            let inc = gk_adaptive(|s| self.eval(s), lo, hi, tol * T::lit(1e-3), T::lit(1e-13), 2000).value;
            total += inc;
            // stop once the window has moved well past |t| and increments are negligible
            if inc <= tol * T::lit(1e-3) + total * T::lit(1e-14) && w >= T::lit(64.0) {
                quiet += 1;
                if quiet >= 2 {
                    break;
                }
            } else {
                quiet = 0;
            }
            a = b;
            w = w + w;
        }
        total
    }
}

/// Ψ(t) for an operator.
pub fn psi<T: Real>(op: &OperatorSpec<T>, t: T) -> T {
    op.coeffs.iter().map(|c| c.expr.deriv(t).abs()).sum()
}
