//! One-dimensional quadrature: adaptive Gauss–Kronrod, adaptive Simpson,
//! composite Gauss–Legendre panels.

use crate::scalar::{Field, Real};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone)]
pub struct QuadResult<V, T> {
    pub value: V,
    pub error: T,
    pub converged: bool,
    pub evaluations: usize,
}

struct Segment<V, T> {
    a: T,
    b: T,
    value: Vec<V>,
    error: T,
}

fn gk15<T: Real, V: Field<T>>(f: &mut impl FnMut(T) -> Vec<V>, a: T, b: T) -> Segment<V, T> {
    let half = T::lit(0.5);
    let c = half * (a + b);
    let h = half * (b - a);
    let fc = f(c);
    let d = fc.len();
    let mut k: Vec<V> = fc.iter().map(|v| *v * T::lit(WGK[7])).collect();
    let mut g: Vec<V> = fc.iter().map(|v| *v * T::lit(WG[3])).collect();
    for i in 0..7 {
        let x = h * T::lit(XGK[i]);
        let f1 = f(c - x);
        let f2 = f(c + x);
        let wk = T::lit(WGK[i]);
        for r in 0..d {
            let s = f1[r] + f2[r];
            k[r] += s * wk;
            if i % 2 == 1 {
                g[r] += s * T::lit(WG[i / 2]);
            }
        }
    }
    let mut err = T::zero();
    for r in 0..d {
        k[r] = k[r] * h;
        g[r] = g[r] * h;
        err = err.max((k[r] - g[r]).modulus());
    }
    Segment { a, b, value: k, error: err }
}

/// Globally adaptive 15-point Gauss–Kronrod for vector-valued integrands.
/// The error measure is the maximum over components.
pub fn gk_adaptive_vec<T: Real, V: Field<T>>(
    mut f: impl FnMut(T) -> Vec<V>,
    a: T,
    b: T,
    abs_tol: T,
    rel_tol: T,
    max_segments: usize,
) -> QuadResult<Vec<V>, T> {
    let mut segs = vec![gk15(&mut f, a, b)];
    let mut evals = 15;
    loop {
        let d = segs[0].value.len();
        let mut total = vec![V::zero(); d];
        let mut err = T::zero();
        for s in &segs {
            for r in 0..d {
                total[r] += s.value[r];
            }
            err += s.error;
        }
        let scale = total.iter().fold(T::zero(), |m, v| m.max(v.modulus()));
        let target = abs_tol.max(rel_tol * scale);
        if err <= target || segs.len() >= max_segments {
            return QuadResult { value: total, error: err, converged: err <= target, evaluations: evals };
        }
        let (worst, _) = segs
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(bi, be), (i, s)| if s.error > be { (i, s.error) } else { (bi, be) });
        let s = segs.swap_remove(worst);
        let mid = T::lit(0.5) * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            // interval exhausted at machine resolution
            segs.push(Segment { error: T::zero(), ..s });
            continue;
        }
        segs.push(gk15(&mut f, s.a, mid));
        segs.push(gk15(&mut f, mid, s.b));
        evals += 30;
    }
}

pub fn gk_adaptive<T: Real, V: Field<T>>(
    mut f: impl FnMut(T) -> V,
    a: T,
    b: T,
    abs_tol: T,
    rel_tol: T,
    max_segments: usize,
) -> QuadResult<V, T> {
    let r = gk_adaptive_vec(|x| vec![f(x)], a, b, abs_tol, rel_tol, max_segments);
    QuadResult { value: r.value[0], error: r.error, converged: r.converged, evaluations: r.evaluations }
}

/// Adaptive Simpson with Richardson correction, vector-valued.
pub fn adaptive_simpson_vec<T: Real>(
    mut f: impl FnMut(T) -> Vec<T>,
    a: T,
    b: T,
    tol: T,
    max_depth: usize,
) -> QuadResult<Vec<T>, T> {
    let fa = f(a);
    let fb = f(b);
    let m = T::lit(0.5) * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, &fa, &fm, &fb);
    let mut evals = 3;
    let mut ok = true;
    let mut err = T::zero();
    let value = simpson_rec(&mut f, a, b, &fa, &fm, &fb, &whole, tol, max_depth, &mut evals, &mut ok, &mut err);
    QuadResult { value, error: err, converged: ok, evaluations: evals }
}

fn simpson<T: Real>(a: T, b: T, fa: &[T], fm: &[T], fb: &[T]) -> Vec<T> {
    let w = (b - a) / T::lit(6.0);
    (0..fa.len()).map(|r| w * (fa[r] + T::lit(4.0) * fm[r] + fb[r])).collect()
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<T: Real>(
    f: &mut impl FnMut(T) -> Vec<T>,
    a: T,
    b: T,
    fa: &[T],
    fm: &[T],
    fb: &[T],
    whole: &[T],
    tol: T,
    depth: usize,
    evals: &mut usize,
    ok: &mut bool,
    err: &mut T,
) -> Vec<T> {
    let half = T::lit(0.5);
    let m = half * (a + b);
    let lm = half * (a + m);
    let rm = half * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    *evals += 2;
    let left = simpson(a, m, fa, &flm, fm);
    let right = simpson(m, b, fm, &frm, fb);
    let mut delta = T::zero();
    for r in 0..whole.len() {
        delta = delta.max((left[r] + right[r] - whole[r]).abs());
    }
    if delta <= T::lit(15.0) * tol || depth == 0 || m <= a || m >= b {
        if depth == 0 && delta > T::lit(15.0) * tol {
            *ok = false;
        }
        *err += delta / T::lit(15.0);
        return (0..whole.len())
            .map(|r| left[r] + right[r] + (left[r] + right[r] - whole[r]) / T::lit(15.0))
            .collect();
    }
    let l = simpson_rec(f, a, m, fa, &flm, fm, &left, half * tol, depth - 1, evals, ok, err);
    let r = simpson_rec(f, m, b, fm, &frm, fb, &right, half * tol, depth - 1, evals, ok, err);
    l.iter().zip(r).map(|(x, y)| *x + y).collect()
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    let mut x = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            dp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / dp;
            if (z - z1).abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = T::lit(-z);
        x[n - 1 - i] = T::lit(z);
        w[i] = T::lit(wi);
        w[n - 1 - i] = T::lit(wi);
    }
    (x, w)
}

/// Precomputed Gauss–Legendre rule applied on panels.
#[derive(Debug, Clone)]
pub struct GaussRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> GaussRule<T> {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        GaussRule { nodes, weights }
    }

    /// Integral over [a, b] with the rule applied on `panels` equal panels.
    pub fn composite<V: Field<T>>(&self, mut f: impl FnMut(T) -> V, a: T, b: T, panels: usize) -> V {
        let h = (b - a) / T::from_usize_lossy(panels);
        let half = T::lit(0.5) * h;
        let mut acc = V::zero();
        for p in 0..panels {
            let c = a + h * (T::from_usize_lossy(p) + T::lit(0.5));
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                acc += f(c + half * *x) * (*w * half);
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex;

    #[test]
    fn gk_polynomial_and_peak() {
        let r = gk_adaptive(|x: f64| x.powi(5), 0.0, 2.0, 1e-14, 1e-14, 100);
        assert!((r.value - 64.0 / 6.0).abs() < 1e-12);
        let r = gk_adaptive(|x: f64| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10, 1e-12, 500);
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((r.value - exact).abs() < 1e-8 * exact, "{} vs {exact}", r.value);
        assert!(r.converged);
    }

    #[test]
    fn gk_complex() {
        let r = gk_adaptive(|x: f64| Complex::new(0.0, x).exp(), 0.0, std::f64::consts::PI, 1e-13, 1e-13, 100);
        assert!((r.value - Complex::new(0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn simpson_and_gauss() {
        let r = adaptive_simpson_vec(|x: f64| vec![x.exp(), x.cos()], 0.0, 1.0, 1e-12, 40);
        assert!((r.value[0] - (1f64.exp() - 1.0)).abs() < 1e-11);
        assert!((r.value[1] - 1f64.sin()).abs() < 1e-11);
        let g = GaussRule::<f64>::new(16);
        let v: f64 = g.composite(|x| x.powi(31), 0.0, 1.0, 1);
        assert!((v - 1.0 / 32.0).abs() < 1e-15);
        let s: f64 = g.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }
}
