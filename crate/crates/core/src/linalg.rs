//! Small dense matrices and the companion-matrix eigenvalue solver.

use num_complex::Complex;
use num_traits::Num;
use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

use crate::scalar::{Field, Real};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<E> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<E>,
}

impl<E> Index<(usize, usize)> for Mat<E> {
    type Output = E;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &E {
        &self.data[i * self.cols + j]
    }
}

impl<E> IndexMut<(usize, usize)> for Mat<E> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut E {
        &mut self.data[i * self.cols + j]
    }
}

impl<E: Copy + Num> Mat<E> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![E::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = E::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> E) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn matmul(&self, other: &Mat<E>) -> Mat<E> {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &Mat<E>) -> Mat<E> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a - *b).collect(),
        }
    }

    pub fn add(&self, other: &Mat<E>) -> Mat<E> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect(),
        }
    }

    pub fn scale(&self, s: E) -> Mat<E> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| *a * s).collect() }
    }

    pub fn transpose(&self) -> Mat<E> {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map<F: Copy + Num>(&self, f: impl Fn(E) -> F) -> Mat<F> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| f(*a)).collect() }
    }

    pub fn matvec(&self, v: &[E]) -> Vec<E> {
        (0..self.rows)
            .map(|i| (0..self.cols).fold(E::zero(), |acc, j| acc + self[(i, j)] * v[j]))
            .collect()
    }
}

impl<E> Mat<E> {
    /// Frobenius norm; an upper bound for the spectral norm.
    pub fn norm_fro<T: Real>(&self) -> T
    where
        E: Field<T>,
    {
        self.data.iter().map(|e| e.modulus() * e.modulus()).sum::<T>().sqrt()
    }

    pub fn max_abs<T: Real>(&self) -> T
    where
        E: Field<T>,
    {
        self.data.iter().fold(T::zero(), |m, e| m.max(e.modulus()))
    }
}

impl<T: Real> Mat<T> {
    pub fn to_complex(&self) -> Mat<Complex<T>> {
        self.map(|x| Complex::new(x, T::zero()))
    }
}

/// Scale rows/columns of a square matrix by powers of two to reduce its norm
/// without changing its eigenvalues.
fn balance<T: Real>(a: &mut Mat<T>) {
    let n = a.rows;
    let radix = T::lit(2.0);
    let sqrdx = radix * radix;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = T::zero();
            let mut c = T::zero();
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != T::zero() && r != T::zero() {
                let mut g = r / radix;
                let mut f = T::one();
                let s = c + r;
                while c < g {
                    f *= radix;
                    c *= sqrdx;
                }
                g = r * radix;
                while c > g {
                    f /= radix;
                    c /= sqrdx;
                }
                if (c + r) / f < T::lit(0.95) * s {
                    done = false;
                    let g = T::one() / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
}

fn sign<T: Real>(a: T, b: T) -> T {
    if b >= T::zero() {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of an upper Hessenberg matrix by the shifted Francis QR iteration.
/// Returns `None` if the iteration fails to converge.
pub fn hessenberg_eigenvalues<T: Real>(mut a: Mat<T>) -> Option<Vec<Complex<T>>> {
    let n = a.rows as isize;
    let mut wr = vec![T::zero(); n as usize];
    let mut wi = vec![T::zero(); n as usize];
    macro_rules! at {
        ($i:expr, $j:expr) => {
            a[(($i) as usize, ($j) as usize)]
        };
    }
    let mut anorm = T::zero();
    for i in 0..n {
        for j in (i - 1).max(0)..n {
            anorm += at!(i, j).abs();
        }
    }
    let mut nn = n - 1;
    let mut t = T::zero();
    let quarter3 = T::lit(0.75);
    let c4375 = T::lit(-0.4375);
    let half = T::lit(0.5);
    while nn >= 0 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l > 0 {
                let mut s = at!(l - 1, l - 1).abs() + at!(l, l).abs();
                if s == T::zero() {
                    s = anorm;
                }
                if at!(l, l - 1).abs() + s == s {
                    at!(l, l - 1) = T::zero();
                    break;
                }
                l -= 1;
            }
            let mut x = at!(nn, nn);
            if l == nn {
                wr[nn as usize] = x + t;
                wi[nn as usize] = T::zero();
                nn -= 1;
            } else {
                let mut y = at!(nn - 1, nn - 1);
                let mut w = at!(nn, nn - 1) * at!(nn - 1, nn);
                if l == nn - 1 {
                    let p = half * (y - x);
                    let q = p * p + w;
                    let mut z = q.abs().sqrt();
                    x += t;
                    if q >= T::zero() {
                        z = p + sign(z, p);
                        wr[(nn - 1) as usize] = x + z;
                        wr[nn as usize] = x + z;
                        if z != T::zero() {
                            wr[nn as usize] = x - w / z;
                        }
                        wi[(nn - 1) as usize] = T::zero();
                        wi[nn as usize] = T::zero();
                    } else {
                        wr[(nn - 1) as usize] = x + p;
                        wr[nn as usize] = x + p;
                        wi[(nn - 1) as usize] = -z;
                        wi[nn as usize] = z;
                    }
                    nn -= 2;
                } else {
                    if its == 60 {
                        return None;
                    }
                    if its == 10 || its == 20 {
                        t += x;
                        for i in 0..=nn {
                            at!(i, i) -= x;
                        }
                        let s = at!(nn, nn - 1).abs() + at!(nn - 1, nn - 2).abs();
                        x = quarter3 * s;
                        y = x;
                        w = c4375 * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    let (mut p, mut q, mut r);
                    loop {
                        let z = at!(m, m);
                        r = x - z;
                        let s = y - z;
                        p = (r * s - w) / at!(m + 1, m) + at!(m, m + 1);
                        q = at!(m + 1, m + 1) - z - r - s;
                        r = at!(m + 2, m + 1);
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = at!(m, m - 1).abs() * (q.abs() + r.abs());
                        let v = p.abs() * (at!(m - 1, m - 1).abs() + z.abs() + at!(m + 1, m + 1).abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m..nn - 1 {
                        at!(i + 2, i) = T::zero();
                        if i != m {
                            at!(i + 2, i - 1) = T::zero();
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = at!(k, k - 1);
                            q = at!(k + 1, k - 1);
                            r = T::zero();
                            if k + 1 != nn {
                                r = at!(k + 2, k - 1);
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != T::zero() {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != T::zero() {
                            if k == m {
                                if l != m {
                                    at!(k, k - 1) = -at!(k, k - 1);
                                }
                            } else {
                                at!(k, k - 1) = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            let z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                let mut p = at!(k, j) + q * at!(k + 1, j);
                                if k + 1 != nn {
                                    p += r * at!(k + 2, j);
                                    at!(k + 2, j) -= p * z;
                                }
                                at!(k + 1, j) -= p * y;
                                at!(k, j) -= p * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                let mut p = x * at!(i, k) + y * at!(i, k + 1);
                                if k + 1 != nn {
                                    p += z * at!(i, k + 2);
                                    at!(i, k + 2) -= p * r;
                                }
                                at!(i, k + 1) -= p * q;
                                at!(i, k) -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if !(nn >= 0 && l < nn - 1) {
                break;
            }
        }
    }
    Some(wr.into_iter().zip(wi).map(|(r, i)| Complex::new(r, i)).collect())
}

/// Roots of the monic polynomial `x^m + c[0] x^{m-1} + … + c[m-1]` as eigenvalues
/// of the balanced companion matrix.
pub fn monic_roots<T: Real>(c: &[T]) -> Option<Vec<Complex<T>>> {
    let m = c.len();
    if m == 0 {
        return Some(Vec::new());
    }
    if m == 1 {
        return Some(vec![Complex::new(-c[0], T::zero())]);
    }
    let mut a = Mat::zeros(m, m);
    for j in 0..m {
        a[(0, j)] = -c[j];
    }
    for i in 1..m {
        a[(i, i - 1)] = T::one();
    }
    balance(&mut a);
    hessenberg_eigenvalues(a)
}

/// Horner evaluation of the monic polynomial and its derivative at `x`.
pub fn monic_eval<T: Real>(c: &[T], x: T) -> (T, T) {
    let mut p = T::one();
    let mut dp = T::zero();
    for &ck in c {
        dp = dp * x + p;
        p = p * x + ck;
    }
    (p, dp)
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve<T: Real>(a: &Mat<T>, b: &[T]) -> Option<Vec<T>> {
    let n = a.rows;
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap())?;
        if m[(piv, col)] == T::zero() {
            return None;
        }
        if piv != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            x.swap(col, piv);
        }
        for i in col + 1..n {
            let f = m[(i, col)] / m[(col, col)];
            if f != T::zero() {
                for j in col..n {
                    let v = m[(col, j)];
                    m[(i, j)] -= f * v;
                }
                let v = x[col];
                x[i] -= f * v;
            }
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Some(x)
}

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations (small sizes only).
pub fn symmetric_eigenvalues<T: Real>(a: &Mat<T>) -> Vec<T> {
    let n = a.rows;
    let mut m = a.clone();
    for _sweep in 0..50 {
        let mut off = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
        }
        if off <= T::epsilon() * T::epsilon() * m.norm_fro::<T>().powi(2) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)] == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * m[(p, q)]);
                let t = sign(T::one(), theta) / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}
