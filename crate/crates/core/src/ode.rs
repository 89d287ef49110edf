//! Dormand–Prince 5(4) integrator for complex linear systems, with exact stops
//! at requested output times and cubic Hermite dense output.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions<T> {
    pub rtol: T,
    pub atol: T,
    pub h_max: T,
    pub max_steps: usize,
}

impl<T: Real> OdeOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        OdeOptions { rtol: tol, atol: tol * T::lit(1e-2), h_max: T::infinity(), max_steps: 2_000_000 }
    }
}

/// Accepted steps `(t, y, y')`, usable for Hermite interpolation.
#[derive(Debug, Clone, Default)]
pub struct DenseOutput<T> {
    pub t: Vec<T>,
    pub y: Vec<Vec<Complex<T>>>,
    pub f: Vec<Vec<Complex<T>>>,
}

impl<T: Real> DenseOutput<T> {
    /// Cubic Hermite interpolant. Times outside the covered range clamp to the ends.
    pub fn eval(&self, t: T) -> Vec<Complex<T>> {
        let n = self.t.len();
        let forward = n < 2 || self.t[n - 1] >= self.t[0];
        let key = |x: T| if forward { x } else { -x };
        let tk = key(t);
        if tk <= key(self.t[0]) {
            return self.y[0].clone();
        }
        if tk >= key(self.t[n - 1]) {
            return self.y[n - 1].clone();
        }
        let i = self.t.partition_point(|&s| key(s) <= tk).saturating_sub(1).min(n - 2);
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        (0..self.y[i].len())
            .map(|r| {
                self.y[i][r] * h00 + self.f[i][r] * (h10 * h) + self.y[i + 1][r] * h01 + self.f[i + 1][r] * (h11 * h)
            })
            .collect()
    }

    pub fn t_end(&self) -> T {
        *self.t.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct OdeSolution<T> {
    pub y: Vec<Complex<T>>,
    /// States at the requested stop times, in the order given.
    pub at_stops: Vec<Vec<Complex<T>>>,
    pub dense: Option<DenseOutput<T>>,
    pub steps: usize,
    pub rejected: usize,
}

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// `stops` must be ordered from `t0` towards `t1`; the integrator lands on each exactly.
pub fn integrate<T: Real>(
    mut f: impl FnMut(T, &[Complex<T>], &mut [Complex<T>]),
    t0: T,
    y0: &[Complex<T>],
    t1: T,
    stops: &[T],
    opts: &OdeOptions<T>,
    record: bool,
) -> Result<OdeSolution<T>> {
    let d = y0.len();
    let dir = if t1 >= t0 { T::one() } else { -T::one() };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<Complex<T>>> = vec![vec![Complex::new(T::zero(), T::zero()); d]; 7];
    f(t, &y, &mut k[0]);
    let mut dense = if record {
        Some(DenseOutput { t: vec![t], y: vec![y.clone()], f: vec![k[0].clone()] })
    } else {
        None
    };
    let mut at_stops = Vec::with_capacity(stops.len());
    let mut stop_idx = 0;
    while stop_idx < stops.len() && (stops[stop_idx] - t0) * dir <= T::zero() {
        at_stops.push(y.clone());
        stop_idx += 1;
    }
    let span = (t1 - t0).abs();
    if span == T::zero() {
        while stop_idx < stops.len() {
            at_stops.push(y.clone());
            stop_idx += 1;
        }
        return Ok(OdeSolution { y, at_stops, dense, steps: 0, rejected: 0 });
    }

    // initial step from the derivative scale
    let ynorm = y.iter().map(|z| z.norm()).fold(T::zero(), T::max);
    let fnorm = k[0].iter().map(|z| z.norm()).fold(T::zero(), T::max);
    let scale = opts.atol + opts.rtol * ynorm;
    let mut h = if fnorm > T::zero() {
        (T::lit(0.01) * scale / fnorm).powf(T::lit(0.2)) * T::lit(0.1)
    } else {
        span * T::lit(0.01)
    };
    h = h.min(span).min(opts.h_max).max(span * T::lit(1e-12));

    let mut ytmp = vec![Complex::new(T::zero(), T::zero()); d];
    let mut ynew = vec![Complex::new(T::zero(), T::zero()); d];
    let mut steps = 0;
    let mut rejected = 0;
    let eps = T::epsilon();
    loop {
        if (t1 - t) * dir <= T::zero() {
            break;
        }
        if steps + rejected > opts.max_steps {
            return Err(Error::StepSizeCollapse { t: t.f64() });
        }
        let target = if stop_idx < stops.len() { stops[stop_idx] } else { t1 };
        let mut hh = h.min(opts.h_max);
        let remaining = (target - t).abs();
        let mut hits = false;
        if hh >= remaining {
            hh = remaining;
            hits = true;
        }
        if hh <= T::lit(16.0) * eps * t.abs().max(T::one()) {
            if hits {
                // negligible distance left: snap
                t = target;
                if stop_idx < stops.len() && target == stops[stop_idx] {
                    at_stops.push(y.clone());
                    stop_idx += 1;
                }
                continue;
            }
            return Err(Error::StepSizeCollapse { t: t.f64() });
        }
        let hs = hh * dir;
        for s in 0..6 {
            for r in 0..d {
                let mut acc = y[r];
                for (q, kq) in k.iter().enumerate().take(s + 1) {
                    let a = A[s][q];
                    if a != 0.0 {
                        acc = acc + kq[r] * (hs * T::lit(a));
                    }
                }
                if s == 5 {
                    ynew[r] = acc;
                } else {
                    ytmp[r] = acc;
                }
            }
            let ts = if s == 5 { t + hs } else { t + hs * T::lit(C[s]) };
            let (_, tail) = k.split_at_mut(s + 1);
            if s == 5 {
                f(ts, &ynew, &mut tail[0]);
            } else {
                f(ts, &ytmp, &mut tail[0]);
            }
        }
        // error estimate
        let mut err = T::zero();
        for r in 0..d {
            let mut e = Complex::new(T::zero(), T::zero());
            for (q, kq) in k.iter().enumerate() {
                if E[q] != 0.0 {
                    e = e + kq[r] * T::lit(E[q]);
                }
            }
            let e = e * hs;
            let sc = opts.atol + opts.rtol * y[r].norm().max(ynew[r].norm());
            let ratio = e.norm() / sc;
            err += ratio * ratio;
        }
        err = (err / T::from_usize_lossy(d.max(1))).sqrt();
        if err <= T::one() {
            steps += 1;
            t = if hits { target } else { t + hs };
            std::mem::swap(&mut y, &mut ynew);
            let last = k.pop().unwrap();
            k.insert(0, last); // FSAL: k7 becomes k1
            if let Some(dn) = dense.as_mut() {
                dn.t.push(t);
                dn.y.push(y.clone());
                dn.f.push(k[0].clone());
            }
            if hits && stop_idx < stops.len() && target == stops[stop_idx] {
                at_stops.push(y.clone());
                stop_idx += 1;
            }
            let fac = if err == T::zero() { T::lit(5.0) } else { T::lit(0.9) * err.powf(T::lit(-0.2)) };
            let grown = hh * fac.min(T::lit(5.0)).max(T::lit(0.2));
            // keep the previous size if we only shortened the step to hit a stop
            h = if hits { grown.max(h) } else { grown };
        } else {
            rejected += 1;
            if !err.is_finite() {
                h = hh * T::lit(0.1);
            } else {
                h = hh * (T::lit(0.9) * err.powf(T::lit(-0.2))).max(T::lit(0.1));
            }
        }
    }
    while stop_idx < stops.len() {
        at_stops.push(y.clone());
        stop_idx += 1;
    }
    Ok(OdeSolution { y, at_stops, dense, steps, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator() {
        // y'' = -y as (y, y')
        let rhs = |_t: f64, y: &[Complex<f64>], dy: &mut [Complex<f64>]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let y0 = [Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)];
        let sol = integrate(rhs, 0.0, &y0, 10.0, &[1.0, 5.0], &OdeOptions::with_tol(1e-11), true).unwrap();
        assert!((sol.y[0].re - 10f64.cos()).abs() < 1e-9);
        assert!((sol.at_stops[0][0].re - 1f64.cos()).abs() < 1e-10);
        assert!((sol.at_stops[1][0].re - 5f64.cos()).abs() < 1e-10);
        let d = sol.dense.unwrap();
        let mid = d.eval(3.3);
        assert!((mid[0].re - 3.3f64.cos()).abs() < 1e-6);
    }

    #[test]
    fn backward_complex_rotation() {
        // y' = i y, integrate to -3
        let rhs = |_t: f64, y: &[Complex<f64>], dy: &mut [Complex<f64>]| dy[0] = Complex::new(0.0, 1.0) * y[0];
        let sol =
            integrate(rhs, 0.0, &[Complex::new(1.0, 0.0)], -3.0, &[], &OdeOptions::with_tol(1e-12), true).unwrap();
        let want = Complex::new(0.0, -3.0).exp();
        assert!((sol.y[0] - want).norm() < 1e-10);
        let d = sol.dense.unwrap();
        assert!((d.eval(-1.5)[0] - Complex::new(0.0, -1.5).exp()).norm() < 1e-6);
    }
}
