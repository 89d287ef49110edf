//! Multi-dimensional FFTs on row-major cubes, one axis at a time.

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::scalar::Real;

/// Unnormalized in-place transform of an `n`-dimensional cube with `points` per axis.
/// `inverse` uses `e^{+i…}`.
pub fn fft_nd<T: Real>(data: &mut [Complex<T>], dim: usize, points: usize, inverse: bool) {
    assert_eq!(data.len(), points.pow(dim as u32));
    let mut planner = FftPlanner::<T>::new();
    let plan = if inverse { planner.plan_fft_inverse(points) } else { planner.plan_fft_forward(points) };
    for axis in 0..dim {
        // stride of this axis in row-major order
        let stride = points.pow((dim - 1 - axis) as u32);
        if stride == 1 {
            data.par_chunks_mut(points).for_each(|row| plan.process(row));
            continue;
        }
        let block = stride * points;
        data.par_chunks_mut(block).for_each(|blk| {
            let mut line = vec![Complex::new(T::zero(), T::zero()); points];
            for off in 0..stride {
                for i in 0..points {
                    line[i] = blk[off + i * stride];
                }
                plan.process(&mut line);
                for i in 0..points {
                    blk[off + i * stride] = line[i];
                }
            }
        });
    }
}

/// Signed FFT index of position `i` on an axis with `points` entries.
#[inline]
pub fn signed_index(i: usize, points: usize) -> i64 {
    if i < points / 2 {
        i as i64
    } else {
        i as i64 - points as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_2d() {
        let n = 8;
        let orig: Vec<Complex<f64>> = (0..n * n).map(|i| Complex::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut d = orig.clone();
        fft_nd(&mut d, 2, n, false);
        // DC term is the plain sum
        let s: Complex<f64> = orig.iter().sum();
        assert!((d[0] - s).norm() < 1e-12);
        fft_nd(&mut d, 2, n, true);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a / (n * n) as f64 - b).norm() < 1e-14);
        }
        assert_eq!(signed_index(5, 8), -3);
    }
}
