use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the whole library is generic over.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + rustfft::FftNum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(k: usize) -> Self {
        Self::from_usize(k).expect("index representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Values that can be accumulated by quadrature and ODE code: reals and complex numbers.
pub trait Field<T: Real>:
    Copy
    + Debug
    + Send
    + Sync
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<T, Output = Self>
    + std::ops::AddAssign
    + 'static
{
    fn zero() -> Self;
    fn modulus(&self) -> T;
}

impl<T: Real> Field<T> for T {
    #[inline]
    fn zero() -> Self {
        T::zero()
    }
    #[inline]
    fn modulus(&self) -> T {
        self.abs()
    }
}

impl<T: Real> Field<T> for Complex<T> {
    #[inline]
    fn zero() -> Self {
        Complex::new(T::zero(), T::zero())
    }
    #[inline]
    fn modulus(&self) -> T {
        self.norm()
    }
}

/// `e^{i x}`.
#[inline]
pub fn cis<T: Real>(x: T) -> Complex<T> {
    let (s, c) = x.sin_cos();
    Complex::new(c, s)
}

#[inline]
pub fn c0<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub fn re<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

#[inline]
pub fn imag_unit<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::one())
}

pub fn norm2<T: Real>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

pub fn cnorm2<T: Real>(v: &[Complex<T>]) -> T {
    v.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt()
}
