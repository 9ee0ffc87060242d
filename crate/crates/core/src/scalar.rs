//! Scalar abstraction.
//!
//! All numerical code is generic over [`Scalar`], which is satisfied by `f32`
//! and `f64`. Case data is stored as `f64` and converted when a study is
//! compiled.

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type usable by the solvers: `f32` or `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + Default {
    /// Lower bound applied to requested tolerances so that single precision
    /// runs do not chase unreachable residuals.
    fn tolerance(requested: f64) -> Self {
        let floor = <Self as approx::AbsDiffEq>::default_epsilon() * lit(1.0e3);
        lit::<Self>(requested).max(floor)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Scalar>(value: f64) -> T {
    nalgebra::convert(value)
}

/// Converts a working scalar back to `f64` for reporting.
#[inline]
pub fn to_f64<T: Scalar>(value: T) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

#[inline]
pub fn from_usize<T: Scalar>(n: usize) -> T {
    T::from_usize(n).unwrap_or_else(|| lit(n as f64))
}

/// `r·e^{jθ}`.
#[inline]
pub fn polar<T: Scalar>(r: T, theta: T) -> Complex<T> {
    Complex::new(r * theta.cos(), r * theta.sin())
}

#[inline]
pub fn cabs<T: Scalar>(z: Complex<T>) -> T {
    z.re.hypot(z.im)
}

#[inline]
pub fn carg<T: Scalar>(z: Complex<T>) -> T {
    z.im.atan2(z.re)
}

#[inline]
pub fn czero<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub fn j<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::one())
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle<T: Scalar>(angle: T) -> T {
    let two_pi = T::two_pi();
    let mut a = angle % two_pi;
    if a > T::pi() {
        a -= two_pi;
    } else if a <= -T::pi() {
        a += two_pi;
    }
    a
}

/// Returns the representative of `angle` (mod 2π) closest to `hint`.
pub fn unwrap_near<T: Scalar>(angle: T, hint: T) -> T {
    hint + wrap_angle(angle - hint)
}
