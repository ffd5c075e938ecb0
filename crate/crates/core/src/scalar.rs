//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display, LowerExp};

use errorfunctions::{ComplexErrorFunctions, RealErrorFunctions};
use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Complex number over the working scalar.
pub type C<T> = Complex<T>;

/// Floating point scalar the library is generic over (`f32` or `f64`).
///
/// Special functions that have no portable generic implementation are
/// routed through `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Debug
    + Display
    + LowerExp
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    fn erfc(self) -> Self;

    /// Complementary error function on the complex plane.
    fn erfc_complex(z: C<Self>) -> C<Self>;

    /// Literal conversion; panics only for values unrepresentable in `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    #[inline]
    fn erfc(self) -> Self {
        RealErrorFunctions::erfc(self)
    }

    fn erfc_complex(z: C<Self>) -> C<Self> {
        ComplexErrorFunctions::erfc(z)
    }
}

impl Real for f32 {
    #[inline]
    fn erfc(self) -> Self {
        RealErrorFunctions::erfc(self as f64) as f32
    }

    fn erfc_complex(z: C<Self>) -> C<Self> {
        let w = ComplexErrorFunctions::erfc(Complex::new(z.re as f64, z.im as f64));
        Complex::new(w.re as f32, w.im as f32)
    }
}

/// Shorthand for a complex literal.
#[inline]
pub fn c<T: Real>(re: f64, im: f64) -> C<T> {
    Complex::new(T::lit(re), T::lit(im))
}

/// Lift a real into the complex plane.
#[inline]
pub fn cr<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

/// Principal square root with a non-negative real part.
#[inline]
pub fn principal_sqrt<T: Real>(z: C<T>) -> C<T> {
    let s = z.sqrt();
    if s.re < T::zero() {
        -s
    } else {
        s
    }
}

/// Values that can be integrated, interpolated and differenced.
pub trait FieldValue<T: Real>:
    Copy
    + Debug
    + Send
    + Sync
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<T, Output = Self>
{
    fn zero_value() -> Self;
    fn magnitude(&self) -> T;
}

impl<T: Real> FieldValue<T> for T {
    fn zero_value() -> Self {
        T::zero()
    }
    fn magnitude(&self) -> T {
        self.abs()
    }
}

impl<T: Real> FieldValue<T> for C<T> {
    fn zero_value() -> Self {
        Complex::new(T::zero(), T::zero())
    }
    fn magnitude(&self) -> T {
        self.norm()
    }
}
