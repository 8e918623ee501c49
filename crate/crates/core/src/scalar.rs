//! Scalar abstraction shared by the geometry modules.
//!
//! Geometry code is written once against [`Real`] and instantiated for `f32`
//! and `f64`. The pipeline, renderer and evaluator run on `f64`.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::Debug;

/// Floating point type usable by the geometry kernels.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Absolute slack (meters) for closed containment and boundary tests.
    const GEOM_EPS: Self;
    /// Minimum box extent; degenerate dimensions are clamped to this.
    const MIN_EXTENT: Self;

    /// Converts an `f64` literal. Panics only if the value is unrepresentable,
    /// which cannot happen for finite literals in `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const GEOM_EPS: Self = 1e-4;
    const MIN_EXTENT: Self = 1e-6;
}

impl Real for f64 {
    const GEOM_EPS: Self = 1e-9;
    const MIN_EXTENT: Self = 1e-6;
}

/// Wraps an angle into `[-pi/2, pi/2)`, the canonical range for
/// 180°-symmetric box headings.
pub fn wrap_half_pi<T: Real>(angle: T) -> T {
    let pi = T::PI();
    let half = T::FRAC_PI_2();
    let mut a = (angle + half) % pi;
    if a < T::zero() {
        a = a + pi;
    }
    // `%` can return exactly `pi` after the correction above due to rounding.
    if a >= pi {
        a = a - pi;
    }
    a - half
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_pi<T: Real>(angle: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut a = (angle + T::PI()) % two_pi;
    if a < T::zero() {
        a = a + two_pi;
    }
    if a >= two_pi {
        a = a - two_pi;
    }
    a - T::PI()
}

/// Smallest absolute difference between two headings modulo pi.
pub fn heading_error<T: Real>(a: T, b: T) -> T {
    wrap_half_pi(a - b).abs()
}
