//! Scalar abstraction for score and metric arithmetic.
//!
//! Pixel geometry (tile grids, RLE masks, raster samples) is integer
//! throughout; everything that carries a confidence score, a fractional
//! box, or a metric value is generic over [`Scalar`] so the whole scoring
//! path runs in f32 or f64. The crate root exports f64 aliases, which is
//! what the CLI uses.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar: f32 or f64.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {
    /// Conversion from an f64 constant or RNG draw (lossy for f32).
    fn real(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to any float scalar")
    }

    /// Conversion from an unsigned pixel or area count.
    fn from_count(v: u64) -> Self {
        <Self as FromPrimitive>::from_u64(v).expect("u64 converts to any float scalar")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float scalar converts to f64")
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}
