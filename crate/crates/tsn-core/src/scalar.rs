//! Storage scalar abstraction.
//!
//! All tensor math is generic over the storage scalar: `f32` for checkpoint
//! fidelity, `f64` for gradient-check runs. Reductions always accumulate in
//! `f64` and round back to storage precision once at the end.

use std::fmt;

/// Floating-point storage type for tensors and checkpoints.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Round an extended-precision accumulator down to storage precision.
    fn of_f64(x: f64) -> Self;
    /// Widen to f64 for accumulation.
    fn as_f64(self) -> f64;
    /// Raw bit pattern, little-endian, used for fingerprinting.
    fn le_bits(self) -> Vec<u8>;
}

impl Scalar for f32 {
    #[inline]
    fn of_f64(x: f64) -> f32 {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    fn le_bits(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
}

impl Scalar for f64 {
    #[inline]
    fn of_f64(x: f64) -> f64 {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn le_bits(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
}
