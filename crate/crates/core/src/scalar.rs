//! Scalar abstraction for the reward algebra.
//!
//! Reward math (embeddings, cosine similarity, weighted combination) is
//! generic over the floating-point type so it can run in `f32` where memory
//! matters and `f64` everywhere else. The rest of the engine uses the `f64`
//! aliases exported from the crate root.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable in embeddings and rewards.
///
/// Implemented for `f32` and `f64`. The bounds cover everything the reward
/// algebra needs: IEEE float operations, conversion from literals, and
/// cross-thread sharing.
pub trait Scalar: Float + FromPrimitive + Send + Sync + std::fmt::Debug + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_scalar<T: Scalar>() {}

    #[test]
    fn implemented_for_both_float_widths() {
        assert_scalar::<f32>();
        assert_scalar::<f64>();
    }
}
