//! Scalar abstractions shared by the numeric kernels.
//!
//! Fill propagation and the utility plateau only need ordered field
//! arithmetic, so they are written against [`Scalar`] and run unchanged on
//! `f32`, `f64` and exact rationals. The QP backend needs square roots and
//! is written against [`num_traits::Float`] instead.

use std::fmt::Debug;

use num_traits::{Num, Signed};

/// Ordered field element usable by the fill and utility kernels.
pub trait Scalar: Num + Signed + PartialOrd + Copy + Debug + Send + Sync {
    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    #[inline]
    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    /// Clamp into `[lo, hi]`; `lo <= hi` is assumed.
    #[inline]
    fn clamp_to(self, lo: Self, hi: Self) -> Self {
        self.max_of(lo).min_of(hi)
    }

    /// `max(self, 0)`
    #[inline]
    fn positive_part(self) -> Self {
        self.max_of(Self::zero())
    }
}

impl<T> Scalar for T where T: Num + Signed + PartialOrd + Copy + Debug + Send + Sync {}
