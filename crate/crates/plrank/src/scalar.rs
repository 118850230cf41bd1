//! Scalar abstraction for the numeric kernel.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the likelihood, model, and training code is
/// generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lift an `f64` constant into the scalar type.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant")
    }

    /// Lift a count into the scalar type.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable as float")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add_exp<R: Real>(a: R, b: R) -> R {
    if a == R::neg_infinity() {
        return b;
    }
    if b == R::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum_i exp(x_i))` over a slice, tolerating `-inf` entries.
pub fn log_sum_exp<R: Real>(xs: impl IntoIterator<Item = R>) -> R {
    let mut acc = LogSumAcc::new();
    for x in xs {
        acc.push(x);
    }
    acc.value()
}

/// Streaming log-sum-exp accumulator.
///
/// Keeps a running maximum and a rescaled sum so that terms can be pushed
/// one at a time without materializing the whole slice.
#[derive(Debug, Clone)]
pub struct LogSumAcc<R: Real> {
    max: R,
    sum: R,
}

impl<R: Real> Default for LogSumAcc<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> LogSumAcc<R> {
    pub fn new() -> Self {
        Self {
            max: R::neg_infinity(),
            sum: R::zero(),
        }
    }

    pub fn push(&mut self, x: R) {
        if x == R::neg_infinity() {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            if self.max > R::neg_infinity() {
                self.sum = self.sum * (self.max - x).exp() + R::one();
            } else {
                self.sum = R::one();
            }
            self.max = x;
        }
    }

    /// `log(sum exp(pushed))`; `-inf` if nothing was pushed.
    pub fn value(&self) -> R {
        if self.max == R::neg_infinity() {
            R::neg_infinity()
        } else {
            self.max + self.sum.ln()
        }
    }
}
