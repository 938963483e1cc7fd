//! Bernoulli utility functions over net trading gains.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{cast, Real};

#[derive(Debug, Error, PartialEq)]
pub enum UtilityError {
    #[error("risk-aversion coefficient must be positive, got {0}")]
    NonPositiveCoefficient(f64),
    #[error("piecewise-linear utility needs one more slope than knots")]
    SlopeCount,
    #[error("piecewise-linear slopes must be positive (violation at index {0})")]
    NonPositiveSlope(usize),
    #[error("piecewise-linear knots must be strictly increasing (violation at index {0})")]
    KnotsNotIncreasing(usize),
}

/// Increasing continuous utility with the normalization `u(0) = 0`.
///
/// The normalization makes "abstain implies zero payoff" exact; argmax sets
/// are unchanged by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec<S> {
    /// Risk neutral: `u(m) = m`.
    Linear,
    /// CARA family: `u(m) = (1 - exp(-a m)) / a` with `a > 0`. Concave,
    /// bounded above by `1/a`, unbounded below.
    Exponential { a: S },
    /// Continuous piecewise-linear function anchored at `u(0) = 0`.
    ///
    /// `slopes[i]` applies on the i-th interval of the knot partition of the
    /// real line, so `slopes.len() == knots.len() + 1`. All slopes positive.
    PiecewiseLinear { knots: Vec<S>, slopes: Vec<S> },
}

impl<S: Real> UtilitySpec<S> {
    pub fn linear() -> Self {
        UtilitySpec::Linear
    }

    pub fn exponential(a: S) -> Result<Self, UtilityError> {
        if !(a > S::zero()) {
            return Err(UtilityError::NonPositiveCoefficient(
                a.to_f64().unwrap_or(f64::NAN),
            ));
        }
        Ok(UtilitySpec::Exponential { a })
    }

    pub fn piecewise_linear(knots: Vec<S>, slopes: Vec<S>) -> Result<Self, UtilityError> {
        if slopes.len() != knots.len() + 1 {
            return Err(UtilityError::SlopeCount);
        }
        for i in 1..knots.len() {
            if !(knots[i] > knots[i - 1]) {
                return Err(UtilityError::KnotsNotIncreasing(i));
            }
        }
        for (i, s) in slopes.iter().enumerate() {
            if !(*s > S::zero()) {
                return Err(UtilityError::NonPositiveSlope(i));
            }
        }
        Ok(UtilitySpec::PiecewiseLinear { knots, slopes })
    }

    /// Evaluates the utility of a net gain.
    pub fn eval(&self, m: S) -> S {
        match self {
            UtilitySpec::Linear => m,
            UtilitySpec::Exponential { a } => (S::one() - (-*a * m).exp()) / *a,
            UtilitySpec::PiecewiseLinear { knots, slopes } => {
                // Integrate the slope field from 0 to m.
                let zero = S::zero();
                let mut total = zero;
                let (lo, hi) = if m >= zero { (zero, m) } else { (m, zero) };
                let sign = if m >= zero { S::one() } else { -S::one() };
                for (i, slope) in slopes.iter().enumerate() {
                    let left = if i == 0 { S::neg_infinity() } else { knots[i - 1] };
                    let right = if i == knots.len() {
                        S::infinity()
                    } else {
                        knots[i]
                    };
                    let a = lo.max(left);
                    let b = hi.min(right);
                    if b > a {
                        total = total + *slope * (b - a);
                    }
                }
                sign * total
            }
        }
    }

    /// True when the function is weakly concave everywhere.
    pub fn is_concave(&self) -> bool {
        match self {
            UtilitySpec::Linear | UtilitySpec::Exponential { .. } => true,
            UtilitySpec::PiecewiseLinear { slopes, .. } => {
                slopes.windows(2).all(|w| w[1] <= w[0])
            }
        }
    }
}
