//! Finite weighted grids discretizing the price measure, the value measure,
//! and probability vectors over states.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{cast, Real};

/// Slack allowed when a weight vector is required to be a probability.
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least one point")]
    Empty,
    #[error("points and weights have different lengths ({points} vs {weights})")]
    LengthMismatch { points: usize, weights: usize },
    #[error("points must be strictly increasing (violation at index {0})")]
    NotIncreasing(usize),
    #[error("weights must be nonnegative and finite (violation at index {0})")]
    BadWeight(usize),
    #[error("weights sum to {sum}, expected 1 within {tol}")]
    NotProbability { sum: f64, tol: f64 },
}

/// Sorted support points with nonnegative weights.
///
/// A `Grid` stands in for a finite measure; when the weights sum to one it is
/// a probability measure. Quadrature against a grid is plain summation over
/// its nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<S> {
    points: Vec<S>,
    weights: Vec<S>,
}

impl<S: Real> Grid<S> {
    /// Builds a grid from raw points and weights, checking the invariants.
    pub fn new(points: Vec<S>, weights: Vec<S>) -> Result<Self, GridError> {
        if points.is_empty() {
            return Err(GridError::Empty);
        }
        if points.len() != weights.len() {
            return Err(GridError::LengthMismatch {
                points: points.len(),
                weights: weights.len(),
            });
        }
        for i in 1..points.len() {
            if !(points[i] > points[i - 1]) {
                return Err(GridError::NotIncreasing(i));
            }
        }
        for (i, w) in weights.iter().enumerate() {
            if !(*w >= S::zero()) || !w.is_finite() {
                return Err(GridError::BadWeight(i));
            }
        }
        Ok(Self { points, weights })
    }

    /// Builds a grid and additionally demands that the weights form a
    /// probability vector within [`PROBABILITY_TOL`].
    pub fn probability(points: Vec<S>, weights: Vec<S>) -> Result<Self, GridError> {
        let grid = Self::new(points, weights)?;
        let sum = grid.total_mass();
        if (sum - S::one()).abs() > cast(PROBABILITY_TOL) {
            return Err(GridError::NotProbability {
                sum: sum.to_f64().unwrap_or(f64::NAN),
                tol: PROBABILITY_TOL,
            });
        }
        Ok(grid)
    }

    /// Uniform probability grid over `[lo, hi]` with `n` cell midpoints.
    ///
    /// Midpoint placement keeps symmetric instances exactly symmetric and
    /// never puts a node on an interval endpoint.
    pub fn uniform_cells(lo: S, hi: S, n: usize) -> Result<Self, GridError> {
        if n == 0 {
            return Err(GridError::Empty);
        }
        if !(hi > lo) {
            return Err(GridError::NotIncreasing(0));
        }
        let step = (hi - lo) / cast::<S>(n as f64);
        let w = S::one() / cast::<S>(n as f64);
        let half = cast::<S>(0.5);
        let points = (0..n)
            .map(|k| lo + step * (cast::<S>(k as f64) + half))
            .collect();
        Self::new(points, vec![w; n])
    }

    /// Counting-measure grid: the given points, each with weight one.
    pub fn counting(points: Vec<S>) -> Result<Self, GridError> {
        let n = points.len();
        Self::new(points, vec![S::one(); n])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[S] {
        &self.points
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> S {
        self.points[i]
    }

    pub fn weight(&self, i: usize) -> S {
        self.weights[i]
    }

    pub fn total_mass(&self) -> S {
        self.weights.iter().copied().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.total_mass() - S::one()).abs() <= cast(PROBABILITY_TOL)
    }

    /// Mass of the set `{p : p < x}`.
    pub fn mass_below(&self, x: S) -> S {
        self.points
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| **p < x)
            .map(|(_, w)| *w)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (S, S)> + '_ {
        self.points
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}
