//! The market environment: price/value grids, the per-state density family,
//! and the integrability diagnostic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError};
use crate::num::{cast, Real};
use crate::utility::UtilitySpec;

/// Per-state normalization tolerance after construction.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// How far a user-tabulated density may be from mass one before it is
/// rejected instead of renormalized.
pub const RENORMALIZATION_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("action bounds must satisfy b < 0 < t, got ({0}, {1})")]
    BadActionBounds(f64, f64),
    #[error("state {state}: density sums to {sum}, not renormalizable (must be within {slack} of 1, or positive for parametric families)")]
    NonNormalizable { state: usize, sum: f64, slack: f64 },
    #[error("density tensor has wrong shape at state {state}: expected {expected_prices}x{expected_values}")]
    DensityShape {
        state: usize,
        expected_prices: usize,
        expected_values: usize,
    },
    #[error("density entries must be nonnegative and finite (state {state}, price {price}, value {value})")]
    NegativeDensity {
        state: usize,
        price: usize,
        value: usize,
    },
    #[error("model needs at least one state")]
    NoStates,
    #[error("integrability bound has wrong shape: expected {expected_prices}x{expected_values}")]
    BoundShape {
        expected_prices: usize,
        expected_values: usize,
    },
    #[error("covariance matrix must be symmetric positive definite")]
    BadCovariance,
    #[error("value pmf must have one entry per value node and nonnegative mass")]
    BadValuePmf,
}

/// Discretized joint model of prices and final values.
///
/// `density` plays the role of the family `h`: for every state `y`,
/// `sum_p sum_x pi_p xi_x h(p,x,y) = 1` within [`NORMALIZATION_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFamily<S> {
    price_grid: Grid<S>,
    /// Settlement price per node when it differs from the grid coordinate.
    /// Refinement splits a price atom into several order-addressable
    /// sub-nodes that still settle at the parent's exact price.
    trade_prices: Option<Vec<S>>,
    value_grid: Grid<S>,
    state_count: usize,
    /// Flat tensor, indexed `[(p * states + y) * values + x]`.
    density: Vec<S>,
    action_bounds: (S, S),
    integrability_bound: Option<Vec<Vec<S>>>,
}

impl<S: Real> ModelFamily<S> {
    pub fn price_grid(&self) -> &Grid<S> {
        &self.price_grid
    }

    pub fn value_grid(&self) -> &Grid<S> {
        &self.value_grid
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_bounds(&self) -> (S, S) {
        self.action_bounds
    }

    pub fn integrability_bound(&self) -> Option<&Vec<Vec<S>>> {
        self.integrability_bound.as_ref()
    }

    /// Price at which trades on node `p` settle.
    #[inline]
    pub fn trade_price(&self, p: usize) -> S {
        match &self.trade_prices {
            Some(v) => v[p],
            None => self.price_grid.point(p),
        }
    }

    #[inline]
    pub fn h(&self, p: usize, x: usize, y: usize) -> S {
        self.density[(p * self.state_count + y) * self.value_grid.len() + x]
    }

    /// Largest per-state deviation of the normalization integral from one.
    pub fn max_normalization_error(&self) -> S {
        let mut worst = S::zero();
        for y in 0..self.state_count {
            let mut total = S::zero();
            for (p, (_, wp)) in self.price_grid.iter().enumerate() {
                let mut inner = S::zero();
                for (x, (_, wx)) in self.value_grid.iter().enumerate() {
                    inner = inner + wx * self.h(p, x, y);
                }
                total = total + wp * inner;
            }
            worst = worst.max((total - S::one()).abs());
        }
        worst
    }

    /// `sum_x xi_x h(p,x,y)`: the density's conditional mass at a price node.
    pub fn conditional_mass(&self, p: usize, y: usize) -> S {
        (0..self.value_grid.len())
            .map(|x| self.value_grid.weight(x) * self.h(p, x, y))
            .sum()
    }

    /// `sum_x xi_x x h(p,x,y)`: unnormalized conditional value mean.
    pub fn conditional_value_sum(&self, p: usize, y: usize) -> S {
        (0..self.value_grid.len())
            .map(|x| self.value_grid.weight(x) * self.value_grid.point(x) * self.h(p, x, y))
            .sum()
    }

    /// True when the density does not depend on the price node.
    pub fn is_price_independent(&self, tol: S) -> bool {
        for y in 0..self.state_count {
            for x in 0..self.value_grid.len() {
                let first = self.h(0, x, y);
                for p in 1..self.price_grid.len() {
                    if (self.h(p, x, y) - first).abs() > tol {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Splits every price node into `splits` sub-nodes with proportionally
    /// divided weight, the parent's density column, and the parent's
    /// settlement price. Sub-node coordinates subdivide the parent's grid
    /// cell so the refined coordinates stay strictly increasing.
    pub fn split_price_atoms(&self, splits: usize) -> ModelFamily<S> {
        assert!(splits >= 1);
        if splits == 1 {
            return self.clone();
        }
        let n = self.price_grid.len();
        let points = self.price_grid.points();
        let half = cast::<S>(0.5);
        let mut coords = Vec::with_capacity(n * splits);
        let mut weights = Vec::with_capacity(n * splits);
        let mut trade = Vec::with_capacity(n * splits);
        let mut density = Vec::with_capacity(self.density.len() * splits);
        let sub = cast::<S>(splits as f64);
        for p in 0..n {
            let left = if p == 0 {
                if n == 1 {
                    points[0] - half
                } else {
                    points[0] - (points[1] - points[0]) * half
                }
            } else {
                (points[p - 1] + points[p]) * half
            };
            let right = if p == n - 1 {
                if n == 1 {
                    points[0] + half
                } else {
                    points[n - 1] + (points[n - 1] - points[n - 2]) * half
                }
            } else {
                (points[p] + points[p + 1]) * half
            };
            let width = (right - left) / sub;
            for s in 0..splits {
                coords.push(left + width * (cast::<S>(s as f64) + half));
                weights.push(self.price_grid.weight(p) / sub);
                trade.push(self.trade_price(p));
                let row = &self.density
                    [p * self.state_count * self.value_grid.len()
                        ..(p + 1) * self.state_count * self.value_grid.len()];
                density.extend_from_slice(row);
            }
        }
        let price_grid = Grid::new(coords, weights).expect("subdivided cells stay increasing");
        let integrability_bound = self.integrability_bound.as_ref().map(|d| {
            let mut out = Vec::with_capacity(n * splits);
            for p in 0..n {
                for _ in 0..splits {
                    out.push(d[p].clone());
                }
            }
            out
        });
        ModelFamily {
            price_grid,
            trade_prices: Some(trade),
            value_grid: self.value_grid.clone(),
            state_count: self.state_count,
            density,
            action_bounds: self.action_bounds,
            integrability_bound,
        }
    }
}

/// Grid description in a model spec: explicit nodes or a uniform cell rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    Uniform { lo: f64, hi: f64, nodes: usize },
    Explicit { points: Vec<f64>, weights: Vec<f64> },
}

impl GridSpec {
    pub fn build<S: Real>(&self) -> Result<Grid<S>, GridError> {
        match self {
            GridSpec::Uniform { lo, hi, nodes } => {
                Grid::uniform_cells(cast(*lo), cast(*hi), *nodes)
            }
            GridSpec::Explicit { points, weights } => Grid::new(
                points.iter().map(|p| cast(*p)).collect(),
                weights.iter().map(|w| cast(*w)).collect(),
            ),
        }
    }
}

/// One state's density description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateDensity {
    /// Tabulated values `h[p][x]`, renormalized only when already close to
    /// mass one.
    Density(Vec<Vec<f64>>),
    /// Price-independent value distribution; the classic uninformative-price
    /// setting where prices carry no information about the final value.
    ValuePmf(Vec<f64>),
    /// Joint normal over (price, value), tabulated at the grid nodes and
    /// renormalized exactly.
    BivariateNormal { mean: [f64; 2], cov: [[f64; 2]; 2] },
}

/// Declarative model description, the JSON surface of [`build_model`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub price_grid: GridSpec,
    pub value_grid: GridSpec,
    pub action_bounds: (f64, f64),
    pub states: Vec<StateDensity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrability_bound: Option<Vec<Vec<f64>>>,
}

/// Materializes a [`ModelFamily`] from its declarative description.
pub fn build_model<S: Real>(spec: &ModelSpec) -> Result<ModelFamily<S>, ModelError> {
    let price_grid: Grid<S> = spec.price_grid.build()?;
    let value_grid: Grid<S> = spec.value_grid.build()?;
    let (b, t) = (cast::<S>(spec.action_bounds.0), cast::<S>(spec.action_bounds.1));
    if !(b < S::zero() && S::zero() < t) {
        return Err(ModelError::BadActionBounds(
            spec.action_bounds.0,
            spec.action_bounds.1,
        ));
    }
    if spec.states.is_empty() {
        return Err(ModelError::NoStates);
    }
    let np = price_grid.len();
    let nx = value_grid.len();
    let ny = spec.states.len();

    // Tabulate the raw density per state, then renormalize.
    let mut per_state: Vec<Vec<S>> = Vec::with_capacity(ny); // [y][p*nx + x]
    for (y, state) in spec.states.iter().enumerate() {
        let mut raw = vec![S::zero(); np * nx];
        let parametric = matches!(state, StateDensity::BivariateNormal { .. });
        match state {
            StateDensity::Density(rows) => {
                if rows.len() != np || rows.iter().any(|r| r.len() != nx) {
                    return Err(ModelError::DensityShape {
                        state: y,
                        expected_prices: np,
                        expected_values: nx,
                    });
                }
                for (p, row) in rows.iter().enumerate() {
                    for (x, v) in row.iter().enumerate() {
                        if !(*v >= 0.0) || !v.is_finite() {
                            return Err(ModelError::NegativeDensity {
                                state: y,
                                price: p,
                                value: x,
                            });
                        }
                        raw[p * nx + x] = cast(*v);
                    }
                }
            }
            StateDensity::ValuePmf(pmf) => {
                if pmf.len() != nx || pmf.iter().any(|q| !(*q >= 0.0) || !q.is_finite()) {
                    return Err(ModelError::BadValuePmf);
                }
                // h(p, x) = q_x / xi_x gives conditional mass one at every price
                for p in 0..np {
                    for x in 0..nx {
                        raw[p * nx + x] = cast::<S>(pmf[x]) / value_grid.weight(x);
                    }
                }
            }
            StateDensity::BivariateNormal { mean, cov } => {
                let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
                let symmetric = (cov[0][1] - cov[1][0]).abs() <= 1e-12;
                if !(det > 0.0) || !(cov[0][0] > 0.0) || !symmetric {
                    return Err(ModelError::BadCovariance);
                }
                let inv = [
                    [cov[1][1] / det, -cov[0][1] / det],
                    [-cov[1][0] / det, cov[0][0] / det],
                ];
                for (p, pt) in price_grid.points().iter().enumerate() {
                    for (x, xt) in value_grid.points().iter().enumerate() {
                        let dp = pt.to_f64().unwrap() - mean[0];
                        let dx = xt.to_f64().unwrap() - mean[1];
                        let q = dp * (inv[0][0] * dp + inv[0][1] * dx)
                            + dx * (inv[1][0] * dp + inv[1][1] * dx);
                        raw[p * nx + x] = cast((-0.5 * q).exp());
                    }
                }
            }
        }

        let mut total = S::zero();
        for p in 0..np {
            for x in 0..nx {
                total = total
                    + price_grid.weight(p) * value_grid.weight(x) * raw[p * nx + x];
            }
        }
        let renormalizable = if parametric {
            total > S::zero()
        } else {
            (total - S::one()).abs() <= cast(RENORMALIZATION_SLACK)
        };
        if !renormalizable || !(total > S::zero()) {
            return Err(ModelError::NonNormalizable {
                state: y,
                sum: total.to_f64().unwrap_or(f64::NAN),
                slack: RENORMALIZATION_SLACK,
            });
        }
        for v in raw.iter_mut() {
            *v = *v / total;
        }
        per_state.push(raw);
    }

    if let Some(d) = &spec.integrability_bound {
        if d.len() != np || d.iter().any(|r| r.len() != nx) {
            return Err(ModelError::BoundShape {
                expected_prices: np,
                expected_values: nx,
            });
        }
    }

    // interleave into [(p, y), x] layout
    let mut density = vec![S::zero(); np * ny * nx];
    for y in 0..ny {
        for p in 0..np {
            for x in 0..nx {
                density[(p * ny + y) * nx + x] = per_state[y][p * nx + x];
            }
        }
    }

    Ok(ModelFamily {
        price_grid,
        trade_prices: None,
        value_grid,
        state_count: ny,
        density,
        action_bounds: (b, t),
        integrability_bound: spec.integrability_bound.as_ref().map(|d| {
            d.iter()
                .map(|row| row.iter().map(|v| cast(*v)).collect())
                .collect()
        }),
    })
}

/// One violated bound entry in an integrability report.
#[derive(Debug, Clone)]
pub struct BoundViolation<S> {
    pub price: usize,
    pub value: usize,
    pub state: usize,
    pub lhs: S,
    pub bound: S,
}

/// Diagnostic output of [`validate_integrability`].
#[derive(Debug, Clone)]
pub struct IntegrabilityReport<S> {
    /// Largest `|u(t(x-p))| h + |u(b(x-p))| h` over all nodes.
    pub max_lhs: S,
    /// Smallest valid bound: the pointwise max over states of the left side.
    pub minimal_bound: Vec<Vec<S>>,
    /// Entries where a supplied bound is exceeded; empty when no bound was
    /// supplied.
    pub violations: Vec<BoundViolation<S>>,
}

/// Checks the uniform integrability inequality on every grid node.
///
/// On a finite grid the bound always exists; the report carries the minimal
/// valid one. Purely diagnostic, never fails.
pub fn validate_integrability<S: Real>(
    family: &ModelFamily<S>,
    utility: &UtilitySpec<S>,
) -> IntegrabilityReport<S> {
    let np = family.price_grid().len();
    let nx = family.value_grid().len();
    let (b, t) = family.action_bounds();
    let mut minimal = vec![vec![S::zero(); nx]; np];
    let mut max_lhs = S::zero();
    let mut violations = Vec::new();
    for p in 0..np {
        let price = family.trade_price(p);
        for x in 0..nx {
            let value = family.value_grid().point(x);
            let gain_t = utility.eval(t * (value - price)).abs();
            let gain_b = utility.eval(b * (value - price)).abs();
            let mut worst = S::zero();
            for y in 0..family.state_count() {
                let h = family.h(p, x, y);
                let lhs = gain_t * h + gain_b * h;
                worst = worst.max(lhs);
                if let Some(bound) = family.integrability_bound() {
                    if lhs > bound[p][x] {
                        violations.push(BoundViolation {
                            price: p,
                            value: x,
                            state: y,
                            lhs,
                            bound: bound[p][x],
                        });
                    }
                }
            }
            minimal[p][x] = worst;
            max_lhs = max_lhs.max(worst);
        }
    }
    IntegrabilityReport {
        max_lhs,
        minimal_bound: minimal,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Uninformative-price family: two states with value +1 probability 1/4
    /// and 3/4, prices uniform on [-1, 1].
    pub fn uninformative_two_state(n_prices: usize) -> ModelFamily<f64> {
        build_model(&ModelSpec {
            price_grid: GridSpec::Uniform {
                lo: -1.0,
                hi: 1.0,
                nodes: n_prices,
            },
            value_grid: GridSpec::Explicit {
                points: vec![-1.0, 1.0],
                weights: vec![1.0, 1.0],
            },
            action_bounds: (-1.0, 1.0),
            states: vec![
                StateDensity::ValuePmf(vec![0.75, 0.25]),
                StateDensity::ValuePmf(vec![0.25, 0.75]),
            ],
            integrability_bound: None,
        })
        .unwrap()
    }

    #[test]
    fn uninformative_family_is_normalized_and_price_independent() {
        let fam = uninformative_two_state(40);
        assert!(fam.max_normalization_error() <= 1e-12);
        assert!(fam.is_price_independent(0.0));
        // h constant in p, equal to the pmf against counting value weights
        assert_eq!(fam.h(0, 1, 1), 0.75);
        assert_eq!(fam.h(17, 1, 1), 0.75);
    }

    #[test]
    fn degenerate_point_mass_family() {
        let fam: ModelFamily<f64> = build_model(&ModelSpec {
            price_grid: GridSpec::Uniform {
                lo: -1.0,
                hi: 1.0,
                nodes: 7,
            },
            value_grid: GridSpec::Explicit {
                points: vec![0.0],
                weights: vec![1.0],
            },
            action_bounds: (-1.0, 1.0),
            states: vec![StateDensity::ValuePmf(vec![1.0])],
            integrability_bound: None,
        })
        .unwrap();
        assert!(fam.max_normalization_error() <= 1e-12);
    }

    #[test]
    fn bivariate_normal_states_renormalize_to_one() {
        let means = [(0.0, 0.0), (0.0, 0.2), (0.1, 0.1)];
        let fam: ModelFamily<f64> = build_model(&ModelSpec {
            price_grid: GridSpec::Uniform {
                lo: -2.0,
                hi: 2.0,
                nodes: 41,
            },
            value_grid: GridSpec::Uniform {
                lo: -2.0,
                hi: 2.0,
                nodes: 41,
            },
            action_bounds: (-1.0, 1.0),
            states: means
                .iter()
                .map(|(mp, mx)| StateDensity::BivariateNormal {
                    mean: [*mp, *mx],
                    cov: [[0.4, 0.1], [0.1, 0.4]],
                })
                .collect(),
            integrability_bound: None,
        })
        .unwrap();
        assert!(fam.max_normalization_error() <= 1e-9);
    }

    #[test]
    fn rejects_all_zero_state_and_bad_bounds() {
        let base = ModelSpec {
            price_grid: GridSpec::Uniform {
                lo: -1.0,
                hi: 1.0,
                nodes: 3,
            },
            value_grid: GridSpec::Explicit {
                points: vec![-1.0, 1.0],
                weights: vec![1.0, 1.0],
            },
            action_bounds: (-1.0, 1.0),
            states: vec![StateDensity::ValuePmf(vec![0.0, 0.0])],
            integrability_bound: None,
        };
        assert!(matches!(
            build_model::<f64>(&base),
            Err(ModelError::NonNormalizable { .. })
        ));

        let mut bad_bounds = base.clone();
        bad_bounds.states = vec![StateDensity::ValuePmf(vec![0.5, 0.5])];
        bad_bounds.action_bounds = (0.5, 1.0);
        assert!(matches!(
            build_model::<f64>(&bad_bounds),
            Err(ModelError::BadActionBounds(..))
        ));

        let mut mismatch = base.clone();
        mismatch.states = vec![StateDensity::Density(vec![vec![1.0, 1.0]; 2])];
        assert!(matches!(
            build_model::<f64>(&mismatch),
            Err(ModelError::DensityShape { .. })
        ));
    }

    #[test]
    fn tabulated_density_renormalizes_only_when_close() {
        let spec = |scale: f64| ModelSpec {
            price_grid: GridSpec::Uniform {
                lo: -1.0,
                hi: 1.0,
                nodes: 2,
            },
            value_grid: GridSpec::Explicit {
                points: vec![-1.0, 1.0],
                weights: vec![1.0, 1.0],
            },
            action_bounds: (-1.0, 1.0),
            // conditional mass `scale` at every price
            states: vec![StateDensity::Density(vec![
                vec![0.25 * scale, 0.25 * scale],
                vec![0.25 * scale, 0.25 * scale],
            ])],
            integrability_bound: None,
        };
        assert!(build_model::<f64>(&spec(1.0 + 1e-7)).is_ok());
        assert!(build_model::<f64>(&spec(1.1)).is_err());
    }

    #[test]
    fn integrability_linear_utility_matches_formula() {
        let fam = uninformative_two_state(8);
        let report = validate_integrability(&fam, &UtilitySpec::linear());
        assert!(report.violations.is_empty());
        for (p, pt) in fam.price_grid().points().iter().enumerate() {
            for (x, xt) in fam.value_grid().points().iter().enumerate() {
                let max_h = (0..2).map(|y| fam.h(p, x, y)).fold(0.0, f64::max);
                let expected = 2.0 * (xt - pt).abs() * max_h;
                assert!(
                    (report.minimal_bound[p][x] - expected).abs() <= 1e-12,
                    "minimal bound formula"
                );
            }
        }
    }

    #[test]
    fn integrability_exponential_is_finite_and_flags_violations() {
        let fam = uninformative_two_state(8);
        let u = UtilitySpec::exponential(1.0).unwrap();
        let report = validate_integrability(&fam, &u);
        assert!(report.max_lhs.is_finite());
        assert!(report.max_lhs > 0.0);

        // a deliberately too-small supplied bound must be flagged
        let np = fam.price_grid().len();
        let nx = fam.value_grid().len();
        let spec = ModelSpec {
            price_grid: GridSpec::Uniform {
                lo: -1.0,
                hi: 1.0,
                nodes: np,
            },
            value_grid: GridSpec::Explicit {
                points: vec![-1.0, 1.0],
                weights: vec![1.0, 1.0],
            },
            action_bounds: (-1.0, 1.0),
            states: vec![
                StateDensity::ValuePmf(vec![0.75, 0.25]),
                StateDensity::ValuePmf(vec![0.25, 0.75]),
            ],
            integrability_bound: Some(vec![vec![1e-6; nx]; np]),
        };
        let fam2: ModelFamily<f64> = build_model(&spec).unwrap();
        let report2 = validate_integrability(&fam2, &u);
        assert!(!report2.violations.is_empty());
    }

    #[test]
    fn split_price_atoms_preserves_mass_and_settlement() {
        let fam = uninformative_two_state(6);
        let refined = fam.split_price_atoms(3);
        assert_eq!(refined.price_grid().len(), 18);
        assert!((refined.price_grid().total_mass() - 1.0).abs() <= 1e-12);
        assert!(refined.max_normalization_error() <= 1e-12);
        for p in 0..6 {
            for s in 0..3 {
                assert_eq!(refined.trade_price(3 * p + s), fam.price_grid().point(p));
                assert_eq!(refined.h(3 * p + s, 0, 1), fam.h(p, 0, 1));
            }
        }
        // coordinates remain strictly increasing
        let pts = refined.price_grid().points();
        assert!(pts.windows(2).all(|w| w[1] > w[0]));
    }
}
