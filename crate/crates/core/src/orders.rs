//! Deterministic, mixed, and behavioral limit orders, plus the reductions
//! between them: mixed-to-behavioral projection, Jensen derandomization,
//! atom-splitting purification, the convergence-in-measure metric, and
//! step-function simplification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::model::ModelFamily;
use crate::num::{cast, Real};

/// Weight slack for mixed-order atoms and behavioral rows.
pub const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum OrderError {
    #[error("levels must have exactly one more entry than breakpoints")]
    LevelCount,
    #[error("breakpoints must be strictly increasing (violation at index {0})")]
    BreakpointsNotIncreasing(usize),
    #[error("level {level} at index {index} outside action bounds [{lo}, {hi}]")]
    LevelOutOfBounds {
        index: usize,
        level: f64,
        lo: f64,
        hi: f64,
    },
    #[error("mixed order needs at least one atom")]
    NoAtoms,
    #[error("atom weights must be positive and sum to one (sum = {0})")]
    BadAtomWeights(f64),
    #[error("behavioral row {row} is not a probability vector (sum = {sum})")]
    BadRow { row: usize, sum: f64 },
    #[error("row/action-grid size mismatch: row {row} has {got} entries, expected {expected}")]
    RowWidth {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error(
        "level {level} at price node {node} is {distance} away from the nearest action node, \
         more than half the grid step {half_step}"
    )]
    UnrepresentableLevel {
        node: usize,
        level: f64,
        distance: f64,
        half_step: f64,
    },
    #[error("splits must be at least 1")]
    NoSplits,
    #[error("price grid must be a probability measure for the Ky Fan metric")]
    NotProbabilityGrid,
    #[error("interval budget must be at least 1")]
    NoIntervals,
}

/// Step function from prices to actions, right-continuous at breakpoints:
/// the value *at* a breakpoint is the level of the interval to its right,
/// matching the cutoff convention "buy strictly below `v`, sell at and
/// above `v`".
///
/// With finitely many intervals this is exactly a simple limit order.
/// Orders are identified up to the price measure, so two orders agreeing at
/// every grid node are the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitOrder<S> {
    breakpoints: Vec<S>,
    levels: Vec<S>,
}

impl<S: Real> LimitOrder<S> {
    pub fn new(breakpoints: Vec<S>, levels: Vec<S>) -> Result<Self, OrderError> {
        if levels.len() != breakpoints.len() + 1 {
            return Err(OrderError::LevelCount);
        }
        for i in 1..breakpoints.len() {
            if !(breakpoints[i] > breakpoints[i - 1]) {
                return Err(OrderError::BreakpointsNotIncreasing(i));
            }
        }
        Ok(Self {
            breakpoints,
            levels,
        })
    }

    /// Constant order trading `level` at every price.
    pub fn constant(level: S) -> Self {
        Self {
            breakpoints: Vec::new(),
            levels: vec![level],
        }
    }

    /// Order that never trades.
    pub fn abstain() -> Self {
        Self::constant(S::zero())
    }

    /// Bounds-checked constructor used by operations that know the family.
    pub fn checked(
        breakpoints: Vec<S>,
        levels: Vec<S>,
        bounds: (S, S),
    ) -> Result<Self, OrderError> {
        for (i, l) in levels.iter().enumerate() {
            if *l < bounds.0 || *l > bounds.1 {
                return Err(OrderError::LevelOutOfBounds {
                    index: i,
                    level: l.to_f64().unwrap_or(f64::NAN),
                    lo: bounds.0.to_f64().unwrap_or(f64::NAN),
                    hi: bounds.1.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Self::new(breakpoints, levels)
    }

    /// Builds the step function taking value `levels[i]` at grid node `i`,
    /// with breakpoints halfway between consecutive nodes. Adjacent equal
    /// levels are coalesced.
    pub fn from_grid_levels(price_grid: &Grid<S>, levels: &[S]) -> Self {
        assert_eq!(price_grid.len(), levels.len());
        let half = cast::<S>(0.5);
        let mut bps = Vec::new();
        let mut lvls = vec![levels[0]];
        for i in 1..levels.len() {
            if levels[i] != levels[i - 1] {
                bps.push((price_grid.point(i - 1) + price_grid.point(i)) * half);
                lvls.push(levels[i]);
            }
        }
        Self {
            breakpoints: bps,
            levels: lvls,
        }
    }

    /// Action taken at price `p`.
    pub fn eval(&self, p: S) -> S {
        // number of breakpoints <= p gives the interval index (right-continuity)
        let idx = self.breakpoints.partition_point(|b| *b <= p);
        self.levels[idx]
    }

    pub fn breakpoints(&self) -> &[S] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[S] {
        &self.levels
    }

    /// Number of constancy intervals.
    pub fn interval_count(&self) -> usize {
        self.levels.len()
    }

    /// Actions at every node of a price grid.
    pub fn grid_levels(&self, price_grid: &Grid<S>) -> Vec<S> {
        price_grid.points().iter().map(|p| self.eval(*p)).collect()
    }

    /// CSV graph of the order, one `price,action` line per grid node.
    pub fn to_csv(&self, price_grid: &Grid<S>) -> String {
        let mut out = String::from("price,action\n");
        for (p, _) in price_grid.iter() {
            out.push_str(&format!("{},{}\n", p, self.eval(p)));
        }
        out
    }
}

/// Cutoff-style order: `high` strictly below `v`, `low` at and above `v`.
///
/// A non-finite `v` collapses to the corresponding constant order, as does
/// `high == low`.
pub fn make_cutoff_order<S: Real>(
    v: S,
    high: S,
    low: S,
    bounds: (S, S),
) -> Result<LimitOrder<S>, OrderError> {
    for (i, l) in [high, low].into_iter().enumerate() {
        if l < bounds.0 || l > bounds.1 {
            return Err(OrderError::LevelOutOfBounds {
                index: i,
                level: l.to_f64().unwrap_or(f64::NAN),
                lo: bounds.0.to_f64().unwrap_or(f64::NAN),
                hi: bounds.1.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    if high == low || v == S::neg_infinity() {
        return Ok(LimitOrder::constant(low));
    }
    if v == S::infinity() {
        return Ok(LimitOrder::constant(high));
    }
    LimitOrder::new(vec![v], vec![high, low])
}

/// Classic unit cutoff: buy one unit below `v`, sell one unit at and above.
pub fn unit_cutoff<S: Real>(v: S) -> LimitOrder<S> {
    make_cutoff_order(v, S::one(), -S::one(), (-S::one(), S::one()))
        .expect("unit levels inside unit bounds")
}

/// Finitely supported randomization over limit orders.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedOrder<S> {
    atoms: Vec<(S, LimitOrder<S>)>,
}

impl<S: Real> MixedOrder<S> {
    pub fn new(atoms: Vec<(S, LimitOrder<S>)>) -> Result<Self, OrderError> {
        if atoms.is_empty() {
            return Err(OrderError::NoAtoms);
        }
        let sum: S = atoms.iter().map(|(w, _)| *w).sum();
        let ok = atoms.iter().all(|(w, _)| *w > S::zero())
            && (sum - S::one()).abs() <= cast(WEIGHT_TOL);
        if !ok {
            return Err(OrderError::BadAtomWeights(sum.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { atoms })
    }

    /// Point mass on a single order.
    pub fn dirac(order: LimitOrder<S>) -> Self {
        Self {
            atoms: vec![(S::one(), order)],
        }
    }

    pub fn atoms(&self) -> &[(S, LimitOrder<S>)] {
        &self.atoms
    }
}

/// Price-by-price randomization: one probability vector over the action grid
/// per price node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralOrder<S> {
    rows: Vec<Vec<S>>,
}

impl<S: Real> BehavioralOrder<S> {
    pub fn new(rows: Vec<Vec<S>>) -> Result<Self, OrderError> {
        for (i, row) in rows.iter().enumerate() {
            let sum: S = row.iter().copied().sum();
            let ok = row.iter().all(|w| *w >= S::zero())
                && (sum - S::one()).abs() <= cast(WEIGHT_TOL);
            if !ok {
                return Err(OrderError::BadRow {
                    row: i,
                    sum: sum.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self { rows })
    }

    /// Degenerate behavioral order putting all mass on one action index per row.
    pub fn degenerate(action_indices: &[usize], action_count: usize) -> Self {
        let rows = action_indices
            .iter()
            .map(|&a| {
                let mut row = vec![S::zero(); action_count];
                row[a] = S::one();
                row
            })
            .collect();
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<S>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.rows[i]
    }

    pub fn price_count(&self) -> usize {
        self.rows.len()
    }

    /// True when every row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.rows
            .iter()
            .all(|row| row.iter().filter(|w| **w > S::zero()).count() <= 1)
    }

    /// Mean action per row.
    pub fn mean_levels(&self, actions: &[S]) -> Vec<S> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(actions)
                    .map(|(w, a)| *w * *a)
                    .sum::<S>()
            })
            .collect()
    }
}

/// Snaps a level onto the action grid, erroring when it misses every node by
/// more than half the local grid step.
fn snap_action<S: Real>(actions: &[S], level: S, node: usize) -> Result<usize, OrderError> {
    let mut best = 0usize;
    let mut best_d = (actions[0] - level).abs();
    for (i, a) in actions.iter().enumerate().skip(1) {
        let d = (*a - level).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    let step = if actions.len() > 1 {
        let mut min_gap = S::infinity();
        for w in actions.windows(2) {
            min_gap = min_gap.min(w[1] - w[0]);
        }
        min_gap
    } else {
        S::infinity()
    };
    let half = step * cast::<S>(0.5);
    // tiny slack so levels sitting exactly between nodes within rounding snap
    if best_d > half * (S::one() + cast(1e-9)) {
        return Err(OrderError::UnrepresentableLevel {
            node,
            level: level.to_f64().unwrap_or(f64::NAN),
            distance: best_d.to_f64().unwrap_or(f64::NAN),
            half_step: half.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(best)
}

/// Projects a mixed order onto its behavioral image: at every price node the
/// atom weights are routed to the action nodes the atoms trade there.
///
/// Payoff-preserving state by state; exact whenever all atom levels lie on
/// the action grid.
pub fn mixed_to_behavioral<S: Real>(
    mixed: &MixedOrder<S>,
    price_grid: &Grid<S>,
    actions: &[S],
) -> Result<BehavioralOrder<S>, OrderError> {
    let mut rows = Vec::with_capacity(price_grid.len());
    for (i, p) in price_grid.points().iter().enumerate() {
        let mut row = vec![S::zero(); actions.len()];
        for (w, order) in mixed.atoms() {
            let a = snap_action(actions, order.eval(*p), i)?;
            row[a] = row[a] + *w;
        }
        rows.push(row);
    }
    BehavioralOrder::new(rows)
}

/// Replaces every per-price action lottery by its mean action.
///
/// For weakly concave utilities this never lowers any state's expected
/// payoff (Jensen); for linear utility the payoffs are unchanged.
pub fn derandomize<S: Real>(
    behavioral: &BehavioralOrder<S>,
    actions: &[S],
    price_grid: &Grid<S>,
) -> LimitOrder<S> {
    let means = behavioral.mean_levels(actions);
    LimitOrder::from_grid_levels(price_grid, &means)
}

/// Deterministic order on a refined family that replicates a behavioral
/// order by splitting price atoms.
#[derive(Debug, Clone)]
pub struct PurifiedOrder<S> {
    pub order: LimitOrder<S>,
    pub family: ModelFamily<S>,
}

/// Splits every price node into `splits` sub-nodes of equal weight carrying
/// the parent's density column and settlement price, then assigns actions to
/// sub-nodes by largest-remainder apportionment of each behavioral row.
///
/// The sub-node coordinates subdivide the parent's grid cell, so the order
/// remains an honest step function, while settlement keeps the parent price
/// and the split is therefore payoff-exact whenever row probabilities are
/// multiples of `1/splits`. The residual payoff error is bounded by
/// `(action range) * max |W| / splits`.
pub fn purify_by_refinement<S: Real>(
    behavioral: &BehavioralOrder<S>,
    family: &ModelFamily<S>,
    actions: &[S],
    splits: usize,
) -> Result<PurifiedOrder<S>, OrderError> {
    if splits == 0 {
        return Err(OrderError::NoSplits);
    }
    assert_eq!(behavioral.price_count(), family.price_grid().len());

    let refined = family.split_price_atoms(splits);
    let mut levels = Vec::with_capacity(behavioral.price_count() * splits);
    for row in behavioral.rows() {
        let counts = largest_remainder(row, splits);
        for (a, n) in counts.iter().enumerate() {
            for _ in 0..*n {
                levels.push(actions[a]);
            }
        }
    }
    let order = LimitOrder::from_grid_levels(refined.price_grid(), &levels);
    Ok(PurifiedOrder {
        order,
        family: refined,
    })
}

/// Apportions `splits` seats to the entries of a probability row by largest
/// remainder, deterministically (ties resolved toward lower indices).
fn largest_remainder<S: Real>(row: &[S], splits: usize) -> Vec<usize> {
    let total = cast::<S>(splits as f64);
    let mut floor_sum = 0usize;
    let mut parts: Vec<(usize, S, usize)> = row
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let exact = *w * total;
            let fl = exact.floor().to_f64().unwrap_or(0.0) as usize;
            let fl = fl.min(splits);
            floor_sum += fl;
            (i, exact - cast::<S>(fl as f64), fl)
        })
        .collect();
    let mut remaining = splits.saturating_sub(floor_sum);
    // stable sort by descending remainder, index ascending on ties
    parts.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut counts = vec![0usize; row.len()];
    for (i, _, fl) in &parts {
        counts[*i] = *fl;
    }
    for (i, _, _) in &parts {
        if remaining == 0 {
            break;
        }
        counts[*i] += 1;
        remaining -= 1;
    }
    counts
}

/// Metric of convergence in measure over a probability price grid:
/// the least `eps` such that the mass where the orders differ by more than
/// `eps` is at most `eps`.
pub fn ky_fan_distance<S: Real>(
    l: &LimitOrder<S>,
    l2: &LimitOrder<S>,
    price_grid: &Grid<S>,
) -> Result<S, OrderError> {
    if !price_grid.is_probability() {
        return Err(OrderError::NotProbabilityGrid);
    }
    let gaps: Vec<(S, S)> = price_grid
        .iter()
        .map(|(p, w)| ((l.eval(p) - l2.eval(p)).abs(), w))
        .collect();
    Ok(ky_fan_from_gaps(&gaps))
}

/// Exact infimum of `{eps > 0 : mass(gap > eps) <= eps}` for finitely many
/// (gap, mass) pairs.
fn ky_fan_from_gaps<S: Real>(gaps: &[(S, S)]) -> S {
    let mut values: Vec<S> = gaps
        .iter()
        .filter(|(g, w)| *g > S::zero() && *w > S::zero())
        .map(|(g, _)| *g)
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    if values.is_empty() {
        return S::zero();
    }
    let mass_above = |eps: S| -> S {
        gaps.iter()
            .filter(|(g, _)| *g > eps)
            .map(|(_, w)| *w)
            .sum()
    };
    // pieces of the decreasing step function eps -> mass(gap > eps)
    let mut piece_starts = vec![S::zero()];
    piece_starts.extend(values.iter().copied());
    for (k, lo) in piece_starts.iter().enumerate() {
        let level = mass_above(*lo);
        let candidate = lo.max(level);
        let hi = if k + 1 < piece_starts.len() {
            piece_starts[k + 1]
        } else {
            S::infinity()
        };
        if candidate < hi {
            return candidate;
        }
    }
    *values.last().unwrap()
}

/// Simplification result: the order plus its Ky Fan distance from the input.
#[derive(Debug, Clone)]
pub struct SimplifiedOrder<S> {
    pub order: LimitOrder<S>,
    pub distance: S,
}

/// Best approximation of `l` by an order with at most `max_intervals`
/// constancy intervals, in Ky Fan distance over the grid.
///
/// Interval blocks are contiguous runs of grid nodes and block levels are
/// drawn from the input's values inside the block; the optimum over that
/// space is found exactly by a feasibility dynamic program parametrized by
/// the candidate metric values.
pub fn simplify_order<S: Real>(
    l: &LimitOrder<S>,
    max_intervals: usize,
    price_grid: &Grid<S>,
) -> Result<SimplifiedOrder<S>, OrderError> {
    if max_intervals == 0 {
        return Err(OrderError::NoIntervals);
    }
    if !price_grid.is_probability() {
        return Err(OrderError::NotProbabilityGrid);
    }
    let values = l.grid_levels(price_grid);
    let weights = price_grid.weights().to_vec();
    let n = values.len();

    // Already within budget: return the order as a function on the grid.
    let distinct_runs = 1 + values.windows(2).filter(|w| w[0] != w[1]).count();
    if distinct_runs <= max_intervals {
        return Ok(SimplifiedOrder {
            order: LimitOrder::from_grid_levels(price_grid, &values),
            distance: S::zero(),
        });
    }

    // candidate thresholds: all pairwise level gaps
    let mut candidates = vec![S::zero()];
    for i in 0..n {
        for j in (i + 1)..n {
            let g = (values[i] - values[j]).abs();
            if g > S::zero() {
                candidates.push(g);
            }
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    // Feasibility is monotone in eps: minimal violating mass never grows.
    // Binary search the smallest candidate with violating mass <= eps.
    let mut lo = 0usize;
    let mut hi = candidates.len() - 1;
    debug_assert!(min_violating_mass(&values, &weights, max_intervals, *candidates.last().unwrap()).0 <= *candidates.last().unwrap());
    while lo < hi {
        let mid = (lo + hi) / 2;
        let (mass, _) = min_violating_mass(&values, &weights, max_intervals, candidates[mid]);
        if mass <= candidates[mid] {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    // The optimum lies on the piece just below candidate `lo`, or at `lo`.
    let mut best: Option<(S, Vec<S>)> = None;
    let mut consider = |eps: S| {
        let (_, plan) = min_violating_mass(&values, &weights, max_intervals, eps);
        let gaps: Vec<(S, S)> = plan
            .iter()
            .zip(&values)
            .zip(&weights)
            .map(|((c, v), w)| ((*c - *v).abs(), *w))
            .collect();
        let d = ky_fan_from_gaps(&gaps);
        if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
            best = Some((d, plan));
        }
    };
    if lo > 0 {
        consider(candidates[lo - 1]);
    }
    consider(candidates[lo]);
    let (distance, plan) = best.unwrap();
    Ok(SimplifiedOrder {
        order: LimitOrder::from_grid_levels(price_grid, &plan),
        distance,
    })
}

/// Minimal mass of nodes further than `eps` from their block level, over all
/// partitions into at most `k` contiguous blocks with block levels drawn
/// from the block's own values; returns the mass and the per-node levels of
/// an optimal plan.
fn min_violating_mass<S: Real>(
    values: &[S],
    weights: &[S],
    k: usize,
    eps: S,
) -> (S, Vec<S>) {
    let n = values.len();
    // cost[i][j]: minimal violating mass of block i..=j, and the level achieving it
    let mut cost = vec![vec![S::zero(); n]; n];
    let mut level = vec![vec![S::zero(); n]; n];
    for i in 0..n {
        // sorted multiset of (value, weight) for the growing block
        let mut sorted: Vec<(S, S)> = Vec::with_capacity(n - i);
        let mut total = S::zero();
        for j in i..n {
            let pos = sorted.partition_point(|(v, _)| *v <= values[j]);
            sorted.insert(pos, (values[j], weights[j]));
            total = total + weights[j];
            // best center: maximize captured mass in [c-eps, c+eps], c from block values
            let mut best_mass = S::neg_infinity();
            let mut best_c = sorted[0].0;
            let mut prefix: Vec<S> = Vec::with_capacity(sorted.len() + 1);
            prefix.push(S::zero());
            for (_, w) in &sorted {
                let last = *prefix.last().unwrap();
                prefix.push(last + *w);
            }
            for (ci, (c, _)) in sorted.iter().enumerate() {
                let lo_bound = *c - eps;
                let hi_bound = *c + eps;
                let a = sorted.partition_point(|(v, _)| *v < lo_bound);
                let b = sorted.partition_point(|(v, _)| *v <= hi_bound);
                let captured = prefix[b] - prefix[a];
                if captured > best_mass {
                    best_mass = captured;
                    best_c = *c;
                }
                let _ = ci;
            }
            cost[i][j] = total - best_mass;
            level[i][j] = best_c;
        }
    }
    // dp over block counts
    let inf = S::infinity();
    let mut dp = vec![vec![inf; k + 1]; n + 1];
    let mut back = vec![vec![usize::MAX; k + 1]; n + 1];
    dp[0][0] = S::zero();
    for j in 1..=n {
        for b in 1..=k.min(j) {
            for i in b..=j {
                // block covers nodes i-1 .. j-1
                let prev = dp[i - 1][b - 1];
                if prev.is_finite() {
                    let cand = prev + cost[i - 1][j - 1];
                    if cand < dp[j][b] {
                        dp[j][b] = cand;
                        back[j][b] = i - 1;
                    }
                }
            }
        }
    }
    let mut best_b = 1;
    for b in 2..=k {
        if dp[n][b] < dp[n][best_b] {
            best_b = b;
        }
    }
    // reconstruct
    let mut plan = vec![S::zero(); n];
    let mut j = n;
    let mut b = best_b;
    while j > 0 {
        let i = back[j][b];
        for t in i..j {
            plan[t] = level[i][j - 1];
        }
        j = i;
        b -= 1;
    }
    (dp[n][best_b], plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid<f64> {
        Grid::uniform_cells(-1.0, 1.0, n).unwrap()
    }

    #[test]
    fn cutoff_is_right_continuous() {
        let l = unit_cutoff(0.0);
        assert_eq!(l.eval(-0.1), 1.0);
        assert_eq!(l.eval(0.0), -1.0);
        assert_eq!(l.eval(0.1), -1.0);
    }

    #[test]
    fn cutoff_sentinels_collapse_to_constants() {
        let bounds = (-1.0, 1.0);
        let low = make_cutoff_order(f64::NEG_INFINITY, 1.0, -1.0, bounds).unwrap();
        assert_eq!(low, LimitOrder::constant(-1.0));
        let abstain = make_cutoff_order(0.3, 0.0, 0.0, bounds).unwrap();
        assert_eq!(abstain, LimitOrder::constant(0.0));
        assert!(make_cutoff_order(0.0, 2.0, -1.0, bounds).is_err());
    }

    #[test]
    fn from_grid_levels_coalesces_and_reproduces() {
        let g = grid(6);
        let levels = vec![1.0, 1.0, 0.0, 0.0, -1.0, -1.0];
        let l = LimitOrder::from_grid_levels(&g, &levels);
        assert_eq!(l.interval_count(), 3);
        assert_eq!(l.grid_levels(&g), levels);
    }

    #[test]
    fn mixed_to_behavioral_examples() {
        let g = grid(4);
        let actions = [-1.0, 0.0, 1.0];

        let single = MixedOrder::dirac(unit_cutoff(0.0));
        let b = mixed_to_behavioral(&single, &g, &actions).unwrap();
        assert!(b.is_deterministic());
        assert_eq!(b.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(b.row(3), &[1.0, 0.0, 0.0]);

        let flip = make_cutoff_order(0.0, -1.0, 1.0, (-1.0, 1.0)).unwrap();
        let mix = MixedOrder::new(vec![(0.5, unit_cutoff(0.0)), (0.5, flip)]).unwrap();
        let b = mixed_to_behavioral(&mix, &g, &actions).unwrap();
        for row in b.rows() {
            assert_eq!(row, &[0.5, 0.0, 0.5]);
        }
    }

    #[test]
    fn unrepresentable_level_reports_distance() {
        let g = grid(2);
        let actions = [-1.0, 1.0];
        let mix = MixedOrder::dirac(LimitOrder::constant(0.3));
        let err = mixed_to_behavioral(&mix, &g, &actions).unwrap_err();
        match err {
            OrderError::UnrepresentableLevel { distance, .. } => {
                assert!((distance - 0.7).abs() < 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn derandomize_mean_examples() {
        let g = grid(3);
        let actions = [-1.0, 0.0, 1.0];
        let rows = vec![vec![0.5, 0.0, 0.5]; 3];
        let b = BehavioralOrder::new(rows).unwrap();
        let l = derandomize(&b, &actions, &g);
        assert_eq!(l, LimitOrder::abstain());

        let det = BehavioralOrder::degenerate(&[2, 0, 1], 3);
        let l = derandomize(&det, &actions, &g);
        assert_eq!(l.grid_levels(&g), vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn largest_remainder_is_exact_for_rational_rows() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 2), vec![1, 1]);
        assert_eq!(largest_remainder(&[1.0 / 3.0, 2.0 / 3.0], 3), vec![1, 2]);
        assert_eq!(largest_remainder(&[0.2, 0.5, 0.3], 10), vec![2, 5, 3]);
        assert_eq!(largest_remainder(&[0.4, 0.6], 3).iter().sum::<usize>(), 3);
    }

    #[test]
    fn ky_fan_examples() {
        let g = grid(10);
        let l = unit_cutoff(0.0);
        assert_eq!(ky_fan_distance(&l, &l, &g).unwrap(), 0.0);

        // constant gap of 0.05 everywhere
        let l2 = LimitOrder::constant(0.0);
        let l3 = LimitOrder::constant(0.05);
        assert!((ky_fan_distance(&l2, &l3, &g).unwrap() - 0.05).abs() < 1e-15);

        // gap of 2 on one node of mass 0.1, equal elsewhere
        let g10 = grid(10);
        let mut levels = vec![0.0; 10];
        levels[4] = 2.0; // |levels| beyond unit bounds is fine for the metric itself
        let l4 = LimitOrder::from_grid_levels(&g10, &levels);
        let l5 = LimitOrder::constant(0.0);
        assert!((ky_fan_distance(&l4, &l5, &g10).unwrap() - 0.1).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn ky_fan_symmetry_and_triangle(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = grid(12);
            let mut random_order = |rng: &mut ChaCha8Rng| {
                let levels: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
                LimitOrder::from_grid_levels(&g, &levels)
            };
            let a = random_order(&mut rng);
            let b = random_order(&mut rng);
            let c = random_order(&mut rng);
            let dab = ky_fan_distance(&a, &b, &g).unwrap();
            let dba = ky_fan_distance(&b, &a, &g).unwrap();
            let dac = ky_fan_distance(&a, &c, &g).unwrap();
            let dcb = ky_fan_distance(&c, &b, &g).unwrap();
            prop_assert!((dab - dba).abs() <= 1e-12);
            prop_assert!(dab <= dac + dcb + 1e-12);
        }
    }

    #[test]
    fn simplify_keeps_simple_orders() {
        let g = grid(50);
        let l = unit_cutoff(0.0);
        let s = simplify_order(&l, 2, &g).unwrap();
        assert_eq!(s.distance, 0.0);
        assert_eq!(s.order.grid_levels(&g), l.grid_levels(&g));

        let levels: Vec<f64> = (0..50).map(|i| if i % 7 < 3 { 0.2 } else { -0.4 }).collect();
        let l = LimitOrder::from_grid_levels(&g, &levels);
        let s = simplify_order(&l, l.interval_count(), &g).unwrap();
        assert_eq!(s.distance, 0.0);
        assert_eq!(s.order.grid_levels(&g), levels);
    }

    #[test]
    fn simplify_respects_budget_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid(60);
        let levels: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l = LimitOrder::from_grid_levels(&g, &levels);
        let mut prev = f64::INFINITY;
        for k in [1usize, 2, 4, 8, 16, 32] {
            let s = simplify_order(&l, k, &g).unwrap();
            assert!(s.order.interval_count() <= k);
            assert!(s.distance <= prev + 1e-12, "distance must not grow with budget");
            prev = s.distance;
        }
    }

    /// Oracle: scan every candidate threshold instead of binary searching,
    /// and take the best resulting plan.
    fn simplify_full_scan(l: &LimitOrder<f64>, k: usize, g: &Grid<f64>) -> f64 {
        let values = l.grid_levels(g);
        let weights = g.weights().to_vec();
        let n = values.len();
        let mut candidates = vec![0.0];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (values[i] - values[j]).abs();
                if d > 0.0 {
                    candidates.push(d);
                }
            }
        }
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        let mut best = f64::INFINITY;
        for eps in candidates {
            let (_, plan) = min_violating_mass(&values, &weights, k, eps);
            let gaps: Vec<(f64, f64)> = plan
                .iter()
                .zip(&values)
                .zip(&weights)
                .map(|((c, v), w)| ((c - v).abs(), *w))
                .collect();
            best = best.min(ky_fan_from_gaps(&gaps));
        }
        best
    }

    #[test]
    fn simplify_matches_full_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(24);
        for _ in 0..4 {
            let levels: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let l = LimitOrder::from_grid_levels(&g, &levels);
            for k in [3usize, 6] {
                let s = simplify_order(&l, k, &g).unwrap();
                let oracle = simplify_full_scan(&l, k, &g);
                assert!(
                    s.distance <= oracle + 1e-12,
                    "dp {} vs oracle {}",
                    s.distance,
                    oracle
                );
            }
        }
    }

    #[test]
    fn hundred_interval_order_simplifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = grid(100);
        let levels: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l = LimitOrder::from_grid_levels(&g, &levels);
        assert_eq!(l.interval_count(), 100);
        let s = simplify_order(&l, 10, &g).unwrap();
        assert!(s.order.interval_count() <= 10);
        let recomputed = ky_fan_distance(&s.order, &l, &g).unwrap();
        assert!((s.distance - recomputed).abs() <= 1e-12);
    }

    #[test]
    fn order_json_roundtrip() {
        let l = unit_cutoff(0.25);
        let json = serde_json::to_string(&l).unwrap();
        assert!(json.contains("breakpoints"));
        let back: LimitOrder<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(l, back);
    }
}
