//! Expected-payoff machinery: the per-node payoff tensor
//! `W[p][a][y] = sum_x u(a (x - p)) h(p,x,y) xi_x` and the payoff functional
//! over deterministic, mixed, and behavioral orders.

use thiserror::Error;

use crate::model::ModelFamily;
use crate::num::{cast, Real};
use crate::orders::{BehavioralOrder, LimitOrder, MixedOrder};
use crate::preferences::Belief;
use crate::utility::UtilitySpec;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("action node count must be odd and positive so 0 is a node, got {0}")]
    BadActionNodes(usize),
    #[error("order level {level} outside action bounds [{lo}, {hi}]")]
    ActionOutOfBounds { level: f64, lo: f64, hi: f64 },
    #[error("behavioral order has {got} rows, family has {expected} price nodes")]
    RowCountMismatch { got: usize, expected: usize },
    #[error("behavioral row {row} has {got} entries, kernel has {expected} actions")]
    RowWidthMismatch {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("raw tensor shape is inconsistent")]
    RawShape,
    #[error("belief has {got} weights, family has {expected} states")]
    BeliefSize { got: usize, expected: usize },
}

/// Uniform action grid over `[b, t]` with an odd node count so abstention is
/// exactly representable. Asymmetric bounds get a uniform half per side.
pub fn action_grid<S: Real>(bounds: (S, S), nodes: usize) -> Result<Vec<S>, KernelError> {
    if nodes == 0 || nodes % 2 == 0 {
        return Err(KernelError::BadActionNodes(nodes));
    }
    let (b, t) = bounds;
    if nodes == 1 {
        return Ok(vec![S::zero()]);
    }
    let k = (nodes - 1) / 2;
    let kf = cast::<S>(k as f64);
    let mut actions = Vec::with_capacity(nodes);
    for i in 0..k {
        actions.push(b - b * cast::<S>(i as f64) / kf);
    }
    actions.push(S::zero());
    for j in 1..=k {
        actions.push(t * cast::<S>(j as f64) / kf);
    }
    Ok(actions)
}

/// How off-node levels are priced.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSource<S> {
    /// Exact evaluation through the utility and the density family.
    Utility(UtilitySpec<S>),
    /// Tensor given directly; intermediate levels are portfolio blends of
    /// the two adjacent pure actions (piecewise-linear in the coordinate).
    Raw,
}

/// Precomputed payoff tensor over (price node, action node, state).
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffKernel<S> {
    actions: Vec<S>,
    /// Flat layout `[(p * actions + a) * states + y]`.
    w: Vec<S>,
    states: usize,
    source: KernelSource<S>,
}

/// Inner payoff integrand at one price node:
/// `sum_x xi_x u(level (x - trade_price)) h(p, x, y)`.
///
/// Both the tensor build and direct order evaluation go through this
/// function, so on-grid levels price bit-identically on either path.
pub fn node_payoff<S: Real>(
    family: &ModelFamily<S>,
    utility: &UtilitySpec<S>,
    p: usize,
    level: S,
    y: usize,
) -> S {
    let price = family.trade_price(p);
    let mut acc = S::zero();
    for (x, (value, wx)) in family.value_grid().iter().enumerate() {
        acc = acc + wx * utility.eval(level * (value - price)) * family.h(p, x, y);
    }
    acc
}

impl<S: Real> PayoffKernel<S> {
    /// Tabulates the payoff tensor for a family and utility on an action
    /// grid with `action_nodes` nodes.
    pub fn build(
        family: &ModelFamily<S>,
        utility: &UtilitySpec<S>,
        action_nodes: usize,
    ) -> Result<Self, KernelError> {
        let actions = action_grid(family.action_bounds(), action_nodes)?;
        let np = family.price_grid().len();
        let ny = family.state_count();
        let mut w = vec![S::zero(); np * actions.len() * ny];
        for p in 0..np {
            for (a, level) in actions.iter().enumerate() {
                for y in 0..ny {
                    w[(p * actions.len() + a) * ny + y] = node_payoff(family, utility, p, *level, y);
                }
            }
        }
        Ok(Self {
            actions,
            w,
            states: ny,
            source: KernelSource::Utility(utility.clone()),
        })
    }

    /// Wraps an explicitly given tensor `w[p][a][y]`.
    pub fn from_raw(w: Vec<Vec<Vec<S>>>, actions: Vec<S>) -> Result<Self, KernelError> {
        if w.is_empty() || actions.is_empty() {
            return Err(KernelError::RawShape);
        }
        let na = actions.len();
        let ny = w[0].first().map(|v| v.len()).ok_or(KernelError::RawShape)?;
        if ny == 0 {
            return Err(KernelError::RawShape);
        }
        let np = w.len();
        let mut flat = Vec::with_capacity(np * na * ny);
        for plane in &w {
            if plane.len() != na {
                return Err(KernelError::RawShape);
            }
            for row in plane {
                if row.len() != ny {
                    return Err(KernelError::RawShape);
                }
                flat.extend_from_slice(row);
            }
        }
        Ok(Self {
            actions,
            w: flat,
            states: ny,
            source: KernelSource::Raw,
        })
    }

    pub fn actions(&self) -> &[S] {
        &self.actions
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn source(&self) -> &KernelSource<S> {
        &self.source
    }

    pub fn price_count(&self) -> usize {
        self.w.len() / (self.actions.len() * self.states)
    }

    #[inline]
    pub fn w(&self, p: usize, a: usize, y: usize) -> S {
        self.w[(p * self.actions.len() + a) * self.states + y]
    }

    /// Utility the kernel was built from, when it has one.
    pub fn utility(&self) -> Option<&UtilitySpec<S>> {
        match &self.source {
            KernelSource::Utility(u) => Some(u),
            KernelSource::Raw => None,
        }
    }

    /// True when payoffs are weakly concave along actions, which licenses
    /// the Jensen derandomization step.
    pub fn concave_in_actions(&self) -> bool {
        match &self.source {
            KernelSource::Utility(u) => u.is_concave(),
            KernelSource::Raw => false,
        }
    }

    /// Kernel for a family whose price atoms were split: every price block
    /// of the tensor is replicated `splits` times. Valid because sub-nodes
    /// keep the parent's settlement price and density column.
    pub fn split_price_rows(&self, splits: usize) -> PayoffKernel<S> {
        let na = self.actions.len();
        let block = na * self.states;
        let np = self.price_count();
        let mut w = Vec::with_capacity(self.w.len() * splits);
        for p in 0..np {
            for _ in 0..splits {
                w.extend_from_slice(&self.w[p * block..(p + 1) * block]);
            }
        }
        PayoffKernel {
            actions: self.actions.clone(),
            w,
            states: self.states,
            source: self.source.clone(),
        }
    }

    /// Payoff of trading `level` at price node `p` in state `y`.
    pub fn level_payoff(&self, family: &ModelFamily<S>, p: usize, level: S, y: usize) -> S {
        match &self.source {
            KernelSource::Utility(u) => node_payoff(family, u, p, level, y),
            KernelSource::Raw => {
                // portfolio blend of the adjacent pure actions
                let acts = &self.actions;
                if level <= acts[0] {
                    return self.w(p, 0, y);
                }
                if level >= acts[acts.len() - 1] {
                    return self.w(p, acts.len() - 1, y);
                }
                let hi = acts.partition_point(|a| *a <= level);
                let lo = hi - 1;
                if acts[lo] == level {
                    return self.w(p, lo, y);
                }
                let lam = (level - acts[lo]) / (acts[hi] - acts[lo]);
                self.w(p, lo, y) * (S::one() - lam) + self.w(p, hi, y) * lam
            }
        }
    }
}

/// A reference to any of the three order representations.
#[derive(Debug, Clone, Copy)]
pub enum OrderRef<'a, S> {
    Limit(&'a LimitOrder<S>),
    Mixed(&'a MixedOrder<S>),
    Behavioral(&'a BehavioralOrder<S>),
}

impl<'a, S> From<&'a LimitOrder<S>> for OrderRef<'a, S> {
    fn from(l: &'a LimitOrder<S>) -> Self {
        OrderRef::Limit(l)
    }
}

impl<'a, S> From<&'a MixedOrder<S>> for OrderRef<'a, S> {
    fn from(m: &'a MixedOrder<S>) -> Self {
        OrderRef::Mixed(m)
    }
}

impl<'a, S> From<&'a BehavioralOrder<S>> for OrderRef<'a, S> {
    fn from(b: &'a BehavioralOrder<S>) -> Self {
        OrderRef::Behavioral(b)
    }
}

fn check_level<S: Real>(level: S, bounds: (S, S)) -> Result<S, KernelError> {
    let slack = cast::<S>(1e-9) * (S::one() + bounds.1.abs().max(bounds.0.abs()));
    if level < bounds.0 - slack || level > bounds.1 + slack {
        return Err(KernelError::ActionOutOfBounds {
            level: level.to_f64().unwrap_or(f64::NAN),
            lo: bounds.0.to_f64().unwrap_or(f64::NAN),
            hi: bounds.1.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(level.max(bounds.0).min(bounds.1))
}

/// Expected payoff `V(order, y)` of an order under the model of state `y`.
///
/// Deterministic orders are point masses per price; the functional is linear
/// in behavioral weights and in mixed-order weights.
pub fn expected_payoff<'a, S: Real>(
    order: impl Into<OrderRef<'a, S>>,
    y: usize,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<S, KernelError> {
    match order.into() {
        OrderRef::Limit(l) => {
            let bounds = family.action_bounds();
            let mut acc = S::zero();
            for (p, (coord, wp)) in family.price_grid().iter().enumerate() {
                let level = check_level(l.eval(coord), bounds)?;
                acc = acc + wp * kernel.level_payoff(family, p, level, y);
            }
            Ok(acc)
        }
        OrderRef::Behavioral(b) => {
            if b.price_count() != family.price_grid().len() {
                return Err(KernelError::RowCountMismatch {
                    got: b.price_count(),
                    expected: family.price_grid().len(),
                });
            }
            let na = kernel.actions().len();
            let mut acc = S::zero();
            for (p, (_, wp)) in family.price_grid().iter().enumerate() {
                let row = b.row(p);
                if row.len() != na {
                    return Err(KernelError::RowWidthMismatch {
                        row: p,
                        got: row.len(),
                        expected: na,
                    });
                }
                let mut node = S::zero();
                for (a, mass) in row.iter().enumerate() {
                    if *mass > S::zero() {
                        node = node + *mass * kernel.w(p, a, y);
                    }
                }
                acc = acc + wp * node;
            }
            Ok(acc)
        }
        OrderRef::Mixed(m) => {
            let mut acc = S::zero();
            for (w, l) in m.atoms() {
                acc = acc + *w * expected_payoff(l, y, kernel, family)?;
            }
            Ok(acc)
        }
    }
}

/// Subjective expected utility of an order under a belief over states.
pub fn seu_value<'a, S: Real>(
    order: impl Into<OrderRef<'a, S>> + Copy,
    belief: &Belief<S>,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<S, KernelError> {
    if belief.weights().len() != family.state_count() {
        return Err(KernelError::BeliefSize {
            got: belief.weights().len(),
            expected: family.state_count(),
        });
    }
    let mut acc = S::zero();
    for (y, beta) in belief.weights().iter().enumerate() {
        if *beta > S::zero() {
            acc = acc + *beta * expected_payoff(order, y, kernel, family)?;
        }
    }
    Ok(acc)
}
