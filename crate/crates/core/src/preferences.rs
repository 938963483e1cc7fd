//! Preference evaluators and optimizers: subjective expected utility,
//! worst-case (multiple-prior) utility, and the smooth second-order model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{expected_payoff, seu_value, OrderRef, PayoffKernel};
use crate::lp::{behavioral_epigraph_lp, LpError};
use crate::model::ModelFamily;
use crate::num::{cast, Real};
use crate::orders::{BehavioralOrder, LimitOrder};

/// Weight slack for belief vectors.
pub const BELIEF_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PreferenceError {
    #[error("belief weights must be nonnegative and sum to one (sum = {0})")]
    BadBelief(f64),
    #[error("probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("need beta_lo < beta_hi, got ({0}, {1})")]
    BadBeliefInterval(f64, f64),
    #[error("ambiguity coefficient must be positive, got {0}")]
    BadAlpha(f64),
    #[error("prior over beliefs must be nonempty with weights summing to one")]
    BadPrior,
    #[error("belief set must be nonempty")]
    EmptyBeliefSet,
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Probability weights over the state grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief<S> {
    weights: Vec<S>,
}

impl<S: Real> Belief<S> {
    pub fn new(weights: Vec<S>) -> Result<Self, PreferenceError> {
        let sum: S = weights.iter().copied().sum();
        let ok = !weights.is_empty()
            && weights.iter().all(|w| *w >= S::zero())
            && (sum - S::one()).abs() <= cast(BELIEF_TOL);
        if !ok {
            return Err(PreferenceError::BadBelief(sum.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { weights })
    }

    /// Point mass on state `y` out of `n`.
    pub fn point(y: usize, n: usize) -> Self {
        let mut weights = vec![S::zero(); n];
        weights[y] = S::one();
        Self { weights }
    }

    pub fn uniform(n: usize) -> Self {
        let w = S::one() / cast::<S>(n as f64);
        Self {
            weights: vec![w; n],
        }
    }

    /// Convex combination `sum_j lambda_j beliefs_j`.
    pub fn mixture(beliefs: &[Belief<S>], lambda: &[S]) -> Result<Self, PreferenceError> {
        if beliefs.is_empty() || beliefs.len() != lambda.len() {
            return Err(PreferenceError::EmptyBeliefSet);
        }
        let n = beliefs[0].weights.len();
        let mut weights = vec![S::zero(); n];
        for (b, l) in beliefs.iter().zip(lambda) {
            for (w, bw) in weights.iter_mut().zip(&b.weights) {
                *w = *w + *l * *bw;
            }
        }
        Self::new(weights)
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }
}

/// Finite second-order prior of the smooth model: weights over beliefs.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderPrior<S> {
    weights: Vec<S>,
    beliefs: Vec<Belief<S>>,
}

impl<S: Real> SecondOrderPrior<S> {
    pub fn new(weights: Vec<S>, beliefs: Vec<Belief<S>>) -> Result<Self, PreferenceError> {
        let sum: S = weights.iter().copied().sum();
        let ok = !weights.is_empty()
            && weights.len() == beliefs.len()
            && weights.iter().all(|w| *w >= S::zero())
            && (sum - S::one()).abs() <= cast(BELIEF_TOL);
        if !ok {
            return Err(PreferenceError::BadPrior);
        }
        Ok(Self { weights, beliefs })
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn beliefs(&self) -> &[Belief<S>] {
        &self.beliefs
    }

    /// The reduced (mean) first-order belief.
    pub fn reduced(&self) -> Result<Belief<S>, PreferenceError> {
        Belief::mixture(&self.beliefs, &self.weights)
    }
}

/// Increasing transformation applied to first-order expected utilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiSpec<S> {
    Identity,
    /// `phi(x) = (1 - exp(-alpha x)) / (1 - exp(-alpha))`, `alpha > 0`:
    /// constant ambiguity aversion with coefficient `alpha`.
    Exponential { alpha: S },
}

impl<S: Real> PhiSpec<S> {
    pub fn exponential(alpha: S) -> Result<Self, PreferenceError> {
        if !(alpha > S::zero()) {
            return Err(PreferenceError::BadAlpha(
                alpha.to_f64().unwrap_or(f64::NAN),
            ));
        }
        Ok(PhiSpec::Exponential { alpha })
    }

    pub fn eval(&self, x: S) -> S {
        match self {
            PhiSpec::Identity => x,
            PhiSpec::Exponential { alpha } => {
                (S::one() - (-*alpha * x).exp()) / (S::one() - (-*alpha).exp())
            }
        }
    }

    pub fn deriv(&self, x: S) -> S {
        match self {
            PhiSpec::Identity => S::one(),
            PhiSpec::Exponential { alpha } => {
                *alpha * (-*alpha * x).exp() / (S::one() - (-*alpha).exp())
            }
        }
    }

    pub fn is_concave(&self) -> bool {
        true
    }
}

/// An action correspondence: either a unique optimum or a closed interval of
/// indifference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Demand<S> {
    Unique(S),
    Indifferent { lo: S, hi: S },
}

impl<S: Real> Demand<S> {
    /// Canonical single-number selection: the unique optimum, or the point
    /// of the indifference interval closest to zero.
    pub fn canonical(&self) -> S {
        match self {
            Demand::Unique(a) => *a,
            Demand::Indifferent { lo, hi } => {
                if *lo <= S::zero() && S::zero() <= *hi {
                    S::zero()
                } else if *lo > S::zero() {
                    *lo
                } else {
                    *hi
                }
            }
        }
    }
}

/// Demand of a risk-neutral single-prior agent trading one unit of an asset
/// worth +1 with probability `beta` and -1 otherwise, at a known price.
pub fn seu_demand<S: Real>(p: S, beta: S) -> Result<Demand<S>, PreferenceError> {
    if beta < S::zero() || beta > S::one() {
        return Err(PreferenceError::BadProbability(
            beta.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let threshold = beta - (S::one() - beta);
    Ok(if p < threshold {
        Demand::Unique(S::one())
    } else if p > threshold {
        Demand::Unique(-S::one())
    } else {
        Demand::Indifferent {
            lo: -S::one(),
            hi: S::one(),
        }
    })
}

/// Demand of a worst-case agent whose belief interval on the +1 value has
/// extreme points `beta_lo < beta_hi`: buy below the pessimistic threshold,
/// sell above the optimistic one, abstain strictly in between.
pub fn maxmin_demand<S: Real>(
    p: S,
    beta_lo: S,
    beta_hi: S,
) -> Result<Demand<S>, PreferenceError> {
    if !(beta_lo < beta_hi) || beta_lo < S::zero() || beta_hi > S::one() {
        return Err(PreferenceError::BadBeliefInterval(
            beta_lo.to_f64().unwrap_or(f64::NAN),
            beta_hi.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let two = cast::<S>(2.0);
    let lo_threshold = two * beta_lo - S::one();
    let hi_threshold = two * beta_hi - S::one();
    Ok(if p < lo_threshold {
        Demand::Unique(S::one())
    } else if p == lo_threshold {
        Demand::Indifferent {
            lo: S::zero(),
            hi: S::one(),
        }
    } else if p > hi_threshold {
        Demand::Unique(-S::one())
    } else if p == hi_threshold {
        Demand::Indifferent {
            lo: -S::one(),
            hi: S::zero(),
        }
    } else {
        Demand::Unique(S::zero())
    })
}

/// Closed-form demand of the smooth-model agent in the two-belief instance
/// (beliefs 1/4 and 3/4, even prior, risk neutral, ambiguity coefficient
/// `alpha`).
pub fn smooth_demand_closed_form<S: Real>(p: S, alpha: S) -> Result<S, PreferenceError> {
    if !(alpha > S::zero()) {
        return Err(PreferenceError::BadAlpha(
            alpha.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let half = cast::<S>(0.5);
    Ok(if p <= -half {
        S::one()
    } else if p >= half {
        -S::one()
    } else {
        let ratio = ((half - p).ln() - (half + p).ln()) / alpha;
        if p <= S::zero() {
            ratio.min(S::one())
        } else {
            ratio.max(-S::one())
        }
    })
}

/// Smooth-model value of an order: the prior average of the transformed
/// first-order expected utilities.
pub fn smooth_value<'a, S: Real>(
    order: impl Into<OrderRef<'a, S>> + Copy,
    prior: &SecondOrderPrior<S>,
    phi: &PhiSpec<S>,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<S, PreferenceError> {
    let mut acc = S::zero();
    for (q, beta) in prior.weights().iter().zip(prior.beliefs()) {
        if *q > S::zero() {
            acc = acc + *q * phi.eval(seu_value(order, beta, kernel, family)?);
        }
    }
    Ok(acc)
}

/// Worst-case expected utility over a finite belief set.
pub fn maxmin_value<'a, S: Real>(
    order: impl Into<OrderRef<'a, S>> + Copy,
    pi: &[Belief<S>],
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<S, PreferenceError> {
    if pi.is_empty() {
        return Err(PreferenceError::EmptyBeliefSet);
    }
    let mut worst = S::infinity();
    for beta in pi {
        worst = worst.min(seu_value(order, beta, kernel, family)?);
    }
    Ok(worst)
}

/// Optimal deterministic order of a single-prior agent: the price-by-price
/// argmax of the belief-blended payoff tensor. Ties break toward the action
/// smallest in absolute value, then toward the smaller action, so exact
/// indifference yields abstention.
pub fn optimize_seu<S: Real>(
    belief: &Belief<S>,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<LimitOrder<S>, PreferenceError> {
    if belief.weights().len() != family.state_count() {
        return Err(PreferenceError::Kernel(
            crate::kernel::KernelError::BeliefSize {
                got: belief.weights().len(),
                expected: family.state_count(),
            },
        ));
    }
    let actions = kernel.actions();
    let mut levels = Vec::with_capacity(family.price_grid().len());
    for p in 0..family.price_grid().len() {
        let mut best_a = 0usize;
        let mut best_v = S::neg_infinity();
        for (a, act) in actions.iter().enumerate() {
            let mut v = S::zero();
            for (y, b) in belief.weights().iter().enumerate() {
                if *b > S::zero() {
                    v = v + *b * kernel.w(p, a, y);
                }
            }
            let replace = if v > best_v {
                true
            } else if v == best_v {
                let cur = actions[best_a];
                (act.abs(), *act) < (cur.abs(), cur)
            } else {
                false
            };
            if replace {
                best_a = a;
                best_v = v;
            }
        }
        levels.push(actions[best_a]);
    }
    Ok(LimitOrder::from_grid_levels(family.price_grid(), &levels))
}

/// Output of the worst-case optimizer.
#[derive(Debug, Clone)]
pub struct MaxminOptimum<S> {
    pub order: BehavioralOrder<S>,
    pub value: S,
    /// Dual weights over the belief set at the optimum.
    pub least_favorable: Vec<S>,
    pub lp_iterations: usize,
    pub lp_residual: S,
}

/// Maximizes the worst-case expected utility over behavioral orders via the
/// epigraph program `max t` s.t. the order earns at least `t` under every
/// belief in the set.
pub fn optimize_maxmin<S: Real>(
    pi: &[Belief<S>],
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<MaxminOptimum<S>, PreferenceError> {
    if pi.is_empty() {
        return Err(PreferenceError::EmptyBeliefSet);
    }
    let np = family.price_grid().len();
    let na = kernel.actions().len();
    let mut payoff = Vec::with_capacity(pi.len());
    for beta in pi {
        let mut row = vec![S::zero(); np * na];
        for p in 0..np {
            let wp = family.price_grid().weight(p);
            for a in 0..na {
                let mut v = S::zero();
                for (y, b) in beta.weights().iter().enumerate() {
                    if *b > S::zero() {
                        v = v + *b * kernel.w(p, a, y);
                    }
                }
                row[p * na + a] = wp * v;
            }
        }
        payoff.push(row);
    }
    let rhs = vec![S::zero(); pi.len()];
    let sol = behavioral_epigraph_lp(np, na, &payoff, &rhs)?;
    Ok(MaxminOptimum {
        order: sol.kappa,
        value: sol.margin,
        least_favorable: sol.weights,
        lp_iterations: sol.iterations,
        lp_residual: sol.residual,
    })
}

/// Output of the smooth-model optimizer.
#[derive(Debug, Clone)]
pub struct SmoothOptimum<S> {
    pub order: BehavioralOrder<S>,
    pub value: S,
    /// Final projected-gradient norm (unit-step, sup over coordinates).
    pub gradient_norm: S,
    pub iterations: usize,
    /// Whether the stationarity tolerance was reached before the cap.
    pub converged: bool,
}

/// Stationarity target of [`optimize_smooth`].
pub const SMOOTH_STATIONARITY_TOL: f64 = 1e-9;
/// Iteration cap of [`optimize_smooth`].
pub const SMOOTH_ITERATION_CAP: usize = 100_000;

/// Maximizes the smooth-model objective over behavioral orders by projected
/// gradient ascent with Armijo backtracking. The objective is concave for
/// the phi family used here, so a stationary point is a global optimum.
pub fn optimize_smooth<S: Real>(
    prior: &SecondOrderPrior<S>,
    phi: &PhiSpec<S>,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<SmoothOptimum<S>, PreferenceError> {
    let np = family.price_grid().len();
    let na = kernel.actions().len();
    let nj = prior.weights().len();
    if nj == 0 {
        return Err(PreferenceError::BadPrior);
    }
    // blended payoff tensors per prior atom, already price-weighted
    let mut blended = vec![S::zero(); nj * np * na]; // [(j * np + p) * na + a]
    for (j, beta) in prior.beliefs().iter().enumerate() {
        for p in 0..np {
            let wp = family.price_grid().weight(p);
            for a in 0..na {
                let mut v = S::zero();
                for (y, b) in beta.weights().iter().enumerate() {
                    if *b > S::zero() {
                        v = v + *b * kernel.w(p, a, y);
                    }
                }
                blended[(j * np + p) * na + a] = wp * v;
            }
        }
    }

    let first_order_values = |kappa: &[S]| -> Vec<S> {
        (0..nj)
            .map(|j| {
                let mut v = S::zero();
                for idx in 0..np * na {
                    v = v + blended[j * np * na + idx] * kappa[idx];
                }
                v
            })
            .collect()
    };
    let objective = |values: &[S]| -> S {
        values
            .iter()
            .zip(prior.weights())
            .map(|(v, q)| *q * phi.eval(*v))
            .sum()
    };
    let gradient = |values: &[S]| -> Vec<S> {
        let scale: Vec<S> = values
            .iter()
            .zip(prior.weights())
            .map(|(v, q)| *q * phi.deriv(*v))
            .collect();
        let mut g = vec![S::zero(); np * na];
        for j in 0..nj {
            let s = scale[j];
            if s != S::zero() {
                for idx in 0..np * na {
                    g[idx] = g[idx] + s * blended[j * np * na + idx];
                }
            }
        }
        g
    };
    let project = |v: &mut [S]| {
        for p in 0..np {
            project_row_simplex(&mut v[p * na..(p + 1) * na]);
        }
    };

    let uniform = S::one() / cast::<S>(na as f64);
    let mut kappa = vec![uniform; np * na];
    let mut values = first_order_values(&kappa);
    let mut obj = objective(&values);
    let mut step = S::one();
    let tol = cast::<S>(SMOOTH_STATIONARITY_TOL);
    let armijo = cast::<S>(1e-4);
    let mut iterations = 0usize;
    let mut gradient_norm = S::infinity();
    let mut converged = false;

    while iterations < SMOOTH_ITERATION_CAP {
        iterations += 1;
        let g = gradient(&values);

        // unit-step projected-gradient residual
        let mut probe = kappa.clone();
        for (x, gi) in probe.iter_mut().zip(&g) {
            *x = *x + *gi;
        }
        project(&mut probe);
        gradient_norm = probe
            .iter()
            .zip(&kappa)
            .map(|(a, b)| (*a - *b).abs())
            .fold(S::zero(), S::max);
        if gradient_norm <= tol {
            converged = true;
            break;
        }

        // Armijo backtracking on the projected point
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = kappa.clone();
            for (x, gi) in trial.iter_mut().zip(&g) {
                *x = *x + step * *gi;
            }
            project(&mut trial);
            let trial_values = first_order_values(&trial);
            let trial_obj = objective(&trial_values);
            let inner: S = g
                .iter()
                .zip(trial.iter().zip(&kappa))
                .map(|(gi, (t, k))| *gi * (*t - *k))
                .sum();
            if trial_obj >= obj + armijo * inner || inner <= S::zero() {
                let moved = trial
                    .iter()
                    .zip(&kappa)
                    .map(|(a, b)| (*a - *b).abs())
                    .fold(S::zero(), S::max);
                kappa = trial;
                values = trial_values;
                obj = trial_obj;
                accepted = true;
                if moved <= tol * cast(0.01) {
                    // projection pinned us: treat as stationary
                    converged = gradient_norm <= tol || moved == S::zero();
                }
                break;
            }
            step = step * cast(0.5);
        }
        if accepted {
            step = (step * cast(2.0)).min(cast(1e6));
        } else {
            // backtracking exhausted: the iterate is numerically stationary
            break;
        }
        if converged {
            break;
        }
    }
    // recompute the residual at the final iterate
    let g = gradient(&values);
    let mut probe = kappa.clone();
    for (x, gi) in probe.iter_mut().zip(&g) {
        *x = *x + *gi;
    }
    project(&mut probe);
    gradient_norm = probe
        .iter()
        .zip(&kappa)
        .map(|(a, b)| (*a - *b).abs())
        .fold(S::zero(), S::max);
    converged = gradient_norm <= tol;

    let rows = (0..np)
        .map(|p| kappa[p * na..(p + 1) * na].to_vec())
        .collect();
    Ok(SmoothOptimum {
        order: BehavioralOrder::new(rows).expect("projected rows are stochastic"),
        value: obj,
        gradient_norm,
        iterations,
        converged,
    })
}

/// Euclidean projection onto the probability simplex (Duchi et al. 2008).
fn project_row_simplex<S: Real>(v: &mut [S]) {
    let n = v.len();
    if n == 1 {
        v[0] = S::one();
        return;
    }
    let mut u: Vec<S> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cssv = S::zero();
    let mut rho = 0usize;
    let mut theta = S::zero();
    for (i, ui) in u.iter().enumerate() {
        cssv = cssv + *ui;
        let t = (cssv - S::one()) / cast::<S>((i + 1) as f64);
        if *ui - t > S::zero() {
            rho = i + 1;
            theta = t;
        }
    }
    if rho == 0 {
        let uniform = S::one() / cast::<S>(n as f64);
        for x in v.iter_mut() {
            *x = uniform;
        }
        return;
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(S::zero());
    }
    // exact renormalization guards the row-sum invariant against float dust
    let sum: S = v.iter().copied().sum();
    for x in v.iter_mut() {
        *x = *x / sum;
    }
}

/// Mean demanded quantity of a behavioral order at a single-price instance.
pub fn behavioral_mean_demand<S: Real>(order: &BehavioralOrder<S>, actions: &[S]) -> S {
    order.mean_levels(actions)[0]
}
