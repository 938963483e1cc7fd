//! Strict-dominance machinery: the cutoff construction for uninformative
//! two-value markets, the dominance linear program with its dual belief
//! certificate, deterministic reduction of behavioral dominators, and the
//! rationalization roundtrip.

use thiserror::Error;

use crate::grid::Grid;
use crate::kernel::{expected_payoff, seu_value, KernelError, OrderRef, PayoffKernel};
use crate::lp::{behavioral_epigraph_lp, EpigraphSolution, LpError};
use crate::model::ModelFamily;
use crate::num::{cast, Real};
use crate::orders::{derandomize, purify_by_refinement, BehavioralOrder, LimitOrder, OrderError};
use crate::preferences::{Belief, PreferenceError};

/// Margins above this threshold count as strict dominance; the paper's
/// strict inequality has no finite-precision analogue, so the line is drawn
/// two orders of magnitude above the LP residual tolerance.
pub const EPS_DOM: f64 = 1e-7;
/// Gap below which a belief certificate counts as verified.
pub const VERIFY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DominanceError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error("cutoff construction needs an uninformative two-value market: {0}")]
    NotCutoffStyle(&'static str),
    #[error("result carries no dominator (margin {0} is below the strictness threshold)")]
    NotDominated(f64),
    #[error("refinement budget exhausted before the purified order dominated")]
    RefinementBudget,
}

/// Evaluator of the cumulative extra-buy and extra-sell functions of an
/// order against a price distribution:
/// `L(v) = sum_{p < v} w (1 - l(p))`, `R(v) = sum_{p >= v} w (1 + l(p))`.
///
/// `L` is nondecreasing from zero, `R` nonincreasing to zero; both are exact
/// grid sums. Levels outside `[-1, 1]` and levels at prices outside the unit
/// band are corrected first (such orders are trivially dominated), with the
/// number of corrected nodes reported.
#[derive(Debug, Clone)]
pub struct LrEvaluator<S> {
    prices: Vec<S>,
    weights: Vec<S>,
    levels: Vec<S>,
    buy_prefix: Vec<S>,  // buy_prefix[c] = sum_{i<c} w (1 - l)
    sell_suffix: Vec<S>, // sell_suffix[c] = sum_{i>=c} w (1 + l)
    pub corrected_nodes: usize,
}

impl<S: Real> LrEvaluator<S> {
    pub fn l_at(&self, v: S) -> S {
        let c = self.prices.partition_point(|p| *p < v);
        self.buy_prefix[c]
    }

    pub fn r_at(&self, v: S) -> S {
        let c = self.prices.partition_point(|p| *p < v);
        self.sell_suffix[c]
    }

    fn cut_count(&self) -> usize {
        self.prices.len() + 1
    }

    /// `L - R` at cut position `c` (between nodes `c-1` and `c`).
    fn imbalance(&self, c: usize) -> S {
        self.buy_prefix[c] - self.sell_suffix[c]
    }

    pub fn levels(&self) -> &[S] {
        &self.levels
    }
}

/// Builds the `L`/`R` evaluator for an order on a probability price grid.
pub fn lr_functions<S: Real>(l: &LimitOrder<S>, price_grid: &Grid<S>) -> LrEvaluator<S> {
    let one = S::one();
    let mut corrected = 0usize;
    let mut levels = Vec::with_capacity(price_grid.len());
    for (p, _) in price_grid.iter() {
        let raw = l.eval(p);
        let fixed = if p < -one {
            one
        } else if p > one {
            -one
        } else {
            raw.max(-one).min(one)
        };
        if fixed != raw {
            corrected += 1;
        }
        levels.push(fixed);
    }
    let n = price_grid.len();
    let mut buy_prefix = vec![S::zero(); n + 1];
    for i in 0..n {
        buy_prefix[i + 1] = buy_prefix[i] + price_grid.weight(i) * (one - levels[i]);
    }
    let mut sell_suffix = vec![S::zero(); n + 1];
    for i in (0..n).rev() {
        sell_suffix[i] = sell_suffix[i + 1] + price_grid.weight(i) * (one + levels[i]);
    }
    LrEvaluator {
        prices: price_grid.points().to_vec(),
        weights: price_grid.weights().to_vec(),
        levels,
        buy_prefix,
        sell_suffix,
        corrected_nodes: corrected,
    }
}

/// Certificate of the cutoff construction: the balanced cutoff location, the
/// extra-buy/extra-sell masses there, the dominating order, and the per-state
/// payoff gain it earns (state-independent by the balance condition).
#[derive(Debug, Clone)]
pub struct CutoffCertificate<S> {
    pub v: S,
    pub gain_per_state: Vec<S>,
    pub l_at_v: S,
    pub r_at_v: S,
    /// The input already was a cutoff order almost everywhere.
    pub already_cutoff: bool,
    pub dominator: LimitOrder<S>,
    pub corrected_nodes: usize,
}

/// Runs the intermediate-value cutoff construction on an uninformative
/// two-value instance.
///
/// The balance point of `L - R` is found by bisection over the monotone cut
/// positions; when the crossing happens at a price atom the node is split
/// with an intermediate level, the grid analogue of balancing under an
/// atomless distribution, so `L = R` holds exactly and the gain is the same
/// in every state.
pub fn find_dominating_cutoff<S: Real>(
    l: &LimitOrder<S>,
    family: &ModelFamily<S>,
) -> Result<CutoffCertificate<S>, DominanceError> {
    let values = family.value_grid();
    let unit = (values.point(0) + S::one()).abs() <= cast(1e-12)
        && (values.point(values.len() - 1) - S::one()).abs() <= cast(1e-12)
        && values.len() == 2;
    if !unit {
        return Err(DominanceError::NotCutoffStyle(
            "value grid must be the two points -1 and 1",
        ));
    }
    if !family.is_price_independent(cast(1e-9)) {
        return Err(DominanceError::NotCutoffStyle(
            "density must not depend on the price",
        ));
    }
    if !family.price_grid().is_probability() {
        return Err(DominanceError::NotCutoffStyle(
            "price grid must be a probability measure",
        ));
    }

    let ev = lr_functions(l, family.price_grid());
    let n = ev.prices.len();
    let tol = cast::<S>(1e-12);

    // smallest cut with nonnegative imbalance (monotone bisection)
    let mut lo = 0usize;
    let mut hi = ev.cut_count() - 1;
    debug_assert!(ev.imbalance(hi) >= -tol);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if ev.imbalance(mid) >= S::zero() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let c = lo;

    let mut dom_levels: Vec<S> = Vec::with_capacity(n);
    let v;
    if ev.imbalance(c).abs() <= tol {
        // balanced in the open gap at cut c
        v = if c == 0 {
            ev.prices[0] - S::one()
        } else if c == n {
            ev.prices[n - 1] + S::one()
        } else {
            (ev.prices[c - 1] + ev.prices[c]) * cast(0.5)
        };
        for i in 0..n {
            dom_levels.push(if i < c { S::one() } else { -S::one() });
        }
    } else {
        // crossing sits on node c-1: split it with an intermediate level
        let j = c - 1;
        let d = ev.imbalance(j);
        let s = (-d / ev.weights[j] - S::one()).max(-S::one()).min(S::one());
        v = ev.prices[j];
        for i in 0..n {
            dom_levels.push(if i < j {
                S::one()
            } else if i == j {
                s
            } else {
                -S::one()
            });
        }
    }

    let deltas: Vec<S> = dom_levels
        .iter()
        .zip(ev.levels())
        .map(|(d, l)| *d - *l)
        .collect();
    let mut l_at_v = S::zero();
    let mut r_at_v = S::zero();
    for (delta, w) in deltas.iter().zip(&ev.weights) {
        l_at_v = l_at_v + *w * delta.max(S::zero());
        r_at_v = r_at_v + *w * (-*delta).max(S::zero());
    }
    let already_cutoff = deltas
        .iter()
        .zip(&ev.weights)
        .all(|(d, w)| *w == S::zero() || d.abs() <= cast(1e-9));

    let mut gain_per_state = Vec::with_capacity(family.state_count());
    for y in 0..family.state_count() {
        let m = family.conditional_value_sum(0, y);
        let mut gain = S::zero();
        for (i, delta) in deltas.iter().enumerate() {
            gain = gain + ev.weights[i] * *delta * (m - ev.prices[i]);
        }
        gain_per_state.push(if already_cutoff { S::zero() } else { gain });
    }

    let dominator = if already_cutoff {
        LimitOrder::from_grid_levels(family.price_grid(), ev.levels())
    } else {
        LimitOrder::from_grid_levels(family.price_grid(), &dom_levels)
    };

    Ok(CutoffCertificate {
        v,
        gain_per_state,
        l_at_v,
        r_at_v,
        already_cutoff,
        dominator,
        corrected_nodes: ev.corrected_nodes,
    })
}

/// Solver statistics attached to a dominance result.
#[derive(Debug, Clone)]
pub struct LpStats<S> {
    pub iterations: usize,
    pub residual: S,
}

/// Exactly one certificate accompanies every margin: a dominating behavioral
/// order when the margin is strict, otherwise a belief under which the
/// tested order is optimal.
#[derive(Debug, Clone)]
pub enum DominanceCertificate<S> {
    Dominator(BehavioralOrder<S>),
    Belief(Belief<S>),
}

#[derive(Debug, Clone)]
pub struct DominanceResult<S> {
    /// Best worst-state payoff gap any behavioral order earns over the
    /// tested order.
    pub margin: S,
    pub certificate: DominanceCertificate<S>,
    pub lp_stats: LpStats<S>,
}

impl<S: Real> DominanceResult<S> {
    pub fn is_dominated(&self) -> bool {
        matches!(self.certificate, DominanceCertificate::Dominator(_))
    }

    pub fn belief(&self) -> Option<&Belief<S>> {
        match &self.certificate {
            DominanceCertificate::Belief(b) => Some(b),
            DominanceCertificate::Dominator(_) => None,
        }
    }

    pub fn dominator(&self) -> Option<&BehavioralOrder<S>> {
        match &self.certificate {
            DominanceCertificate::Dominator(d) => Some(d),
            DominanceCertificate::Belief(_) => None,
        }
    }
}

fn state_payoff_rows<S: Real>(
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Vec<Vec<S>> {
    let np = family.price_grid().len();
    let na = kernel.actions().len();
    (0..family.state_count())
        .map(|y| {
            let mut row = vec![S::zero(); np * na];
            for p in 0..np {
                let wp = family.price_grid().weight(p);
                for a in 0..na {
                    row[p * na + a] = wp * kernel.w(p, a, y);
                }
            }
            row
        })
        .collect()
}

fn solve_epigraph_with_retry<S: Real>(
    np: usize,
    na: usize,
    payoff: &[Vec<S>],
    rhs: &[S],
) -> Result<EpigraphSolution<S>, LpError> {
    match behavioral_epigraph_lp(np, na, payoff, rhs) {
        Err(LpError::IterationLimit(_)) => {
            // deterministic tiny perturbation, then retry once
            let perturbed: Vec<Vec<S>> = payoff
                .iter()
                .enumerate()
                .map(|(j, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(i, v)| {
                            let salt = ((i.wrapping_mul(2654435761).wrapping_add(j * 97)) % 1009)
                                as f64
                                / 1009.0
                                - 0.5;
                            *v + cast::<S>(1e-12 * salt)
                        })
                        .collect()
                })
                .collect();
            behavioral_epigraph_lp(np, na, &perturbed, rhs)
        }
        other => other,
    }
}

/// Tests an order for strict dominance by behavioral orders.
///
/// Maximizes the worst-state payoff gap over all behavioral orders; a margin
/// above [`EPS_DOM`] certifies dominance and returns the witness, otherwise
/// the dual optimum is a belief under which the tested order is optimal
/// within the margin.
pub fn dominance_lp<'a, S: Real>(
    order: impl Into<OrderRef<'a, S>> + Copy,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<DominanceResult<S>, DominanceError> {
    let np = family.price_grid().len();
    let na = kernel.actions().len();
    let payoff = state_payoff_rows(kernel, family);
    let rhs: Vec<S> = (0..family.state_count())
        .map(|y| expected_payoff(order, y, kernel, family))
        .collect::<Result<_, _>>()?;
    let sol = solve_epigraph_with_retry(np, na, &payoff, &rhs)?;
    let certificate = if sol.margin > cast(EPS_DOM) {
        DominanceCertificate::Dominator(sol.kappa)
    } else {
        DominanceCertificate::Belief(Belief::new(sol.weights.clone())?)
    };
    Ok(DominanceResult {
        margin: sol.margin,
        certificate,
        lp_stats: LpStats {
            iterations: sol.iterations,
            residual: sol.residual,
        },
    })
}

/// Outcome of checking a belief certificate behaviorally.
#[derive(Debug, Clone)]
pub struct VerificationReport<S> {
    /// Best achievable expected utility under the belief, over all
    /// behavioral orders (computed exactly price by price).
    pub best_value: S,
    pub order_value: S,
    /// `best_value - order_value`.
    pub gap: S,
    pub passed: bool,
}

/// Checks that an order maximizes expected utility under a belief, up to
/// `tol`, against the exact per-price argmax.
pub fn verify_seu_optimal<'a, S: Real>(
    order: impl Into<OrderRef<'a, S>> + Copy,
    belief: &Belief<S>,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
    tol: S,
) -> Result<VerificationReport<S>, DominanceError> {
    let na = kernel.actions().len();
    let mut best = S::zero();
    for p in 0..family.price_grid().len() {
        let mut node_best = S::neg_infinity();
        for a in 0..na {
            let mut v = S::zero();
            for (y, b) in belief.weights().iter().enumerate() {
                if *b > S::zero() {
                    v = v + *b * kernel.w(p, a, y);
                }
            }
            node_best = node_best.max(v);
        }
        best = best + family.price_grid().weight(p) * node_best;
    }
    let order_value = seu_value(order, belief, kernel, family)?;
    let gap = best - order_value;
    Ok(VerificationReport {
        best_value: best,
        order_value,
        gap,
        passed: gap <= tol,
    })
}

/// Deterministic reduction of a behavioral dominator. When price atoms had
/// to be split, the refined family the order lives on is returned with it.
#[derive(Debug, Clone)]
pub struct DominatorReduction<S> {
    pub order: LimitOrder<S>,
    pub refined: Option<(ModelFamily<S>, PayoffKernel<S>)>,
}

/// Turns a behavioral dominator into a deterministic one.
///
/// Concave utilities take the mean-action reduction, which never lowers any
/// state's payoff; otherwise price atoms are split until the purified
/// deterministic order still beats the tested order in every state.
pub fn deterministic_dominator<'a, S: Real>(
    tested: impl Into<OrderRef<'a, S>> + Copy,
    result: &DominanceResult<S>,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<DominatorReduction<S>, DominanceError> {
    let Some(kappa) = result.dominator() else {
        return Err(DominanceError::NotDominated(
            result.margin.to_f64().unwrap_or(f64::NAN),
        ));
    };
    let tested_values: Vec<S> = (0..family.state_count())
        .map(|y| expected_payoff(tested, y, kernel, family))
        .collect::<Result<_, _>>()?;
    reduce_dominator(kappa, &tested_values, None, kernel, family)
}

/// Shared reduction: targets are either per-state payoffs (`betas` absent)
/// or per-belief expected payoffs of the tested order.
fn reduce_dominator<S: Real>(
    kappa: &BehavioralOrder<S>,
    tested_values: &[S],
    betas: Option<&[Belief<S>]>,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<DominatorReduction<S>, DominanceError> {
    let guard = cast::<S>(1e-12);
    let behavioral_values = constraint_values(OrderRef::Behavioral(kappa), betas, kernel, family)?;

    // mean-action reduction first
    let mean = derandomize(kappa, kernel.actions(), family.price_grid());
    let mean_values = constraint_values((&mean).into(), betas, kernel, family)?;
    let jensen_ok = kernel.concave_in_actions()
        || mean_values
            .iter()
            .zip(&behavioral_values)
            .all(|(m, b)| *m >= *b - guard);
    if jensen_ok {
        let dominates = mean_values
            .iter()
            .zip(tested_values)
            .all(|(m, t)| *m > *t);
        if dominates {
            return Ok(DominatorReduction {
                order: mean,
                refined: None,
            });
        }
    }

    // atom-splitting branch
    let mut splits = 2usize;
    while splits <= 4096 {
        let purified = purify_by_refinement(kappa, family, kernel.actions(), splits)?;
        let refined_kernel = kernel.split_price_rows(splits);
        let values = constraint_values(
            (&purified.order).into(),
            betas,
            &refined_kernel,
            &purified.family,
        )?;
        if values.iter().zip(tested_values).all(|(v, t)| *v > *t) {
            return Ok(DominatorReduction {
                order: purified.order,
                refined: Some((purified.family, refined_kernel)),
            });
        }
        splits *= 2;
    }
    Err(DominanceError::RefinementBudget)
}

fn constraint_values<S: Real>(
    order: OrderRef<'_, S>,
    betas: Option<&[Belief<S>]>,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<Vec<S>, DominanceError> {
    match betas {
        None => Ok((0..family.state_count())
            .map(|y| expected_payoff(order, y, kernel, family))
            .collect::<Result<_, _>>()?),
        Some(list) => Ok(list
            .iter()
            .map(|b| seu_value(order, b, kernel, family))
            .collect::<Result<_, _>>()?),
    }
}

/// Outcome of the rationalization roundtrip.
#[derive(Debug, Clone)]
pub enum Rationalization<S> {
    /// The order is undominated; the belief certificate and its behavioral
    /// verification are returned.
    Rationalized {
        belief: Belief<S>,
        verification: VerificationReport<S>,
        result: DominanceResult<S>,
    },
    /// The order is strictly dominated; the contrapositive certificate is a
    /// deterministic dominating order.
    Dominated {
        reduction: DominatorReduction<S>,
        result: DominanceResult<S>,
    },
}

/// Extracts the rationalizing belief of a deterministic order, or a
/// deterministic dominator when none exists.
pub fn rationalize<S: Real>(
    order: &LimitOrder<S>,
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<Rationalization<S>, DominanceError> {
    let result = dominance_lp(order, kernel, family)?;
    match &result.certificate {
        DominanceCertificate::Belief(belief) => {
            let verification =
                verify_seu_optimal(order, belief, kernel, family, cast(VERIFY_TOL))?;
            Ok(Rationalization::Rationalized {
                belief: belief.clone(),
                verification,
                result,
            })
        }
        DominanceCertificate::Dominator(_) => {
            let reduction = deterministic_dominator(order, &result, kernel, family)?;
            Ok(Rationalization::Dominated { reduction, result })
        }
    }
}

/// Outcome of the convex-hull-restricted rationalization.
#[derive(Debug, Clone)]
pub enum RestrictedRationalization<S> {
    Rationalized {
        /// Mixture weights over the given belief set.
        lambda: Vec<S>,
        /// The mixed belief, a point of the set's convex hull.
        belief: Belief<S>,
        verification: VerificationReport<S>,
        margin: S,
    },
    /// The unanimity premise fails: some deterministic order beats the
    /// tested one under every belief of the set.
    PremiseViolated {
        margin: S,
        reduction: DominatorReduction<S>,
    },
}

/// Rationalizes an order with a belief restricted to the convex hull of a
/// finite belief set, by applying the dominance program to the model whose
/// "states" are the set's members.
pub fn rationalize_restricted<S: Real>(
    order: &LimitOrder<S>,
    pi: &[Belief<S>],
    kernel: &PayoffKernel<S>,
    family: &ModelFamily<S>,
) -> Result<RestrictedRationalization<S>, DominanceError> {
    if pi.is_empty() {
        return Err(DominanceError::Preference(
            PreferenceError::EmptyBeliefSet,
        ));
    }
    let np = family.price_grid().len();
    let na = kernel.actions().len();
    let mut payoff = Vec::with_capacity(pi.len());
    let mut rhs = Vec::with_capacity(pi.len());
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
        rhs.push(seu_value(order, beta, kernel, family)?);
    }
    let sol = solve_epigraph_with_retry(np, na, &payoff, &rhs)?;
    if sol.margin > cast(EPS_DOM) {
        let reduction = reduce_dominator(&sol.kappa, &rhs, Some(pi), kernel, family)?;
        return Ok(RestrictedRationalization::PremiseViolated {
            margin: sol.margin,
            reduction,
        });
    }
    let lambda = sol.weights;
    let belief = Belief::mixture(pi, &lambda)?;
    let verification = verify_seu_optimal(order, &belief, kernel, family, cast(VERIFY_TOL))?;
    Ok(RestrictedRationalization::Rationalized {
        lambda,
        belief,
        verification,
        margin: sol.margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orders::unit_cutoff;
    use crate::scenario::presets;
    use crate::utility::UtilitySpec;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lr_vanishes_at_a_cutoff_point() {
        let fam = presets::motivating_family(40);
        let ev = lr_functions(&unit_cutoff(0.3), fam.price_grid());
        assert_eq!(ev.l_at(0.3), 0.0);
        assert_eq!(ev.r_at(0.3), 0.0);
        assert_eq!(ev.corrected_nodes, 0);
    }

    #[test]
    fn lr_of_abstention_is_linear_in_the_cut() {
        let fam = presets::motivating_family(100);
        let ev = lr_functions(&crate::orders::LimitOrder::abstain(), fam.price_grid());
        // L(v) = (1 + v)/2 and R(v) = (1 - v)/2 exactly at cell boundaries
        for v in [-0.5, 0.0, 0.42] {
            assert!((ev.l_at(v) - (1.0 + v) / 2.0).abs() <= 1e-12);
            assert!((ev.r_at(v) - (1.0 - v) / 2.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn lr_identities_on_random_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fam = presets::motivating_family(64);
        for _ in 0..50 {
            let levels: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let l = crate::orders::LimitOrder::from_grid_levels(fam.price_grid(), &levels);
            let ev = lr_functions(&l, fam.price_grid());
            let integral: f64 = fam
                .price_grid()
                .iter()
                .map(|(p, w)| w * l.eval(p))
                .sum();
            let l1 = ev.l_at(1.0 + 1e-12);
            let r_1 = ev.r_at(-1.0 - 1e-12);
            assert!((l1 + r_1 - 2.0).abs() <= 1e-12);
            assert!((l1 - r_1 + 2.0 * integral).abs() <= 1e-12);
        }
    }

    #[test]
    fn cutoff_construction_on_abstention() {
        let fam = presets::motivating_family(10_000);
        let cert = find_dominating_cutoff(&crate::orders::LimitOrder::abstain(), &fam).unwrap();
        assert!(cert.v.abs() <= 1e-6, "v = {}", cert.v);
        assert!(!cert.already_cutoff);
        assert!((cert.l_at_v - cert.r_at_v).abs() <= 1e-9);
        for gain in &cert.gain_per_state {
            assert!((gain - 0.5).abs() <= 1e-3, "gain {gain}");
        }
        let spread = cert.gain_per_state[0] - cert.gain_per_state[1];
        assert!(spread.abs() <= 1e-6);
    }

    #[test]
    fn cutoff_construction_flags_cutoffs() {
        let fam = presets::motivating_family(200);
        let cert = find_dominating_cutoff(&unit_cutoff(0.3), &fam).unwrap();
        assert!(cert.already_cutoff);
        assert!(cert.gain_per_state.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn cutoff_construction_on_mimicking_order() {
        let fam = presets::motivating_family(10_000);
        let cert = find_dominating_cutoff(&presets::mimicking_maxmin_order(), &fam).unwrap();
        assert!(cert.v.abs() <= 1e-6);
        for gain in &cert.gain_per_state {
            assert!((gain - 0.125).abs() <= 1e-3, "gain {gain}");
        }
    }

    #[test]
    fn cutoff_gains_are_positive_and_state_equal_on_random_battery() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let fam = presets::motivating_family(500);
        for _ in 0..500 {
            let n_breaks = rng.gen_range(0..6);
            let mut levels: Vec<f64> = Vec::new();
            let node_levels: Vec<f64> = {
                let mut bps: Vec<f64> = (0..n_breaks).map(|_| rng.gen_range(-1.0..1.0)).collect();
                bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
                bps.dedup();
                let vals: Vec<f64> = (0..bps.len() + 1)
                    .map(|_| rng.gen_range(-0.95..0.95))
                    .collect();
                let order = crate::orders::LimitOrder::new(bps, vals).unwrap();
                fam.price_grid().points().iter().map(|p| order.eval(*p)).collect()
            };
            levels.extend(node_levels);
            let l = crate::orders::LimitOrder::from_grid_levels(fam.price_grid(), &levels);
            let cert = find_dominating_cutoff(&l, &fam).unwrap();
            assert!(!cert.already_cutoff);
            assert!((cert.l_at_v - cert.r_at_v).abs() <= 1e-9);
            assert!(cert.gain_per_state.iter().all(|g| *g > 0.0));
            let spread = (cert.gain_per_state[0] - cert.gain_per_state[1]).abs();
            assert!(spread <= 1e-6, "spread {spread}");
        }
    }

    #[test]
    fn urn_dominance_margins() {
        let (fam, kernel) = presets::urn_instance(0.49);

        // the sure bet is dominated by the even mix of the ambiguous bets
        let bet3 = presets::urn_bet_order(presets::BET_THREE);
        let res = dominance_lp(&bet3, &kernel, &fam).unwrap();
        assert!(res.is_dominated());
        assert!((res.margin - 0.01).abs() <= 1e-9, "margin {}", res.margin);
        let dom = res.dominator().unwrap();
        let row = dom.row(0);
        assert!((row[presets::BET_ONE] - 0.5).abs() <= 1e-9);
        assert!((row[presets::BET_TWO] - 0.5).abs() <= 1e-9);
        assert!(row[presets::BET_THREE].abs() <= 1e-9);
        assert!(res.lp_stats.residual <= 1e-7);

        // the ambiguous bets are undominated with verified beliefs
        for bet in [presets::BET_ONE, presets::BET_TWO] {
            let order = presets::urn_bet_order(bet);
            let res = dominance_lp(&order, &kernel, &fam).unwrap();
            assert!(!res.is_dominated(), "bet {bet} margin {}", res.margin);
            assert!(res.margin <= 1e-9);
            let belief = res.belief().unwrap();
            let report =
                verify_seu_optimal(&order, belief, &kernel, &fam, 1e-7).unwrap();
            assert!(report.passed, "gap {}", report.gap);
        }

        // a fair known urn removes the strict margin
        let (fam2, kernel2) = presets::urn_instance(0.5);
        let res = dominance_lp(&bet3, &kernel2, &fam2).unwrap();
        assert!(!res.is_dominated());
        assert!(res.margin <= 1e-9);
    }

    #[test]
    fn mimicking_order_is_dominated_by_one_eighth() {
        let fam = presets::motivating_family(100);
        let kernel = PayoffKernel::build(&fam, &UtilitySpec::linear(), 5).unwrap();
        let res = dominance_lp(&presets::mimicking_maxmin_order(), &kernel, &fam).unwrap();
        assert!(res.is_dominated());
        assert!((res.margin - 0.125).abs() <= 1e-9, "margin {}", res.margin);
    }

    #[test]
    fn urn_mean_bet_reduction_is_exact() {
        let (fam, kernel) = presets::urn_instance(0.49);
        let bet3 = presets::urn_bet_order(presets::BET_THREE);
        let res = dominance_lp(&bet3, &kernel, &fam).unwrap();
        let red = deterministic_dominator(&bet3, &res, &kernel, &fam).unwrap();
        assert!(red.refined.is_none());
        // the mean of the even mix sits halfway between the ambiguous bets
        // and pays exactly one half in every urn composition
        for k in [0usize, 50, 100] {
            let v = expected_payoff(&red.order, k, &kernel, &fam).unwrap();
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn degenerate_dominator_reduces_to_itself() {
        let fam = presets::motivating_family(20);
        let kernel = PayoffKernel::build(&fam, &UtilitySpec::linear(), 5).unwrap();
        let res = dominance_lp(&presets::mimicking_maxmin_order(), &kernel, &fam).unwrap();
        let dom = res.dominator().unwrap();
        if dom.is_deterministic() {
            let red =
                deterministic_dominator(&presets::mimicking_maxmin_order(), &res, &kernel, &fam)
                    .unwrap();
            let means = dom.mean_levels(kernel.actions());
            assert_eq!(red.order.grid_levels(fam.price_grid()), means);
        }
    }

    #[test]
    fn jensen_reduction_dominates_statewise_for_exponential_utility() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let fam = presets::motivating_family(16);
        let kernel =
            PayoffKernel::build(&fam, &UtilitySpec::exponential(1.2).unwrap(), 5).unwrap();
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..16)
                .map(|_| {
                    let mut row: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|w| *w /= s);
                    row
                })
                .collect();
            let b = BehavioralOrder::new(rows).unwrap();
            let mean = derandomize(&b, kernel.actions(), fam.price_grid());
            for y in 0..2 {
                let vb = expected_payoff(&b, y, &kernel, &fam).unwrap();
                let vm = expected_payoff(&mean, y, &kernel, &fam).unwrap();
                assert!(vm >= vb - 1e-12, "state {y}: {vm} < {vb}");
            }
        }
    }

    #[test]
    fn rationalize_cutoff_zero_yields_even_belief() {
        let fam = presets::motivating_family(100);
        let kernel = PayoffKernel::build(&fam, &UtilitySpec::linear(), 5).unwrap();
        match rationalize(&unit_cutoff(0.0), &kernel, &fam).unwrap() {
            Rationalization::Rationalized {
                belief,
                verification,
                ..
            } => {
                assert!(verification.passed, "gap {}", verification.gap);
                assert!((belief.weights()[0] - 0.5).abs() <= 1e-9);
                assert!((belief.weights()[1] - 0.5).abs() <= 1e-9);
            }
            Rationalization::Dominated { result, .. } => {
                panic!("cutoff(0) flagged dominated with margin {}", result.margin)
            }
        }
    }

    #[test]
    fn rationalize_mimicking_order_returns_uniform_gain_dominator() {
        let fam = presets::motivating_family(100);
        let kernel = PayoffKernel::build(&fam, &UtilitySpec::linear(), 5).unwrap();
        let mim = presets::mimicking_maxmin_order();
        match rationalize(&mim, &kernel, &fam).unwrap() {
            Rationalization::Dominated { reduction, result } => {
                assert!(result.margin >= 0.125 - 1e-6);
                assert!(reduction.refined.is_none());
                for y in 0..2 {
                    let vd = expected_payoff(&reduction.order, y, &kernel, &fam).unwrap();
                    let vt = expected_payoff(&mim, y, &kernel, &fam).unwrap();
                    assert!(vd - vt >= 0.125 - 1e-6, "state {y}");
                }
            }
            Rationalization::Rationalized { .. } => panic!("mimicking order must be dominated"),
        }
    }

    #[test]
    fn restricted_rationalization_of_single_price_abstention() {
        let (fam, kernel) = presets::known_price_instance(0.0);
        let pi = presets::point_belief_set();
        let abstain = crate::orders::LimitOrder::abstain();
        match rationalize_restricted(&abstain, &pi, &kernel, &fam).unwrap() {
            RestrictedRationalization::Rationalized {
                lambda,
                belief,
                verification,
                ..
            } => {
                assert!((lambda[0] - 0.5).abs() <= 1e-8, "lambda {lambda:?}");
                assert!((lambda[1] - 0.5).abs() <= 1e-8);
                let sum: f64 = lambda.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                assert!(verification.passed);
                assert!((belief.weights()[0] - 0.5).abs() <= 1e-8);
            }
            RestrictedRationalization::PremiseViolated { margin, .. } => {
                panic!("premise wrongly violated with margin {margin}")
            }
        }
    }

    #[test]
    fn restricted_with_singleton_forces_the_member() {
        let fam = presets::motivating_family(40);
        let kernel = PayoffKernel::build(&fam, &UtilitySpec::linear(), 5).unwrap();
        let beta = Belief::new(vec![0.5, 0.5]).unwrap();
        let order = crate::preferences::optimize_seu(&beta, &kernel, &fam).unwrap();
        match rationalize_restricted(&order, std::slice::from_ref(&beta), &kernel, &fam).unwrap() {
            RestrictedRationalization::Rationalized { lambda, belief, verification, .. } => {
                assert!((lambda[0] - 1.0).abs() <= 1e-12);
                assert_eq!(belief.weights(), beta.weights());
                assert!(verification.passed);
            }
            RestrictedRationalization::PremiseViolated { .. } => panic!("singleton premise holds"),
        }
    }

    #[test]
    fn restricted_with_all_point_beliefs_matches_unrestricted_margin() {
        let fam = presets::motivating_family(40);
        let kernel = PayoffKernel::build(&fam, &UtilitySpec::linear(), 5).unwrap();
        let mim = presets::mimicking_maxmin_order();
        let unrestricted = dominance_lp(&mim, &kernel, &fam).unwrap();
        match rationalize_restricted(&mim, &presets::point_belief_set(), &kernel, &fam).unwrap() {
            RestrictedRationalization::PremiseViolated { margin, .. } => {
                assert!((margin - unrestricted.margin).abs() <= 1e-9);
            }
            RestrictedRationalization::Rationalized { .. } => {
                panic!("dominated order cannot satisfy the premise")
            }
        }
    }

    #[test]
    fn verify_seu_optimal_examples() {
        let fam = presets::motivating_family(100);
        let kernel = PayoffKernel::build(&fam, &UtilitySpec::linear(), 5).unwrap();

        let half = Belief::uniform(2);
        let opt = crate::preferences::optimize_seu(&half, &kernel, &fam).unwrap();
        let rep = verify_seu_optimal(&opt, &half, &kernel, &fam, 1e-12).unwrap();
        assert!(rep.passed);
        assert!(rep.gap.abs() <= 1e-12);

        let cut = unit_cutoff(0.0);
        let rep = verify_seu_optimal(&cut, &half, &kernel, &fam, 1e-10).unwrap();
        assert!(rep.passed, "gap {}", rep.gap);

        // under the optimistic point belief the zero cutoff is suboptimal
        let point = Belief::point(1, 2);
        let rep = verify_seu_optimal(&cut, &point, &kernel, &fam, 1e-10).unwrap();
        assert!(!rep.passed);
        assert!(rep.gap > 0.05);
    }

    #[test]
    fn strong_duality_and_belief_verification_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..40 {
            let (fam, kernel, _) = random_family(&mut rng);
            let levels: Vec<f64> = (0..fam.price_grid().len())
                .map(|_| kernel.actions()[rng.gen_range(0..kernel.actions().len())])
                .collect();
            let order = crate::orders::LimitOrder::from_grid_levels(fam.price_grid(), &levels);
            let res = dominance_lp(&order, &kernel, &fam).unwrap();
            assert!(res.lp_stats.residual <= 1e-7);
            if let Some(belief) = res.belief() {
                let rep = verify_seu_optimal(&order, belief, &kernel, &fam, 1e-7).unwrap();
                assert!(rep.passed, "gap {} margin {}", rep.gap, res.margin);
            }
        }
    }

    #[test]
    fn utility_scaling_preserves_verdicts_and_scales_margins() {
        let fam = presets::motivating_family(40);
        let linear = PayoffKernel::build(&fam, &UtilitySpec::linear(), 5).unwrap();
        let doubled = PayoffKernel::build(
            &fam,
            &UtilitySpec::piecewise_linear(vec![], vec![2.0]).unwrap(),
            5,
        )
        .unwrap();
        let mim = presets::mimicking_maxmin_order();
        let r1 = dominance_lp(&mim, &linear, &fam).unwrap();
        let r2 = dominance_lp(&mim, &doubled, &fam).unwrap();
        assert_eq!(r1.is_dominated(), r2.is_dominated());
        assert!((r2.margin - 2.0 * r1.margin).abs() <= 1e-9);

        let half = Belief::uniform(2);
        let o1 = crate::preferences::optimize_seu(&half, &linear, &fam).unwrap();
        let o2 = crate::preferences::optimize_seu(&half, &doubled, &fam).unwrap();
        assert_eq!(
            o1.grid_levels(fam.price_grid()),
            o2.grid_levels(fam.price_grid())
        );
    }

    /// Small random utility family for roundtrip-style tests.
    pub fn random_family(
        rng: &mut ChaCha8Rng,
    ) -> (ModelFamily<f64>, PayoffKernel<f64>, UtilitySpec<f64>) {
        use crate::model::{build_model, GridSpec, ModelSpec, StateDensity};
        let np = rng.gen_range(2..=8);
        let nx = rng.gen_range(2..=3);
        let ny = rng.gen_range(1..=4);
        let mut points: Vec<f64> = (0..np).map(|_| rng.gen_range(-1.0..1.0)).collect();
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        let np = points.len();
        let mut weights: Vec<f64> = (0..np).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        let value_points: Vec<f64> = match nx {
            2 => vec![-1.0, 1.0],
            _ => vec![-1.0, 0.0, 1.0],
        };
        let states = (0..ny)
            .map(|_| {
                let rows: Vec<Vec<f64>> = (0..np)
                    .map(|_| (0..nx).map(|_| rng.gen_range(0.05..1.0)).collect())
                    .collect();
                // normalize to mass one against the grids so the tabulated
                // density passes the renormalization slack
                StateDensity::Density(rows)
            })
            .collect::<Vec<_>>();
        // build once to learn the mass, then rescale rows
        let spec = ModelSpec {
            price_grid: GridSpec::Explicit {
                points: points.clone(),
                weights: weights.clone(),
            },
            value_grid: GridSpec::Explicit {
                points: value_points.clone(),
                weights: vec![1.0; nx],
            },
            action_bounds: (-1.0, 1.0),
            states: states
                .iter()
                .map(|s| match s {
                    StateDensity::Density(rows) => {
                        let mut mass = 0.0;
                        for (p, row) in rows.iter().enumerate() {
                            for v in row {
                                mass += weights[p] * v;
                            }
                        }
                        StateDensity::Density(
                            rows.iter()
                                .map(|row| row.iter().map(|v| v / mass).collect())
                                .collect(),
                        )
                    }
                    _ => unreachable!(),
                })
                .collect(),
            integrability_bound: None,
        };
        let fam = build_model(&spec).unwrap();
        let utility = if rng.gen_bool(0.5) {
            UtilitySpec::linear()
        } else {
            UtilitySpec::exponential(rng.gen_range(0.5..2.0)).unwrap()
        };
        let na = [3usize, 5, 7, 9][rng.gen_range(0..4)];
        let kernel = PayoffKernel::build(&fam, &utility, na).unwrap();
        (fam, kernel, utility)
    }
}
