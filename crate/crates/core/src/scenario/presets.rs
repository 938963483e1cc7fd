//! Canonical instances used by the scenario runners and throughout the test
//! suite.

use crate::kernel::PayoffKernel;
use crate::model::{build_model, GridSpec, ModelFamily, ModelSpec, StateDensity};
use crate::orders::LimitOrder;
use crate::preferences::{Belief, SecondOrderPrior};
use crate::utility::UtilitySpec;

/// Two-state uninformative-price family: the final value is +1 with
/// probability 1/4 (pessimistic state) or 3/4 (optimistic state), prices are
/// uniform on [-1, 1] and carry no information about the value.
///
/// Use a node count divisible by four so the quarter-mass landmarks at
/// -1/2, 0, 1/2 fall exactly between grid nodes.
pub fn motivating_family(n_prices: usize) -> ModelFamily<f64> {
    build_model(&motivating_spec(n_prices)).expect("preset family is well formed")
}

/// Declarative form of [`motivating_family`].
pub fn motivating_spec(n_prices: usize) -> ModelSpec {
    ModelSpec {
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
    }
}

/// The order mimicking the worst-case agent's known-price demand: buy one
/// unit below -1/2, abstain in between, sell one unit at and above 1/2.
pub fn mimicking_maxmin_order() -> LimitOrder<f64> {
    LimitOrder::new(vec![-0.5, 0.5], vec![1.0, 0.0, -1.0]).expect("static order")
}

/// Point beliefs on the two states of the motivating family.
pub fn point_belief_set() -> Vec<Belief<f64>> {
    vec![Belief::point(0, 2), Belief::point(1, 2)]
}

/// Even second-order prior over the two point beliefs.
pub fn two_belief_prior() -> SecondOrderPrior<f64> {
    SecondOrderPrior::new(vec![0.5, 0.5], point_belief_set()).expect("static prior")
}

/// Single-known-price version of the motivating instance: one price node at
/// `p`, linear utility, five action nodes.
pub fn known_price_instance(p: f64) -> (ModelFamily<f64>, PayoffKernel<f64>) {
    let fam = build_model(&ModelSpec {
        price_grid: GridSpec::Explicit {
            points: vec![p],
            weights: vec![1.0],
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
    .expect("single-price family");
    let kernel = PayoffKernel::build(&fam, &UtilitySpec::linear(), 5).expect("kernel");
    (fam, kernel)
}

/// Number of composition states of the ambiguous urn (0..=100 black balls).
pub const URN_STATES: usize = 101;

/// Index of each bet on the action axis of the urn instance. The first two
/// bets sit on adjacent coordinates so their blends are portfolio mixes.
pub const BET_ONE: usize = 0;
pub const BET_TWO: usize = 1;
pub const BET_THREE: usize = 2;

/// Two-urn betting instance: a hundred-ball ambiguous urn with unknown
/// composition (states k = number of black balls) and a known urn paying on
/// white with the given probability. Payoffs are winning probabilities,
/// supplied as a raw kernel; bet one wins on ambiguous-black, bet two on
/// ambiguous-white, bet three on known-white.
pub fn urn_instance(known_white: f64) -> (ModelFamily<f64>, PayoffKernel<f64>) {
    let fam = build_model(&ModelSpec {
        price_grid: GridSpec::Explicit {
            points: vec![0.0],
            weights: vec![1.0],
        },
        value_grid: GridSpec::Explicit {
            points: vec![0.0],
            weights: vec![1.0],
        },
        action_bounds: (-1.0, 1.0),
        states: vec![StateDensity::ValuePmf(vec![1.0]); URN_STATES],
        integrability_bound: None,
    })
    .expect("urn family");
    let mut plane = vec![vec![0.0f64; URN_STATES]; 3];
    for k in 0..URN_STATES {
        plane[BET_ONE][k] = k as f64 / 100.0;
        plane[BET_TWO][k] = (100 - k) as f64 / 100.0;
        plane[BET_THREE][k] = known_white;
    }
    let kernel =
        PayoffKernel::from_raw(vec![plane], vec![-1.0, 0.0, 1.0]).expect("raw urn kernel");
    (fam, kernel)
}

/// The constant order playing one bet of the urn instance.
pub fn urn_bet_order(bet: usize) -> LimitOrder<f64> {
    let coords = [-1.0, 0.0, 1.0];
    LimitOrder::constant(coords[bet])
}
