//! Dense two-phase simplex solver with dual extraction.
//!
//! Deterministic by construction: Dantzig pricing with a permanent switch to
//! Bland's rule after a run of degenerate pivots, so cycling is impossible.
//! Sized for the desk-scale problems in this crate (thousands of columns).

use thiserror::Error;

use crate::num::{cast, Real};
use crate::orders::BehavioralOrder;

const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-1 gap {0})")]
    Infeasible(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("iteration limit reached after {0} pivots")]
    IterationLimit(usize),
    #[error("empty program")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// One constraint row: coefficients, relation, right-hand side.
pub struct Constraint<S> {
    pub coeffs: Vec<S>,
    pub relation: Relation,
    pub rhs: S,
}

#[derive(Debug, Clone)]
pub struct LpSolution<S> {
    pub value: S,
    pub x: Vec<S>,
    /// One dual per constraint, in the sign convention of a maximization:
    /// `<=` rows have nonnegative duals, `>=` rows nonpositive, `==` free.
    pub duals: Vec<S>,
    pub iterations: usize,
}

struct Tableau<S> {
    a: Vec<Vec<S>>, // m rows
    b: Vec<S>,
    basis: Vec<usize>,
    obj: Vec<S>, // reduced costs
    z: S,
    dead: Vec<bool>, // columns barred from entering
    iterations: usize,
}

impl<S: Real> Tableau<S> {
    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.a[r][c];
        let n = self.obj.len();
        for j in 0..n {
            self.a[r][j] = self.a[r][j] / piv;
        }
        self.b[r] = self.b[r] / piv;
        self.a[r][c] = S::one();
        for i in 0..self.a.len() {
            if i == r {
                continue;
            }
            let f = self.a[i][c];
            if f != S::zero() {
                for j in 0..n {
                    self.a[i][j] = self.a[i][j] - f * self.a[r][j];
                }
                self.a[i][c] = S::zero();
                self.b[i] = self.b[i] - f * self.b[r];
            }
        }
        let f = self.obj[c];
        if f != S::zero() {
            for j in 0..n {
                self.obj[j] = self.obj[j] - f * self.a[r][j];
            }
            self.obj[c] = S::zero();
            self.z = self.z + f * self.b[r];
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Runs the simplex to optimality of the current objective.
    fn optimize(&mut self, max_iterations: usize) -> Result<(), LpError> {
        let tol = cast::<S>(PIVOT_TOL);
        let mut degenerate_run = 0usize;
        let mut bland = false;
        loop {
            if self.iterations > max_iterations {
                return Err(LpError::IterationLimit(self.iterations));
            }
            // entering column
            let mut enter: Option<usize> = None;
            if bland {
                for j in 0..self.obj.len() {
                    if !self.dead[j] && self.obj[j] > tol {
                        enter = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = tol;
                for j in 0..self.obj.len() {
                    if !self.dead[j] && self.obj[j] > best {
                        best = self.obj[j];
                        enter = Some(j);
                    }
                }
            }
            let Some(c) = enter else { return Ok(()) };
            // ratio test, ties to the smallest basis index (Bland-safe)
            let mut leave: Option<usize> = None;
            let mut best_ratio = S::infinity();
            for i in 0..self.a.len() {
                if self.a[i][c] > tol {
                    let ratio = self.b[i] / self.a[i][c];
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best_ratio - tol
                                || ((ratio - best_ratio).abs() <= tol
                                    && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else {
                return Err(LpError::Unbounded);
            };
            if best_ratio.abs() <= tol {
                degenerate_run += 1;
                if degenerate_run >= DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
        }
    }
}

/// Maximizes `c . x` over `x >= 0` subject to the constraints.
pub fn maximize<S: Real>(c: &[S], constraints: &[Constraint<S>]) -> Result<LpSolution<S>, LpError> {
    if c.is_empty() || constraints.is_empty() {
        return Err(LpError::Empty);
    }
    let n_user = c.len();
    let m = constraints.len();
    let tol = cast::<S>(PIVOT_TOL);

    // normalize rhs signs, remembering flips for dual signs
    let mut rows: Vec<(Vec<S>, Relation, S, bool)> = constraints
        .iter()
        .map(|con| {
            debug_assert_eq!(con.coeffs.len(), n_user);
            if con.rhs < S::zero() {
                let coeffs = con.coeffs.iter().map(|v| -*v).collect();
                let rel = match con.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (coeffs, rel, -con.rhs, true)
            } else {
                (con.coeffs.clone(), con.relation, con.rhs, false)
            }
        })
        .collect();

    // column layout: user vars, then one slack/surplus per inequality,
    // then one artificial per row that needs it
    let mut n_cols = n_user;
    let mut slack_col = vec![usize::MAX; m];
    for (i, (_, rel, _, _)) in rows.iter().enumerate() {
        if *rel != Relation::Eq {
            slack_col[i] = n_cols;
            n_cols += 1;
        }
    }
    let mut art_col = vec![usize::MAX; m];
    for (i, (_, rel, _, _)) in rows.iter().enumerate() {
        if *rel != Relation::Le {
            art_col[i] = n_cols;
            n_cols += 1;
        }
    }

    let mut a = vec![vec![S::zero(); n_cols]; m];
    let mut b = vec![S::zero(); m];
    let mut basis = vec![usize::MAX; m];
    for (i, (coeffs, rel, rhs, _)) in rows.iter_mut().enumerate() {
        a[i][..n_user].copy_from_slice(coeffs);
        b[i] = *rhs;
        match rel {
            Relation::Le => {
                a[i][slack_col[i]] = S::one();
                basis[i] = slack_col[i];
            }
            Relation::Ge => {
                a[i][slack_col[i]] = -S::one();
                a[i][art_col[i]] = S::one();
                basis[i] = art_col[i];
            }
            Relation::Eq => {
                a[i][art_col[i]] = S::one();
                basis[i] = art_col[i];
            }
        }
    }

    let max_iterations = 200 * (m + n_cols) + 10_000;
    let mut t = Tableau {
        a,
        b,
        basis,
        obj: vec![S::zero(); n_cols],
        z: S::zero(),
        dead: vec![false; n_cols],
        iterations: 0,
    };

    // phase 1: maximize minus the artificial sum
    let needs_phase1 = art_col.iter().any(|c| *c != usize::MAX);
    if needs_phase1 {
        let mut phase1 = vec![S::zero(); n_cols];
        for col in art_col.iter().filter(|c| **c != usize::MAX) {
            phase1[*col] = -S::one();
        }
        set_objective(&mut t, &phase1);
        t.optimize(max_iterations)?;
        if t.z < -tol {
            return Err(LpError::Infeasible((-t.z).to_f64().unwrap_or(f64::NAN)));
        }
        // bar artificials from re-entering; try to pivot basics out
        for col in art_col.iter().filter(|c| **c != usize::MAX) {
            t.dead[*col] = true;
        }
        for i in 0..m {
            if art_col.contains(&t.basis[i]) {
                if let Some(c) = (0..n_cols).find(|j| !t.dead[*j] && t.a[i][*j].abs() > tol) {
                    t.pivot(i, c);
                }
            }
        }
    }

    // phase 2
    let mut phase2 = vec![S::zero(); n_cols];
    phase2[..n_user].copy_from_slice(c);
    set_objective(&mut t, &phase2);
    t.optimize(max_iterations)?;

    let mut x = vec![S::zero(); n_user];
    for (i, bi) in t.basis.iter().enumerate() {
        if *bi < n_user {
            x[*bi] = t.b[i];
        }
    }
    // duals read from the reduced costs of each row's initial identity column
    let mut duals = vec![S::zero(); m];
    for i in 0..m {
        let col = if rows[i].1 == Relation::Le {
            slack_col[i]
        } else {
            art_col[i]
        };
        let mut y = -t.obj[col];
        if rows[i].3 {
            y = -y;
        }
        duals[i] = y;
    }
    Ok(LpSolution {
        value: t.z,
        x,
        duals,
        iterations: t.iterations,
    })
}

/// Resets the tableau objective to `c`, expressed in the current basis.
fn set_objective<S: Real>(t: &mut Tableau<S>, c: &[S]) {
    let n = c.len();
    let m = t.a.len();
    let mut obj = c.to_vec();
    let mut z = S::zero();
    for i in 0..m {
        let cb = c[t.basis[i]];
        if cb != S::zero() {
            z = z + cb * t.b[i];
            for j in 0..n {
                obj[j] = obj[j] - cb * t.a[i][j];
            }
        }
    }
    // keep basic columns exactly zero
    for i in 0..m {
        obj[t.basis[i]] = S::zero();
    }
    t.obj = obj;
    t.z = z;
}

/// Solution of the behavioral epigraph program
/// `max t  s.t.  sum_pa payoff_j[p,a] kappa_p(a) >= rhs_j + t`, with
/// `kappa` row-stochastic over the action grid.
#[derive(Debug, Clone)]
pub struct EpigraphSolution<S> {
    /// Optimal margin `t*`.
    pub margin: S,
    /// A behavioral order attaining the margin.
    pub kappa: BehavioralOrder<S>,
    /// Normalized dual weights over the constraints (a probability vector).
    pub weights: Vec<S>,
    pub iterations: usize,
    /// Worst feasibility / complementary-slackness violation.
    pub residual: S,
}

/// Solves the epigraph LP shared by the dominance test and the maxmin
/// optimizer. `payoff[j]` holds, flattened over (price, action), the
/// expected-payoff coefficients of constraint `j` (already weighted by the
/// price measure); `rhs[j]` is the payoff the tested order earns there.
pub fn behavioral_epigraph_lp<S: Real>(
    price_count: usize,
    action_count: usize,
    payoff: &[Vec<S>],
    rhs: &[S],
) -> Result<EpigraphSolution<S>, LpError> {
    assert_eq!(payoff.len(), rhs.len());
    let n_kappa = price_count * action_count;
    let n = n_kappa + 2; // kappa, t+, t-
    let mut constraints: Vec<Constraint<S>> = Vec::with_capacity(price_count + payoff.len());
    for p in 0..price_count {
        let mut coeffs = vec![S::zero(); n];
        for a in 0..action_count {
            coeffs[p * action_count + a] = S::one();
        }
        constraints.push(Constraint {
            coeffs,
            relation: Relation::Eq,
            rhs: S::one(),
        });
    }
    for (j, row) in payoff.iter().enumerate() {
        assert_eq!(row.len(), n_kappa);
        let mut coeffs = vec![S::zero(); n];
        coeffs[..n_kappa].copy_from_slice(row);
        coeffs[n_kappa] = -S::one();
        coeffs[n_kappa + 1] = S::one();
        constraints.push(Constraint {
            coeffs,
            relation: Relation::Ge,
            rhs: rhs[j],
        });
    }
    let mut objective = vec![S::zero(); n];
    objective[n_kappa] = S::one();
    objective[n_kappa + 1] = -S::one();

    let sol = maximize(&objective, &constraints)?;

    let mut rows = Vec::with_capacity(price_count);
    for p in 0..price_count {
        let mut row = Vec::with_capacity(action_count);
        let mut sum = S::zero();
        for a in 0..action_count {
            let v = sol.x[p * action_count + a].max(S::zero());
            sum = sum + v;
            row.push(v);
        }
        // rows solve an equality constraint; renormalize away float dust
        for v in row.iter_mut() {
            *v = *v / sum;
        }
        rows.push(row);
    }
    let kappa = BehavioralOrder::new(rows).expect("lp rows are stochastic");

    // constraint duals: >= rows have nonpositive duals in a maximization
    let mut weights: Vec<S> = sol.duals[price_count..]
        .iter()
        .map(|d| (-*d).max(S::zero()))
        .collect();
    let wsum: S = weights.iter().copied().sum();
    let weight_gap = (wsum - S::one()).abs();
    if wsum > S::zero() {
        for w in weights.iter_mut() {
            *w = *w / wsum;
        }
    } else {
        // fully degenerate dual; fall back to uniform (residual will say so)
        let u = S::one() / cast::<S>(payoff.len() as f64);
        weights = vec![u; payoff.len()];
    }

    // residual: primal feasibility and complementary slackness
    let t_star = sol.value;
    let mut residual = weight_gap;
    for (j, row) in payoff.iter().enumerate() {
        let mut v = S::zero();
        for (idx, coeff) in row.iter().enumerate() {
            let p = idx / action_count;
            let a = idx % action_count;
            v = v + *coeff * kappa.row(p)[a];
        }
        let slack = v - rhs[j] - t_star;
        residual = residual.max(-slack); // primal feasibility
        residual = residual.max((weights[j] * slack).abs()); // comp. slackness
    }
    Ok(EpigraphSolution {
        margin: t_star,
        kappa,
        weights,
        iterations: sol.iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: Vec<f64>, relation: Relation, rhs: f64) -> Constraint<f64> {
        Constraint {
            coeffs: v,
            relation,
            rhs,
        }
    }

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y st x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6)
        let sol = maximize(
            &[3.0, 5.0],
            &[
                c(vec![1.0, 0.0], Relation::Le, 4.0),
                c(vec![0.0, 2.0], Relation::Le, 12.0),
                c(vec![3.0, 2.0], Relation::Le, 18.0),
            ],
        )
        .unwrap();
        assert!((sol.value - 36.0).abs() < 1e-9);
        assert!((sol.x[0] - 2.0).abs() < 1e-9);
        assert!((sol.x[1] - 6.0).abs() < 1e-9);
        // duals: y2 = 3/2, y3 = 1, y1 = 0
        assert!((sol.duals[0] - 0.0).abs() < 1e-9);
        assert!((sol.duals[1] - 1.5).abs() < 1e-9);
        assert!((sol.duals[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_mix() {
        // max x + y st x + y + z = 10, x - y >= 2, y <= 3 -> x+y = 10 possible?
        // z >= 0 forces x + y <= 10; pick x = 7, y = 3: value 10.
        let sol = maximize(
            &[1.0, 1.0, 0.0],
            &[
                c(vec![1.0, 1.0, 1.0], Relation::Eq, 10.0),
                c(vec![1.0, -1.0, 0.0], Relation::Ge, 2.0),
                c(vec![0.0, 1.0, 0.0], Relation::Le, 3.0),
            ],
        )
        .unwrap();
        assert!((sol.value - 10.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let inf = maximize(
            &[1.0],
            &[
                c(vec![1.0], Relation::Le, 1.0),
                c(vec![1.0], Relation::Ge, 2.0),
            ],
        );
        assert!(matches!(inf, Err(LpError::Infeasible(_))));

        let unb = maximize(&[1.0], &[c(vec![-1.0], Relation::Le, 1.0)]);
        assert!(matches!(unb, Err(LpError::Unbounded)));
    }

    #[test]
    fn negative_rhs_is_normalized() {
        // max -x st -x >= -4  (i.e. x <= 4) -> 0 at x = 0
        let sol = maximize(&[-1.0], &[c(vec![-1.0], Relation::Ge, -4.0)]).unwrap();
        assert!(sol.value.abs() < 1e-9);
        // max x st -x >= -4 -> 4
        let sol = maximize(&[1.0], &[c(vec![-1.0], Relation::Ge, -4.0)]).unwrap();
        assert!((sol.value - 4.0).abs() < 1e-9);
    }

    #[test]
    fn zero_sum_game_value_and_strategies() {
        // row player maximizes over mixed rows of [[3, 1], [1, 2]]:
        // value 5/3 at x = (1/3, 2/3); column optimum (1/3, 2/3)
        let sol = behavioral_epigraph_lp(
            1,
            2,
            &[vec![3.0, 1.0], vec![1.0, 2.0]],
            &[0.0, 0.0],
        )
        .unwrap();
        assert!((sol.margin - 5.0 / 3.0).abs() < 1e-9);
        let row = sol.kappa.row(0);
        assert!((row[0] - 1.0 / 3.0).abs() < 1e-9);
        assert!((row[1] - 2.0 / 3.0).abs() < 1e-9);
        assert!((sol.weights[0] - 1.0 / 3.0).abs() < 1e-9);
        assert!((sol.weights[1] - 2.0 / 3.0).abs() < 1e-9);
        assert!(sol.residual <= 1e-9);
    }

    #[test]
    fn epigraph_margin_can_be_negative() {
        // single action, payoff -1 against rhs 0: t* = -1
        let sol = behavioral_epigraph_lp(1, 1, &[vec![-1.0]], &[0.0]).unwrap();
        assert!((sol.margin + 1.0).abs() < 1e-9);
    }

    #[test]
    fn epigraph_strong_duality_on_random_instances() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let np = rng.gen_range(1..=3);
            let na = rng.gen_range(1..=3);
            let nj = rng.gen_range(1..=3);
            let payoff: Vec<Vec<f64>> = (0..nj)
                .map(|_| (0..np * na).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let rhs: Vec<f64> = (0..nj).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let sol = behavioral_epigraph_lp(np, na, &payoff, &rhs).unwrap();
            // dual value: min over the weight simplex achieved at sol.weights of
            // max_kappa sum_j w_j payoff_j - sum_j w_j rhs_j
            let mut dual_value = 0.0;
            for p in 0..np {
                let mut best = f64::NEG_INFINITY;
                for a in 0..na {
                    let mut v = 0.0;
                    for j in 0..nj {
                        v += sol.weights[j] * payoff[j][p * na + a];
                    }
                    best = best.max(v);
                }
                dual_value += best;
            }
            for j in 0..nj {
                dual_value -= sol.weights[j] * rhs[j];
            }
            assert!(
                (dual_value - sol.margin).abs() <= 1e-7,
                "strong duality gap {} vs {}",
                dual_value,
                sol.margin
            );
            assert!(sol.residual <= 1e-7);
        }
    }
}
