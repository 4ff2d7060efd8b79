//! Relative value iteration for average-reward MDPs.
//!
//! Both solvers iterate the aperiodicity-transformed operator
//! `V <- (1 - t) V + max_a [r + t P V]`, which has the same gain and optimal
//! policies as the original problem but converges on periodic chains too.
//! Values are re-centred at a reference state every sweep; iteration stops
//! once the span of the update falls below the tolerance.

use crate::dltpc::Anchor;
use crate::error::{Error, Result};

use super::chain::{anchor_index, continuation_table, policy_chain, JointPolicy, PolicyChain};
use super::kernel::ExactModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RviOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight `t` in `(0, 1]` of the original dynamics in the transform.
    pub aperiodicity: f64,
}

impl Default for RviOptions {
    fn default() -> Self {
        RviOptions {
            tol: 1e-9,
            max_iter: 200_000,
            aperiodicity: 0.5,
        }
    }
}

impl RviOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.aperiodicity > 0.0 && self.aperiodicity <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "invalid RVI options {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdpAction {
    pub reward: f64,
    pub transitions: Vec<(usize, f64)>,
}

/// Finite MDP given by explicit action lists per state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TabularMdp {
    pub actions: Vec<Vec<MdpAction>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RviSolution {
    /// Index of the chosen action in every state.
    pub policy: Vec<usize>,
    pub gain: f64,
    /// Relative values of the transformed problem, zero at the reference.
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub span: f64,
}

/// Index of the largest value; near-ties go to the lowest index.
fn argmax_lowest(values: impl Iterator<Item = (usize, f64)>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, v) in values {
        if v > best.1 + 1e-12 * (1.0 + best.1.abs()) || best.0 == usize::MAX {
            best = (i, v);
        }
    }
    best
}

pub fn rvi_solve(mdp: &TabularMdp, reference: usize, opts: RviOptions) -> Result<RviSolution> {
    opts.validate()?;
    let n = mdp.actions.len();
    if reference >= n || mdp.actions.iter().any(Vec::is_empty) {
        return Err(Error::InvalidParams(
            "every state needs an action and a valid reference".into(),
        ));
    }
    let t = opts.aperiodicity;
    let backup = |v: &[f64], s: usize| {
        argmax_lowest(mdp.actions[s].iter().enumerate().map(|(i, act)| {
            let pv: f64 = act.transitions.iter().map(|&(y, p)| p * v[y]).sum();
            (i, act.reward + t * pv)
        }))
    };
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut span = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        for s in 0..n {
            next[s] = (1.0 - t) * v[s] + backup(&v, s).1;
        }
        let (lo, hi) = next
            .iter()
            .zip(&v)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            });
        span = hi - lo;
        let shift = next[reference];
        next.iter_mut().for_each(|x| *x -= shift);
        std::mem::swap(&mut v, &mut next);
        if span < opts.tol {
            let policy = (0..n).map(|s| backup(&v, s).0).collect();
            return Ok(RviSolution {
                policy,
                gain: 0.5 * (lo + hi),
                bias: v,
                iterations: iter,
                span,
            });
        }
    }
    Err(Error::RviNotConverged {
        iterations: opts.max_iter,
        span,
    })
}

/// Optimal centralized controller of a relay instance.
#[derive(Clone, Debug)]
pub struct RelayMdpSolution {
    /// Profile index for every global state.
    pub policy: Vec<usize>,
    /// Gain reported by the iteration.
    pub rvi_gain: f64,
    /// Exact average reward of `policy`.
    pub chain: PolicyChain,
    pub iterations: usize,
    pub span: f64,
}

impl RelayMdpSolution {
    pub fn gain(&self) -> f64 {
        self.chain.avg_reward
    }
}

/// Solves the centralized relay MDP.
///
/// Fresh channels are independent of the past, so the iteration runs on
/// `W(b, e) = E_c V(b, c, e)` with the maximization done per channel
/// realization inside the expectation. The reference state is the anchor.
pub fn solve_relay_mdp(
    model: &ExactModel,
    anchor: &Anchor,
    opts: RviOptions,
) -> Result<RelayMdpSolution> {
    opts.validate()?;
    let reference = anchor_index(model, anchor)?;
    let space = model.space();
    let (ne, na) = (space.battery_combos(), space.num_profiles());
    let n = space.num_reduced();
    let t = opts.aperiodicity;

    // Affordable profiles per battery combination, in index order.
    let affordable: Vec<Vec<usize>> = (0..ne)
        .map(|e| (0..na).filter(|&a| model.is_affordable(e, a)).collect())
        .collect();
    let best = |table: &[f64], b: usize, c: usize, e: usize| {
        argmax_lowest(affordable[e].iter().map(|&a| {
            let q = model.residual(b, c, a);
            (a, table[(q * ne + e) * na + a])
        }))
    };

    let mut w = vec![0.0; n];
    let mut span = f64::INFINITY;
    let mut rvi_gain = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let table = continuation_table(model, &w, t);
        let mut next = vec![0.0; n];
        for (x, slot) in next.iter_mut().enumerate() {
            let (b, e) = (x / ne, x % ne);
            let expect: f64 = (0..space.channel_combos())
                .map(|c| model.channel_probability(c) * best(&table, b, c, e).1)
                .sum();
            *slot = (1.0 - t) * w[x] + expect;
        }
        let (lo, hi) = next
            .iter()
            .zip(&w)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            });
        span = hi - lo;
        rvi_gain = 0.5 * (lo + hi);
        let shift = next[reference];
        next.iter_mut().for_each(|v| *v -= shift);
        w = next;
        if span < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::RviNotConverged { iterations, span });
    }

    let table = continuation_table(model, &w, t);
    let policy: Vec<usize> = (0..space.num_states())
        .map(|s| {
            let (b, c, e) = space.split(s);
            best(&table, b, c, e).0
        })
        .collect();
    let chain = policy_chain(model, JointPolicy::Deterministic(&policy), anchor)?;
    Ok(RelayMdpSolution {
        policy,
        rvi_gain,
        chain,
        iterations,
        span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(reward: f64, transitions: Vec<(usize, f64)>) -> MdpAction {
        MdpAction {
            reward,
            transitions,
        }
    }

    #[test]
    fn single_state_picks_best_reward() {
        let mdp = TabularMdp {
            actions: vec![vec![act(1.0, vec![(0, 1.0)]), act(3.0, vec![(0, 1.0)])]],
        };
        let sol = rvi_solve(&mdp, 0, RviOptions::default()).unwrap();
        assert_eq!(sol.policy, vec![1]);
        assert!((sol.gain - 3.0).abs() < 1e-9);
    }

    #[test]
    fn forced_alternation_averages_rewards() {
        let mdp = TabularMdp {
            actions: vec![
                vec![act(0.0, vec![(1, 1.0)])],
                vec![act(4.0, vec![(0, 1.0)])],
            ],
        };
        let sol = rvi_solve(&mdp, 0, RviOptions::default()).unwrap();
        assert!((sol.gain - 2.0).abs() < 1e-8);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mdp = TabularMdp {
            actions: vec![vec![act(2.0, vec![(0, 1.0)]), act(2.0, vec![(0, 1.0)])]],
        };
        assert_eq!(
            rvi_solve(&mdp, 0, RviOptions::default()).unwrap().policy,
            vec![0]
        );
    }

    #[test]
    fn reports_non_convergence() {
        let mdp = TabularMdp {
            actions: vec![
                vec![act(0.0, vec![(1, 1.0)])],
                vec![act(4.0, vec![(0, 1.0)])],
            ],
        };
        let opts = RviOptions {
            max_iter: 1,
            ..RviOptions::default()
        };
        assert!(matches!(
            rvi_solve(&mdp, 0, opts),
            Err(Error::RviNotConverged { iterations: 1, .. })
        ));
    }
}
