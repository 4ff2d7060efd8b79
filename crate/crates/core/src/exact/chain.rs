//! Exact evaluation of fixed policies.
//!
//! Channels are i.i.d. across slots, so under any stationary policy the
//! stationary law factors as `pi(b, c, e) = rho(b, e) P(c)`, where `rho` is
//! stationary for the channel-averaged chain on `(b, e)`. All averages,
//! relative values and gradients are computed on that reduced chain.

use nalgebra::{DMatrix, DVector};

use crate::dltpc::Anchor;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;

use super::kernel::ExactModel;

/// Reduced chains up to this size are solved directly.
pub const DIRECT_SOLVE_LIMIT: usize = 5000;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 1_000_000;

/// A stationary joint policy over global states.
#[derive(Clone, Copy, Debug)]
pub enum JointPolicy<'a> {
    /// Product of per-relay softmax policies.
    Factored(&'a PolicyParams),
    /// One profile index per global state.
    Deterministic(&'a [usize]),
}

/// Profile weights `u(a | s)` of one global state, as `(profile, prob)`
/// pairs with positive probability, plus the per-relay action laws and
/// local-state indices for factored policies.
pub(crate) struct StatePolicy {
    pub profiles: Vec<(usize, f64)>,
    pub local: Vec<(usize, Vec<f64>)>,
}

pub(crate) fn state_policy(
    model: &ExactModel,
    policy: JointPolicy<'_>,
    state: usize,
) -> StatePolicy {
    let space = model.space();
    match policy {
        JointPolicy::Deterministic(table) => StatePolicy {
            profiles: vec![(table[state], 1.0)],
            local: Vec::new(),
        },
        JointPolicy::Factored(theta) => {
            let (b, c, e) = space.split(state);
            let levels = space.battery_levels(e);
            let local: Vec<(usize, Vec<f64>)> = theta
                .tables
                .iter()
                .enumerate()
                .map(|(k, table)| {
                    let (sr, rd) = space.channel_bins(c, k);
                    let x = table.space().index_parts(b as u32, sr, rd, levels[k]);
                    (x, table.probabilities(x))
                })
                .collect();
            let mut profiles = vec![(0usize, 1.0f64)];
            for (k, (_, probs)) in local.iter().enumerate() {
                let radix = space.level_radix()[k];
                let mut next = Vec::with_capacity(profiles.len() * radix);
                for &(idx, w) in &profiles {
                    for (a, &p) in probs.iter().enumerate() {
                        if p > 0.0 {
                            next.push((idx * radix + a, w * p));
                        }
                    }
                }
                profiles = next;
            }
            StatePolicy { profiles, local }
        }
    }
}

/// The channel-averaged chain of a fixed policy and its stationary law.
#[derive(Clone, Debug)]
pub struct PolicyChain {
    /// Sparse rows of the reduced transition matrix over `(b, e)`.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Expected one-slot reward from each reduced state.
    pub reward: Vec<f64>,
    /// Expected dropped packets per slot from each reduced state.
    pub drops: Vec<f64>,
    /// Stationary law over reduced states.
    pub stationary: Vec<f64>,
    pub anchor: usize,
    pub avg_reward: f64,
    /// Stationary mean buffer level at the start of a slot.
    pub mean_buffer: f64,
    /// Stationary mean number of dropped packets per slot.
    pub mean_drops: f64,
}

impl PolicyChain {
    /// Mean renewal cycle length `1 / rho(anchor)`.
    pub fn expected_cycle_length(&self) -> f64 {
        1.0 / self.stationary[self.anchor]
    }

    /// Fraction of arriving packets that are dropped.
    pub fn drop_probability(&self, arrivals_per_slot: f64) -> f64 {
        if arrivals_per_slot > 0.0 {
            self.mean_drops / arrivals_per_slot
        } else {
            0.0
        }
    }
}

pub fn anchor_index(model: &ExactModel, anchor: &Anchor) -> Result<usize> {
    anchor.validate(model.params())?;
    let space = model.space();
    Ok(space.reduced(
        anchor.buffer as usize,
        space.battery_index(&anchor.batteries),
    ))
}

/// Builds the reduced chain of `policy` and solves for its stationary law.
pub fn policy_chain(
    model: &ExactModel,
    policy: JointPolicy<'_>,
    anchor: &Anchor,
) -> Result<PolicyChain> {
    check_policy(model, policy)?;
    let anchor = anchor_index(model, anchor)?;
    let space = model.space();
    let n = space.num_reduced();
    let ne = space.battery_combos();
    let mut rows = Vec::with_capacity(n);
    let mut reward = vec![0.0; n];
    let mut drops = vec![0.0; n];
    let mut dense = vec![0.0; n];
    for x in 0..n {
        let (b, e) = (x / ne, x % ne);
        for c in 0..space.channel_combos() {
            let pc = model.channel_probability(c);
            let s = space.index(b, c, e);
            for (a, w) in state_policy(model, policy, s).profiles {
                let (q, energy) = model.reduced_parts(b, c, e, a);
                debug_assert!(!energy.is_empty(), "policies only pick affordable profiles");
                let weight = pc * w;
                drops[x] += weight * model.expected_overflow(q);
                for (b2, &pb) in model.buffer_law(q).iter().enumerate().skip(q) {
                    if pb == 0.0 {
                        continue;
                    }
                    reward[x] += weight * pb * model.reward(b2);
                    for &(e2, pe) in energy {
                        dense[b2 * ne + e2] += weight * pb * pe;
                    }
                }
            }
        }
        let row: Vec<(usize, f64)> = dense
            .iter_mut()
            .enumerate()
            .filter(|(_, p)| **p != 0.0)
            .map(|(j, p)| (j, std::mem::take(p)))
            .collect();
        rows.push(row);
    }
    check_unichain(&rows, anchor)?;
    let stationary = stationary_law(&rows, anchor)?;
    let avg_reward = stationary.iter().zip(&reward).map(|(p, r)| p * r).sum();
    let mean_buffer = stationary
        .iter()
        .enumerate()
        .map(|(x, p)| p * (x / ne) as f64)
        .sum();
    let mean_drops = stationary.iter().zip(&drops).map(|(p, d)| p * d).sum();
    Ok(PolicyChain {
        rows,
        reward,
        drops,
        stationary,
        anchor,
        avg_reward,
        mean_buffer,
        mean_drops,
    })
}

fn check_policy(model: &ExactModel, policy: JointPolicy<'_>) -> Result<()> {
    let space = model.space();
    match policy {
        JointPolicy::Factored(theta) => theta.check_layout(model.params(), space.bins()),
        JointPolicy::Deterministic(table) => {
            if table.len() != space.num_states() {
                return Err(Error::InvalidParams(format!(
                    "joint policy covers {} states, model has {}",
                    table.len(),
                    space.num_states()
                )));
            }
            for (s, &a) in table.iter().enumerate() {
                let (_, _, e) = space.split(s);
                if a >= space.num_profiles() || !model.is_affordable(e, a) {
                    return Err(Error::InvalidParams(format!(
                        "joint policy picks unaffordable profile {a} in state {s}"
                    )));
                }
            }
            Ok(())
        }
    }
}

/// Every reduced state must be able to reach the anchor; otherwise some
/// closed class avoids it and the chain is not unichain around it.
fn check_unichain(rows: &[Vec<(usize, f64)>], anchor: usize) -> Result<()> {
    let n = rows.len();
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (x, row) in rows.iter().enumerate() {
        for &(y, _) in row {
            reverse[y].push(x);
        }
    }
    let mut seen = vec![false; n];
    seen[anchor] = true;
    let mut stack = vec![anchor];
    while let Some(y) = stack.pop() {
        for &x in &reverse[y] {
            if !seen[x] {
                seen[x] = true;
                stack.push(x);
            }
        }
    }
    let unreachable = seen.iter().filter(|&&s| !s).count();
    if unreachable > 0 {
        return Err(Error::NotUnichain { unreachable });
    }
    Ok(())
}

fn stationary_law(rows: &[Vec<(usize, f64)>], anchor: usize) -> Result<Vec<f64>> {
    let n = rows.len();
    if n <= DIRECT_SOLVE_LIMIT {
        // rho (I - M) = 0 with the anchor column replaced by sum(rho) = 1.
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (x, row) in rows.iter().enumerate() {
            a[(x, x)] += 1.0;
            for &(y, p) in row {
                a[(y, x)] -= p;
            }
        }
        for x in 0..n {
            a[(anchor, x)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(n);
        rhs[anchor] = 1.0;
        let sol = a
            .lu()
            .solve(&rhs)
            .ok_or(Error::NotUnichain { unreachable: 0 })?;
        let mut rho: Vec<f64> = sol.iter().map(|&p| p.max(0.0)).collect();
        let total: f64 = rho.iter().sum();
        rho.iter_mut().for_each(|p| *p /= total);
        return Ok(rho);
    }
    // Lazy power iteration; the half self-loop removes periodicity without
    // changing the stationary law.
    let mut rho = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..POWER_MAX_ITER {
        next.iter_mut().zip(&rho).for_each(|(y, &x)| *y = 0.5 * x);
        for (x, row) in rows.iter().enumerate() {
            let mass = 0.5 * rho[x];
            for &(y, p) in row {
                next[y] += mass * p;
            }
        }
        let diff: f64 = next.iter().zip(&rho).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rho, &mut next);
        if diff < POWER_TOL {
            return Ok(rho);
        }
    }
    Err(Error::NotUnichain { unreachable: 0 })
}

/// Relative values `H` of the reduced chain with `H(anchor) = 0`:
/// `H = rbar - R + M H`.
pub fn relative_values(chain: &PolicyChain) -> Vec<f64> {
    let n = chain.rows.len();
    let avg = chain.avg_reward;
    if n <= DIRECT_SOLVE_LIMIT {
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (x, row) in chain.rows.iter().enumerate() {
            for &(y, p) in row {
                a[(x, y)] -= p;
            }
            rhs[x] = chain.reward[x] - avg;
        }
        for y in 0..n {
            a[(chain.anchor, y)] = 0.0;
        }
        a[(chain.anchor, chain.anchor)] = 1.0;
        rhs[chain.anchor] = 0.0;
        if let Some(sol) = a.lu().solve(&rhs) {
            return sol.iter().copied().collect();
        }
    }
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..POWER_MAX_ITER {
        for (x, row) in chain.rows.iter().enumerate() {
            let ph: f64 = row.iter().map(|&(y, p)| p * h[y]).sum();
            next[x] = 0.5 * h[x] + 0.5 * (chain.reward[x] - avg + ph);
        }
        let shift = next[chain.anchor];
        let mut diff: f64 = 0.0;
        for (a, b) in next.iter_mut().zip(&h) {
            *a -= shift;
            diff = diff.max((*a - b).abs());
        }
        std::mem::swap(&mut h, &mut next);
        if diff < 1e-12 {
            break;
        }
    }
    // The transformed iteration converges to H / 2.
    h.iter().map(|v| 2.0 * v).collect()
}

/// Exact gradient of the average reward with respect to every relay's table.
#[derive(Clone, Debug)]
pub struct ExactGradient {
    pub avg_reward: f64,
    pub expected_cycle_length: f64,
    /// One block per relay, laid out like `PolicyTable::theta`.
    pub blocks: Vec<Vec<f64>>,
}

impl ExactGradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    pub fn norm(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// `G(q, e, a) = E[r(b') + H(b', e')]` for residual `q`, batteries `e` and
/// profile `a`, indexed `(q * E + e) * A + a`; `NaN` when unaffordable.
pub(crate) fn continuation_table(model: &ExactModel, values: &[f64], scale: f64) -> Vec<f64> {
    let space = model.space();
    let (ne, na) = (space.battery_combos(), space.num_profiles());
    let levels = space.buffer_levels();
    let mut out = vec![f64::NAN; levels * ne * na];
    // Inner expectation over batteries first: W(b', e, a).
    let mut inner = vec![0.0; levels];
    for e in 0..ne {
        for a in 0..na {
            let energy = model.energy_law(e, a);
            if energy.is_empty() {
                continue;
            }
            for (b2, w) in inner.iter_mut().enumerate() {
                *w = energy
                    .iter()
                    .map(|&(e2, p)| p * values[b2 * ne + e2])
                    .sum::<f64>();
            }
            for q in 0..levels {
                let g: f64 = model
                    .buffer_law(q)
                    .iter()
                    .enumerate()
                    .skip(q)
                    .map(|(b2, &pb)| pb * (model.reward(b2) + scale * inner[b2]))
                    .sum();
                out[(q * ne + e) * na + a] = g;
            }
        }
    }
    out
}

/// `Q(s, a)` for one global state of the policy chain's model.
struct DifferentialRewards {
    table: Vec<f64>,
    avg: f64,
    ne: usize,
    na: usize,
}

impl DifferentialRewards {
    fn new(model: &ExactModel, chain: &PolicyChain) -> Self {
        let h = relative_values(chain);
        DifferentialRewards {
            table: continuation_table(model, &h, 1.0),
            avg: chain.avg_reward,
            ne: model.space().battery_combos(),
            na: model.space().num_profiles(),
        }
    }

    fn q(&self, model: &ExactModel, b: usize, c: usize, e: usize, a: usize) -> f64 {
        let q = model.residual(b, c, a);
        self.table[(q * self.ne + e) * self.na + a] - self.avg
    }
}

/// `grad R = sum_s pi(s) sum_a u(a|s) grad ln u(a|s) Q(s, a)`.
pub fn exact_gradient(
    model: &ExactModel,
    theta: &PolicyParams,
    anchor: &Anchor,
) -> Result<ExactGradient> {
    let chain = policy_chain(model, JointPolicy::Factored(theta), anchor)?;
    let dq = DifferentialRewards::new(model, &chain);
    let space = model.space();
    let ne = space.battery_combos();
    let k = space.num_relays();
    let mut blocks: Vec<Vec<f64>> = theta.tables.iter().map(|t| vec![0.0; t.dim()]).collect();
    let mut acc: Vec<Vec<f64>> = theta
        .tables
        .iter()
        .map(|t| vec![0.0; t.num_actions()])
        .collect();
    for s in 0..space.num_states() {
        let (b, c, e) = space.split(s);
        let pi = chain.stationary[b * ne + e] * model.channel_probability(c);
        if pi == 0.0 {
            continue;
        }
        let sp = state_policy(model, JointPolicy::Factored(theta), s);
        acc.iter_mut().for_each(|v| v.fill(0.0));
        let mut value = 0.0;
        for &(a, w) in &sp.profiles {
            let wq = w * dq.q(model, b, c, e, a);
            value += wq;
            let mut rest = a;
            for r in (0..k).rev() {
                let radix = space.level_radix()[r];
                acc[r][rest % radix] += wq;
                rest /= radix;
            }
        }
        for r in 0..k {
            let (x, ref probs) = sp.local[r];
            let na = theta.tables[r].num_actions();
            let n = theta.tables[r].feasible_in(x);
            let block = &mut blocks[r][x * na..x * na + n];
            for (a, g) in block.iter_mut().enumerate() {
                *g += pi * (acc[r][a] - probs[a] * value);
            }
        }
    }
    Ok(ExactGradient {
        avg_reward: chain.avg_reward,
        expected_cycle_length: chain.expected_cycle_length(),
        blocks,
    })
}

/// The same gradient assembled relay by relay from local marginals:
/// `grad_k(x, a) = pi_k(x) u_k(a|x) (Qbar_k(x, a) - Vbar_k(x))`, where the
/// bars average over global states whose relay-`k` view is `x`.
pub fn exact_gradient_marginal(
    model: &ExactModel,
    theta: &PolicyParams,
    anchor: &Anchor,
) -> Result<ExactGradient> {
    let chain = policy_chain(model, JointPolicy::Factored(theta), anchor)?;
    let dq = DifferentialRewards::new(model, &chain);
    let space = model.space();
    let ne = space.battery_combos();
    let mut blocks = Vec::with_capacity(theta.tables.len());
    for (r, table) in theta.tables.iter().enumerate() {
        let na = table.num_actions();
        let mut mass = vec![0.0; table.num_states()];
        let mut q_local = vec![0.0; table.dim()];
        let mut v_local = vec![0.0; table.num_states()];
        for s in 0..space.num_states() {
            let (b, c, e) = space.split(s);
            let pi = chain.stationary[b * ne + e] * model.channel_probability(c);
            if pi == 0.0 {
                continue;
            }
            let sp = state_policy(model, JointPolicy::Factored(theta), s);
            let (x, ref probs) = sp.local[r];
            // Q_k(s, a_k) = E over the other relays' actions.
            let mut qk = vec![0.0; na];
            let mut rest_weight = vec![0.0; na];
            for &(a, w) in &sp.profiles {
                let ak = space.profile(a).0[r];
                let others = w / probs[ak];
                qk[ak] += others * dq.q(model, b, c, e, a);
                rest_weight[ak] += others;
            }
            mass[x] += pi;
            let mut v = 0.0;
            for a in 0..table.feasible_in(x) {
                if rest_weight[a] == 0.0 {
                    continue;
                }
                let qa = qk[a] / rest_weight[a];
                q_local[x * na + a] += pi * qa;
                v += probs[a] * qa;
            }
            v_local[x] += pi * v;
        }
        let mut block = vec![0.0; table.dim()];
        for x in 0..table.num_states() {
            if mass[x] == 0.0 {
                continue;
            }
            let probs = table.probabilities(x);
            let vbar = v_local[x] / mass[x];
            for a in 0..table.feasible_in(x) {
                let qbar = q_local[x * na + a] / mass[x];
                block[x * na + a] = mass[x] * probs[a] * (qbar - vbar);
            }
        }
        blocks.push(block);
    }
    Ok(ExactGradient {
        avg_reward: chain.avg_reward,
        expected_cycle_length: chain.expected_cycle_length(),
        blocks,
    })
}
