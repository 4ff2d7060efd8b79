//! Per-relay Gibbs (softmax) policies over a tabular local state.
//!
//! Relay `k` keeps one preference `theta[s, a]` for every local state
//! `s = (b, bin_sr, bin_rd, e)` and power level `a`. Only levels affordable
//! with battery `e` take part in the softmax; the rest get probability zero
//! and their preferences never receive gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{feasible_count, LocalState, SystemParams};
use crate::random::RngStream;

/// Preferences are clipped to this magnitude after every update.
pub const THETA_CLIP: f64 = 50.0;

/// Lexicographic indexing of `(b, bin_sr, bin_rd, e)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalStateSpace {
    pub buffer_levels: usize,
    pub channel_bins: usize,
    pub battery_levels: usize,
}

impl LocalStateSpace {
    pub fn new(params: &SystemParams, channel_bins: usize, relay: usize) -> Self {
        LocalStateSpace {
            buffer_levels: params.buffer_capacity as usize + 1,
            channel_bins,
            battery_levels: params.battery_capacity[relay] as usize + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.buffer_levels * self.channel_bins * self.channel_bins * self.battery_levels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_parts(&self, buffer: u32, bin_sr: usize, bin_rd: usize, battery: u32) -> usize {
        ((buffer as usize * self.channel_bins + bin_sr) * self.channel_bins + bin_rd)
            * self.battery_levels
            + battery as usize
    }

    pub fn index(&self, s: &LocalState) -> usize {
        self.index_parts(
            s.buffer,
            usize::from(s.channel.bin_sr),
            usize::from(s.channel.bin_rd),
            s.battery,
        )
    }

    /// Inverse of [`index_parts`](Self::index_parts): `(b, bin_sr, bin_rd, e)`.
    pub fn decode(&self, mut idx: usize) -> (u32, usize, usize, u32) {
        let e = idx % self.battery_levels;
        idx /= self.battery_levels;
        let rd = idx % self.channel_bins;
        idx /= self.channel_bins;
        let sr = idx % self.channel_bins;
        let b = idx / self.channel_bins;
        (b as u32, sr, rd, e as u32)
    }

    pub fn battery_of(&self, idx: usize) -> u32 {
        (idx % self.battery_levels) as u32
    }
}

/// Score of one chosen action: the only nonzero block of
/// `grad ln u(a | s)`, which lives in row `state` of the table.
#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub state: usize,
    /// One entry per power level; zero for infeasible levels.
    pub values: Vec<f64>,
}

/// Gibbs policy of a single relay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    space: LocalStateSpace,
    num_actions: usize,
    /// Feasible prefix length for each battery level.
    feasible: Vec<usize>,
    theta: Vec<f64>,
}

impl PolicyTable {
    /// All-zero preferences, i.e. uniform over feasible levels.
    pub fn zeros(params: &SystemParams, channel_bins: usize, relay: usize) -> Self {
        let space = LocalStateSpace::new(params, channel_bins, relay);
        let num_actions = params.num_levels(relay);
        let feasible = (0..space.battery_levels as u32)
            .map(|e| feasible_count(params, relay, e))
            .collect();
        PolicyTable {
            space,
            num_actions,
            feasible,
            theta: vec![0.0; space.len() * num_actions],
        }
    }

    /// Preferences drawn uniformly from `[-spread, spread]`.
    pub fn random(
        params: &SystemParams,
        channel_bins: usize,
        relay: usize,
        spread: f64,
        rng: &mut RngStream,
    ) -> Self {
        let mut table = Self::zeros(params, channel_bins, relay);
        for t in &mut table.theta {
            *t = rng.uniform_in(-spread, spread);
        }
        table
    }

    pub fn space(&self) -> &LocalStateSpace {
        &self.space
    }

    pub fn num_states(&self) -> usize {
        self.space.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Dimension of the parameter vector, `|S^k| * |A^k|`.
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.theta[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn feasible_in(&self, state: usize) -> usize {
        self.feasible[self.space.battery_of(state) as usize]
    }

    /// Writes `u(. | state)` into `out` (length `num_actions`).
    pub fn probabilities_into(&self, state: usize, out: &mut [f64]) {
        let n = self.feasible_in(state);
        let row = self.row(state);
        let max = row[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for a in 0..n {
            let w = (row[a] - max).exp();
            out[a] = w;
            total += w;
        }
        for p in &mut out[..n] {
            *p /= total;
        }
        for p in &mut out[n..self.num_actions] {
            *p = 0.0;
        }
    }

    pub fn probabilities(&self, state: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        self.probabilities_into(state, &mut out);
        out
    }

    /// `u(. | s)` for a local state.
    pub fn action_probabilities(&self, s: &LocalState) -> Vec<f64> {
        self.probabilities(self.space.index(s))
    }

    /// Probability of one level; zero when infeasible.
    pub fn probability(&self, state: usize, action: usize) -> f64 {
        if action >= self.feasible_in(state) {
            return 0.0;
        }
        let mut buf = vec![0.0; self.num_actions];
        self.probabilities_into(state, &mut buf);
        buf[action]
    }

    /// Draws a level by inverting the cumulative distribution.
    pub fn sample(&self, state: usize, rng: &mut RngStream) -> usize {
        let n = self.feasible_in(state);
        // Always consume one draw so stream positions do not depend on Θ.
        let u = rng.uniform();
        if n == 1 {
            return 0;
        }
        let mut probs = [0.0; 16];
        let mut heap;
        let probs: &mut [f64] = if self.num_actions <= probs.len() {
            &mut probs[..self.num_actions]
        } else {
            heap = vec![0.0; self.num_actions];
            &mut heap
        };
        self.probabilities_into(state, probs);
        let mut acc = 0.0;
        for (a, &p) in probs[..n].iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        n - 1
    }

    /// `grad_theta ln u(action | state)`, restricted to its nonzero row.
    pub fn score(&self, state: usize, action: usize) -> Result<Score> {
        let n = self.feasible_in(state);
        if action >= n {
            return Err(Error::InfeasibleLevel {
                level: action,
                battery: self.space.battery_of(state),
            });
        }
        let mut values = vec![0.0; self.num_actions];
        self.probabilities_into(state, &mut values);
        for v in &mut values[..n] {
            *v = -*v;
        }
        values[action] += 1.0;
        Ok(Score { state, values })
    }

    /// `theta += step * direction`, then clip to `[-THETA_CLIP, THETA_CLIP]`.
    pub fn ascend(&mut self, step: f64, direction: &[f64]) {
        for (t, d) in self.theta.iter_mut().zip(direction) {
            *t = (*t + step * d).clamp(-THETA_CLIP, THETA_CLIP);
        }
    }
}

/// Concatenated policy of all relays, `Θ = (θ^1, ..., θ^K)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub tables: Vec<PolicyTable>,
}

impl PolicyParams {
    pub fn zeros(params: &SystemParams, channel_bins: usize) -> Self {
        PolicyParams {
            tables: (0..params.num_relays)
                .map(|k| PolicyTable::zeros(params, channel_bins, k))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.tables.iter().map(PolicyTable::dim).sum()
    }

    /// Offset of relay `k`'s block inside the flattened vector.
    pub fn offset(&self, relay: usize) -> usize {
        self.tables[..relay].iter().map(PolicyTable::dim).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tables
            .iter()
            .flat_map(|t| t.theta().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for t in &mut self.tables {
            let d = t.dim();
            t.theta_mut().copy_from_slice(&flat[at..at + d]);
            at += d;
        }
    }

    /// Checks that the layout matches what `params` would produce.
    pub fn check_layout(&self, params: &SystemParams, channel_bins: usize) -> Result<()> {
        let expected = PolicyParams::zeros(params, channel_bins);
        if self.tables.len() != expected.tables.len() {
            return Err(Error::Config(format!(
                "policy file has {} relays, config has {}",
                self.tables.len(),
                expected.tables.len()
            )));
        }
        for (k, (have, want)) in self.tables.iter().zip(&expected.tables).enumerate() {
            if have.space != want.space
                || have.num_actions != want.num_actions
                || have.feasible != want.feasible
                || have.theta.len() != want.theta.len()
            {
                return Err(Error::Config(format!(
                    "policy file layout for relay {k} does not match the configured system"
                )));
            }
        }
        Ok(())
    }
}

/// On-disk policy: a header describing the index layout plus one flat
/// preference array per relay.
#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    index_order: String,
    relays: Vec<RelayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelayEntry {
    buffer_levels: usize,
    channel_bins: usize,
    battery_levels: usize,
    num_actions: usize,
    feasible_per_battery: Vec<usize>,
    theta: Vec<f64>,
}

const POLICY_FORMAT: &str = "relaypc-policy-v1";
const INDEX_ORDER: &str = "row-major over (buffer, bin_sr, bin_rd, battery, action)";

impl PolicyParams {
    pub fn to_json(&self) -> Result<String> {
        let file = PolicyFile {
            format: POLICY_FORMAT.into(),
            index_order: INDEX_ORDER.into(),
            relays: self
                .tables
                .iter()
                .map(|t| RelayEntry {
                    buffer_levels: t.space.buffer_levels,
                    channel_bins: t.space.channel_bins,
                    battery_levels: t.space.battery_levels,
                    num_actions: t.num_actions,
                    feasible_per_battery: t.feasible.clone(),
                    theta: t.theta.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text)?;
        if file.format != POLICY_FORMAT {
            return Err(Error::Config(format!(
                "unknown policy format {:?}",
                file.format
            )));
        }
        let tables = file
            .relays
            .into_iter()
            .enumerate()
            .map(|(k, r)| {
                let space = LocalStateSpace {
                    buffer_levels: r.buffer_levels,
                    channel_bins: r.channel_bins,
                    battery_levels: r.battery_levels,
                };
                if r.theta.len() != space.len() * r.num_actions
                    || r.feasible_per_battery.len() != r.battery_levels
                {
                    return Err(Error::Config(format!(
                        "policy file: relay {k} has inconsistent sizes"
                    )));
                }
                if r.theta.iter().any(|t| !t.is_finite()) {
                    return Err(Error::Config(format!(
                        "policy file: relay {k} has non-finite entries"
                    )));
                }
                Ok(PolicyTable {
                    space,
                    num_actions: r.num_actions,
                    feasible: r.feasible_per_battery,
                    theta: r.theta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicyParams { tables })
    }
}
