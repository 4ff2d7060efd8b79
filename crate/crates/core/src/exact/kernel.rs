//! Controlled transition law of the global state.
//!
//! `T(s' | s, a) = P(c') T(b' | s, a) prod_k T(e'_k | e_k, a_k)`: channels
//! are drawn afresh every slot, the buffer follows the finite-capacity
//! Lindley recursion with Poisson arrivals and every battery gains a Poisson
//! number of energy packets. Mass beyond a capacity is folded into the top
//! level, so every row is exactly stochastic.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{coop_rate, service_packets, SystemParams};
use crate::random::ChannelModel;

use super::space::StateSpace;

/// Default limit on `|S| * |A|` for exact computations.
pub const DEFAULT_SIZE_CAP: u128 = 10_000_000;

/// Law of `min(start + X, cap)` for `X ~ Poisson(mean)`, indexed by value
/// `0..=cap`.
pub fn clamped_poisson(mean: f64, start: u32, cap: u32) -> Vec<f64> {
    let mut out = vec![0.0; cap as usize + 1];
    if start >= cap {
        out[cap as usize] = 1.0;
        return out;
    }
    let mut pmf = (-mean).exp();
    let mut below = 0.0;
    for (j, v) in (start..cap).enumerate() {
        if j > 0 {
            pmf *= mean / j as f64;
        }
        out[v as usize] = pmf;
        below += pmf;
    }
    out[cap as usize] = (1.0 - below).max(0.0);
    out
}

/// Distribution of the next buffer level, indexed `0..=N_B`.
pub fn buffer_transition(params: &SystemParams, buffer: u32, served: u32) -> Vec<f64> {
    let residual = buffer.saturating_sub(served);
    clamped_poisson(params.arrivals_per_slot(), residual, params.buffer_capacity)
}

/// Distribution of relay `relay`'s next battery level, indexed `0..=N_E`.
pub fn energy_transition(
    params: &SystemParams,
    relay: usize,
    battery: u32,
    level: usize,
) -> Result<Vec<f64>> {
    let spend = params.energy_cost(relay, level);
    if spend > battery {
        return Err(Error::InfeasibleAction {
            relay,
            level,
            spend,
            battery,
        });
    }
    Ok(clamped_poisson(
        params.harvest_per_slot(relay),
        battery - spend,
        params.battery_capacity[relay],
    ))
}

/// Factored transition tables of a small instance.
#[derive(Clone, Debug)]
pub struct ExactModel {
    params: SystemParams,
    channels: ChannelModel,
    space: StateSpace,
    channel_prob: Vec<f64>,
    /// `served[c * A + a]`.
    served: Vec<u32>,
    /// `bufdist[q][b']` for residual `q = (b - served)^+`.
    bufdist: Vec<Vec<f64>>,
    /// Expected dropped packets for residual `q`.
    overflow: Vec<f64>,
    /// Sparse joint battery law `joint_energy[e * A + a]`; empty when the
    /// profile is not affordable.
    joint_energy: Vec<Vec<(usize, f64)>>,
    /// Reward as a function of the next buffer level.
    reward: Vec<f64>,
}

impl ExactModel {
    pub fn new(params: &SystemParams, channels: &ChannelModel) -> Result<Self> {
        Self::with_cap(params, channels, DEFAULT_SIZE_CAP)
    }

    pub fn with_cap(params: &SystemParams, channels: &ChannelModel, cap: u128) -> Result<Self> {
        params.validate()?;
        let size = StateSpace::size_hint(params, channels.num_bins());
        if size > cap {
            return Err(Error::StateSpaceTooLarge { size, cap });
        }
        let space = StateSpace::new(params, channels.num_bins())?;
        let na = space.num_profiles();
        let nb = params.buffer_capacity;

        let channel_prob = (0..space.channel_combos())
            .map(|c| {
                (0..params.num_relays)
                    .map(|k| {
                        let (sr, rd) = space.channel_bins(c, k);
                        channels.bin_probability(sr) * channels.bin_probability(rd)
                    })
                    .product()
            })
            .collect();

        let mut served = Vec::with_capacity(space.channel_combos() * na);
        for c in 0..space.channel_combos() {
            let pairs = space.channels(channels, c);
            for a in 0..na {
                served.push(service_packets(
                    params,
                    coop_rate(params, &space.profile(a), &pairs),
                ));
            }
        }

        let lambda = params.arrivals_per_slot();
        let bufdist: Vec<Vec<f64>> = (0..=nb).map(|q| clamped_poisson(lambda, q, nb)).collect();
        let overflow = bufdist
            .iter()
            .enumerate()
            .map(|(q, d)| {
                let kept: f64 = d.iter().enumerate().map(|(b, p)| b as f64 * p).sum();
                (q as f64 + lambda - kept).max(0.0)
            })
            .collect();

        let mut joint_energy = Vec::with_capacity(space.battery_combos() * na);
        for e in 0..space.battery_combos() {
            let levels = space.battery_levels(e);
            for a in 0..na {
                joint_energy.push(joint_energy_law(
                    params,
                    &space,
                    &levels,
                    &space.profile(a).0,
                ));
            }
        }

        let reward = (0..=nb).map(|b| crate::model::reward(params, b)).collect();
        Ok(ExactModel {
            params: params.clone(),
            channels: channels.clone(),
            space,
            channel_prob,
            served,
            bufdist,
            overflow,
            joint_energy,
            reward,
        })
    }

    /// Replaces the reward `r(b')` (for oracle checks).
    pub fn with_reward(mut self, reward: Vec<f64>) -> Result<Self> {
        if reward.len() != self.reward.len() {
            return Err(Error::InvalidParams(
                "reward table must cover 0..=N_B".into(),
            ));
        }
        self.reward = reward;
        Ok(self)
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn channel_model(&self) -> &ChannelModel {
        &self.channels
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn channel_probability(&self, channel: usize) -> f64 {
        self.channel_prob[channel]
    }

    pub fn served(&self, channel: usize, profile: usize) -> u32 {
        self.served[channel * self.space.num_profiles() + profile]
    }

    pub fn residual(&self, buffer: usize, channel: usize, profile: usize) -> usize {
        buffer.saturating_sub(self.served(channel, profile) as usize)
    }

    pub fn buffer_law(&self, residual: usize) -> &[f64] {
        &self.bufdist[residual]
    }

    pub fn expected_overflow(&self, residual: usize) -> f64 {
        self.overflow[residual]
    }

    pub fn energy_law(&self, battery: usize, profile: usize) -> &[(usize, f64)] {
        &self.joint_energy[battery * self.space.num_profiles() + profile]
    }

    pub fn is_affordable(&self, battery: usize, profile: usize) -> bool {
        !self.energy_law(battery, profile).is_empty()
    }

    pub fn reward(&self, next_buffer: usize) -> f64 {
        self.reward[next_buffer]
    }

    /// `T(. | s, a)` over global states, or `None` if `a` is unaffordable.
    pub fn transition_row(&self, state: usize, profile: usize) -> Option<Vec<(usize, f64)>> {
        let (b, c, e) = self.space.split(state);
        let energy = self.energy_law(e, profile);
        if energy.is_empty() {
            return None;
        }
        let buffer = self.buffer_law(self.residual(b, c, profile));
        let mut row = Vec::new();
        for (b2, &pb) in buffer.iter().enumerate() {
            if pb == 0.0 {
                continue;
            }
            for (c2, &pc) in self.channel_prob.iter().enumerate() {
                for &(e2, pe) in energy {
                    row.push((self.space.index(b2, c2, e2), pc * pb * pe));
                }
            }
        }
        Some(row)
    }

    /// Reduced transition `(b', e')` law for a full state and profile,
    /// as `(residual, energy law)`.
    pub(crate) fn reduced_parts(
        &self,
        buffer: usize,
        channel: usize,
        battery: usize,
        profile: usize,
    ) -> (usize, &[(usize, f64)]) {
        (
            self.residual(buffer, channel, profile),
            self.energy_law(battery, profile),
        )
    }
}

fn joint_energy_law(
    params: &SystemParams,
    space: &StateSpace,
    levels: &[u32],
    profile: &[usize],
) -> Vec<(usize, f64)> {
    let mut laws = Vec::with_capacity(levels.len());
    for (k, (&e, &a)) in levels.iter().zip(profile).enumerate() {
        match energy_transition(params, k, e, a) {
            Ok(law) => laws.push(law),
            Err(_) => return Vec::new(),
        }
    }
    let mut out = vec![(0usize, 1.0f64)];
    for (k, law) in laws.iter().enumerate() {
        let radix = params.battery_capacity[k] as usize + 1;
        let mut next = Vec::with_capacity(out.len() * radix);
        for &(idx, p) in &out {
            for (e2, &q) in law.iter().enumerate() {
                if q > 0.0 {
                    next.push((idx * radix + e2, p * q));
                }
            }
        }
        out = next;
    }
    debug_assert!(out.iter().all(|&(i, _)| i < space.battery_combos()));
    out
}

/// Fully enumerated kernel: one sparse row per `(s, a)`.
#[derive(Clone, Debug)]
pub struct TransitionKernel {
    pub num_states: usize,
    pub num_profiles: usize,
    rows: Vec<Option<Vec<(usize, f64)>>>,
}

impl TransitionKernel {
    pub fn row(&self, state: usize, profile: usize) -> Option<&[(usize, f64)]> {
        self.rows[state * self.num_profiles + profile].as_deref()
    }

    /// Rows of affordable `(s, a)` pairs.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, &[(usize, f64)])> {
        self.rows.iter().enumerate().filter_map(move |(i, r)| {
            r.as_deref()
                .map(|row| (i / self.num_profiles, i % self.num_profiles, row))
        })
    }

    /// Writes `s a s' p` lines, preceded by a `#` header.
    pub fn write_sparse<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# state action next_state probability")?;
        for (s, a, row) in self.rows() {
            for &(s2, p) in row {
                writeln!(out, "{s} {a} {s2} {p:e}")?;
            }
        }
        Ok(())
    }
}

/// Enumerates every row of the kernel. Only meant for oracle-size instances.
pub fn build_kernel(model: &ExactModel) -> TransitionKernel {
    let space = model.space();
    let na = space.num_profiles();
    let rows = (0..space.num_states())
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .map(|(s, a)| model.transition_row(s, a))
        .collect();
    TransitionKernel {
        num_states: space.num_states(),
        num_profiles: na,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_law_examples() {
        let p = SystemParams {
            arrival_rate: 1.0,
            ..SystemParams::default()
        };
        let d = buffer_transition(&p, 0, 0);
        assert!((d[0] - (-2.0f64).exp()).abs() < 1e-15);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let quiet = SystemParams {
            arrival_rate: 0.0,
            ..SystemParams::default()
        };
        assert_eq!(buffer_transition(&quiet, 3, 5)[0], 1.0);
    }

    #[test]
    fn energy_law_examples() {
        let p = SystemParams::default();
        let d = energy_transition(&p, 0, 2, 2).unwrap();
        assert!((d[0] - (-0.5f64).exp()).abs() < 1e-15);
        let full = energy_transition(&p, 0, 4, 0).unwrap();
        assert_eq!(full[4], 1.0);
        assert!(energy_transition(&p, 0, 1, 2).is_err());
    }

    #[test]
    fn size_cap_is_enforced() {
        let err = ExactModel::new(&SystemParams::default(), &ChannelModel::default()).unwrap_err();
        assert!(matches!(err, Error::StateSpaceTooLarge { .. }));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn single_relay_kernel_by_hand() {
        // K=1, N_B=1, one channel bin, N_E=1, levels {0, 1}.
        let p = SystemParams {
            num_relays: 1,
            noise_power: 0.01,
            buffer_capacity: 1,
            battery_capacity: vec![1],
            arrival_rate: 0.25,
            harvest_rate: vec![0.1],
            power_levels: vec![vec![0.0, 1.0]],
            ..SystemParams::default()
        };
        let m = ChannelModel::new(vec![], 1.0).unwrap();
        let model = ExactModel::new(&p, &m).unwrap();
        let kernel = build_kernel(&model);
        assert_eq!(kernel.num_states, 4);
        assert_eq!(kernel.rows().count(), 4 + 2);
        let (pa, ph) = ((-0.5f64).exp(), (-0.2f64).exp());
        let served = model.served(0, 1);
        assert!(served >= 1);
        // s = (b=1, e=1), transmit: buffer empties then refills w.p. 1-pa.
        let s = model.space().index(1, 0, 1);
        let row = kernel.row(s, 1).unwrap();
        let prob = |b: usize, e: usize| {
            row.iter()
                .filter(|&&(i, _)| i == model.space().index(b, 0, e))
                .map(|&(_, q)| q)
                .sum::<f64>()
        };
        assert!((prob(0, 0) - pa * ph).abs() < 1e-15);
        assert!((prob(1, 0) - (1.0 - pa) * ph).abs() < 1e-15);
        assert!((prob(0, 1) - pa * (1.0 - ph)).abs() < 1e-15);
        // Silent with a full buffer stays full.
        let silent = kernel.row(s, 0).unwrap();
        assert!(silent.iter().all(|&(i, _)| model.space().split(i).0 == 1));
        // Unaffordable at e = 0.
        assert!(kernel.row(model.space().index(0, 0, 0), 1).is_none());
        let mut text = Vec::new();
        kernel.write_sparse(&mut text).unwrap();
        assert!(String::from_utf8(text).unwrap().lines().count() > 6);
    }
}
