//! Enumeration of global states and joint action profiles.
//!
//! A global state is indexed as `(b * C + c) * E + e`, where `c` is the
//! mixed-radix index of all channel bins (relay 0 most significant, the
//! source-relay bin before the relay-destination bin) and `e` the mixed-radix
//! index of the battery levels (relay 0 most significant). Joint profiles use
//! the same relay-0-first mixed radix over power levels, so index order is
//! lexicographic order.

use crate::error::{Error, Result};
use crate::model::{ActionProfile, ChannelPair, GlobalState, SystemParams};
use crate::random::ChannelModel;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateSpace {
    num_relays: usize,
    buffer_levels: usize,
    bins: usize,
    channel_combos: usize,
    battery_radix: Vec<usize>,
    battery_combos: usize,
    level_radix: Vec<usize>,
    num_profiles: usize,
}

fn checked_product(factors: impl IntoIterator<Item = usize>) -> Option<usize> {
    factors
        .into_iter()
        .try_fold(1usize, |acc, f| acc.checked_mul(f))
}

impl StateSpace {
    pub fn new(params: &SystemParams, bins: usize) -> Result<Self> {
        let k = params.num_relays;
        let battery_radix: Vec<usize> = params
            .battery_capacity
            .iter()
            .map(|&n| n as usize + 1)
            .collect();
        let level_radix: Vec<usize> = (0..k).map(|r| params.num_levels(r)).collect();
        let too_large = || Error::StateSpaceTooLarge {
            size: u128::MAX,
            cap: u128::from(u64::MAX),
        };
        let channel_combos =
            checked_product(std::iter::repeat_n(bins * bins, k)).ok_or_else(too_large)?;
        let battery_combos =
            checked_product(battery_radix.iter().copied()).ok_or_else(too_large)?;
        let num_profiles = checked_product(level_radix.iter().copied()).ok_or_else(too_large)?;
        Ok(StateSpace {
            num_relays: k,
            buffer_levels: params.buffer_capacity as usize + 1,
            bins,
            channel_combos,
            battery_radix,
            battery_combos,
            level_radix,
            num_profiles,
        })
    }

    /// `|S| * |A|` without overflow, for size guards.
    pub fn size_hint(params: &SystemParams, bins: usize) -> u128 {
        let k = params.num_relays as u32;
        let mut size = (params.buffer_capacity as u128 + 1)
            .saturating_mul((bins as u128 * bins as u128).saturating_pow(k));
        for r in 0..params.num_relays {
            size = size
                .saturating_mul(params.battery_capacity[r] as u128 + 1)
                .saturating_mul(params.num_levels(r) as u128);
        }
        size
    }

    pub fn num_relays(&self) -> usize {
        self.num_relays
    }

    pub fn buffer_levels(&self) -> usize {
        self.buffer_levels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channel_combos(&self) -> usize {
        self.channel_combos
    }

    pub fn battery_combos(&self) -> usize {
        self.battery_combos
    }

    pub fn num_profiles(&self) -> usize {
        self.num_profiles
    }

    pub fn num_states(&self) -> usize {
        self.buffer_levels * self.channel_combos * self.battery_combos
    }

    /// Number of `(b, e)` pairs, the states of the channel-averaged chain.
    pub fn num_reduced(&self) -> usize {
        self.buffer_levels * self.battery_combos
    }

    pub fn index(&self, buffer: usize, channel: usize, battery: usize) -> usize {
        (buffer * self.channel_combos + channel) * self.battery_combos + battery
    }

    /// `(b, c, e)` of a global index.
    pub fn split(&self, idx: usize) -> (usize, usize, usize) {
        let e = idx % self.battery_combos;
        let rest = idx / self.battery_combos;
        (rest / self.channel_combos, rest % self.channel_combos, e)
    }

    pub fn reduced(&self, buffer: usize, battery: usize) -> usize {
        buffer * self.battery_combos + battery
    }

    /// `(sr, rd)` bins of `relay` in channel combination `channel`.
    pub fn channel_bins(&self, channel: usize, relay: usize) -> (usize, usize) {
        let shift = self.num_relays - 1 - relay;
        let digit = (channel / (self.bins * self.bins).pow(shift as u32)) % (self.bins * self.bins);
        (digit / self.bins, digit % self.bins)
    }

    pub fn channel_index(&self, bins: &[(usize, usize)]) -> usize {
        bins.iter().fold(0, |acc, &(sr, rd)| {
            acc * self.bins * self.bins + sr * self.bins + rd
        })
    }

    pub fn battery_levels(&self, battery: usize) -> Vec<u32> {
        let mut out = vec![0; self.num_relays];
        let mut rest = battery;
        for k in (0..self.num_relays).rev() {
            out[k] = (rest % self.battery_radix[k]) as u32;
            rest /= self.battery_radix[k];
        }
        out
    }

    pub fn battery_index(&self, levels: &[u32]) -> usize {
        levels
            .iter()
            .zip(&self.battery_radix)
            .fold(0, |acc, (&e, &r)| acc * r + e as usize)
    }

    pub fn profile(&self, idx: usize) -> ActionProfile {
        let mut out = vec![0; self.num_relays];
        let mut rest = idx;
        for k in (0..self.num_relays).rev() {
            out[k] = rest % self.level_radix[k];
            rest /= self.level_radix[k];
        }
        ActionProfile(out)
    }

    pub fn profile_index(&self, profile: &ActionProfile) -> usize {
        profile
            .0
            .iter()
            .zip(&self.level_radix)
            .fold(0, |acc, (&a, &r)| acc * r + a)
    }

    pub fn level_radix(&self) -> &[usize] {
        &self.level_radix
    }

    pub fn channels(&self, model: &ChannelModel, channel: usize) -> Vec<ChannelPair> {
        (0..self.num_relays)
            .map(|k| {
                let (sr, rd) = self.channel_bins(channel, k);
                model.pair_from_bins(sr, rd)
            })
            .collect()
    }

    pub fn global_state(&self, model: &ChannelModel, idx: usize) -> GlobalState {
        let (b, c, e) = self.split(idx);
        GlobalState {
            buffer: b as u32,
            channels: self.channels(model, c),
            batteries: self.battery_levels(e),
        }
    }

    pub fn state_index(&self, s: &GlobalState) -> usize {
        let bins: Vec<(usize, usize)> = s
            .channels
            .iter()
            .map(|c| (usize::from(c.bin_sr), usize::from(c.bin_rd)))
            .collect();
        self.index(
            s.buffer as usize,
            self.channel_index(&bins),
            self.battery_index(&s.batteries),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> (StateSpace, SystemParams) {
        let params = SystemParams {
            num_relays: 2,
            buffer_capacity: 2,
            battery_capacity: vec![2, 3],
            harvest_rate: vec![0.25; 2],
            power_levels: vec![vec![0.0, 1.0], vec![0.0, 1.0, 2.0]],
            ..SystemParams::default()
        };
        (StateSpace::new(&params, 2).unwrap(), params)
    }

    #[test]
    fn sizes() {
        let (s, p) = space();
        assert_eq!(s.num_states(), 3 * 16 * 12);
        assert_eq!(s.num_profiles(), 6);
        assert_eq!(StateSpace::size_hint(&p, 2), 3 * 16 * 12 * 6);
    }

    #[test]
    fn index_round_trips() {
        let (s, _) = space();
        let model = ChannelModel::new(vec![-1.59], 1.0).unwrap();
        for idx in 0..s.num_states() {
            let g = s.global_state(&model, idx);
            assert_eq!(s.state_index(&g), idx);
        }
        for a in 0..s.num_profiles() {
            assert_eq!(s.profile_index(&s.profile(a)), a);
        }
        assert_eq!(s.profile(1).0, vec![0, 1]);
        assert_eq!(s.profile(3).0, vec![1, 0]);
        assert_eq!(
            s.channel_bins(s.channel_index(&[(1, 0), (0, 1)]), 0),
            (1, 0)
        );
    }
}
