//! Domain types and the deterministic slot arithmetic: relayed SNR,
//! cooperative rate, buffer (Lindley) and battery recursions, reward.
//!
//! Units follow the network description: slot length in ms, bandwidth in
//! Hz, powers in energy packets per ms, packet size in bits, and the data
//! and energy arrival rates per ms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that `power * slot / 2` is a whole number
/// of energy packets.
const INTEGRALITY_TOL: f64 = 1e-9;

/// Physical, queueing and energy parameters of the relay network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub num_relays: usize,
    /// Slot duration in ms; each slot is two sub-slots of half this length.
    pub slot_ms: f64,
    pub bandwidth_hz: f64,
    pub bandwidth_factor: f64,
    pub capacity_gap: f64,
    pub noise_power: f64,
    /// Source broadcast power (energy packets per ms).
    pub source_power: f64,
    pub packet_bits: f64,
    pub buffer_capacity: u32,
    pub battery_capacity: Vec<u32>,
    /// Mean data arrival rate (packets per ms).
    pub arrival_rate: f64,
    /// Mean energy harvest rate per relay (energy packets per ms).
    pub harvest_rate: Vec<f64>,
    pub reward_scale: f64,
    /// Ascending transmit power levels per relay, each starting at 0.
    pub power_levels: Vec<Vec<f64>>,
}

impl Default for SystemParams {
    fn default() -> Self {
        let k = 8;
        SystemParams {
            num_relays: k,
            slot_ms: 2.0,
            bandwidth_hz: 2.5e6,
            bandwidth_factor: 1.0,
            capacity_gap: 1.0,
            noise_power: 1e-4,
            source_power: 5.0,
            packet_bits: 1024.0 * 8.0,
            buffer_capacity: 9,
            battery_capacity: vec![4; k],
            arrival_rate: 2.0,
            harvest_rate: vec![0.25; k],
            reward_scale: 1.0,
            power_levels: vec![vec![0.0, 1.0, 2.0, 3.0, 4.0]; k],
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        let k = self.num_relays;
        if k == 0 {
            return bad("num_relays must be at least 1".into());
        }
        if !(self.slot_ms > 0.0) {
            return bad(format!("slot_ms must be > 0, got {}", self.slot_ms));
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad(format!(
                "bandwidth_hz must be > 0, got {}",
                self.bandwidth_hz
            ));
        }
        if !(self.bandwidth_factor > 0.0) {
            return bad(format!(
                "bandwidth_factor must be > 0, got {}",
                self.bandwidth_factor
            ));
        }
        if !(self.capacity_gap >= 1.0) {
            return bad(format!(
                "capacity_gap must be >= 1, got {}",
                self.capacity_gap
            ));
        }
        if !(self.noise_power > 0.0) {
            return bad(format!("noise_power must be > 0, got {}", self.noise_power));
        }
        if !(self.source_power >= 0.0) {
            return bad(format!(
                "source_power must be >= 0, got {}",
                self.source_power
            ));
        }
        if !(self.packet_bits > 0.0) {
            return bad(format!("packet_bits must be > 0, got {}", self.packet_bits));
        }
        if self.buffer_capacity < 1 {
            return bad("buffer_capacity must be at least 1".into());
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return bad(format!(
                "arrival_rate must be finite and >= 0, got {}",
                self.arrival_rate
            ));
        }
        if !(self.reward_scale > 0.0) {
            return bad(format!(
                "reward_scale must be > 0, got {}",
                self.reward_scale
            ));
        }
        for (name, len) in [
            ("battery_capacity", self.battery_capacity.len()),
            ("harvest_rate", self.harvest_rate.len()),
            ("power_levels", self.power_levels.len()),
        ] {
            if len != k {
                return bad(format!(
                    "{name} has {len} entries, expected one per relay ({k})"
                ));
            }
        }
        for relay in 0..k {
            if self.battery_capacity[relay] < 1 {
                return bad(format!(
                    "relay {relay}: battery_capacity must be at least 1"
                ));
            }
            let mu = self.harvest_rate[relay];
            if !(mu >= 0.0 && mu.is_finite()) {
                return bad(format!(
                    "relay {relay}: harvest_rate must be finite and >= 0, got {mu}"
                ));
            }
            let levels = &self.power_levels[relay];
            if levels.first() != Some(&0.0) {
                return bad(format!("relay {relay}: power levels must start with 0"));
            }
            if levels.windows(2).any(|w| !(w[1] > w[0])) {
                return bad(format!(
                    "relay {relay}: power levels must be strictly ascending"
                ));
            }
            for &a in levels {
                let spend = a * self.slot_ms / 2.0;
                if !spend.is_finite() || (spend - spend.round()).abs() > INTEGRALITY_TOL {
                    return bad(format!(
                        "relay {relay}: power {a} spends {spend} energy packets per slot, \
                         which is not a whole number"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn num_levels(&self, relay: usize) -> usize {
        self.power_levels[relay].len()
    }

    pub fn power(&self, relay: usize, level: usize) -> f64 {
        self.power_levels[relay][level]
    }

    /// Energy packets drawn from the battery when `relay` transmits at
    /// `level` for one half slot.
    pub fn energy_cost(&self, relay: usize, level: usize) -> u32 {
        (self.power_levels[relay][level] * self.slot_ms / 2.0).round() as u32
    }

    /// Mean number of packet arrivals per slot.
    pub fn arrivals_per_slot(&self) -> f64 {
        self.arrival_rate * self.slot_ms
    }

    /// Mean number of harvested energy packets per slot at `relay`.
    pub fn harvest_per_slot(&self, relay: usize) -> f64 {
        self.harvest_rate[relay] * self.slot_ms
    }
}

/// Source-relay and relay-destination gains of one relay in the current slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPair {
    pub gain_sr: f64,
    pub gain_rd: f64,
    pub bin_sr: u8,
    pub bin_rd: u8,
}

/// Full network state at the start of a slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub buffer: u32,
    pub channels: Vec<ChannelPair>,
    pub batteries: Vec<u32>,
}

impl GlobalState {
    /// The part of the state relay `relay` observes.
    pub fn local(&self, relay: usize) -> LocalState {
        LocalState {
            buffer: self.buffer,
            channel: self.channels[relay],
            battery: self.batteries[relay],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalState {
    pub buffer: u32,
    pub channel: ChannelPair,
    pub battery: u32,
}

/// One chosen power level (index into `SystemParams::power_levels`) per relay.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionProfile(pub Vec<usize>);

impl ActionProfile {
    pub fn silent(num_relays: usize) -> Self {
        ActionProfile(vec![0; num_relays])
    }

    pub fn powers(&self, params: &SystemParams) -> Vec<f64> {
        self.0
            .iter()
            .enumerate()
            .map(|(k, &j)| params.power(k, j))
            .collect()
    }

    /// Checks every relay's level against its battery.
    pub fn check_feasible(&self, params: &SystemParams, batteries: &[u32]) -> Result<()> {
        for (relay, (&level, &battery)) in self.0.iter().zip(batteries).enumerate() {
            let spend = params.energy_cost(relay, level);
            if spend > battery {
                return Err(Error::InfeasibleAction {
                    relay,
                    level,
                    spend,
                    battery,
                });
            }
        }
        Ok(())
    }
}

/// SNR at the destination of the two-hop AF link through one relay.
pub fn relayed_snr(params: &SystemParams, power: f64, chan: &ChannelPair) -> f64 {
    snr_from_gains(params, power, chan.gain_sr, chan.gain_rd)
}

pub(crate) fn snr_from_gains(params: &SystemParams, power: f64, gain_sr: f64, gain_rd: f64) -> f64 {
    let noise = params.noise_power;
    let src = params.source_power * gain_sr;
    let num = power * src * gain_rd;
    if num == 0.0 {
        return 0.0;
    }
    num / (noise * (src + power * gain_rd + noise))
}

/// Cooperative rate (bits/s) from a sum of relayed SNRs.
pub fn rate_from_snr_sum(params: &SystemParams, snr_sum: f64) -> f64 {
    params.bandwidth_factor * params.bandwidth_hz * (1.0 + snr_sum / params.capacity_gap).log2()
}

/// End-to-end cooperative service rate in bits/s.
pub fn coop_rate(params: &SystemParams, profile: &ActionProfile, channels: &[ChannelPair]) -> f64 {
    let snr_sum: f64 = profile
        .0
        .iter()
        .zip(channels)
        .enumerate()
        .map(|(k, (&level, chan))| relayed_snr(params, params.power(k, level), chan))
        .sum();
    rate_from_snr_sum(params, snr_sum)
}

/// Whole packets deliverable during the relay sub-slot at `rate` bits/s.
pub fn service_packets(params: &SystemParams, rate: f64) -> u32 {
    // slot_ms * 1e-3 s * rate / (2 * packet_bits), arranged to keep exact
    // multiples exact in floating point.
    let packets = params.slot_ms * rate / (2000.0 * params.packet_bits);
    (packets + 1e-9).floor().max(0.0) as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferStep {
    pub next: u32,
    /// Packets that actually left the buffer (`min(b, served)`).
    pub departed: u32,
    pub admitted: u32,
    pub dropped: u32,
}

/// Lindley recursion with a finite buffer; arrivals beyond capacity are dropped.
pub fn buffer_step(params: &SystemParams, buffer: u32, served: u32, arrivals: u32) -> BufferStep {
    let departed = served.min(buffer);
    let residual = buffer - departed;
    let room = params.buffer_capacity.saturating_sub(residual);
    let admitted = arrivals.min(room);
    BufferStep {
        next: residual + admitted,
        departed,
        admitted,
        dropped: arrivals - admitted,
    }
}

/// Battery recursion for one relay. Overflow beyond capacity is lost.
pub fn energy_step(
    params: &SystemParams,
    relay: usize,
    battery: u32,
    level: usize,
    harvest: u32,
) -> Result<u32> {
    let spend = params.energy_cost(relay, level);
    if spend > battery {
        return Err(Error::InfeasibleAction {
            relay,
            level,
            spend,
            battery,
        });
    }
    Ok((battery - spend)
        .saturating_add(harvest)
        .min(params.battery_capacity[relay]))
}

/// Number of feasible levels at `battery`. Levels are ascending, so the
/// feasible set is always a prefix `0..n` and `n >= 1`.
pub fn feasible_count(params: &SystemParams, relay: usize, battery: u32) -> usize {
    (0..params.num_levels(relay))
        .take_while(|&j| params.energy_cost(relay, j) <= battery)
        .count()
}

/// Indices of the power levels relay `relay` can afford with `battery`.
pub fn feasible_actions(params: &SystemParams, relay: usize, battery: u32) -> Vec<usize> {
    (0..feasible_count(params, relay, battery)).collect()
}

/// Number of vacant buffer places after the slot, scaled.
pub fn reward(params: &SystemParams, next_buffer: u32) -> f64 {
    params.reward_scale * f64::from(params.buffer_capacity - next_buffer)
}
