//! Slot-level simulator of the source buffer, relay batteries and fading.
//!
//! Within slot `n`: relays transmit with the chosen profile using the
//! current channels, the buffer is served, then the slot's packet arrivals
//! and energy harvests are applied, and fresh channels are drawn for slot
//! `n + 1`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    buffer_step, coop_rate, energy_step, reward, service_packets, ActionProfile, GlobalState,
    SystemParams,
};
use crate::random::{sample_channels, ChannelModel, RngStream, StreamKind, StreamState};

/// What happened during one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotOutcome {
    /// Packets the cooperative rate could carry.
    pub served: u32,
    /// Packets that actually left the buffer.
    pub departed: u32,
    pub arrivals: u32,
    pub dropped: u32,
    pub next_buffer: u32,
    pub reward: f64,
    pub harvests: Vec<u32>,
}

/// Running totals since the start of the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub slots: u64,
    pub arrivals: u64,
    pub admitted: u64,
    pub dropped: u64,
    pub departed: u64,
    /// Sum over departed packets of (departure slot - arrival slot).
    pub sojourn_slots: u64,
    /// Sum of the buffer level at the start of each slot.
    pub occupancy_sum: u64,
}

/// Serializable simulator position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub state: GlobalState,
    pub slot: u64,
    pub arrivals_rng: StreamState,
    pub channel_rngs: Vec<StreamState>,
    pub harvest_rngs: Vec<StreamState>,
    pub queue: Vec<u64>,
    pub totals: Totals,
    pub digest: u64,
}

#[derive(Clone, Debug)]
pub struct Environment {
    params: SystemParams,
    model: ChannelModel,
    state: GlobalState,
    slot: u64,
    arrivals_rng: RngStream,
    channel_rngs: Vec<RngStream>,
    harvest_rngs: Vec<RngStream>,
    /// Arrival slot of every buffered packet, oldest first.
    queue: VecDeque<u64>,
    totals: Totals,
    digest: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_mix(hash: u64, value: u64) -> u64 {
    value.to_le_bytes().iter().fold(hash, |h, &byte| {
        (h ^ u64::from(byte)).wrapping_mul(FNV_PRIME)
    })
}

impl Environment {
    /// Starts at buffer `buffer` and batteries `batteries`, with channels
    /// for slot 0 drawn from the seed.
    pub fn new(
        params: SystemParams,
        model: ChannelModel,
        seed: u64,
        buffer: u32,
        batteries: Vec<u32>,
    ) -> Result<Self> {
        params.validate()?;
        let k = params.num_relays;
        if buffer > params.buffer_capacity {
            return Err(Error::InvalidParams(format!(
                "initial buffer {buffer} exceeds capacity {}",
                params.buffer_capacity
            )));
        }
        if batteries.len() != k
            || batteries
                .iter()
                .zip(&params.battery_capacity)
                .any(|(e, cap)| e > cap)
        {
            return Err(Error::InvalidParams(
                "initial batteries out of range".into(),
            ));
        }
        let mut channel_rngs: Vec<_> = (0..k)
            .map(|r| RngStream::for_kind(seed, StreamKind::Channel(r)))
            .collect();
        let harvest_rngs = (0..k)
            .map(|r| RngStream::for_kind(seed, StreamKind::Harvest(r)))
            .collect();
        let channels = sample_channels(&model, &mut channel_rngs);
        let mut digest = FNV_OFFSET;
        for c in &channels {
            digest = fnv_mix(digest, u64::from(c.bin_sr) << 8 | u64::from(c.bin_rd));
        }
        Ok(Environment {
            state: GlobalState {
                buffer,
                channels,
                batteries,
            },
            params,
            model,
            slot: 0,
            arrivals_rng: RngStream::for_kind(seed, StreamKind::Arrivals),
            channel_rngs,
            harvest_rngs,
            queue: VecDeque::from(vec![0; buffer as usize]),
            totals: Totals::default(),
            digest,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn channel_model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn totals(&self) -> &Totals {
        &self.totals
    }

    /// Hash of every exogenous draw (arrivals, harvests, channel bins) so far.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    /// Advances one slot under `profile`.
    pub fn step(&mut self, profile: &ActionProfile) -> Result<SlotOutcome> {
        let params = &self.params;
        profile.check_feasible(params, &self.state.batteries)?;

        let rate = coop_rate(params, profile, &self.state.channels);
        let served = service_packets(params, rate);
        let arrivals = self.arrivals_rng.poisson(params.arrivals_per_slot());
        let buffer = buffer_step(params, self.state.buffer, served, arrivals);

        self.totals.occupancy_sum += u64::from(self.state.buffer);
        for _ in 0..buffer.departed {
            let arrived = self.queue.pop_front().expect("queue tracks buffer");
            self.totals.sojourn_slots += self.slot - arrived;
        }
        for _ in 0..buffer.admitted {
            self.queue.push_back(self.slot);
        }

        let mut harvests = Vec::with_capacity(params.num_relays);
        for relay in 0..params.num_relays {
            let h = self.harvest_rngs[relay].poisson(params.harvest_per_slot(relay));
            harvests.push(h);
            let e = self.state.batteries[relay];
            self.state.batteries[relay] = energy_step(params, relay, e, profile.0[relay], h)?;
        }
        self.state.buffer = buffer.next;
        self.state.channels = sample_channels(&self.model, &mut self.channel_rngs);

        let mut digest = fnv_mix(self.digest, u64::from(arrivals));
        for (&h, c) in harvests.iter().zip(&self.state.channels) {
            digest = fnv_mix(digest, u64::from(h));
            digest = fnv_mix(digest, u64::from(c.bin_sr) << 8 | u64::from(c.bin_rd));
        }
        self.digest = digest;

        self.totals.slots += 1;
        self.totals.arrivals += u64::from(arrivals);
        self.totals.admitted += u64::from(buffer.admitted);
        self.totals.dropped += u64::from(buffer.dropped);
        self.totals.departed += u64::from(buffer.departed);
        self.slot += 1;

        Ok(SlotOutcome {
            served,
            departed: buffer.departed,
            arrivals,
            dropped: buffer.dropped,
            next_buffer: buffer.next,
            reward: reward(&self.params, buffer.next),
            harvests,
        })
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            state: self.state.clone(),
            slot: self.slot,
            arrivals_rng: self.arrivals_rng.state(),
            channel_rngs: self.channel_rngs.iter().map(RngStream::state).collect(),
            harvest_rngs: self.harvest_rngs.iter().map(RngStream::state).collect(),
            queue: self.queue.iter().copied().collect(),
            totals: self.totals,
            digest: self.digest,
        }
    }

    pub fn restore(params: SystemParams, model: ChannelModel, snap: EnvSnapshot) -> Result<Self> {
        params.validate()?;
        let k = params.num_relays;
        if snap.channel_rngs.len() != k
            || snap.harvest_rngs.len() != k
            || snap.state.batteries.len() != k
        {
            return Err(Error::Checkpoint("relay count differs from config".into()));
        }
        Ok(Environment {
            params,
            model,
            state: snap.state,
            slot: snap.slot,
            arrivals_rng: RngStream::from_state(snap.arrivals_rng),
            channel_rngs: snap
                .channel_rngs
                .into_iter()
                .map(RngStream::from_state)
                .collect(),
            harvest_rngs: snap
                .harvest_rngs
                .into_iter()
                .map(RngStream::from_state)
                .collect(),
            queue: snap.queue.into(),
            totals: snap.totals,
            digest: snap.digest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(seed: u64) -> Environment {
        let params = SystemParams {
            num_relays: 2,
            battery_capacity: vec![4; 2],
            harvest_rate: vec![0.25; 2],
            power_levels: vec![vec![0.0, 1.0, 2.0, 3.0, 4.0]; 2],
            ..SystemParams::default()
        };
        Environment::new(params, ChannelModel::default(), seed, 3, vec![4, 4]).unwrap()
    }

    #[test]
    fn rejects_infeasible_profile() {
        let mut e = Environment::new(
            SystemParams::default(),
            ChannelModel::default(),
            1,
            0,
            vec![0; 8],
        )
        .unwrap();
        let err = e
            .step(&ActionProfile(vec![1, 0, 0, 0, 0, 0, 0, 0]))
            .unwrap_err();
        assert!(matches!(err, Error::InfeasibleAction { relay: 0, .. }));
    }

    #[test]
    fn accounting_identities_hold() {
        let mut e = env(9);
        let start = u64::from(e.state().buffer);
        for n in 0..5_000 {
            let level = if n % 3 == 0 { 1 } else { 0 };
            let profile = ActionProfile(
                e.state()
                    .batteries
                    .iter()
                    .map(|&b| if b >= 1 { level } else { 0 })
                    .collect(),
            );
            let out = e.step(&profile).unwrap();
            assert!(out.next_buffer <= 9);
            assert!(e.state().batteries.iter().all(|&b| b <= 4));
        }
        let t = *e.totals();
        assert_eq!(t.arrivals, t.admitted + t.dropped);
        assert_eq!(start + t.admitted, t.departed + u64::from(e.state().buffer));
        assert_eq!(e.queue.len() as u32, e.state().buffer);
    }

    #[test]
    fn exogenous_draws_ignore_actions() {
        let mut quiet = env(4);
        let mut loud = env(4);
        for _ in 0..1_000 {
            quiet.step(&ActionProfile(vec![0, 0])).unwrap();
            let profile = ActionProfile(
                loud.state()
                    .batteries
                    .iter()
                    .map(|&b| (b as usize).min(4))
                    .collect(),
            );
            loud.step(&profile).unwrap();
        }
        assert_eq!(quiet.digest(), loud.digest());
        assert_eq!(quiet.totals().arrivals, loud.totals().arrivals);
    }

    #[test]
    fn snapshot_resumes_exactly() {
        let mut a = env(21);
        for _ in 0..300 {
            a.step(&ActionProfile(vec![0, 0])).unwrap();
        }
        let snap = serde_json::to_string(&a.snapshot()).unwrap();
        let mut b = Environment::restore(
            a.params().clone(),
            a.channel_model().clone(),
            serde_json::from_str(&snap).unwrap(),
        )
        .unwrap();
        for _ in 0..300 {
            let p = ActionProfile(vec![0, 0]);
            assert_eq!(a.step(&p).unwrap(), b.step(&p).unwrap());
        }
        assert_eq!(a.snapshot(), b.snapshot());
    }
}
