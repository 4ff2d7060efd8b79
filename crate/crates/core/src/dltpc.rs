//! Distributed learning-theoretic power control.
//!
//! Each relay runs a score-function gradient estimator over renewal cycles:
//! a cycle ends when the buffer is back at `b*` and every battery is back at
//! its anchor level. Within a cycle each relay accumulates
//!
//! ```text
//! z <- z + grad ln u(a_n | s_n)
//! g <- g + (r_n - R) z
//! ```
//!
//! using only its local observations plus the per-slot broadcast from the
//! source (next buffer level and the cycle-end bit). At a cycle end all
//! relays step `theta += alpha_m g` in lockstep, the average-reward estimate
//! moves by `alpha_m Q` where `Q` is the cycle's summed reward excess, and
//! the accumulators are cleared.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{reward, ActionProfile, GlobalState, LocalState, SystemParams};
use crate::policy::{PolicyParams, PolicyTable};
use crate::random::{RngStream, StreamKind, StreamState};
use crate::sim::{Environment, SlotOutcome};

/// The recurrent set `{(b*, c, e*) : all channels c}` marking cycle ends.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub buffer: u32,
    /// Anchor battery level of each relay.
    pub batteries: Vec<u32>,
}

impl Anchor {
    /// Full buffer and full batteries.
    pub fn full(params: &SystemParams) -> Self {
        Anchor {
            buffer: params.buffer_capacity,
            batteries: params.battery_capacity.clone(),
        }
    }

    /// Same battery level `battery` at every relay.
    pub fn uniform(params: &SystemParams, buffer: u32, battery: u32) -> Self {
        Anchor {
            buffer,
            batteries: vec![battery; params.num_relays],
        }
    }

    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        if self.buffer > params.buffer_capacity {
            return Err(Error::InvalidParams(format!(
                "anchor buffer {} exceeds capacity {}",
                self.buffer, params.buffer_capacity
            )));
        }
        if self.batteries.len() != params.num_relays {
            return Err(Error::InvalidParams(format!(
                "anchor lists {} batteries for {} relays",
                self.batteries.len(),
                params.num_relays
            )));
        }
        for (k, (&e, &cap)) in self
            .batteries
            .iter()
            .zip(&params.battery_capacity)
            .enumerate()
        {
            if e > cap {
                return Err(Error::InvalidParams(format!(
                    "anchor battery {e} of relay {k} exceeds capacity {cap}"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, buffer: u32, batteries: &[u32]) -> bool {
        buffer == self.buffer && batteries == self.batteries.as_slice()
    }

    /// Representative battery level for diagnostics.
    fn battery_label(&self) -> u32 {
        self.batteries.first().copied().unwrap_or(0)
    }
}

/// Step-size schedule indexed by the renewal-cycle count `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearningRate {
    /// `initial * factor^(m / period)` (integer division).
    Geometric {
        initial: f64,
        factor: f64,
        period: u64,
    },
    /// `initial / (1 + m / scale)`: diminishing, not summable, square summable.
    Harmonic {
        initial: f64,
        scale: f64,
    },
    Constant {
        value: f64,
    },
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate::Geometric {
            initial: 2.5e-4,
            factor: 0.9,
            period: 100,
        }
    }
}

impl LearningRate {
    pub fn at(&self, cycle: u64) -> f64 {
        match *self {
            LearningRate::Geometric {
                initial,
                factor,
                period,
            } => initial * factor.powi((cycle / period.max(1)) as i32),
            LearningRate::Harmonic { initial, scale } => initial / (1.0 + cycle as f64 / scale),
            LearningRate::Constant { value } => value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LearningRate::Geometric {
                initial,
                factor,
                period,
            } => initial > 0.0 && factor > 0.0 && factor <= 1.0 && period > 0,
            LearningRate::Harmonic { initial, scale } => initial > 0.0 && scale > 0.0,
            LearningRate::Constant { value } => value >= 0.0 && value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "invalid learning-rate schedule {self:?}"
            )))
        }
    }
}

/// Where the average-reward estimate lives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMode {
    /// The source keeps `R` and `Q` and adds `R` to its per-slot broadcast.
    #[default]
    Broadcast,
    /// Every relay keeps its own copy, updated from the same broadcast bits.
    Replicated,
}

/// Source-to-relay message at the end of a slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotBroadcast {
    pub next_buffer: u32,
    pub cycle_end: bool,
    /// Current average-reward estimate; only sent in broadcast mode.
    pub avg_reward: Option<f64>,
}

/// Source-side cycle termination: every relay reported its anchor level and
/// the buffer is at `b*`.
pub fn detect_cycle_end(anchor: &Anchor, battery_reports: &[bool], next_buffer: u32) -> bool {
    next_buffer == anchor.buffer && battery_reports.iter().all(|&bit| bit)
}

/// Scalars shared by all relays: differential reward of the running cycle,
/// average-reward estimate and cycle count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    pub q_hat: f64,
    pub r_hat: f64,
    pub cycle: u64,
}

impl RewardEstimate {
    pub fn new(r_hat: f64) -> Self {
        RewardEstimate {
            q_hat: 0.0,
            r_hat,
            cycle: 0,
        }
    }

    pub fn slot_update(&mut self, reward: f64) {
        self.q_hat += reward - self.r_hat;
    }

    pub fn cycle_update(&mut self, alpha: f64) {
        self.r_hat += alpha * self.q_hat;
        self.q_hat = 0.0;
        self.cycle += 1;
    }
}

/// One relay's learner: its policy and the cycle accumulators.
#[derive(Clone, Debug)]
pub struct RelayLearner {
    relay: usize,
    policy: PolicyTable,
    z: Vec<f64>,
    g: Vec<f64>,
    /// States whose rows of `z` are nonzero in the running cycle. Entries of
    /// `z` outside these rows are exactly zero, so skipping them in the `g`
    /// update gives the same bits as the dense loop.
    touched: Vec<usize>,
    is_touched: Vec<bool>,
    rng: RngStream,
    local_estimate: Option<RewardEstimate>,
}

/// Serializable learner state for checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSnapshot {
    pub policy: PolicyTable,
    pub z: Vec<f64>,
    pub g: Vec<f64>,
    pub touched: Vec<usize>,
    pub rng: StreamState,
    pub local_estimate: Option<RewardEstimate>,
}

impl RelayLearner {
    pub fn new(relay: usize, policy: PolicyTable, rng: RngStream) -> Self {
        let dim = policy.dim();
        let states = policy.num_states();
        RelayLearner {
            relay,
            policy,
            z: vec![0.0; dim],
            g: vec![0.0; dim],
            touched: Vec::new(),
            is_touched: vec![false; states],
            rng,
            local_estimate: None,
        }
    }

    pub fn relay(&self) -> usize {
        self.relay
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }

    /// Current score sum `z`.
    pub fn score_sum(&self) -> &[f64] {
        &self.z
    }

    /// Current gradient accumulator `g`.
    pub fn gradient(&self) -> &[f64] {
        &self.g
    }

    /// Draws a power level for the observed local state; returns
    /// `(local state index, level)`.
    pub fn choose(&mut self, s: &LocalState) -> (usize, usize) {
        let idx = self.policy.space().index(s);
        (idx, self.policy.sample(idx, &mut self.rng))
    }

    /// Accumulates one slot: `z += score`, then `g += (r - R) z`.
    pub fn slot_update(
        &mut self,
        state: usize,
        action: usize,
        reward: f64,
        r_hat: f64,
    ) -> Result<()> {
        let score = self.policy.score(state, action)?;
        let na = self.policy.num_actions();
        let row = &mut self.z[state * na..(state + 1) * na];
        for (z, s) in row.iter_mut().zip(&score.values) {
            *z += s;
        }
        if !self.is_touched[state] {
            self.is_touched[state] = true;
            self.touched.push(state);
        }
        let excess = reward - r_hat;
        for &s in &self.touched {
            let range = s * na..(s + 1) * na;
            for (g, z) in self.g[range.clone()].iter_mut().zip(&self.z[range]) {
                *g += excess * z;
            }
        }
        Ok(())
    }

    /// Ends a cycle: `theta += alpha g` (unless frozen) and clears `z`, `g`.
    pub fn cycle_update(&mut self, alpha: f64, freeze_policy: bool) {
        if !freeze_policy {
            self.policy.ascend(alpha, &self.g);
        }
        let na = self.policy.num_actions();
        for &s in &self.touched {
            self.z[s * na..(s + 1) * na].fill(0.0);
            self.g[s * na..(s + 1) * na].fill(0.0);
            self.is_touched[s] = false;
        }
        self.touched.clear();
    }

    /// Squared norm of `g`.
    pub fn gradient_norm_sq(&self) -> f64 {
        let na = self.policy.num_actions();
        self.touched
            .iter()
            .flat_map(|&s| &self.g[s * na..(s + 1) * na])
            .map(|x| x * x)
            .sum()
    }

    pub fn snapshot(&self) -> LearnerSnapshot {
        LearnerSnapshot {
            policy: self.policy.clone(),
            z: self.z.clone(),
            g: self.g.clone(),
            touched: self.touched.clone(),
            rng: self.rng.state(),
            local_estimate: self.local_estimate,
        }
    }

    pub fn restore(relay: usize, snap: LearnerSnapshot) -> Result<Self> {
        let dim = snap.policy.dim();
        if snap.z.len() != dim || snap.g.len() != dim {
            return Err(Error::Checkpoint(format!(
                "relay {relay}: accumulator size mismatch"
            )));
        }
        let mut is_touched = vec![false; snap.policy.num_states()];
        for &s in &snap.touched {
            *is_touched.get_mut(s).ok_or_else(|| {
                Error::Checkpoint(format!("relay {relay}: bad touched state {s}"))
            })? = true;
        }
        Ok(RelayLearner {
            relay,
            policy: snap.policy,
            z: snap.z,
            g: snap.g,
            touched: snap.touched,
            is_touched,
            rng: RngStream::from_state(snap.rng),
            local_estimate: snap.local_estimate,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DltpcConfig {
    pub anchor: Anchor,
    pub schedule: LearningRate,
    pub mode: EstimateMode,
    /// Abort when a cycle runs longer than this many slots.
    pub max_cycle_len: u64,
    /// Initial preferences are uniform in `[-init_spread, init_spread]`.
    pub init_spread: f64,
    /// Keep `theta` fixed while still estimating gradients and `R`.
    pub freeze_policy: bool,
    pub initial_avg_reward: f64,
    /// Copy every relay's `g` into the cycle summary.
    pub record_gradients: bool,
}

impl DltpcConfig {
    pub fn new(params: &SystemParams) -> Self {
        DltpcConfig {
            anchor: Anchor::full(params),
            schedule: LearningRate::default(),
            mode: EstimateMode::Broadcast,
            max_cycle_len: 1_000_000,
            init_spread: 0.01,
            freeze_policy: false,
            initial_avg_reward: 0.0,
            record_gradients: false,
        }
    }
}

/// Summary of a completed renewal cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleSummary {
    /// Index `m` of the cycle that just ended.
    pub index: u64,
    pub length: u64,
    pub end_slot: u64,
    pub alpha: f64,
    /// Summed reward excess `Q` of the cycle.
    pub q_hat: f64,
    /// Average-reward estimate after the update.
    pub r_hat: f64,
    /// Euclidean norm of the stacked cycle gradient estimate.
    pub gradient_norm: f64,
    /// Per-relay `g` at the cycle end, when requested.
    pub gradients: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct DltpcSlot {
    pub profile: ActionProfile,
    pub outcome: SlotOutcome,
    pub cycle: Option<CycleSummary>,
}

/// Serializable learner-side state for checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DltpcSnapshot {
    pub config: DltpcConfig,
    pub learners: Vec<LearnerSnapshot>,
    pub source: RewardEstimate,
    pub cycle_start: u64,
}

/// All relays plus the source-side bookkeeping.
#[derive(Clone, Debug)]
pub struct Dltpc {
    config: DltpcConfig,
    params: SystemParams,
    learners: Vec<RelayLearner>,
    source: RewardEstimate,
    cycle_start: u64,
    local_idx: Vec<usize>,
}

impl Dltpc {
    /// Random initial preferences drawn from the per-relay init streams.
    pub fn new(
        params: &SystemParams,
        channel_bins: usize,
        config: DltpcConfig,
        seed: u64,
    ) -> Result<Self> {
        let tables = (0..params.num_relays)
            .map(|k| {
                let mut init = RngStream::for_kind(seed, StreamKind::PolicyInit(k));
                PolicyTable::random(params, channel_bins, k, config.init_spread, &mut init)
            })
            .collect();
        Self::with_policy(params, PolicyParams { tables }, config, seed)
    }

    pub fn with_policy(
        params: &SystemParams,
        policy: PolicyParams,
        config: DltpcConfig,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        config.anchor.validate(params)?;
        config.schedule.validate()?;
        if policy.tables.len() != params.num_relays {
            return Err(Error::InvalidParams(
                "policy relay count differs from system".into(),
            ));
        }
        let learners = policy
            .tables
            .into_iter()
            .enumerate()
            .map(|(k, table)| {
                let mut learner =
                    RelayLearner::new(k, table, RngStream::for_kind(seed, StreamKind::Policy(k)));
                if config.mode == EstimateMode::Replicated {
                    learner.local_estimate = Some(RewardEstimate::new(config.initial_avg_reward));
                }
                learner
            })
            .collect();
        Ok(Dltpc {
            source: RewardEstimate::new(config.initial_avg_reward),
            params: params.clone(),
            local_idx: vec![0; params.num_relays],
            learners,
            config,
            cycle_start: 0,
        })
    }

    pub fn config(&self) -> &DltpcConfig {
        &self.config
    }

    pub fn learners(&self) -> &[RelayLearner] {
        &self.learners
    }

    pub fn policy(&self) -> PolicyParams {
        PolicyParams {
            tables: self.learners.iter().map(|l| l.policy.clone()).collect(),
        }
    }

    /// Average-reward estimate as held by the source (broadcast mode) or
    /// relay 0 (replicated mode).
    pub fn avg_reward(&self) -> f64 {
        self.estimate().r_hat
    }

    pub fn cycles(&self) -> u64 {
        self.estimate().cycle
    }

    fn estimate(&self) -> RewardEstimate {
        match self.config.mode {
            EstimateMode::Broadcast => self.source,
            EstimateMode::Replicated => self.learners[0].local_estimate.expect("replicated"),
        }
    }

    /// Every relay samples its level from its own local view.
    pub fn act(&mut self, state: &GlobalState) -> ActionProfile {
        let levels = self
            .learners
            .iter_mut()
            .enumerate()
            .map(|(k, learner)| {
                let (idx, a) = learner.choose(&state.local(k));
                self.local_idx[k] = idx;
                a
            })
            .collect();
        ActionProfile(levels)
    }

    /// Learning half of a slot, given the profile that was played from the
    /// local states recorded by [`act`](Self::act).
    pub fn learn(
        &mut self,
        profile: &ActionProfile,
        outcome: &SlotOutcome,
        next: &GlobalState,
        slot: u64,
    ) -> Result<Option<CycleSummary>> {
        let anchor = &self.config.anchor;
        // Relay -> source: one bit each.
        let reports: Vec<bool> = next
            .batteries
            .iter()
            .zip(&anchor.batteries)
            .map(|(e, star)| e == star)
            .collect();
        let cycle_end = detect_cycle_end(anchor, &reports, outcome.next_buffer);
        let broadcast = SlotBroadcast {
            next_buffer: outcome.next_buffer,
            cycle_end,
            avg_reward: match self.config.mode {
                EstimateMode::Broadcast => Some(self.source.r_hat),
                EstimateMode::Replicated => None,
            },
        };

        let r = reward(&self.params, broadcast.next_buffer);
        for (k, learner) in self.learners.iter_mut().enumerate() {
            let r_hat = match broadcast.avg_reward {
                Some(v) => v,
                None => learner.local_estimate.expect("replicated").r_hat,
            };
            learner.slot_update(self.local_idx[k], profile.0[k], r, r_hat)?;
            if let Some(est) = learner.local_estimate.as_mut() {
                est.slot_update(r);
            }
        }
        self.source.slot_update(r);

        let length = slot + 1 - self.cycle_start;
        if !broadcast.cycle_end {
            if length >= self.config.max_cycle_len {
                return Err(Error::CycleTooLong {
                    cap: self.config.max_cycle_len,
                    buffer: anchor.buffer,
                    battery: anchor.battery_label(),
                });
            }
            return Ok(None);
        }

        // All relays update at the same slot boundary.
        let index = self.estimate().cycle;
        let alpha = self.config.schedule.at(index);
        let q_hat = self.estimate().q_hat;
        let gradient_norm = self
            .learners
            .iter()
            .map(RelayLearner::gradient_norm_sq)
            .sum::<f64>()
            .sqrt();
        let gradients = self
            .config
            .record_gradients
            .then(|| self.learners.iter().map(|l| l.g.clone()).collect());
        for learner in &mut self.learners {
            learner.cycle_update(alpha, self.config.freeze_policy);
            if let Some(est) = learner.local_estimate.as_mut() {
                est.cycle_update(alpha);
            }
        }
        self.source.cycle_update(alpha);
        self.cycle_start = slot + 1;
        Ok(Some(CycleSummary {
            index,
            length,
            end_slot: slot + 1,
            alpha,
            q_hat,
            r_hat: self.estimate().r_hat,
            gradient_norm,
            gradients,
        }))
    }

    /// One full slot of the algorithm against the simulator.
    pub fn step(&mut self, env: &mut Environment) -> Result<DltpcSlot> {
        let slot = env.slot();
        let profile = self.act(env.state());
        let outcome = env.step(&profile)?;
        let cycle = self.learn(&profile, &outcome, env.state(), slot)?;
        Ok(DltpcSlot {
            profile,
            outcome,
            cycle,
        })
    }

    pub fn snapshot(&self) -> DltpcSnapshot {
        DltpcSnapshot {
            config: self.config.clone(),
            learners: self.learners.iter().map(RelayLearner::snapshot).collect(),
            source: self.source,
            cycle_start: self.cycle_start,
        }
    }

    pub fn restore(params: &SystemParams, snap: DltpcSnapshot) -> Result<Self> {
        if snap.learners.len() != params.num_relays {
            return Err(Error::Checkpoint(
                "learner count differs from config".into(),
            ));
        }
        let learners = snap
            .learners
            .into_iter()
            .enumerate()
            .map(|(k, l)| RelayLearner::restore(k, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dltpc {
            config: snap.config,
            params: params.clone(),
            local_idx: vec![0; params.num_relays],
            learners,
            source: snap.source,
            cycle_start: snap.cycle_start,
        })
    }
}

/// Per-cycle trace of a learning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub index: u64,
    pub end_slot: u64,
    pub length: u64,
    pub alpha: f64,
    pub r_hat: f64,
    pub gradient_norm: f64,
}

impl From<&CycleSummary> for CycleRecord {
    fn from(c: &CycleSummary) -> Self {
        CycleRecord {
            index: c.index,
            end_slot: c.end_slot,
            length: c.length,
            alpha: c.alpha,
            r_hat: c.r_hat,
            gradient_norm: c.gradient_norm,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DltpcRun {
    /// Buffer level at the start of every slot.
    pub occupancy: Vec<u32>,
    pub cycles: Vec<CycleRecord>,
    pub policy: PolicyParams,
    pub avg_reward: f64,
}

/// Runs the algorithm for `horizon` slots.
///
/// Fails if no renewal cycle completes, since then no update ever happened.
pub fn run_dltpc(env: &mut Environment, learner: &mut Dltpc, horizon: u64) -> Result<DltpcRun> {
    let mut occupancy = Vec::with_capacity(horizon as usize);
    let mut cycles = Vec::new();
    for _ in 0..horizon {
        occupancy.push(env.state().buffer);
        let slot = learner.step(env)?;
        if let Some(c) = &slot.cycle {
            cycles.push(CycleRecord::from(c));
        }
    }
    if cycles.is_empty() && horizon > 0 {
        let anchor = &learner.config.anchor;
        return Err(Error::AnchorNotReached {
            buffer: anchor.buffer,
            battery: anchor.battery_label(),
            slots: horizon,
        });
    }
    Ok(DltpcRun {
        occupancy,
        cycles,
        policy: learner.policy(),
        avg_reward: learner.avg_reward(),
    })
}

/// Centralized replay of the cycle estimate from the global history.
///
/// Keeps one dense accumulator over the whole of `Θ` and feeds it the joint
/// score `grad ln prod_k u(a^k | s^k)`. Used to check that the relays' local
/// estimates are exactly the blocks of the joint one.
#[derive(Clone, Debug)]
pub struct JointEstimator {
    policy: PolicyParams,
    z: Vec<f64>,
    g: Vec<f64>,
}

impl JointEstimator {
    pub fn new(policy: PolicyParams) -> Self {
        let dim = policy.dim();
        JointEstimator {
            policy,
            z: vec![0.0; dim],
            g: vec![0.0; dim],
        }
    }

    /// Replaces the policy, as after a cycle update.
    pub fn set_policy(&mut self, policy: PolicyParams) {
        self.policy = policy;
    }

    /// Dense joint score of `profile` in `state`.
    pub fn joint_score(&self, state: &GlobalState, profile: &ActionProfile) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.policy.dim()];
        for (k, table) in self.policy.tables.iter().enumerate() {
            let idx = table.space().index(&state.local(k));
            let score = table.score(idx, profile.0[k])?;
            let start = self.policy.offset(k) + idx * table.num_actions();
            out[start..start + table.num_actions()].copy_from_slice(&score.values);
        }
        Ok(out)
    }

    pub fn slot_update(
        &mut self,
        state: &GlobalState,
        profile: &ActionProfile,
        reward: f64,
        r_hat: f64,
    ) -> Result<()> {
        let score = self.joint_score(state, profile)?;
        for (z, s) in self.z.iter_mut().zip(&score) {
            *z += s;
        }
        let excess = reward - r_hat;
        for (g, z) in self.g.iter_mut().zip(&self.z) {
            *g += excess * z;
        }
        Ok(())
    }

    /// The cycle's estimate; clears the accumulators.
    pub fn finish_cycle(&mut self) -> Vec<f64> {
        self.z.fill(0.0);
        std::mem::replace(&mut self.g, vec![0.0; self.policy.dim()])
    }

    /// Relay `k`'s block of a flat joint vector.
    pub fn block<'a>(&self, flat: &'a [f64], relay: usize) -> &'a [f64] {
        let start = self.policy.offset(relay);
        &flat[start..start + self.policy.tables[relay].dim()]
    }
}

/// Cycle estimate in reward-to-go order: `sum_n score_n sum_{j >= n} (r_j - R)`.
///
/// `scores[n]` is the score of slot `n` and `rewards[n]` its reward.
pub fn reward_to_go_estimate(scores: &[Vec<f64>], rewards: &[f64], r_hat: f64) -> Vec<f64> {
    let dim = scores.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (n, score) in scores.iter().enumerate() {
        let to_go: f64 = rewards[n..].iter().map(|r| r - r_hat).sum();
        for (o, s) in out.iter_mut().zip(score) {
            *o += s * to_go;
        }
    }
    out
}
