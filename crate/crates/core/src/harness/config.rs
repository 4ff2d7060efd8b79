//! Experiment configuration: TOML schema, defaults and validation.
//!
//! Every section and key is optional; omitted values take the defaults of
//! the eight-relay reference network. Units are stated per key below.
//!
//! ```toml
//! [run]
//! controllers = ["dltpc", "naive"]   # dltpc | mdp-optimal | online-hr | naive | fixed-policy
//! horizon = 2000000                  # slots
//! warmup = 200000                    # slots excluded from summaries (default: horizon / 10)
//! seeds = [1, 2, 3]
//! policy_file = "theta.json"         # fixed-policy preferences (default: uniform)
//! output = "out"
//! format = "csv"                     # csv | json
//!
//! [system]
//! num_relays = 8
//! slot_ms = 2.0                      # ms
//! bandwidth_hz = 2.5e6               # Hz
//! bandwidth_factor = 1.0
//! capacity_gap = 1.0
//! noise_power = 1e-4
//! source_power = 5.0                 # energy packets per ms
//! packet_bytes = 1024
//! buffer_capacity = 9                # packets
//! battery_capacity = 4               # energy packets, scalar or one per relay
//! arrival_rate = 2.0                 # packets per ms
//! harvest_rate = 0.25                # energy packets per ms, scalar or one per relay
//! reward_scale = 1.0
//! power_levels = [0, 1, 2, 3, 4]     # energy packets per ms, shared or one list per relay
//!
//! [channel]
//! edges_db = [-5.41, -1.59, -0.08, 1.42, 3.18]
//! mean_gain = 1.0
//!
//! [anchor]
//! buffer = 9                         # default: buffer capacity
//! battery = 4                        # default: full batteries; or `batteries = [...]`
//!
//! [learning]
//! schedule = { kind = "geometric", initial = 2.5e-4, factor = 0.9, period = 100 }
//! mode = "broadcast"                 # broadcast | replicated
//! max_cycle_len = 1000000            # slots
//! init_spread = 0.01
//! initial_avg_reward = 0.0
//!
//! [sweep]                            # each list varies one parameter from the base point
//! arrival_rate = [1.0, 1.5, 2.0]
//! harvest_rate = [0.25, 0.35]
//! battery_capacity = [2, 4, 6]
//!
//! [trace]
//! occupancy_every = 1000             # slots per occupancy window
//! cycle_every = 1                    # cycles between recorded estimates
//! policy_every = 1000                # cycles between policy snapshots
//! policy_states = [{ relay = 0, buffer = 9, bin_sr = 5, bin_rd = 5, battery = 4 }]
//!
//! [exact]
//! size_cap = 10000000                # |S|*|A| entries
//! rvi_tol = 1e-9
//! rvi_max_iter = 200000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dltpc::{Anchor, DltpcConfig, EstimateMode, LearningRate};
use crate::error::{Error, Result};
use crate::exact::{RviOptions, StateSpace, DEFAULT_SIZE_CAP};
use crate::model::SystemParams;
use crate::random::ChannelModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Dltpc,
    MdpOptimal,
    OnlineHr,
    Naive,
    FixedPolicy,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Dltpc => "dltpc",
            ControllerKind::MdpOptimal => "mdp-optimal",
            ControllerKind::OnlineHr => "online-hr",
            ControllerKind::Naive => "naive",
            ControllerKind::FixedPolicy => "fixed-policy",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    #[default]
    Csv,
    Json,
}

/// Parameter varied along a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    ArrivalRate,
    HarvestRate,
    BatteryCapacity,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::ArrivalRate => "arrival_rate",
            SweepAxis::HarvestRate => "harvest_rate",
            SweepAxis::BatteryCapacity => "battery_capacity",
        }
    }
}

/// Anchor as configured; unset fields follow the sweep point's capacities.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSpec {
    pub buffer: Option<u32>,
    pub battery: Option<u32>,
    pub batteries: Option<Vec<u32>>,
}

impl AnchorSpec {
    pub fn resolve(&self, params: &SystemParams) -> Result<Anchor> {
        let buffer = self.buffer.unwrap_or(params.buffer_capacity);
        let batteries = match (&self.battery, &self.batteries) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "anchor: give either `battery` or `batteries`, not both".into(),
                ))
            }
            (Some(e), None) => vec![*e; params.num_relays],
            (None, Some(v)) => v.clone(),
            (None, None) => params.battery_capacity.clone(),
        };
        let anchor = Anchor { buffer, batteries };
        anchor
            .validate(params)
            .map_err(|e| Error::Config(format!("anchor: {}", strip_prefix(&e))))?;
        Ok(anchor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningSpec {
    pub schedule: LearningRate,
    pub mode: EstimateMode,
    pub max_cycle_len: u64,
    pub init_spread: f64,
    pub initial_avg_reward: f64,
}

impl Default for LearningSpec {
    fn default() -> Self {
        let base = DltpcConfig::new(&SystemParams::default());
        LearningSpec {
            schedule: base.schedule,
            mode: base.mode,
            max_cycle_len: base.max_cycle_len,
            init_spread: base.init_spread,
            initial_avg_reward: base.initial_avg_reward,
        }
    }
}

impl LearningSpec {
    pub fn dltpc_config(&self, anchor: Anchor, params: &SystemParams) -> DltpcConfig {
        DltpcConfig {
            anchor,
            schedule: self.schedule,
            mode: self.mode,
            max_cycle_len: self.max_cycle_len,
            init_spread: self.init_spread,
            initial_avg_reward: self.initial_avg_reward,
            ..DltpcConfig::new(params)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub arrival_rate: Vec<f64>,
    pub harvest_rate: Vec<f64>,
    pub battery_capacity: Vec<u32>,
}

impl SweepSpec {
    pub fn is_empty(&self) -> bool {
        self.arrival_rate.is_empty()
            && self.harvest_rate.is_empty()
            && self.battery_capacity.is_empty()
    }
}

/// A local state whose action probabilities are traced over cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracedState {
    pub relay: usize,
    pub buffer: u32,
    pub bin_sr: usize,
    pub bin_rd: usize,
    pub battery: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSpec {
    pub occupancy_every: u64,
    pub cycle_every: u64,
    pub policy_every: u64,
    /// Empty means relay 0 with full buffer and battery at the best and the
    /// worst channel bins.
    pub policy_states: Vec<TracedState>,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            occupancy_every: 1000,
            cycle_every: 1,
            policy_every: 1000,
            policy_states: Vec::new(),
        }
    }
}

impl TraceSpec {
    pub fn states(&self, params: &SystemParams, bins: usize) -> Vec<TracedState> {
        if !self.policy_states.is_empty() {
            return self.policy_states.clone();
        }
        let full = |bin| TracedState {
            relay: 0,
            buffer: params.buffer_capacity,
            bin_sr: bin,
            bin_rd: bin,
            battery: params.battery_capacity[0],
        };
        vec![full(bins - 1), full(0)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExactSpec {
    pub size_cap: u64,
    pub rvi_tol: f64,
    pub rvi_max_iter: usize,
}

impl Default for ExactSpec {
    fn default() -> Self {
        let rvi = RviOptions::default();
        ExactSpec {
            size_cap: DEFAULT_SIZE_CAP as u64,
            rvi_tol: rvi.tol,
            rvi_max_iter: rvi.max_iter,
        }
    }
}

impl ExactSpec {
    pub fn rvi_options(&self) -> RviOptions {
        RviOptions {
            tol: self.rvi_tol,
            max_iter: self.rvi_max_iter,
            ..RviOptions::default()
        }
    }
}

/// Fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: SystemParams,
    pub channel: ChannelModel,
    pub anchor: AnchorSpec,
    pub learning: LearningSpec,
    pub controllers: Vec<ControllerKind>,
    pub policy_file: Option<PathBuf>,
    pub horizon: u64,
    pub warmup: u64,
    pub seeds: Vec<u64>,
    pub sweep: SweepSpec,
    pub trace: TraceSpec,
    pub exact: ExactSpec,
    pub output: PathBuf,
    pub format: ExportFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        resolve(RawConfig::default(), "").expect("defaults are valid")
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum PerRelay<T> {
    All(T),
    Each(Vec<T>),
}

impl<T: Clone> PerRelay<T> {
    fn expand(&self, key: &str, k: usize) -> Result<Vec<T>> {
        match self {
            PerRelay::All(v) => Ok(vec![v.clone(); k]),
            PerRelay::Each(v) if v.len() == k => Ok(v.clone()),
            PerRelay::Each(v) => Err(Error::Config(format!(
                "system.{key}: {} entries given for {k} relays",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    system: RawSystem,
    channel: Option<RawChannel>,
    #[serde(default)]
    anchor: AnchorSpec,
    #[serde(default)]
    learning: LearningSpec,
    #[serde(default)]
    sweep: SweepSpec,
    #[serde(default)]
    trace: TraceSpec,
    #[serde(default)]
    exact: ExactSpec,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    controllers: Option<Vec<ControllerKind>>,
    horizon: Option<u64>,
    warmup: Option<u64>,
    seeds: Option<Vec<u64>>,
    policy_file: Option<PathBuf>,
    output: Option<PathBuf>,
    format: Option<ExportFormat>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    num_relays: Option<usize>,
    slot_ms: Option<f64>,
    bandwidth_hz: Option<f64>,
    bandwidth_factor: Option<f64>,
    capacity_gap: Option<f64>,
    noise_power: Option<f64>,
    source_power: Option<f64>,
    packet_bytes: Option<f64>,
    buffer_capacity: Option<u32>,
    battery_capacity: Option<PerRelay<u32>>,
    arrival_rate: Option<f64>,
    harvest_rate: Option<PerRelay<f64>>,
    reward_scale: Option<f64>,
    power_levels: Option<PerRelay<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    edges_db: Option<Vec<f64>>,
    mean_gain: Option<f64>,
}

const DEFAULT_HORIZON: u64 = 2_000_000;
const DEFAULT_SEEDS: u64 = 10;

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parses and validates config text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    resolve(raw, text)
}

/// `" (line N)"` for the first line assigning `key`, or nothing.
fn line_of(text: &str, key: &str) -> String {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| format!(" (line {})", i + 1))
        .unwrap_or_default()
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::InvalidParams(m) | Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn resolve(raw: RawConfig, text: &str) -> Result<ExperimentConfig> {
    let base = SystemParams::default();
    let s = raw.system;
    let k = s.num_relays.unwrap_or(base.num_relays);
    if k == 0 {
        return Err(Error::Config(format!(
            "system.num_relays must be positive{}",
            line_of(text, "num_relays")
        )));
    }
    let params = SystemParams {
        num_relays: k,
        slot_ms: s.slot_ms.unwrap_or(base.slot_ms),
        bandwidth_hz: s.bandwidth_hz.unwrap_or(base.bandwidth_hz),
        bandwidth_factor: s.bandwidth_factor.unwrap_or(base.bandwidth_factor),
        capacity_gap: s.capacity_gap.unwrap_or(base.capacity_gap),
        noise_power: s.noise_power.unwrap_or(base.noise_power),
        source_power: s.source_power.unwrap_or(base.source_power),
        packet_bits: s.packet_bytes.map_or(base.packet_bits, |b| b * 8.0),
        buffer_capacity: s.buffer_capacity.unwrap_or(base.buffer_capacity),
        battery_capacity: match &s.battery_capacity {
            Some(v) => v.expand("battery_capacity", k)?,
            None => vec![base.battery_capacity[0]; k],
        },
        arrival_rate: s.arrival_rate.unwrap_or(base.arrival_rate),
        harvest_rate: match &s.harvest_rate {
            Some(v) => v.expand("harvest_rate", k)?,
            None => vec![base.harvest_rate[0]; k],
        },
        reward_scale: s.reward_scale.unwrap_or(base.reward_scale),
        power_levels: match &s.power_levels {
            Some(v) => v.expand("power_levels", k)?,
            None => vec![base.power_levels[0].clone(); k],
        },
    };
    params.validate().map_err(|e| {
        Error::Config(format!(
            "[system] {}{}",
            strip_prefix(&e),
            line_of(text, "power_levels")
        ))
    })?;

    let channel = match raw.channel {
        None => ChannelModel::default(),
        Some(c) => {
            let def = ChannelModel::default();
            ChannelModel::new(
                c.edges_db.unwrap_or_else(|| def.edges_db().to_vec()),
                c.mean_gain.unwrap_or(def.mean_gain()),
            )
            .map_err(|e| {
                Error::Config(format!(
                    "[channel] {}{}",
                    strip_prefix(&e),
                    line_of(text, "edges_db")
                ))
            })?
        }
    };

    let r = raw.run;
    let horizon = r.horizon.unwrap_or(DEFAULT_HORIZON);
    let warmup = r.warmup.unwrap_or(horizon / 10);
    if horizon <= warmup {
        return Err(Error::Config(format!(
            "run.horizon ({horizon}) must exceed run.warmup ({warmup}){}",
            line_of(text, "horizon")
        )));
    }
    let seeds = r.seeds.unwrap_or_else(|| (1..=DEFAULT_SEEDS).collect());
    if seeds.is_empty() {
        return Err(Error::Config(format!(
            "run.seeds must list at least one seed{}",
            line_of(text, "seeds")
        )));
    }
    let controllers = r.controllers.unwrap_or_else(|| vec![ControllerKind::Dltpc]);
    if controllers.is_empty() {
        return Err(Error::Config(format!(
            "run.controllers must name at least one controller{}",
            line_of(text, "controllers")
        )));
    }
    raw.learning.schedule.validate().map_err(|e| {
        Error::Config(format!(
            "[learning] {}{}",
            strip_prefix(&e),
            line_of(text, "schedule")
        ))
    })?;
    if raw.learning.max_cycle_len == 0 || !(raw.learning.init_spread >= 0.0) {
        return Err(Error::Config(
            "[learning] max_cycle_len must be positive and init_spread nonnegative".into(),
        ));
    }
    let t = &raw.trace;
    if t.occupancy_every == 0 || t.cycle_every == 0 || t.policy_every == 0 {
        return Err(Error::Config("[trace] intervals must be positive".into()));
    }
    if !(raw.exact.rvi_tol > 0.0) || raw.exact.rvi_max_iter == 0 {
        return Err(Error::Config(
            "[exact] rvi_tol and rvi_max_iter must be positive".into(),
        ));
    }

    let cfg = ExperimentConfig {
        params,
        channel,
        anchor: raw.anchor,
        learning: raw.learning,
        controllers,
        policy_file: r.policy_file,
        horizon,
        warmup,
        seeds,
        sweep: raw.sweep,
        trace: raw.trace,
        exact: raw.exact,
        output: r.output.unwrap_or_else(|| PathBuf::from("out")),
        format: r.format.unwrap_or_default(),
    };
    for point in cfg.points(true) {
        cfg.check_point(&point)?;
    }
    Ok(cfg)
}

/// One parameter setting of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: Option<SweepAxis>,
    pub value: f64,
    pub params: SystemParams,
}

impl SweepPoint {
    pub fn axis_name(&self) -> &'static str {
        self.axis.map_or("base", SweepAxis::name)
    }
}

impl ExperimentConfig {
    /// The base point alone, or every sweep point (one axis varied at a
    /// time, in the order arrival rate, harvest rate, battery capacity).
    pub fn points(&self, sweep: bool) -> Vec<SweepPoint> {
        let base = &self.params;
        if !sweep || self.sweep.is_empty() {
            return vec![SweepPoint {
                axis: None,
                value: 0.0,
                params: base.clone(),
            }];
        }
        let mut out = Vec::new();
        for &v in &self.sweep.arrival_rate {
            out.push(SweepPoint {
                axis: Some(SweepAxis::ArrivalRate),
                value: v,
                params: SystemParams {
                    arrival_rate: v,
                    ..base.clone()
                },
            });
        }
        for &v in &self.sweep.harvest_rate {
            out.push(SweepPoint {
                axis: Some(SweepAxis::HarvestRate),
                value: v,
                params: SystemParams {
                    harvest_rate: vec![v; base.num_relays],
                    ..base.clone()
                },
            });
        }
        for &v in &self.sweep.battery_capacity {
            out.push(SweepPoint {
                axis: Some(SweepAxis::BatteryCapacity),
                value: f64::from(v),
                params: SystemParams {
                    battery_capacity: vec![v; base.num_relays],
                    ..base.clone()
                },
            });
        }
        out
    }

    fn check_point(&self, point: &SweepPoint) -> Result<()> {
        let label = format!("{}={}", point.axis_name(), point.value);
        point
            .params
            .validate()
            .map_err(|e| Error::Config(format!("sweep point {label}: {}", strip_prefix(&e))))?;
        self.anchor
            .resolve(&point.params)
            .map_err(|e| Error::Config(format!("sweep point {label}: {}", strip_prefix(&e))))?;
        let bins = self.channel.num_bins();
        for s in self.trace.states(&point.params, bins) {
            if s.relay >= point.params.num_relays
                || s.buffer > point.params.buffer_capacity
                || s.bin_sr >= bins
                || s.bin_rd >= bins
                || s.battery > point.params.battery_capacity[s.relay]
            {
                return Err(Error::Config(format!(
                    "[trace] policy state {s:?} is outside the state space at {label}"
                )));
            }
        }
        if self.controllers.contains(&ControllerKind::MdpOptimal) {
            let size = StateSpace::size_hint(&point.params, bins);
            let cap = u128::from(self.exact.size_cap);
            if size > cap {
                return Err(Error::StateSpaceTooLarge { size, cap });
            }
        }
        Ok(())
    }

    /// The config with output location and format cleared; these do not
    /// affect results.
    pub fn for_hashing(&self) -> ExperimentConfig {
        ExperimentConfig {
            output: PathBuf::new(),
            format: ExportFormat::Csv,
            ..self.clone()
        }
    }

    /// Hex SHA-256 of the canonical JSON form of [`for_hashing`](Self::for_hashing).
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(&self.for_hashing()).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
