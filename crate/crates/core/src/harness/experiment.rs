//! Runs every controller at every sweep point and seed.
//!
//! All controllers at one `(point, seed)` see the same arrival, harvest and
//! channel streams, since those are drawn from the seed alone and never
//! depend on the actions. Runs execute in a fixed order (point, seed,
//! controller), so results do not depend on how a run was interrupted.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{hr_select, naive_select, BaselineContext};
use crate::dltpc::{Dltpc, DltpcSnapshot};
use crate::error::{Error, Result};
use crate::exact::{little_delay, solve_relay_mdp, ExactModel, StateSpace};
use crate::model::{ActionProfile, GlobalState};
use crate::policy::PolicyParams;
use crate::random::{RngStream, StreamKind, StreamState};
use crate::sim::{EnvSnapshot, Environment, Totals};

use super::config::{ControllerKind, ExperimentConfig, SweepAxis, SweepPoint, TracedState};
use super::float_text;

/// Mean occupancy over a window of slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyWindow {
    pub slot_start: u64,
    pub slot_end: u64,
    pub mean_occupancy: f64,
    /// Drops since slot 0, up to `slot_end`.
    pub cumulative_drops: u64,
    pub cumulative_arrivals: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyclePoint {
    /// Completed cycles after this one.
    pub cycle: u64,
    pub end_slot: u64,
    pub length: u64,
    pub alpha: f64,
    pub r_hat: f64,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    /// Completed cycles when the snapshot was taken.
    pub cycle: u64,
    pub state: TracedState,
    pub probabilities: Vec<f64>,
}

/// Post-warmup summary of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub slots: u64,
    pub arrivals: u64,
    pub dropped: u64,
    pub departed: u64,
    #[serde(with = "float_text")]
    pub mean_occupancy: f64,
    /// `dropped / arrivals`.
    #[serde(with = "float_text")]
    pub drop_rate: f64,
    /// Little's-law delay from the mean occupancy, ms.
    #[serde(with = "float_text")]
    pub little_delay_ms: f64,
    /// Mean measured sojourn of packets departing after warmup, ms.
    #[serde(with = "float_text")]
    pub sojourn_ms: f64,
    #[serde(with = "float_text")]
    pub avg_reward: f64,
    pub cycles: u64,
}

/// Everything recorded for one `(controller, point, seed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub controller: ControllerKind,
    pub point: usize,
    pub axis: Option<SweepAxis>,
    pub value: f64,
    pub seed: u64,
    pub occupancy: Vec<OccupancyWindow>,
    pub cycles: Vec<CyclePoint>,
    pub policy: Vec<PolicySnapshot>,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
    /// Digest of the exogenous draws consumed by the run.
    pub stream_digest: u64,
}

/// Mean and standard error across seeds for one `(controller, point)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub controller: ControllerKind,
    pub point: usize,
    pub axis: Option<SweepAxis>,
    #[serde(with = "float_text")]
    pub value: f64,
    pub seeds: usize,
    pub failures: usize,
    #[serde(with = "float_text")]
    pub mean_occupancy: f64,
    #[serde(with = "float_text")]
    pub se_occupancy: f64,
    #[serde(with = "float_text")]
    pub drop_rate: f64,
    #[serde(with = "float_text")]
    pub se_drop_rate: f64,
    #[serde(with = "float_text")]
    pub delay_ms: f64,
    #[serde(with = "float_text")]
    pub se_delay_ms: f64,
    #[serde(with = "float_text")]
    pub sojourn_ms: f64,
    #[serde(with = "float_text")]
    pub se_sojourn_ms: f64,
    #[serde(with = "float_text")]
    pub avg_reward: f64,
    #[serde(with = "float_text")]
    pub se_avg_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config_hash: String,
    pub points: Vec<SweepPoint>,
    pub seeds: Vec<u64>,
    pub runs: Vec<MetricSeries>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentResults {
    pub fn aggregate(&self, controller: ControllerKind, point: usize) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.controller == controller && a.point == point)
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn aggregate(
    points: &[SweepPoint],
    controllers: &[ControllerKind],
    runs: &[MetricSeries],
) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for (pi, point) in points.iter().enumerate() {
        for &controller in controllers {
            let group: Vec<&MetricSeries> = runs
                .iter()
                .filter(|r| r.point == pi && r.controller == controller)
                .collect();
            let ok: Vec<&RunSummary> = group.iter().filter_map(|r| r.summary.as_ref()).collect();
            let stat =
                |f: fn(&RunSummary) -> f64| mean_se(&ok.iter().map(|s| f(s)).collect::<Vec<_>>());
            let (mean_occupancy, se_occupancy) = stat(|s| s.mean_occupancy);
            let (drop_rate, se_drop_rate) = stat(|s| s.drop_rate);
            let (delay_ms, se_delay_ms) = stat(|s| s.little_delay_ms);
            let (sojourn_ms, se_sojourn_ms) = stat(|s| s.sojourn_ms);
            let (avg_reward, se_avg_reward) = stat(|s| s.avg_reward);
            out.push(Aggregate {
                controller,
                point: pi,
                axis: point.axis,
                value: point.value,
                seeds: ok.len(),
                failures: group.len() - ok.len(),
                mean_occupancy,
                se_occupancy,
                drop_rate,
                se_drop_rate,
                delay_ms,
                se_delay_ms,
                sojourn_ms,
                se_sojourn_ms,
                avg_reward,
                se_avg_reward,
            });
        }
    }
    out
}

/// Where an interrupted run stood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub env: EnvSnapshot,
    pub controller: ControllerState,
    pub series: MetricSeries,
    pub window_sum: u64,
    pub window_start: u64,
    pub warm: Option<Totals>,
    pub reward_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ControllerState {
    Stateless,
    Dltpc(Box<DltpcSnapshot>),
    Fixed(Vec<StreamState>),
}

/// Resumable state of a whole experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCheckpoint {
    pub config_hash: String,
    pub sweep: bool,
    pub completed: Vec<MetricSeries>,
    pub current: Option<RunState>,
}

impl ExperimentCheckpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

pub enum Progress {
    Complete(ExperimentResults),
    Halted(Box<ExperimentCheckpoint>),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Run every sweep point rather than the base point only.
    pub sweep: bool,
    /// Stop after simulating this many slots in total and return a checkpoint.
    pub halt_after: Option<u64>,
}

enum Controller {
    Dltpc(Box<Dltpc>),
    Table {
        policy: Arc<Vec<usize>>,
        space: Arc<StateSpace>,
    },
    Hr(BaselineContext),
    Naive,
    Fixed {
        policy: PolicyParams,
        rngs: Vec<RngStream>,
    },
}

impl Controller {
    fn act(&mut self, state: &GlobalState) -> ActionProfile {
        match self {
            Controller::Table { policy, space } => space.profile(policy[space.state_index(state)]),
            Controller::Hr(_) | Controller::Naive | Controller::Dltpc(_) => {
                unreachable!("stepped directly by the run loop")
            }
            Controller::Fixed { policy, rngs } => ActionProfile(
                policy
                    .tables
                    .iter()
                    .zip(rngs.iter_mut())
                    .enumerate()
                    .map(|(k, (t, rng))| t.sample(t.space().index(&state.local(k)), rng))
                    .collect(),
            ),
        }
    }

    fn state(&self) -> ControllerState {
        match self {
            Controller::Dltpc(d) => ControllerState::Dltpc(Box::new(d.snapshot())),
            Controller::Fixed { rngs, .. } => {
                ControllerState::Fixed(rngs.iter().map(RngStream::state).collect())
            }
            _ => ControllerState::Stateless,
        }
    }
}

/// Optimal policy table and its state space, or why it could not be solved.
type SolvedMdp = std::result::Result<(Arc<Vec<usize>>, Arc<StateSpace>), String>;

/// Per-point data shared by all seeds.
struct PointCache {
    mdp: Option<SolvedMdp>,
}

struct ActiveRun<'a> {
    cfg: &'a ExperimentConfig,
    point: &'a SweepPoint,
    env: Environment,
    ctrl: Controller,
    series: MetricSeries,
    window_sum: u64,
    window_start: u64,
    warm: Option<Totals>,
    reward_sum: f64,
    traced: Vec<(TracedState, usize)>,
}

impl<'a> ActiveRun<'a> {
    fn new_series(
        point_index: usize,
        point: &SweepPoint,
        seed: u64,
        controller: ControllerKind,
    ) -> MetricSeries {
        MetricSeries {
            controller,
            point: point_index,
            axis: point.axis,
            value: point.value,
            seed,
            occupancy: Vec::new(),
            cycles: Vec::new(),
            policy: Vec::new(),
            summary: None,
            error: None,
            stream_digest: 0,
        }
    }

    fn traced_indices(cfg: &ExperimentConfig, point: &SweepPoint) -> Vec<(TracedState, usize)> {
        let bins = cfg.channel.num_bins();
        cfg.trace
            .states(&point.params, bins)
            .into_iter()
            .map(|s| {
                let space = crate::policy::LocalStateSpace::new(&point.params, bins, s.relay);
                (
                    s,
                    space.index_parts(s.buffer, s.bin_sr, s.bin_rd, s.battery),
                )
            })
            .collect()
    }

    fn start(
        cfg: &'a ExperimentConfig,
        point_index: usize,
        point: &'a SweepPoint,
        seed: u64,
        controller: ControllerKind,
        cache: &PointCache,
        fixed: Option<&PolicyParams>,
    ) -> Result<Self> {
        let params = &point.params;
        let bins = cfg.channel.num_bins();
        let anchor = cfg.anchor.resolve(params)?;
        let env = Environment::new(
            params.clone(),
            cfg.channel.clone(),
            seed,
            anchor.buffer,
            anchor.batteries.clone(),
        )?;
        let ctrl = match controller {
            ControllerKind::Dltpc => {
                let dc = cfg.learning.dltpc_config(anchor, params);
                Controller::Dltpc(Box::new(Dltpc::new(params, bins, dc, seed)?))
            }
            ControllerKind::MdpOptimal => match cache.mdp.as_ref().expect("solved for mdp runs") {
                Ok((policy, space)) => Controller::Table {
                    policy: policy.clone(),
                    space: space.clone(),
                },
                Err(e) => return Err(Error::Config(e.clone())),
            },
            ControllerKind::OnlineHr => Controller::Hr(BaselineContext::new(params)),
            ControllerKind::Naive => Controller::Naive,
            ControllerKind::FixedPolicy => {
                let policy = match fixed {
                    Some(p) => p.clone(),
                    None => PolicyParams::zeros(params, bins),
                };
                policy.check_layout(params, bins)?;
                let rngs = (0..params.num_relays)
                    .map(|k| RngStream::for_kind(seed, StreamKind::Policy(k)))
                    .collect();
                Controller::Fixed { policy, rngs }
            }
        };
        let mut run = ActiveRun {
            cfg,
            point,
            env,
            ctrl,
            series: Self::new_series(point_index, point, seed, controller),
            window_sum: 0,
            window_start: 0,
            warm: None,
            reward_sum: 0.0,
            traced: Self::traced_indices(cfg, point),
        };
        run.snapshot_policy(0);
        Ok(run)
    }

    fn resume(
        cfg: &'a ExperimentConfig,
        point: &'a SweepPoint,
        state: RunState,
        cache: &PointCache,
        fixed: Option<&PolicyParams>,
    ) -> Result<Self> {
        let s = &state.series;
        let mut run = Self::start(cfg, s.point, point, s.seed, s.controller, cache, fixed)?;
        run.env = Environment::restore(point.params.clone(), cfg.channel.clone(), state.env)?;
        run.ctrl = match (run.ctrl, state.controller) {
            (Controller::Dltpc(_), ControllerState::Dltpc(snap)) => {
                Controller::Dltpc(Box::new(Dltpc::restore(&point.params, *snap)?))
            }
            (Controller::Fixed { policy, .. }, ControllerState::Fixed(rngs)) => Controller::Fixed {
                policy,
                rngs: rngs.into_iter().map(RngStream::from_state).collect(),
            },
            (
                c @ (Controller::Table { .. } | Controller::Hr(_) | Controller::Naive),
                ControllerState::Stateless,
            ) => c,
            _ => {
                return Err(Error::Checkpoint(
                    "controller state does not match controller".into(),
                ))
            }
        };
        run.series = state.series;
        run.window_sum = state.window_sum;
        run.window_start = state.window_start;
        run.warm = state.warm;
        run.reward_sum = state.reward_sum;
        Ok(run)
    }

    fn checkpoint(&self) -> RunState {
        RunState {
            env: self.env.snapshot(),
            controller: self.ctrl.state(),
            series: self.series.clone(),
            window_sum: self.window_sum,
            window_start: self.window_start,
            warm: self.warm,
            reward_sum: self.reward_sum,
        }
    }

    fn snapshot_policy(&mut self, cycle: u64) {
        let policy = match &self.ctrl {
            Controller::Dltpc(d) => d.policy(),
            Controller::Fixed { policy, .. } if cycle == 0 => policy.clone(),
            _ => return,
        };
        for &(state, idx) in &self.traced {
            self.series.policy.push(PolicySnapshot {
                cycle,
                state,
                probabilities: policy.tables[state.relay].probabilities(idx),
            });
        }
    }

    fn close_window(&mut self, end: u64) {
        if end == self.window_start {
            return;
        }
        let totals = self.env.totals();
        self.series.occupancy.push(OccupancyWindow {
            slot_start: self.window_start,
            slot_end: end,
            mean_occupancy: self.window_sum as f64 / (end - self.window_start) as f64,
            cumulative_drops: totals.dropped,
            cumulative_arrivals: totals.arrivals,
        });
        self.window_sum = 0;
        self.window_start = end;
    }

    /// Advances at most `budget` slots; returns the number simulated.
    fn advance(&mut self, budget: u64) -> Result<u64> {
        let cfg = self.cfg;
        let params = &self.point.params;
        let mut done = 0;
        while self.env.slot() < cfg.horizon && done < budget {
            let slot = self.env.slot();
            if slot == cfg.warmup {
                self.warm = Some(*self.env.totals());
            }
            self.window_sum += u64::from(self.env.state().buffer);
            let outcome = match &mut self.ctrl {
                Controller::Dltpc(d) => {
                    let step = d.step(&mut self.env)?;
                    if let Some(c) = &step.cycle {
                        let completed = c.index + 1;
                        if completed % cfg.trace.cycle_every == 0 {
                            self.series.cycles.push(CyclePoint {
                                cycle: completed,
                                end_slot: c.end_slot,
                                length: c.length,
                                alpha: c.alpha,
                                r_hat: c.r_hat,
                                gradient_norm: c.gradient_norm,
                            });
                        }
                        if completed % cfg.trace.policy_every == 0 {
                            self.snapshot_policy(completed);
                        }
                    }
                    step.outcome
                }
                Controller::Naive => {
                    let profile = naive_select(self.env.state(), params);
                    self.env.step(&profile)?
                }
                Controller::Hr(ctx) => {
                    let profile = hr_select(self.env.state(), ctx, params);
                    self.env.step(&profile)?
                }
                other => {
                    let profile = other.act(self.env.state());
                    self.env.step(&profile)?
                }
            };
            if self.warm.is_some() {
                self.reward_sum += outcome.reward;
            }
            done += 1;
            let next = self.env.slot();
            if next - self.window_start == cfg.trace.occupancy_every || next == cfg.horizon {
                self.close_window(next);
            }
        }
        Ok(done)
    }

    fn finished(&self) -> bool {
        self.env.slot() >= self.cfg.horizon
    }

    fn finish(mut self) -> MetricSeries {
        let params = &self.point.params;
        let warm = self.warm.unwrap_or_default();
        let end = *self.env.totals();
        let slots = end.slots - warm.slots;
        let arrivals = end.arrivals - warm.arrivals;
        let dropped = end.dropped - warm.dropped;
        let departed = end.departed - warm.departed;
        let mean_occupancy = (end.occupancy_sum - warm.occupancy_sum) as f64 / slots as f64;
        let drop_rate = if arrivals == 0 {
            0.0
        } else {
            dropped as f64 / arrivals as f64
        };
        let sojourn_ms = if departed == 0 {
            0.0
        } else {
            (end.sojourn_slots - warm.sojourn_slots) as f64 / departed as f64 * params.slot_ms
        };
        let cycles = match &self.ctrl {
            Controller::Dltpc(d) => d.cycles(),
            _ => 0,
        };
        self.series.summary = Some(RunSummary {
            slots,
            arrivals,
            dropped,
            departed,
            mean_occupancy,
            drop_rate,
            little_delay_ms: little_delay(mean_occupancy, params.arrival_rate, drop_rate),
            sojourn_ms,
            avg_reward: self.reward_sum / slots as f64,
            cycles,
        });
        self.series.stream_digest = self.env.digest();
        self.series
    }
}

fn load_fixed_policy(cfg: &ExperimentConfig) -> Result<Option<PolicyParams>> {
    match &cfg.policy_file {
        Some(path) if cfg.controllers.contains(&ControllerKind::FixedPolicy) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("run.policy_file {}: {e}", path.display())))?;
            PolicyParams::from_json(&text)
                .map(Some)
                .map_err(|e| Error::Config(format!("run.policy_file {}: {e}", path.display())))
        }
        _ => Ok(None),
    }
}

fn solve_point(cfg: &ExperimentConfig, point: &SweepPoint) -> Result<PointCache> {
    if !cfg.controllers.contains(&ControllerKind::MdpOptimal) {
        return Ok(PointCache { mdp: None });
    }
    let model = ExactModel::with_cap(&point.params, &cfg.channel, u128::from(cfg.exact.size_cap))?;
    let anchor = cfg.anchor.resolve(&point.params)?;
    let solved = solve_relay_mdp(&model, &anchor, cfg.exact.rvi_options())
        .map(|sol| (Arc::new(sol.policy), Arc::new(model.space().clone())))
        .map_err(|e| e.to_string());
    Ok(PointCache { mdp: Some(solved) })
}

/// Runs the whole experiment without interruption.
pub fn run_experiment(cfg: &ExperimentConfig, sweep: bool) -> Result<ExperimentResults> {
    match run_experiment_with(
        cfg,
        RunOptions {
            sweep,
            halt_after: None,
        },
        None,
    )? {
        Progress::Complete(r) => Ok(r),
        Progress::Halted(_) => unreachable!("no halt requested"),
    }
}

/// Runs, or resumes, an experiment; stops early when `halt_after` slots have
/// been simulated in this call.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    opts: RunOptions,
    resume: Option<ExperimentCheckpoint>,
) -> Result<Progress> {
    let hash = cfg.hash();
    let (mut completed, mut current) = match resume {
        Some(ck) => {
            if ck.config_hash != hash || ck.sweep != opts.sweep {
                return Err(Error::Checkpoint(
                    "checkpoint was written for a different config".into(),
                ));
            }
            (ck.completed, ck.current)
        }
        None => (Vec::new(), None),
    };
    let fixed = load_fixed_policy(cfg)?;
    let points = cfg.points(opts.sweep);
    let mut budget = opts.halt_after.unwrap_or(u64::MAX);

    let mut index = 0;
    for (pi, point) in points.iter().enumerate() {
        let cache = solve_point(cfg, point)?;
        for &seed in &cfg.seeds {
            for &controller in &cfg.controllers {
                let this = index;
                index += 1;
                if this < completed.len() {
                    continue;
                }
                let started = match current.take() {
                    Some(state) => ActiveRun::resume(cfg, point, state, &cache, fixed.as_ref()),
                    None => {
                        ActiveRun::start(cfg, pi, point, seed, controller, &cache, fixed.as_ref())
                    }
                };
                let mut run = match started {
                    Ok(run) => run,
                    Err(e @ Error::Checkpoint(_)) => return Err(e),
                    Err(e) => {
                        let mut failed = ActiveRun::new_series(pi, point, seed, controller);
                        failed.error = Some(e.to_string());
                        completed.push(failed);
                        continue;
                    }
                };
                match run.advance(budget) {
                    Ok(n) => budget -= n,
                    Err(e) => {
                        let mut failed = run.series;
                        failed.error = Some(e.to_string());
                        failed.stream_digest = run.env.digest();
                        completed.push(failed);
                        continue;
                    }
                }
                if !run.finished() {
                    return Ok(Progress::Halted(Box::new(ExperimentCheckpoint {
                        config_hash: hash,
                        sweep: opts.sweep,
                        completed,
                        current: Some(run.checkpoint()),
                    })));
                }
                completed.push(run.finish());
            }
        }
    }
    let aggregates = aggregate(&points, &cfg.controllers, &completed);
    Ok(Progress::Complete(ExperimentResults {
        config_hash: hash,
        points,
        seeds: cfg.seeds.clone(),
        runs: completed,
        aggregates,
    }))
}
