//! Plot-data export: one file per figure kind plus a metadata sidecar.
//!
//! | file | rows |
//! |------|------|
//! | `occupancy` | occupancy windows per run (buffer length vs. slot) |
//! | `policy` | traced action probabilities per run (vs. cycle) |
//! | `cycles` | average-reward estimate and step size per recorded cycle |
//! | `summary` | mean and standard error across seeds per controller and point |
//! | `runs` | post-warmup summary of every run |

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{ControllerKind, ExperimentConfig, ExportFormat};
use super::experiment::{ExperimentResults, MetricSeries};
use super::float_text;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub controller: ControllerKind,
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub slot_start: u64,
    pub slot_end: u64,
    pub mean_occupancy: f64,
    pub cumulative_drops: u64,
    pub cumulative_arrivals: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub controller: ControllerKind,
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub cycle: u64,
    pub relay: usize,
    pub buffer: u32,
    pub bin_sr: usize,
    pub bin_rd: usize,
    pub battery: u32,
    pub action: usize,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    pub controller: ControllerKind,
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub cycle: u64,
    pub end_slot: u64,
    pub length: u64,
    pub alpha: f64,
    pub r_hat: f64,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub controller: ControllerKind,
    pub axis: String,
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
pub struct RunRow {
    pub controller: ControllerKind,
    pub axis: String,
    #[serde(with = "float_text")]
    pub value: f64,
    pub seed: u64,
    pub slots: u64,
    pub arrivals: u64,
    pub dropped: u64,
    pub departed: u64,
    #[serde(with = "float_text")]
    pub mean_occupancy: f64,
    #[serde(with = "float_text")]
    pub drop_rate: f64,
    #[serde(with = "float_text")]
    pub little_delay_ms: f64,
    #[serde(with = "float_text")]
    pub sojourn_ms: f64,
    #[serde(with = "float_text")]
    pub avg_reward: f64,
    pub cycles: u64,
    pub stream_digest: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub controllers: Vec<ControllerKind>,
    pub horizon: u64,
    pub warmup: u64,
    pub hr_stand_in: bool,
    pub hr_note: String,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn axis_of(run: &MetricSeries) -> String {
    run.axis.map_or("base", |a| a.name()).to_string()
}

pub fn occupancy_rows(results: &ExperimentResults) -> Vec<OccupancyRow> {
    results
        .runs
        .iter()
        .flat_map(|r| {
            r.occupancy.iter().map(move |w| OccupancyRow {
                controller: r.controller,
                axis: axis_of(r),
                value: r.value,
                seed: r.seed,
                slot_start: w.slot_start,
                slot_end: w.slot_end,
                mean_occupancy: w.mean_occupancy,
                cumulative_drops: w.cumulative_drops,
                cumulative_arrivals: w.cumulative_arrivals,
            })
        })
        .collect()
}

pub fn policy_rows(results: &ExperimentResults) -> Vec<PolicyRow> {
    let mut out = Vec::new();
    for r in &results.runs {
        for snap in &r.policy {
            for (action, &probability) in snap.probabilities.iter().enumerate() {
                out.push(PolicyRow {
                    controller: r.controller,
                    axis: axis_of(r),
                    value: r.value,
                    seed: r.seed,
                    cycle: snap.cycle,
                    relay: snap.state.relay,
                    buffer: snap.state.buffer,
                    bin_sr: snap.state.bin_sr,
                    bin_rd: snap.state.bin_rd,
                    battery: snap.state.battery,
                    action,
                    probability,
                });
            }
        }
    }
    out
}

pub fn cycle_rows(results: &ExperimentResults) -> Vec<CycleRow> {
    results
        .runs
        .iter()
        .flat_map(|r| {
            r.cycles.iter().map(move |c| CycleRow {
                controller: r.controller,
                axis: axis_of(r),
                value: r.value,
                seed: r.seed,
                cycle: c.cycle,
                end_slot: c.end_slot,
                length: c.length,
                alpha: c.alpha,
                r_hat: c.r_hat,
                gradient_norm: c.gradient_norm,
            })
        })
        .collect()
}

pub fn summary_rows(results: &ExperimentResults) -> Vec<SummaryRow> {
    results
        .aggregates
        .iter()
        .map(|a| SummaryRow {
            controller: a.controller,
            axis: a.axis.map_or("base", |x| x.name()).to_string(),
            value: a.value,
            seeds: a.seeds,
            failures: a.failures,
            mean_occupancy: a.mean_occupancy,
            se_occupancy: a.se_occupancy,
            drop_rate: a.drop_rate,
            se_drop_rate: a.se_drop_rate,
            delay_ms: a.delay_ms,
            se_delay_ms: a.se_delay_ms,
            sojourn_ms: a.sojourn_ms,
            se_sojourn_ms: a.se_sojourn_ms,
            avg_reward: a.avg_reward,
            se_avg_reward: a.se_avg_reward,
        })
        .collect()
}

pub fn run_rows(results: &ExperimentResults) -> Vec<RunRow> {
    results
        .runs
        .iter()
        .map(|r| {
            let s = r.summary.clone();
            let f =
                |get: fn(&super::experiment::RunSummary) -> f64| s.as_ref().map_or(f64::NAN, get);
            RunRow {
                controller: r.controller,
                axis: axis_of(r),
                value: r.value,
                seed: r.seed,
                slots: s.as_ref().map_or(0, |s| s.slots),
                arrivals: s.as_ref().map_or(0, |s| s.arrivals),
                dropped: s.as_ref().map_or(0, |s| s.dropped),
                departed: s.as_ref().map_or(0, |s| s.departed),
                mean_occupancy: f(|s| s.mean_occupancy),
                drop_rate: f(|s| s.drop_rate),
                little_delay_ms: f(|s| s.little_delay_ms),
                sojourn_ms: f(|s| s.sojourn_ms),
                avg_reward: f(|s| s.avg_reward),
                cycles: s.as_ref().map_or(0, |s| s.cycles),
                stream_digest: format!("{:016x}", r.stream_digest),
                error: r.error.clone().unwrap_or_default(),
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

fn write_rows<T: Serialize>(
    dir: &Path,
    stem: &str,
    format: ExportFormat,
    rows: &[T],
) -> Result<PathBuf> {
    let path = match format {
        ExportFormat::Csv => dir.join(format!("{stem}.csv")),
        ExportFormat::Json => dir.join(format!("{stem}.json")),
    };
    match format {
        ExportFormat::Csv => write_csv(&path, rows)?,
        ExportFormat::Json => std::fs::write(&path, serde_json::to_vec_pretty(rows)?)?,
    }
    Ok(path)
}

/// Writes every figure file and `metadata.json` into `dir`; returns the
/// paths written.
pub fn export(
    results: &ExperimentResults,
    cfg: &ExperimentConfig,
    dir: &Path,
    format: ExportFormat,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", dir.display()),
        ))
    })?;
    let files = vec![
        write_rows(dir, "occupancy", format, &occupancy_rows(results))?,
        write_rows(dir, "policy", format, &policy_rows(results))?,
        write_rows(dir, "cycles", format, &cycle_rows(results))?,
        write_rows(dir, "summary", format, &summary_rows(results))?,
        write_rows(dir, "runs", format, &run_rows(results))?,
    ];
    let meta = Metadata {
        version: version_string(),
        config_hash: results.config_hash.clone(),
        seeds: results.seeds.clone(),
        controllers: cfg.controllers.clone(),
        horizon: cfg.horizon,
        warmup: cfg.warmup,
        hr_stand_in: true,
        hr_note: "online-hr transmits at the sustainable power 2*mu floored to the power grid; \
                  this approximates the closed-form power of the original heuristic"
            .into(),
        files: files
            .iter()
            .map(|p| p.file_name().expect("file").to_string_lossy().into_owned())
            .collect(),
        config: cfg.for_hashing(),
    };
    let meta_path = dir.join("metadata.json");
    std::fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)?;
    let mut all = files;
    all.push(meta_path);
    Ok(all)
}
