//! Centralized single-relay-selection heuristics.
//!
//! Both pick a candidate power for every relay, then let only the relay with
//! the largest relayed SNR at its candidate power transmit. Candidate powers
//! are floored to the relay's power grid and clipped to what the battery
//! affords.

use serde::{Deserialize, Serialize};

use crate::model::{feasible_count, relayed_snr, ActionProfile, GlobalState, SystemParams};

/// Statistics the online heuristic may use besides the current state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineContext {
    /// Mean harvest rate of each relay (energy packets per ms).
    pub harvest_rates: Vec<f64>,
}

impl BaselineContext {
    pub fn new(params: &SystemParams) -> Self {
        BaselineContext {
            harvest_rates: params.harvest_rate.clone(),
        }
    }
}

/// Largest level index whose power does not exceed `power`.
fn floor_to_grid(levels: &[f64], power: f64) -> usize {
    levels
        .iter()
        .rposition(|&p| p <= power + 1e-12)
        .unwrap_or(0)
}

/// Lets the relay with the best SNR at its candidate level transmit alone.
fn select_best(state: &GlobalState, params: &SystemParams, candidates: &[usize]) -> ActionProfile {
    let mut best: Option<(usize, f64)> = None;
    for (k, &level) in candidates.iter().enumerate() {
        let snr = relayed_snr(params, params.power(k, level), &state.channels[k]);
        if snr > 0.0 && best.is_none_or(|(_, s)| snr > s) {
            best = Some((k, snr));
        }
    }
    let mut profile = ActionProfile::silent(params.num_relays);
    if let Some((k, _)) = best {
        profile.0[k] = candidates[k];
    }
    profile
}

/// Candidate levels of the naive rule: all stored energy.
pub fn naive_levels(state: &GlobalState, params: &SystemParams) -> Vec<usize> {
    (0..params.num_relays)
        .map(|k| feasible_count(params, k, state.batteries[k]) - 1)
        .collect()
}

/// Every relay would spend its whole battery; the one with the best SNR
/// does.
pub fn naive_select(state: &GlobalState, params: &SystemParams) -> ActionProfile {
    select_best(state, params, &naive_levels(state, params))
}

/// Candidate levels of the online rule: the power `2 mu` that spends one
/// slot's expected harvest during the half-slot transmit window.
pub fn hr_levels(state: &GlobalState, ctx: &BaselineContext, params: &SystemParams) -> Vec<usize> {
    (0..params.num_relays)
        .map(|k| {
            let sustainable = floor_to_grid(&params.power_levels[k], 2.0 * ctx.harvest_rates[k]);
            sustainable.min(feasible_count(params, k, state.batteries[k]) - 1)
        })
        .collect()
}

/// Harvest-rate-matched power with single best-relay selection.
pub fn hr_select(
    state: &GlobalState,
    ctx: &BaselineContext,
    params: &SystemParams,
) -> ActionProfile {
    select_best(state, params, &hr_levels(state, ctx, params))
}
