//! Named small instances for exact-model checks.

use crate::model::SystemParams;
use crate::random::ChannelModel;

/// Two channel bins split at the median of a unit-mean exponential gain.
pub fn two_bin_channels() -> ChannelModel {
    ChannelModel::new(vec![-1.59], 1.0).expect("valid edges")
}

/// `K = 2`, `N_B = 2`, two channel bins, `N_E = 2`, levels `{0, 1}`.
pub fn tiny() -> (SystemParams, ChannelModel) {
    let params = SystemParams {
        num_relays: 2,
        noise_power: 0.01,
        buffer_capacity: 2,
        battery_capacity: vec![2, 2],
        arrival_rate: 0.5,
        harvest_rate: vec![0.25, 0.25],
        power_levels: vec![vec![0.0, 1.0]; 2],
        ..SystemParams::default()
    };
    (params, two_bin_channels())
}

/// `K = 3`, `N_B = 4`, two channel bins, `N_E = 2`, levels `{0, 1, 2}`:
/// small enough for the centralized MDP, large enough for the controllers
/// to differ.
pub fn desk(arrival_rate: f64) -> (SystemParams, ChannelModel) {
    let params = SystemParams {
        num_relays: 3,
        noise_power: 0.02,
        buffer_capacity: 4,
        battery_capacity: vec![2; 3],
        arrival_rate,
        harvest_rate: vec![0.25; 3],
        power_levels: vec![vec![0.0, 1.0, 2.0]; 3],
        ..SystemParams::default()
    };
    (params, two_bin_channels())
}
