//! Exact-model oracles for instances small enough to enumerate.

mod chain;
mod kernel;
mod rvi;
mod space;

pub use chain::{
    anchor_index, exact_gradient, exact_gradient_marginal, policy_chain, relative_values,
    ExactGradient, JointPolicy, PolicyChain, DIRECT_SOLVE_LIMIT,
};
pub use kernel::{
    buffer_transition, build_kernel, clamped_poisson, energy_transition, ExactModel,
    TransitionKernel, DEFAULT_SIZE_CAP,
};
pub use rvi::{
    rvi_solve, solve_relay_mdp, MdpAction, RelayMdpSolution, RviOptions, RviSolution, TabularMdp,
};
pub use space::StateSpace;

/// Mean delay in ms by Little's law, `E[b] / ((1 - P_drop) lambda)`, with
/// `lambda` in packets per ms.
pub fn little_delay(mean_buffer: f64, arrival_rate: f64, drop_probability: f64) -> f64 {
    if mean_buffer == 0.0 {
        return 0.0;
    }
    mean_buffer / ((1.0 - drop_probability) * arrival_rate)
}

/// The low-load approximation `E[b] / lambda`.
pub fn little_delay_simple(mean_buffer: f64, arrival_rate: f64) -> f64 {
    little_delay(mean_buffer, arrival_rate, 0.0)
}

/// Deterministic joint policy of a state-feedback rule, tabulated over the
/// model's global states.
pub fn tabulate_policy<F>(model: &ExactModel, mut rule: F) -> Vec<usize>
where
    F: FnMut(&crate::model::GlobalState) -> crate::model::ActionProfile,
{
    let space = model.space();
    (0..space.num_states())
        .map(|s| space.profile_index(&rule(&space.global_state(model.channel_model(), s))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn little_examples() {
        assert_eq!(little_delay(2.0, 2.0, 0.0), 1.0);
        assert_eq!(little_delay(2.0, 2.0, 0.5), 2.0);
        assert_eq!(little_delay(0.0, 2.0, 0.3), 0.0);
        assert_eq!(little_delay_simple(3.0, 1.5), 2.0);
    }
}
