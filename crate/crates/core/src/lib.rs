//! Distributed power control for energy-harvesting amplify-and-forward relays.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dltpc;
pub mod error;
pub mod exact;
pub mod harness;
pub mod model;
pub mod policy;
pub mod presets;
pub mod random;
pub mod sim;

pub use dltpc::{
    run_dltpc, Anchor, Dltpc, DltpcConfig, EstimateMode, JointEstimator, LearningRate,
};
pub use error::{Error, Result};
pub use exact::{ExactModel, JointPolicy, PolicyChain};
pub use harness::{ControllerKind, ExperimentConfig};
pub use model::{ActionProfile, ChannelPair, GlobalState, LocalState, SystemParams};
pub use policy::{PolicyParams, PolicyTable};
pub use random::{ChannelModel, RngStream, StreamKind};
pub use sim::Environment;
