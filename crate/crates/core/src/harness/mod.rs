//! Experiment orchestration: configuration, runs across controllers, sweep
//! points and seeds, and plot-data export.

pub mod config;
pub mod experiment;
pub mod export;

pub use config::{
    load_config, parse_config, ControllerKind, ExperimentConfig, ExportFormat, SweepAxis,
    SweepPoint,
};
pub use experiment::{
    mean_se, run_experiment, run_experiment_with, Aggregate, ExperimentCheckpoint,
    ExperimentResults, MetricSeries, Progress, RunOptions, RunSummary,
};
pub use export::export;

/// Serde for `f64` that writes non-finite values as text (`inf`, `NaN`), so
/// they survive JSON.
pub(crate) mod float_text {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(D::Error::custom),
        }
    }
}
