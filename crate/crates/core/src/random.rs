//! Seeded random sources for fading, data arrivals and energy harvests.
//!
//! Every random quantity is drawn from its own [`RngStream`], a ChaCha8
//! generator keyed by `(seed, stream_id)`. Streams never share state, so the
//! order in which different streams are read does not change any sequence,
//! and two controllers run on the same seed see identical exogenous draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ChannelPair;

/// Bin edges (dB) of the six-level quantizer used for Rayleigh links.
pub const DEFAULT_BIN_EDGES_DB: [f64; 5] = [-5.41, -1.59, -0.08, 1.42, 3.18];

/// Quantized Rayleigh fading: exponential power gain, binned in dB, with each
/// bin represented by the conditional mean gain inside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelSpec", into = "ChannelSpec")]
pub struct ChannelModel {
    edges_db: Vec<f64>,
    mean_gain: f64,
    representative: Vec<f64>,
    probabilities: Vec<f64>,
}

/// Serialized form of a [`ChannelModel`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub edges_db: Vec<f64>,
    pub mean_gain: f64,
}

impl TryFrom<ChannelSpec> for ChannelModel {
    type Error = Error;
    fn try_from(spec: ChannelSpec) -> Result<Self> {
        ChannelModel::new(spec.edges_db, spec.mean_gain)
    }
}

impl From<ChannelModel> for ChannelSpec {
    fn from(model: ChannelModel) -> Self {
        ChannelSpec {
            edges_db: model.edges_db,
            mean_gain: model.mean_gain,
        }
    }
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel::new(DEFAULT_BIN_EDGES_DB.to_vec(), 1.0).expect("default edges are valid")
    }
}

impl ChannelModel {
    /// Builds a quantizer with `edges_db.len() + 1` half-open bins
    /// `(-inf, e0), [e0, e1), ..., [e_last, inf)`.
    pub fn new(edges_db: Vec<f64>, mean_gain: f64) -> Result<Self> {
        if !(mean_gain > 0.0 && mean_gain.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "channel mean_gain must be finite and > 0, got {mean_gain}"
            )));
        }
        if edges_db.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidParams(
                "channel bin edges must be finite".into(),
            ));
        }
        if edges_db.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams(
                "channel bin edges must be strictly increasing".into(),
            ));
        }
        if edges_db.len() + 1 > usize::from(u8::MAX) {
            return Err(Error::InvalidParams("too many channel bins".into()));
        }
        let mut bounds = vec![0.0];
        bounds.extend(edges_db.iter().map(|db| 10f64.powf(db / 10.0)));
        bounds.push(f64::INFINITY);

        let mut representative = Vec::with_capacity(bounds.len() - 1);
        let mut probabilities = Vec::with_capacity(bounds.len() - 1);
        for w in bounds.windows(2) {
            let (lo, hi) = (w[0] / mean_gain, w[1] / mean_gain);
            let tail_lo = (-lo).exp();
            let tail_hi = if hi.is_infinite() { 0.0 } else { (-hi).exp() };
            let mass = tail_lo - tail_hi;
            // E[X; lo <= X < hi] for X ~ Exp(1) is (lo+1)e^-lo - (hi+1)e^-hi.
            let partial_hi = if hi.is_infinite() {
                0.0
            } else {
                (hi + 1.0) * tail_hi
            };
            let partial = (lo + 1.0) * tail_lo - partial_hi;
            probabilities.push(mass);
            representative.push(mean_gain * partial / mass);
        }
        Ok(ChannelModel {
            edges_db,
            mean_gain,
            representative,
            probabilities,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.representative.len()
    }

    pub fn edges_db(&self) -> &[f64] {
        &self.edges_db
    }

    pub fn mean_gain(&self) -> f64 {
        self.mean_gain
    }

    /// Linear gain standing in for every realization inside `bin`.
    pub fn representative_gain(&self, bin: usize) -> f64 {
        self.representative[bin]
    }

    /// Probability that a link lands in `bin`.
    pub fn bin_probability(&self, bin: usize) -> f64 {
        self.probabilities[bin]
    }

    pub fn bin_probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Index of the half-open bin containing `gain_db`; an edge belongs to
    /// the bin above it.
    pub fn quantize_gain(&self, gain_db: f64) -> usize {
        self.edges_db.partition_point(|&edge| edge <= gain_db)
    }

    pub fn pair_from_bins(&self, bin_sr: usize, bin_rd: usize) -> ChannelPair {
        ChannelPair {
            gain_sr: self.representative[bin_sr],
            gain_rd: self.representative[bin_rd],
            bin_sr: bin_sr as u8,
            bin_rd: bin_rd as u8,
        }
    }

    /// Draws one link gain and returns its bin.
    pub fn sample_bin(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        let gain = -self.mean_gain * (1.0 - u).ln();
        self.quantize_gain(10.0 * gain.log10())
    }

    /// Draws both links of one relay.
    pub fn sample_pair(&self, rng: &mut RngStream) -> ChannelPair {
        let bin_sr = self.sample_bin(rng);
        let bin_rd = self.sample_bin(rng);
        self.pair_from_bins(bin_sr, bin_rd)
    }
}

/// Draws fresh channels for every relay, relay `k` reading only `streams[k]`.
pub fn sample_channels(model: &ChannelModel, streams: &mut [RngStream]) -> Vec<ChannelPair> {
    streams
        .iter_mut()
        .map(|rng| model.sample_pair(rng))
        .collect()
}

/// Which random quantity a stream feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Arrivals,
    Channel(usize),
    Harvest(usize),
    Policy(usize),
    PolicyInit(usize),
}

impl StreamKind {
    /// Stable numeric id; part of the reproducibility contract.
    pub fn id(self) -> u64 {
        match self {
            StreamKind::Arrivals => 1,
            StreamKind::Channel(k) => 1_000 + k as u64,
            StreamKind::Harvest(k) => 2_000 + k as u64,
            StreamKind::Policy(k) => 3_000 + k as u64,
            StreamKind::PolicyInit(k) => 4_000 + k as u64,
        }
    }
}

/// Position of a stream, enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub seed: u64,
    pub stream_id: u64,
    /// ChaCha word position, stored as a decimal string because it is 128-bit.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

/// A single-owner deterministic random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn for_kind(seed: u64, kind: StreamKind) -> Self {
        RngStream::new(seed, kind.id())
    }

    pub fn from_state(state: StreamState) -> Self {
        let mut stream = RngStream::new(state.seed, state.stream_id);
        stream.rng.set_word_pos(state.word_pos);
        stream
    }

    pub fn state(&self) -> StreamState {
        StreamState {
            seed: self.seed,
            stream_id: self.stream_id,
            word_pos: self.rng.get_word_pos(),
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Poisson draw with the given mean, by CDF inversion of one uniform.
    pub fn poisson(&mut self, mean: f64) -> u32 {
        let u = self.uniform();
        poisson_inverse_cdf(mean, u)
    }
}

/// Smallest `k` with `P{X <= k} > u` for `X ~ Poisson(mean)`.
pub fn poisson_inverse_cdf(mean: f64, u: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let mut k = 0u32;
    let mut pmf = (-mean).exp();
    let mut cdf = pmf;
    while u >= cdf {
        k += 1;
        pmf *= mean / f64::from(k);
        if pmf == 0.0 && f64::from(k) > mean {
            break;
        }
        cdf += pmf;
    }
    k
}

/// Draws the number of packets arriving during one slot.
pub fn sample_arrivals(per_slot_mean: f64, rng: &mut RngStream) -> u32 {
    rng.poisson(per_slot_mean)
}

/// Draws the number of energy packets harvested during one slot.
pub fn sample_harvest(per_slot_mean: f64, rng: &mut RngStream) -> u32 {
    rng.poisson(per_slot_mean)
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&value.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_model_shape() {
        let m = ChannelModel::default();
        assert_eq!(m.num_bins(), 6);
        let total: f64 = m.bin_probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for w in (0..6).collect::<Vec<_>>().windows(2) {
            assert!(m.representative_gain(w[1]) > m.representative_gain(w[0]));
        }
        // Conditional means reproduce the unit mean.
        let mean: f64 = (0..6)
            .map(|b| m.bin_probability(b) * m.representative_gain(b))
            .sum();
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantizer_edges() {
        let m = ChannelModel::default();
        assert_eq!(m.quantize_gain(-10.0), 0);
        assert_eq!(m.quantize_gain(-5.41), 1);
        assert_eq!(m.quantize_gain(-1.6), 1);
        assert_eq!(m.quantize_gain(3.18), 5);
        assert_eq!(m.quantize_gain(10.0), 5);
        assert_eq!(m.quantize_gain(f64::NEG_INFINITY), 0);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(ChannelModel::new(vec![1.0, 0.0], 1.0).is_err());
        assert!(ChannelModel::new(vec![0.0], 0.0).is_err());
        assert!(ChannelModel::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn stream_resume_matches() {
        let mut a = RngStream::new(7, 3);
        for _ in 0..17 {
            a.uniform();
        }
        let mut b = RngStream::from_state(a.state());
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn stream_state_serializes() {
        let mut a = RngStream::new(u64::MAX, 4001);
        a.poisson(3.0);
        let text = serde_json::to_string(&a.state()).unwrap();
        let back: StreamState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, a.state());
    }

    #[test]
    fn poisson_inversion_edges() {
        assert_eq!(poisson_inverse_cdf(2.0, 0.0), 0);
        assert_eq!(poisson_inverse_cdf(2.0, (-2.0f64).exp() - 1e-12), 0);
        assert_eq!(poisson_inverse_cdf(2.0, (-2.0f64).exp() + 1e-12), 1);
        assert_eq!(poisson_inverse_cdf(0.0, 0.99), 0);
        // Does not hang for u extremely close to 1.
        assert!(poisson_inverse_cdf(0.5, 1.0 - f64::EPSILON) < 40);
    }

    proptest! {
        #[test]
        fn quantizer_partitions_the_line(db in -60.0f64..60.0) {
            let m = ChannelModel::default();
            let bin = m.quantize_gain(db);
            let mut edges = vec![f64::NEG_INFINITY];
            edges.extend(DEFAULT_BIN_EDGES_DB);
            edges.push(f64::INFINITY);
            let hits: Vec<_> = (0..6).filter(|&b| edges[b] <= db && db < edges[b + 1]).collect();
            prop_assert_eq!(hits, vec![bin]);
        }

        #[test]
        fn interleaving_streams_is_harmless(seed in any::<u64>(), pattern in prop::collection::vec(any::<bool>(), 1..50)) {
            let mut a = RngStream::new(seed, 1);
            let mut b = RngStream::new(seed, 2);
            let mut mixed_a = Vec::new();
            for &pick_a in &pattern {
                if pick_a { mixed_a.push(a.uniform().to_bits()); } else { b.uniform(); }
            }
            let mut fresh = RngStream::new(seed, 1);
            let straight: Vec<_> = mixed_a.iter().map(|_| fresh.uniform().to_bits()).collect();
            prop_assert_eq!(mixed_a, straight);
        }
    }
}
