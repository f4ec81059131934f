//! Parametric model of the two-link entangled-pair experiment.
//!
//! Pair emission is a homogeneous Poisson process. Each photon of a pair
//! survives its link independently, so the emission process is split into
//! three independent Poisson processes by thinning: both photons detected,
//! Alice's only, Bob's only. Pairs where neither photon survives are never
//! materialized. Background light is a further Poisson process per receiver.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::{set_bias, BiasComparator, RandomBitSource};
use crate::error::{Error, Result};
use crate::model::{channel_encode, validate_sorted, BitValue, DetectorChannel, TimeTagRecord};

/// Single-photon detectors per receiver; background is specified per detector.
pub const DETECTORS_PER_RECEIVER: u32 = 2;

const PS_PER_S: f64 = 1e12;

// RNG stream ids, one per independent random process.
const STREAM_PAIRS: u64 = 0;
const STREAM_ALICE_ONLY: u64 = 1;
const STREAM_BOB_ONLY: u64 = 2;
const STREAM_BACKGROUND_A: u64 = 3;
const STREAM_BACKGROUND_B: u64 = 4;
const STREAM_QRNG_A: u64 = 5;
const STREAM_QRNG_B: u64 = 6;
const STREAM_OUTCOMES: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceParams {
    pub pair_rate_hz: f64,
    /// Probability that a same-basis pair yields anticorrelated bits.
    pub polarization_error_prob: f64,
    /// Per-photon Gaussian timing jitter. The coincidence difference carries
    /// two of these, so its FWHM is `2.355 * sqrt(2) * sigma`.
    pub jitter_sigma_ps: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        SourceParams {
            pair_rate_hz: 1.0e7,
            polarization_error_prob: 0.065,
            jitter_sigma_ps: 300.0,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate_hz.is_finite() && self.pair_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "pair_rate_hz must be positive, got {}",
                self.pair_rate_hz
            )));
        }
        if !(0.0..=0.5).contains(&self.polarization_error_prob) {
            return Err(Error::Config(format!(
                "polarization_error_prob must lie in [0, 0.5], got {}",
                self.polarization_error_prob
            )));
        }
        if !(self.jitter_sigma_ps.is_finite() && self.jitter_sigma_ps >= 0.0) {
            return Err(Error::Config(format!(
                "jitter_sigma_ps must be non-negative, got {}",
                self.jitter_sigma_ps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    /// End-to-end loss; `inf` blocks the link completely.
    #[serde(with = "loss_db_serde")]
    pub loss_db: f64,
    #[serde(default = "default_background")]
    pub background_cps_per_detector: f64,
}

fn default_background() -> f64 {
    100.0
}

impl LinkParams {
    pub fn new(loss_db: f64, background_cps_per_detector: f64) -> Self {
        LinkParams {
            loss_db,
            background_cps_per_detector,
        }
    }

    /// Alice's link in the reference experiment.
    pub fn alice_reference() -> Self {
        LinkParams::new(29.0, default_background())
    }

    /// Bob's link in the reference experiment.
    pub fn bob_reference() -> Self {
        LinkParams::new(21.0, default_background())
    }

    pub fn transmittance(&self) -> f64 {
        if self.loss_db.is_infinite() {
            0.0
        } else {
            10f64.powf(-self.loss_db / 10.0)
        }
    }

    /// Background rate summed over the receiver's detectors.
    pub fn background_cps(&self) -> f64 {
        self.background_cps_per_detector * f64::from(DETECTORS_PER_RECEIVER)
    }

    pub fn validate(&self) -> Result<()> {
        if self.loss_db.is_nan() || self.loss_db < 0.0 {
            return Err(Error::Config(format!(
                "loss_db must be >= 0, got {}",
                self.loss_db
            )));
        }
        if !(self.background_cps_per_detector.is_finite()
            && self.background_cps_per_detector >= 0.0)
        {
            return Err(Error::Config(format!(
                "background_cps_per_detector must be >= 0, got {}",
                self.background_cps_per_detector
            )));
        }
        Ok(())
    }
}

/// JSON has no infinity literal; infinite loss round-trips as the string "inf".
mod loss_db_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Infinity") => {
                Ok(f64::INFINITY)
            }
            Raw::Text(t) => Err(de::Error::custom(format!("invalid loss_db {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub duration_s: f64,
    /// Probability of measuring in Z, used by both receivers.
    pub bias_z: f64,
    pub seed: u64,
    /// Offset of Bob's clock relative to Alice's; unknown to the analysis.
    pub clock_offset_ps: i64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            duration_s: 60.0,
            bias_z: 0.8,
            seed: 1,
            clock_offset_ps: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Config(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        set_bias(self.bias_z).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthPair {
    pub alice_idx: usize,
    pub bob_idx: usize,
    /// Same-basis pair whose bits disagree.
    pub error_flag: bool,
}

/// What actually happened in a simulated session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Pairs with both photons recorded, ordered by Alice index.
    pub pairs: Vec<TruthPair>,
    /// Indices of `pairs` measured in the same basis on both sides.
    pub same_basis: Vec<usize>,
    pub alice_only: u64,
    pub bob_only: u64,
    pub background_a: u64,
    pub background_b: u64,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub alice: Vec<TimeTagRecord>,
    pub bob: Vec<TimeTagRecord>,
    pub truth: GroundTruth,
    pub comparator: BiasComparator,
}

/// Closed-form rates for a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRates {
    pub transmittance_a: f64,
    pub transmittance_b: f64,
    pub singles_a_cps: f64,
    pub singles_b_cps: f64,
    pub background_a_cps: f64,
    pub background_b_cps: f64,
    pub true_coincidence_cps: f64,
    pub accidental_cps: f64,
}

pub fn analytic_expectations(
    source: &SourceParams,
    link_a: &LinkParams,
    link_b: &LinkParams,
    window_ps: u64,
) -> ExpectedRates {
    let eta_a = link_a.transmittance();
    let eta_b = link_b.transmittance();
    let singles_a = source.pair_rate_hz * eta_a + link_a.background_cps();
    let singles_b = source.pair_rate_hz * eta_b + link_b.background_cps();
    ExpectedRates {
        transmittance_a: eta_a,
        transmittance_b: eta_b,
        singles_a_cps: singles_a,
        singles_b_cps: singles_b,
        background_a_cps: link_a.background_cps(),
        background_b_cps: link_b.background_cps(),
        true_coincidence_cps: source.pair_rate_hz * eta_a * eta_b,
        accidental_cps: singles_a * singles_b * window_ps as f64 / PS_PER_S,
    }
}

const NO_PAIR: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Event {
    time_ps: i64,
    channel: DetectorChannel,
    seq: u32,
    pair: u32,
}

fn event_order(a: &Event, b: &Event) -> Ordering {
    (a.time_ps, a.channel, a.seq).cmp(&(b.time_ps, b.channel, b.seq))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Arrival times (ps, as f64) of a Poisson process on `[0, duration)`.
fn poisson_arrivals(rate_hz: f64, duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rate_hz <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(rate_hz).expect("positive rate");
    let mut out = Vec::with_capacity((rate_hz * duration_s * 1.05) as usize + 16);
    let mut t = gap.sample(rng);
    while t < duration_s {
        out.push(t * PS_PER_S);
        t += gap.sample(rng);
    }
    out
}

struct Party {
    events: Vec<Event>,
    qrng: RandomBitSource,
    offset_ps: i64,
}

impl Party {
    fn push(&mut self, time_ps: f64, channel: DetectorChannel, pair: u32) {
        let t = time_ps.round() as i64 + self.offset_ps;
        if t >= 0 {
            let seq = self.events.len() as u32;
            self.events.push(Event {
                time_ps: t,
                channel,
                seq,
                pair,
            });
        }
    }

    /// Sorts events and returns the stream plus each pair's position.
    fn finish(mut self, n_pairs: usize) -> (Vec<TimeTagRecord>, Vec<usize>) {
        self.events.sort_unstable_by(event_order);
        let mut position = vec![usize::MAX; n_pairs];
        let stream = self
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if e.pair != NO_PAIR {
                    position[e.pair as usize] = i;
                }
                TimeTagRecord::new(e.time_ps as u64, e.channel)
            })
            .collect();
        (stream, position)
    }
}

pub fn simulate_session(
    source: &SourceParams,
    link_a: &LinkParams,
    link_b: &LinkParams,
    session: &SessionConfig,
) -> Result<SimulationOutput> {
    source.validate()?;
    link_a.validate()?;
    link_b.validate()?;
    session.validate()?;
    let comparator = set_bias(session.bias_z)?;
    let seed = session.seed;

    let eta_a = link_a.transmittance();
    let eta_b = link_b.transmittance();
    let rate = source.pair_rate_hz;
    let duration = session.duration_s;

    let jitter = Normal::new(0.0, source.jitter_sigma_ps).expect("validated sigma");
    let mut outcomes = stream_rng(seed, STREAM_OUTCOMES);

    let mut alice = Party {
        events: Vec::new(),
        qrng: RandomBitSource::with_stream(seed, STREAM_QRNG_A),
        offset_ps: 0,
    };
    let mut bob = Party {
        events: Vec::new(),
        qrng: RandomBitSource::with_stream(seed, STREAM_QRNG_B),
        offset_ps: session.clock_offset_ps,
    };

    // Both photons detected.
    let emissions = poisson_arrivals(
        rate * eta_a * eta_b,
        duration,
        &mut stream_rng(seed, STREAM_PAIRS),
    );
    let n_pairs = emissions.len();
    if n_pairs >= NO_PAIR as usize {
        return Err(Error::Config(format!("{n_pairs} pairs exceed the simulator capacity")));
    }
    let mut pair_error = Vec::with_capacity(n_pairs);
    let mut pair_same_basis = Vec::with_capacity(n_pairs);
    for (id, &t) in emissions.iter().enumerate() {
        let basis_a = alice.qrng.next_basis(&comparator);
        let basis_b = bob.qrng.next_basis(&comparator);
        let bit_a = BitValue::from(outcomes.random::<bool>());
        let same = basis_a == basis_b;
        let (bit_b, error) = if same {
            let flip = outcomes.random::<f64>() < source.polarization_error_prob;
            (if flip { bit_a.flip() } else { bit_a }, flip)
        } else {
            (BitValue::from(outcomes.random::<bool>()), false)
        };
        let ta = t + jitter.sample(&mut outcomes);
        let tb = t + jitter.sample(&mut outcomes);
        alice.push(ta, channel_encode(basis_a, bit_a), id as u32);
        bob.push(tb, channel_encode(basis_b, bit_b), id as u32);
        pair_error.push(error);
        pair_same_basis.push(same);
    }

    // Unpaired signal photons.
    let singles = |party: &mut Party, rate_hz: f64, stream: u64| -> u64 {
        let mut rng = stream_rng(seed, stream);
        let times = poisson_arrivals(rate_hz, duration, &mut rng);
        for &t in &times {
            let basis = party.qrng.next_basis(&comparator);
            let bit = BitValue::from(rng.random::<bool>());
            let t = t + jitter.sample(&mut rng);
            party.push(t, channel_encode(basis, bit), NO_PAIR);
        }
        times.len() as u64
    };
    let alice_only = singles(&mut alice, rate * eta_a * (1.0 - eta_b), STREAM_ALICE_ONLY);
    let bob_only = singles(&mut bob, rate * (1.0 - eta_a) * eta_b, STREAM_BOB_ONLY);

    // Background, spread uniformly over the four channels.
    let background = |party: &mut Party, rate_hz: f64, stream: u64| -> u64 {
        let mut rng = stream_rng(seed, stream);
        let times = poisson_arrivals(rate_hz, duration, &mut rng);
        for &t in &times {
            let code = rng.random_range(0..4u8);
            party.push(t, DetectorChannel::new(code).expect("code < 4"), NO_PAIR);
        }
        times.len() as u64
    };
    let background_a = background(&mut alice, link_a.background_cps(), STREAM_BACKGROUND_A);
    let background_b = background(&mut bob, link_b.background_cps(), STREAM_BACKGROUND_B);

    let (alice_stream, alice_pos) = alice.finish(n_pairs);
    let (bob_stream, bob_pos) = bob.finish(n_pairs);

    let mut pairs: Vec<(TruthPair, bool)> = (0..n_pairs)
        .filter(|&id| alice_pos[id] != usize::MAX && bob_pos[id] != usize::MAX)
        .map(|id| {
            (
                TruthPair {
                    alice_idx: alice_pos[id],
                    bob_idx: bob_pos[id],
                    error_flag: pair_error[id],
                },
                pair_same_basis[id],
            )
        })
        .collect();
    pairs.sort_unstable_by_key(|(p, _)| p.alice_idx);
    let same_basis = pairs
        .iter()
        .enumerate()
        .filter_map(|(i, (_, same))| same.then_some(i))
        .collect();

    debug_assert!(validate_sorted(&alice_stream).is_ok());
    debug_assert!(validate_sorted(&bob_stream).is_ok());

    Ok(SimulationOutput {
        alice: alice_stream,
        bob: bob_stream,
        truth: GroundTruth {
            pairs: pairs.into_iter().map(|(p, _)| p).collect(),
            same_basis,
            alice_only,
            bob_only,
            background_a,
            background_b,
        },
        comparator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_session(seed: u64) -> SessionConfig {
        SessionConfig {
            duration_s: 1.0,
            bias_z: 0.8,
            seed,
            clock_offset_ps: 0,
        }
    }

    #[test]
    fn infinite_loss_without_background_is_silent() {
        let dark = LinkParams::new(f64::INFINITY, 0.0);
        let out =
            simulate_session(&SourceParams::default(), &dark, &dark, &short_session(3)).unwrap();
        assert!(out.alice.is_empty());
        assert!(out.bob.is_empty());
        assert!(out.truth.pairs.is_empty());
    }

    #[test]
    fn noiseless_pairs_agree_in_same_basis() {
        let source = SourceParams {
            pair_rate_hz: 1e5,
            polarization_error_prob: 0.0,
            jitter_sigma_ps: 300.0,
        };
        let link = LinkParams::new(3.0, 0.0);
        let out = simulate_session(&source, &link, &link, &short_session(11)).unwrap();
        assert!(!out.truth.same_basis.is_empty());
        for &i in &out.truth.same_basis {
            let p = out.truth.pairs[i];
            assert_eq!(out.alice[p.alice_idx].channel, out.bob[p.bob_idx].channel);
            assert!(!p.error_flag);
        }
    }

    #[test]
    fn streams_sorted_and_deterministic() {
        let src = SourceParams {
            pair_rate_hz: 1e6,
            ..SourceParams::default()
        };
        let a = LinkParams::new(10.0, 100.0);
        let b = LinkParams::new(8.0, 100.0);
        let s = short_session(5);
        let one = simulate_session(&src, &a, &b, &s).unwrap();
        let two = simulate_session(&src, &a, &b, &s).unwrap();
        validate_sorted(&one.alice).unwrap();
        validate_sorted(&one.bob).unwrap();
        assert_eq!(one.alice, two.alice);
        assert_eq!(one.bob, two.bob);
        assert_eq!(one.truth, two.truth);
        let three = simulate_session(&src, &a, &b, &short_session(6)).unwrap();
        assert_ne!(one.alice, three.alice);
    }

    #[test]
    fn truth_indices_point_at_pair_tags() {
        let src = SourceParams {
            pair_rate_hz: 1e5,
            jitter_sigma_ps: 0.0,
            ..SourceParams::default()
        };
        let link = LinkParams::new(1.0, 50.0);
        let mut s = short_session(9);
        s.clock_offset_ps = 5_000;
        let out = simulate_session(&src, &link, &link, &s).unwrap();
        for p in &out.truth.pairs {
            let dt = out.bob[p.bob_idx].time_ps as i64 - out.alice[p.alice_idx].time_ps as i64;
            assert_eq!(dt, 5_000);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        let link = LinkParams::alice_reference();
        let bad_duration = SessionConfig {
            duration_s: 0.0,
            ..SessionConfig::default()
        };
        assert!(matches!(
            simulate_session(&SourceParams::default(), &link, &link, &bad_duration),
            Err(Error::Config(_))
        ));
        let bad_source = SourceParams {
            polarization_error_prob: 0.7,
            ..SourceParams::default()
        };
        assert!(simulate_session(&bad_source, &link, &link, &SessionConfig::default()).is_err());
        let bad_link = LinkParams::new(-1.0, 0.0);
        assert!(
            simulate_session(&SourceParams::default(), &bad_link, &link, &SessionConfig::default())
                .is_err()
        );
    }

    #[test]
    fn expectations_lossless_and_accidentals() {
        let src = SourceParams::default();
        let clear = LinkParams::new(0.0, 0.0);
        let e = analytic_expectations(&src, &clear, &clear, 2500);
        assert_eq!(e.singles_a_cps, src.pair_rate_hz);
        assert_eq!(e.singles_b_cps, src.pair_rate_hz);
        assert_eq!(e.true_coincidence_cps, src.pair_rate_hz);

        let e = analytic_expectations(&src, &LinkParams::alice_reference(), &LinkParams::bob_reference(), 2500);
        assert!((e.true_coincidence_cps - 100.0).abs() < 1e-9);

        // Background-only receivers at 100 cps each (50 per detector).
        let quiet = SourceParams {
            pair_rate_hz: f64::MIN_POSITIVE,
            ..src
        };
        let bg = LinkParams::new(f64::INFINITY, 50.0);
        let e = analytic_expectations(&quiet, &bg, &bg, 2500);
        assert!((e.accidental_cps - 2.5e-5).abs() < 1e-15);
    }

    #[test]
    fn infinite_loss_round_trips_through_json() {
        let link = LinkParams::new(f64::INFINITY, 0.0);
        let text = serde_json::to_string(&link).unwrap();
        assert!(text.contains("\"inf\""));
        let back: LinkParams = serde_json::from_str(&text).unwrap();
        assert!(back.loss_db.is_infinite());
        assert!(serde_json::from_str::<LinkParams>(r#"{"loss_db": "lots"}"#).is_err());
        assert!(serde_json::from_str::<LinkParams>(r#"{"loss_db": 3, "extra": 1}"#).is_err());
    }
}
