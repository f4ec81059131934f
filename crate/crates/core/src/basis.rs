//! Biased basis selection.
//!
//! A 10-bit random word `r` is compared against a reference `N_0`; the
//! comparator selects Z iff `r < N_0`, so over the 1024 equally likely words
//! Z comes up exactly `N_0` times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Basis;

/// Width of the random word fed to the comparator.
pub const WORD_BITS: u32 = 10;
/// Number of distinct random words, `2^WORD_BITS`.
pub const WORD_COUNT: u16 = 1 << WORD_BITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BiasComparator {
    reference: u16,
}

impl BiasComparator {
    /// Comparator with an explicit reference `N_0` in `0..=1024`.
    pub fn with_reference(reference: u16) -> Result<Self> {
        if reference > WORD_COUNT {
            return Err(Error::Config(format!(
                "comparator reference {reference} exceeds {WORD_COUNT}"
            )));
        }
        Ok(BiasComparator { reference })
    }

    pub fn reference(&self) -> u16 {
        self.reference
    }

    /// Realized probability of choosing Z, `N_0 / 1024`.
    pub fn probability_z(&self) -> f64 {
        f64::from(self.reference) / f64::from(WORD_COUNT)
    }

    pub fn draw(&self, word: u16) -> Result<Basis> {
        if word >= WORD_COUNT {
            return Err(Error::InvalidRandomWord(word));
        }
        Ok(if word < self.reference { Basis::Z } else { Basis::X })
    }
}

/// Nearest comparator to a requested Z probability.
pub fn set_bias(q_z: f64) -> Result<BiasComparator> {
    if !(0.0..=1.0).contains(&q_z) {
        return Err(Error::InvalidProbability(q_z));
    }
    let reference = (q_z * f64::from(WORD_COUNT)).round() as u16;
    BiasComparator::with_reference(reference)
}

pub fn draw_basis(comparator: &BiasComparator, word: u16) -> Result<Basis> {
    comparator.draw(word)
}

/// Seeded stand-in for the hardware QRNG, emitting uniform 10-bit words.
#[derive(Debug, Clone)]
pub struct RandomBitSource {
    rng: ChaCha8Rng,
}

impl RandomBitSource {
    pub fn new(seed: u64) -> Self {
        RandomBitSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent source on a numbered stream of the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomBitSource { rng }
    }

    pub fn next_word(&mut self) -> u16 {
        self.rng.random_range(0..WORD_COUNT)
    }

    pub fn next_basis(&mut self, comparator: &BiasComparator) -> Basis {
        let word = self.next_word();
        comparator
            .draw(word)
            .expect("source only emits in-range words")
    }
}
