//! Shared domain types: bases, bit values, the four-outcome detector channel
//! encoding and the time-tag record.
//!
//! Channel codes follow the receiver's two-bit output word, basis bit high:
//!
//! | code | word | basis | bit | state |
//! |------|------|-------|-----|-------|
//! | 0    | 00   | Z     | 0   | H     |
//! | 1    | 01   | Z     | 1   | V     |
//! | 2    | 10   | X     | 0   | +     |
//! | 3    | 11   | X     | 1   | −     |

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measurement basis. `X < Z` so sorted output is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::X, Basis::Z];

    /// The conjugate basis.
    pub fn other(self) -> Basis {
        match self {
            Basis::X => Basis::Z,
            Basis::Z => Basis::X,
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::X => "X",
            Basis::Z => "Z",
        })
    }
}

/// A single key bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum BitValue {
    Zero,
    One,
}

impl BitValue {
    pub fn flip(self) -> BitValue {
        match self {
            BitValue::Zero => BitValue::One,
            BitValue::One => BitValue::Zero,
        }
    }
}

impl From<bool> for BitValue {
    fn from(b: bool) -> Self {
        if b {
            BitValue::One
        } else {
            BitValue::Zero
        }
    }
}

impl From<BitValue> for u8 {
    fn from(b: BitValue) -> u8 {
        match b {
            BitValue::Zero => 0,
            BitValue::One => 1,
        }
    }
}

impl TryFrom<u8> for BitValue {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(BitValue::Zero),
            1 => Ok(BitValue::One),
            other => Err(Error::Domain(f64::from(other))),
        }
    }
}

/// Detector output code in `0..=3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub struct DetectorChannel(u8);

impl DetectorChannel {
    pub fn new(code: u8) -> Result<Self> {
        if code <= 3 {
            Ok(DetectorChannel(code))
        } else {
            Err(Error::InvalidChannel(code))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn basis(self) -> Basis {
        channel_decode_valid(self).0
    }

    pub fn bit(self) -> BitValue {
        channel_decode_valid(self).1
    }
}

impl From<DetectorChannel> for u8 {
    fn from(c: DetectorChannel) -> u8 {
        c.0
    }
}

impl TryFrom<u8> for DetectorChannel {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        DetectorChannel::new(code)
    }
}

pub fn channel_encode(basis: Basis, bit: BitValue) -> DetectorChannel {
    let high = match basis {
        Basis::Z => 0,
        Basis::X => 2,
    };
    DetectorChannel(high | u8::from(bit))
}

/// Decodes a raw channel code. Codes above 3 are rejected.
pub fn channel_decode(code: u8) -> Result<(Basis, BitValue)> {
    DetectorChannel::new(code).map(channel_decode_valid)
}

fn channel_decode_valid(channel: DetectorChannel) -> (Basis, BitValue) {
    let basis = if channel.0 & 2 == 0 { Basis::Z } else { Basis::X };
    (basis, BitValue::from(channel.0 & 1 == 1))
}

/// One detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeTagRecord {
    /// Picoseconds since session start.
    pub time_ps: u64,
    pub channel: DetectorChannel,
}

impl TimeTagRecord {
    pub fn new(time_ps: u64, channel: DetectorChannel) -> Self {
        TimeTagRecord { time_ps, channel }
    }
}

/// Checks that a stream is sorted by time.
pub fn validate_sorted(stream: &[TimeTagRecord]) -> Result<()> {
    match stream.windows(2).position(|w| w[1].time_ps < w[0].time_ps) {
        None => Ok(()),
        Some(i) => Err(Error::StreamOrder {
            index: i + 1,
            prev: stream[i].time_ps,
            next: stream[i + 1].time_ps,
        }),
    }
}

/// A coincidence that survived sifting: both parties measured in `basis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedBitPair {
    pub basis: Basis,
    pub alice_bit: BitValue,
    pub bob_bit: BitValue,
    /// Timestamp of Alice's tag.
    pub time_ps: u64,
}

impl SiftedBitPair {
    pub fn is_error(&self) -> bool {
        self.alice_bit != self.bob_bit
    }
}
