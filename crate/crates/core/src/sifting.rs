//! Basis sifting and per-basis bit error rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Basis, SiftedBitPair};
use crate::sync::CoincidencePair;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftResult {
    pub raw_count: u64,
    pub bits_x: Vec<SiftedBitPair>,
    pub bits_z: Vec<SiftedBitPair>,
}

impl SiftResult {
    pub fn n_x(&self) -> u64 {
        self.bits_x.len() as u64
    }

    pub fn n_z(&self) -> u64 {
        self.bits_z.len() as u64
    }

    pub fn bits(&self, basis: Basis) -> &[SiftedBitPair] {
        match basis {
            Basis::X => &self.bits_x,
            Basis::Z => &self.bits_z,
        }
    }

    /// Fraction of raw coincidences that survive sifting.
    pub fn sift_fraction(&self) -> Option<f64> {
        (self.raw_count > 0).then(|| (self.n_x() + self.n_z()) as f64 / self.raw_count as f64)
    }

    pub fn errors(&self, basis: Basis) -> u64 {
        self.bits(basis).iter().filter(|p| p.is_error()).count() as u64
    }

    /// Error rate of one basis, `None` when nothing was sifted in it.
    pub fn error_rate(&self, basis: Basis) -> Option<f64> {
        let n = self.bits(basis).len();
        (n > 0).then(|| self.errors(basis) as f64 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub e_bx: f64,
    pub e_bz: f64,
}

impl ErrorRates {
    pub fn get(&self, basis: Basis) -> f64 {
        match basis {
            Basis::X => self.e_bx,
            Basis::Z => self.e_bz,
        }
    }
}

/// Keeps the coincidences where both parties measured in the same basis.
/// Output is ordered by Alice's timestamp.
pub fn sift(pairs: &[CoincidencePair]) -> SiftResult {
    let mut result = SiftResult {
        raw_count: pairs.len() as u64,
        ..SiftResult::default()
    };
    for p in pairs {
        let (basis_a, bit_a) = (p.alice.channel.basis(), p.alice.channel.bit());
        let (basis_b, bit_b) = (p.bob.channel.basis(), p.bob.channel.bit());
        if basis_a != basis_b {
            continue;
        }
        let bit = SiftedBitPair {
            basis: basis_a,
            alice_bit: bit_a,
            bob_bit: bit_b,
            time_ps: p.alice.time_ps,
        };
        match basis_a {
            Basis::X => result.bits_x.push(bit),
            Basis::Z => result.bits_z.push(bit),
        }
    }
    let key = |p: &SiftedBitPair| (p.time_ps, p.alice_bit, p.bob_bit);
    result.bits_x.sort_by_key(key);
    result.bits_z.sort_by_key(key);
    result
}

pub fn compute_error_rates(result: &SiftResult) -> Result<ErrorRates> {
    let rate = |b| result.error_rate(b).ok_or(Error::EmptyBasis(b));
    Ok(ErrorRates {
        e_bx: rate(Basis::X)?,
        e_bz: rate(Basis::Z)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{channel_decode, BitValue, DetectorChannel, TimeTagRecord};

    fn pair(t: u64, ca: u8, cb: u8) -> CoincidencePair {
        CoincidencePair {
            alice: TimeTagRecord::new(t, DetectorChannel::new(ca).unwrap()),
            bob: TimeTagRecord::new(t + 10, DetectorChannel::new(cb).unwrap()),
            dt_ps: 10,
        }
    }

    #[test]
    fn same_basis_kept_with_error() {
        let r = sift(&[pair(5, 0, 1)]);
        assert_eq!((r.n_x(), r.n_z(), r.raw_count), (0, 1, 1));
        let b = r.bits_z[0];
        assert_eq!((b.alice_bit, b.bob_bit), (BitValue::Zero, BitValue::One));
        assert!(b.is_error());
    }

    #[test]
    fn basis_mismatch_discarded() {
        let r = sift(&[pair(5, 0, 2)]);
        assert_eq!((r.n_x(), r.n_z(), r.raw_count), (0, 0, 1));
    }

    #[test]
    fn direct_error_count() {
        // Z bits (0,0), (0,1), (1,1), (1,1) plus one agreeing X pair.
        let pairs = [pair(1, 0, 0), pair(2, 0, 1), pair(3, 1, 1), pair(4, 1, 1), pair(5, 2, 2)];
        let rates = compute_error_rates(&sift(&pairs)).unwrap();
        assert_eq!(rates.e_bz, 0.25);
        assert_eq!(rates.e_bx, 0.0);
    }

    #[test]
    fn empty_basis_is_an_error() {
        let r = sift(&[pair(1, 0, 0)]);
        assert!(matches!(compute_error_rates(&r), Err(Error::EmptyBasis(Basis::X))));
        assert_eq!(r.error_rate(Basis::X), None);
    }

    #[test]
    fn output_sorted_regardless_of_input_order() {
        let pairs = [pair(30, 0, 0), pair(10, 3, 3), pair(20, 1, 0), pair(5, 2, 3)];
        let mut reversed = pairs;
        reversed.reverse();
        assert_eq!(sift(&pairs), sift(&reversed));
        let r = sift(&pairs);
        assert!(r.bits_z.windows(2).all(|w| w[0].time_ps <= w[1].time_ps));
    }

    #[test]
    fn global_relabel_keeps_error_rates() {
        let pairs = [pair(1, 0, 1), pair(2, 0, 0), pair(3, 2, 3), pair(4, 3, 3)];
        let flip = |c: DetectorChannel| {
            let (basis, bit) = channel_decode(c.code()).unwrap();
            crate::model::channel_encode(basis, bit.flip())
        };
        let flipped: Vec<_> = pairs
            .iter()
            .map(|p| CoincidencePair {
                alice: TimeTagRecord::new(p.alice.time_ps, flip(p.alice.channel)),
                bob: TimeTagRecord::new(p.bob.time_ps, flip(p.bob.channel)),
                dt_ps: p.dt_ps,
            })
            .collect();
        assert_eq!(
            compute_error_rates(&sift(&pairs)).unwrap(),
            compute_error_rates(&sift(&flipped)).unwrap()
        );
    }
}
