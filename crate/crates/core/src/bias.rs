//! Key length as a function of the basis bias, and its maximization.
//!
//! Both receivers choose Z with probability `q`, so out of `N` raw
//! coincidences the expected sifted counts are `N (1-q)^2` in X and `N q^2`
//! in Z. Error rates are taken as independent of `q`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::WORD_COUNT;
use crate::error::{Error, Result};
use crate::finite_key::{
    finite_secure_bits, key_length, key_length_asymptotic, FiniteKeyInput, KeyFlag,
};
use crate::model::Basis;
use crate::numeric::golden_section_max;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel<T> {
    pub raw_count: u64,
    pub e_bx: T,
    pub e_bz: T,
    pub f_x: T,
    pub f_z: T,
    pub eps_per_basis: T,
    /// Ignore finite-size fluctuations (theta = 0).
    pub asymptotic: bool,
}

impl<T: Real> RateModel<T> {
    fn input(&self, n_x: u64, n_z: u64) -> FiniteKeyInput<T> {
        FiniteKeyInput {
            n_x,
            n_z,
            e_bx: self.e_bx,
            e_bz: self.e_bz,
            f_x: self.f_x,
            f_z: self.f_z,
            eps_per_basis: self.eps_per_basis,
        }
    }

    /// Same model with the roles of the two bases exchanged.
    pub fn mirrored(&self) -> Self {
        RateModel {
            e_bx: self.e_bz,
            e_bz: self.e_bx,
            f_x: self.f_z,
            f_z: self.f_x,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw_count == 0 {
            return Err(Error::Config("raw_count must be positive".into()));
        }
        self.input(1, 1).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCurvePoint<T> {
    pub q: T,
    pub n_x: u64,
    pub n_z: u64,
    pub final_key_len: u64,
    /// Unfloored key length, clamped at zero.
    pub secure_bits: T,
    pub flags: Vec<KeyFlag>,
}

/// Expected sifted counts `(round(N (1-q)^2), round(N q^2))`.
pub fn expected_counts<T: Real>(raw_count: u64, q: T) -> Result<(u64, u64)> {
    if !(q >= T::zero() && q <= T::one()) {
        return Err(Error::InvalidProbability(q.as_f64()));
    }
    let n = T::from_count(raw_count);
    let p = T::one() - q;
    let round = |v: T| v.round().to_u64().unwrap_or(0);
    Ok((round(n * p * p), round(n * q * q)))
}

pub fn key_length_vs_bias<T: Real>(model: &RateModel<T>, q: T) -> Result<BiasCurvePoint<T>> {
    model.validate()?;
    let (n_x, n_z) = expected_counts(model.raw_count, q)?;
    let input = model.input(n_x, n_z);
    let empty = [(Basis::X, n_x), (Basis::Z, n_z)]
        .into_iter()
        .find_map(|(b, n)| (n == 0).then_some(b));

    if n_x + n_z == 0 {
        return Ok(BiasCurvePoint {
            q,
            n_x,
            n_z,
            final_key_len: 0,
            secure_bits: T::zero(),
            flags: vec![KeyFlag::EmptyBasis(Basis::X), KeyFlag::EmptyBasis(Basis::Z)],
        });
    }
    let result = if model.asymptotic {
        key_length_asymptotic(&input)?
    } else if let Some(b) = empty {
        // No sample to bound the other basis's phase error: nothing is secure.
        return Ok(BiasCurvePoint {
            q,
            n_x,
            n_z,
            final_key_len: 0,
            secure_bits: T::zero(),
            flags: vec![KeyFlag::EmptyBasis(b)],
        });
    } else {
        key_length(&input)?
    };
    Ok(BiasCurvePoint {
        q,
        n_x,
        n_z,
        final_key_len: result.final_key_len,
        secure_bits: result.secure_bits.max(T::zero()),
        flags: result.flags,
    })
}

/// Key length at every hardware-realizable bias `i / 1024`.
pub fn bias_curve<T: Real>(model: &RateModel<T>) -> Result<Vec<BiasCurvePoint<T>>> {
    model.validate()?;
    let denom = T::from_count(u64::from(WORD_COUNT));
    (0..=WORD_COUNT)
        .into_par_iter()
        .map(|i| key_length_vs_bias(model, T::from_count(u64::from(i)) / denom))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumFlag {
    /// Optimum sits at q = 0 or q = 1.
    DegenerateBoundary,
    /// Refined optimum lies between comparator settings.
    BelowHardwareResolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasOptimum<T> {
    pub q_opt: T,
    pub final_key_len: u64,
    pub secure_bits: T,
    /// Nearest comparator reference `N_0` for `q_opt`.
    pub comparator_reference: u16,
    /// Best point on the 1/1024 grid.
    pub grid_q: T,
    pub flags: Vec<OptimumFlag>,
}

/// Continuous relaxation used for refinement: unrounded expected counts.
fn relaxed_secure_bits<T: Real>(model: &RateModel<T>, q: T) -> T {
    let n = T::from_count(model.raw_count);
    let p = T::one() - q;
    let (n_x, n_z) = (n * p * p, n * q * q);
    let input = model.input(0, 0);
    let bits = if model.asymptotic {
        let mut flags = Vec::new();
        crate::finite_key::assemble(n_x, n_z, &input, T::zero(), T::zero(), &mut flags)
            .map(|(_, _, s)| s)
    } else {
        finite_secure_bits(n_x, n_z, &input).map(|(terms, _)| terms.secure_bits)
    };
    bits.unwrap_or(T::zero()).max(T::zero())
}

/// Grid search at the comparator resolution followed by golden-section
/// refinement between the neighbours of the best grid point. Ties go to the
/// smaller `q`.
pub fn optimize_bias<T: Real>(model: &RateModel<T>) -> Result<BiasOptimum<T>> {
    let curve = bias_curve(model)?;
    let mut best = 0;
    for (i, p) in curve.iter().enumerate() {
        if p.secure_bits > curve[best].secure_bits {
            best = i;
        }
    }
    let grid = &curve[best];
    if grid.final_key_len == 0 && grid.secure_bits <= T::zero() {
        return Err(Error::NoSecureBias);
    }

    let denom = T::from_count(u64::from(WORD_COUNT));
    let lo = T::from_count(best.saturating_sub(1) as u64) / denom;
    let hi = T::from_count((best + 1).min(usize::from(WORD_COUNT)) as u64) / denom;
    let (q_refined, _) = golden_section_max(lo, hi, T::lit(1e-6), |q| relaxed_secure_bits(model, q));
    let refined = key_length_vs_bias(model, q_refined)?;

    let mut flags = Vec::new();
    let chosen = if refined.secure_bits > grid.secure_bits {
        flags.push(OptimumFlag::BelowHardwareResolution);
        refined
    } else {
        grid.clone()
    };
    if chosen.q == T::zero() || chosen.q == T::one() {
        flags.push(OptimumFlag::DegenerateBoundary);
    }
    let reference = (chosen.q * denom).round().to_u16().unwrap_or(WORD_COUNT);
    Ok(BiasOptimum {
        q_opt: chosen.q,
        final_key_len: chosen.final_key_len,
        secure_bits: chosen.secure_bits,
        comparator_reference: reference,
        grid_q: grid.q,
        flags,
    })
}

/// Percentage gain of the key at bias `q` over the unbiased key from the same
/// raw count.
pub fn improvement<T: Real>(model: &RateModel<T>, q: T) -> Result<T> {
    let baseline = key_length_vs_bias(model, T::lit(0.5))?;
    if baseline.secure_bits <= T::zero() {
        return Err(Error::ZeroBaseline);
    }
    let biased = key_length_vs_bias(model, q)?;
    Ok(T::lit(100.0) * (biased.secure_bits / baseline.secure_bits - T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(raw: u64, asymptotic: bool) -> RateModel<f64> {
        RateModel {
            raw_count: raw,
            e_bx: 0.069,
            e_bz: 0.065,
            f_x: 1.1,
            f_z: 1.12,
            eps_per_basis: 0.003,
            asymptotic,
        }
    }

    #[test]
    fn count_examples() {
        assert_eq!(expected_counts(34644, 0.8).unwrap(), (1386, 22172));
        assert_eq!(expected_counts(1000, 0.5).unwrap(), (250, 250));
        assert_eq!(expected_counts(1000, 1.0).unwrap(), (0, 1000));
        assert!(expected_counts(1000, 1.1).is_err());
    }

    #[test]
    fn sifted_total_tracks_sift_factor() {
        for i in 0..=100 {
            let q = f64::from(i) / 100.0;
            let (x, z) = expected_counts(34644, q).unwrap();
            let ideal = 34644.0 * (q * q + (1.0 - q) * (1.0 - q));
            assert!(((x + z) as f64 - ideal).abs() <= 1.0);
        }
    }

    #[test]
    fn empty_basis_point_is_zero_in_finite_mode() {
        let p = key_length_vs_bias(&model(34644, false), 1.0).unwrap();
        assert_eq!(p.final_key_len, 0);
        assert_eq!(p.flags, vec![KeyFlag::EmptyBasis(Basis::X)]);
        let p = key_length_vs_bias(&model(34644, true), 1.0).unwrap();
        assert!(p.final_key_len > 0);
    }

    #[test]
    fn asymptotic_equal_errors_per_bit_rate_is_flat() {
        let m = RateModel {
            e_bx: 0.05,
            e_bz: 0.05,
            f_x: 1.1,
            f_z: 1.1,
            ..model(100_000, true)
        };
        for q in [0.3, 0.5, 0.7, 0.9] {
            let p = key_length_vs_bias(&m, q).unwrap();
            let per_bit = p.secure_bits / (p.n_x + p.n_z) as f64;
            let reference = 1.0 - 2.1 * crate::finite_key::binary_entropy(0.05).unwrap();
            assert!((per_bit - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn asymptotic_equal_model_is_degenerate_at_boundary() {
        let m = RateModel {
            e_bx: 0.05,
            e_bz: 0.05,
            f_x: 1.1,
            f_z: 1.1,
            ..model(100_000, true)
        };
        let opt = optimize_bias(&m).unwrap();
        assert!(opt.q_opt == 0.0 || opt.q_opt == 1.0);
        assert!(opt.flags.contains(&OptimumFlag::DegenerateBoundary));
    }

    #[test]
    fn hopeless_model_has_no_secure_bias() {
        let m = RateModel {
            e_bx: 0.3,
            e_bz: 0.3,
            ..model(1000, false)
        };
        assert!(matches!(optimize_bias(&m), Err(Error::NoSecureBias)));
        assert!(matches!(improvement(&m, 0.8), Err(Error::ZeroBaseline)));
    }

    #[test]
    fn mirrored_model_swaps_roles() {
        let m = model(34644, false);
        let a = key_length_vs_bias(&m, 0.8).unwrap();
        let b = key_length_vs_bias(&m.mirrored(), 0.2).unwrap();
        assert_eq!((a.n_x, a.n_z), (b.n_z, b.n_x));
        assert_eq!(a.final_key_len, b.final_key_len);
    }
}
