//! Finite-key secure key length for biased-basis BB84/BBM92.
//!
//! Bit errors in one basis estimate the phase errors of the key bits in the
//! other. With `n = n_x + n_z` sifted bits, the X sample of size `n_x` bounds
//! the phase error of the Z key as `e_bx + theta_x`, with failure probability
//!
//! ```text
//! P(theta_x) <= sqrt(n) / sqrt(n_x n_z e_bx (1 - e_bx)) * 2^(-n xi(theta_x))
//! xi(theta)  =  H(e + theta - q theta) - q H(e) - (1 - q) H(e + theta),   q = n_x / n
//! ```
//!
//! and symmetrically for the Z sample (`e_bz`, `q = n_z / n`). The key
//! length is `n - k_ec - k_pr` with
//!
//! ```text
//! k_ec = n_x f_x H(e_bx) + n_z f_z H(e_bz)
//! k_pr = n_x H(e_bz + theta_z) + n_z H(e_bx + theta_x)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Basis;
use crate::numeric::bisect_decreasing;
use crate::scalar::Real;

/// Absolute tolerance on theta.
pub const THETA_TOLERANCE: f64 = 1e-7;
/// Relative slack allowed below the target after solving.
pub const THETA_REL_GAP: f64 = 1e-5;
/// Default failure-probability budget per basis.
pub const DEFAULT_EPS_PER_BASIS: f64 = 0.003;

pub fn binary_entropy<T: Real>(x: T) -> Result<T> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::Domain(x.as_f64()));
    }
    if x == T::zero() || x == T::one() {
        return Ok(T::zero());
    }
    let y = T::one() - x;
    Ok(-(x * x.log2()) - y * y.log2())
}

/// Exponent rate of the sampling bound.
pub fn xi<T: Real>(e_b: T, q_sample: T, theta: T) -> Result<T> {
    let h_mixed = binary_entropy(e_b + theta - q_sample * theta)?;
    let h_sample = binary_entropy(e_b)?;
    let h_rest = binary_entropy(e_b + theta)?;
    // Grouped so that theta = 0 cancels exactly.
    Ok((h_mixed - h_rest) + q_sample * (h_rest - h_sample))
}

fn sample_fraction<T: Real>(n_x: T, n_z: T, sample: Basis) -> T {
    let n = n_x + n_z;
    match sample {
        Basis::X => n_x / n,
        Basis::Z => n_z / n,
    }
}

/// Bound on the probability that the phase error of the key bits exceeds
/// `e_b + theta`, where `e_b` is the error rate observed on the `sample`
/// basis. Capped at 1.
pub fn p_theta<T: Real>(n_x: T, n_z: T, sample: Basis, e_b: T, theta: T) -> Result<T> {
    if !(n_x > T::zero() && n_z > T::zero()) {
        let empty = if n_x > T::zero() { Basis::Z } else { Basis::X };
        return Err(Error::EmptyBasis(empty));
    }
    if e_b <= T::zero() || e_b >= T::one() {
        return Err(Error::DegenerateErrorRate(e_b.as_f64()));
    }
    if theta < T::zero() {
        return Err(Error::Domain(theta.as_f64()));
    }
    let n = n_x + n_z;
    let prefactor = n.sqrt() / (n_x * n_z * e_b * (T::one() - e_b)).sqrt();
    let rate = xi(e_b, sample_fraction(n_x, n_z, sample), theta)?;
    Ok((prefactor * (-(n * rate)).exp2()).min(T::one()))
}

/// Smallest `theta >= 0` with `p_theta <= eps_target`, searched on
/// `[0, 0.5 - e_b]`.
pub fn solve_theta<T: Real>(n_x: T, n_z: T, sample: Basis, e_b: T, eps_target: T) -> Result<T> {
    if !(eps_target > T::zero() && eps_target < T::one()) {
        return Err(Error::InvalidProbability(eps_target.as_f64()));
    }
    let p = |theta| p_theta(n_x, n_z, sample, e_b, theta);
    if p(T::zero())? <= eps_target {
        return Ok(T::zero());
    }
    let upper = T::lit(0.5) - e_b;
    if upper <= T::zero() || p(upper)? > eps_target {
        return Err(Error::InsecureRegime(sample));
    }
    Ok(bisect_decreasing(
        T::zero(),
        upper,
        eps_target,
        T::lit(THETA_TOLERANCE),
        T::lit(THETA_REL_GAP),
        // Every point of the bracket was validated by the two calls above.
        |theta| p(theta).unwrap_or(T::one()),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteKeyInput<T> {
    pub n_x: u64,
    pub n_z: u64,
    pub e_bx: T,
    pub e_bz: T,
    pub f_x: T,
    pub f_z: T,
    pub eps_per_basis: T,
}

impl<T: Real> FiniteKeyInput<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_x + self.n_z == 0 {
            return Err(Error::Config("no sifted bits".into()));
        }
        for (name, e) in [("e_bx", self.e_bx), ("e_bz", self.e_bz)] {
            if !(e >= T::zero() && e <= T::one()) {
                return Err(Error::Config(format!("{name} = {e} outside [0, 1]")));
            }
        }
        for (name, f) in [("f_x", self.f_x), ("f_z", self.f_z)] {
            if !(f >= T::one()) || !f.is_finite() {
                return Err(Error::Config(format!("{name} = {f} must be >= 1")));
            }
        }
        if !(self.eps_per_basis > T::zero() && self.eps_per_basis < T::one()) {
            return Err(Error::InvalidProbability(self.eps_per_basis.as_f64()));
        }
        Ok(())
    }

    pub fn error_rate(&self, basis: Basis) -> T {
        match basis {
            Basis::X => self.e_bx,
            Basis::Z => self.e_bz,
        }
    }
}

/// Conditions noted while evaluating a key length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "flag", content = "basis", rename_all = "snake_case")]
pub enum KeyFlag {
    /// Sample error rate pulled into `[1/n, 1 - 1/n]` to keep the bound finite.
    ErrorRateClamped(Basis),
    /// An entropy argument for this key basis reached 0.5; the basis yields nothing.
    InsecureBasis(Basis),
    /// No sifted bits in this basis.
    EmptyBasis(Basis),
    /// Statistical fluctuations ignored (theta = 0).
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteKeyResult<T> {
    pub theta_x: T,
    pub theta_z: T,
    pub k_ec: T,
    pub k_pr: T,
    pub n_sift: u64,
    /// `n_sift - k_ec - k_pr` before flooring and clamping.
    pub secure_bits: T,
    pub final_key_len: u64,
    /// Sum of the achieved per-basis failure probabilities.
    pub eps_ph: T,
    pub flags: Vec<KeyFlag>,
}

impl<T: Real> FiniteKeyResult<T> {
    pub fn theta(&self, sample: Basis) -> T {
        match sample {
            Basis::X => self.theta_x,
            Basis::Z => self.theta_z,
        }
    }

    pub fn has_flag(&self, flag: KeyFlag) -> bool {
        self.flags.contains(&flag)
    }
}

struct ThetaOutcome<T> {
    theta: T,
    achieved: T,
}

fn theta_with_policy<T: Real>(
    n_x: T,
    n_z: T,
    sample: Basis,
    e_b: T,
    eps: T,
    flags: &mut Vec<KeyFlag>,
) -> Result<ThetaOutcome<T>> {
    let floor = T::one() / (n_x + n_z);
    let clamped = e_b.max(floor).min(T::one() - floor);
    if clamped != e_b {
        flags.push(KeyFlag::ErrorRateClamped(sample));
    }
    match solve_theta(n_x, n_z, sample, clamped, eps) {
        Ok(theta) => Ok(ThetaOutcome {
            theta,
            achieved: p_theta(n_x, n_z, sample, clamped, theta)?,
        }),
        Err(Error::InsecureRegime(_)) => {
            let theta = (T::lit(0.5) - e_b).max(T::zero());
            let achieved = if clamped < T::lit(0.5) {
                p_theta(n_x, n_z, sample, clamped, theta)?
            } else {
                T::one()
            };
            Ok(ThetaOutcome { theta, achieved })
        }
        Err(e) => Err(e),
    }
}

/// Entropy of a privacy-amplification argument, capped at 1 from 0.5 upward.
fn capped_entropy<T: Real>(arg: T, key_basis: Basis, flags: &mut Vec<KeyFlag>) -> Result<T> {
    if arg >= T::lit(0.5) {
        flags.push(KeyFlag::InsecureBasis(key_basis));
        Ok(T::one())
    } else {
        binary_entropy(arg)
    }
}

/// Key-length terms from real-valued counts and given deviations.
pub(crate) fn assemble<T: Real>(
    n_x: T,
    n_z: T,
    input: &FiniteKeyInput<T>,
    theta_x: T,
    theta_z: T,
    flags: &mut Vec<KeyFlag>,
) -> Result<(T, T, T)> {
    for (b, e) in [(Basis::X, input.e_bx), (Basis::Z, input.e_bz)] {
        if e >= T::lit(0.5) {
            flags.push(KeyFlag::InsecureBasis(b));
        }
    }
    let k_ec = n_x * input.f_x * binary_entropy(input.e_bx)?
        + n_z * input.f_z * binary_entropy(input.e_bz)?;
    // X key bits: phase error bounded from the Z sample, and vice versa.
    let k_pr = n_x * capped_entropy(input.e_bz + theta_z, Basis::X, flags)?
        + n_z * capped_entropy(input.e_bx + theta_x, Basis::Z, flags)?;
    Ok((k_ec, k_pr, n_x + n_z - k_ec - k_pr))
}

/// Finite-key evaluation on real-valued counts; both must be positive.
pub(crate) fn finite_secure_bits<T: Real>(
    n_x: T,
    n_z: T,
    input: &FiniteKeyInput<T>,
) -> Result<(FiniteKeyTerms<T>, Vec<KeyFlag>)> {
    let mut flags = Vec::new();
    for (b, n) in [(Basis::X, n_x), (Basis::Z, n_z)] {
        if !(n > T::zero()) {
            return Err(Error::EmptyBasis(b));
        }
    }
    let eps = input.eps_per_basis;
    let x = theta_with_policy(n_x, n_z, Basis::X, input.e_bx, eps, &mut flags)?;
    let z = theta_with_policy(n_x, n_z, Basis::Z, input.e_bz, eps, &mut flags)?;
    let (k_ec, k_pr, secure) = assemble(n_x, n_z, input, x.theta, z.theta, &mut flags)?;
    Ok((
        FiniteKeyTerms {
            theta_x: x.theta,
            theta_z: z.theta,
            k_ec,
            k_pr,
            secure_bits: secure,
            eps_ph: x.achieved + z.achieved,
        },
        flags,
    ))
}

pub(crate) struct FiniteKeyTerms<T> {
    pub theta_x: T,
    pub theta_z: T,
    pub k_ec: T,
    pub k_pr: T,
    pub secure_bits: T,
    pub eps_ph: T,
}

fn finish<T: Real>(n_sift: u64, terms: FiniteKeyTerms<T>, mut flags: Vec<KeyFlag>) -> FiniteKeyResult<T> {
    flags.sort_unstable();
    flags.dedup();
    let final_key_len = terms.secure_bits.max(T::zero()).floor().to_u64().unwrap_or(0);
    FiniteKeyResult {
        theta_x: terms.theta_x,
        theta_z: terms.theta_z,
        k_ec: terms.k_ec,
        k_pr: terms.k_pr,
        n_sift,
        secure_bits: terms.secure_bits,
        final_key_len,
        eps_ph: terms.eps_ph,
        flags,
    }
}

/// Secure key length with statistical fluctuations accounted for.
pub fn key_length<T: Real>(input: &FiniteKeyInput<T>) -> Result<FiniteKeyResult<T>> {
    input.validate()?;
    let n_x = T::from_count(input.n_x);
    let n_z = T::from_count(input.n_z);
    let (terms, flags) = finite_secure_bits(n_x, n_z, input)?;
    Ok(finish(input.n_x + input.n_z, terms, flags))
}

/// Long-key limit: deviations are zero and an empty basis is allowed.
pub fn key_length_asymptotic<T: Real>(input: &FiniteKeyInput<T>) -> Result<FiniteKeyResult<T>> {
    input.validate()?;
    let mut flags = vec![KeyFlag::Asymptotic];
    for (b, n) in [(Basis::X, input.n_x), (Basis::Z, input.n_z)] {
        if n == 0 {
            flags.push(KeyFlag::EmptyBasis(b));
        }
    }
    let n_x = T::from_count(input.n_x);
    let n_z = T::from_count(input.n_z);
    let (k_ec, k_pr, secure_bits) = assemble(n_x, n_z, input, T::zero(), T::zero(), &mut flags)?;
    let terms = FiniteKeyTerms {
        theta_x: T::zero(),
        theta_z: T::zero(),
        k_ec,
        k_pr,
        secure_bits,
        eps_ph: T::zero(),
    };
    Ok(finish(input.n_x + input.n_z, terms, flags))
}

/// Final key bits per raw coincidence; zero when there was no raw key.
pub fn key_rate<T: Real>(result: &FiniteKeyResult<T>, raw_count: u64) -> T {
    if raw_count == 0 {
        return T::zero();
    }
    T::from_count(result.final_key_len) / T::from_count(raw_count)
}
