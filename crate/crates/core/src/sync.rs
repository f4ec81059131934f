//! Clock-offset recovery, coincidence histograms and gate matching.
//!
//! All delays are `t_bob - t_alice` in integer picoseconds. A histogram built
//! at trial offset `d` with half range `h` counts delays in `[d - h, d + h)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_sorted, TimeTagRecord};

/// Full gate width used when nothing else is configured.
pub const DEFAULT_WINDOW_PS: u64 = 2_500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncParams {
    pub coarse_half_range_ps: u64,
    pub coarse_bin_ps: u64,
    pub fine_bin_ps: u64,
    /// Half range of the histogram used for the FWHM estimate.
    pub peak_half_range_ps: u64,
}

impl Default for SyncParams {
    fn default() -> Self {
        SyncParams {
            coarse_half_range_ps: 1_000_000_000,
            coarse_bin_ps: 1_000_000,
            fine_bin_ps: 100,
            peak_half_range_ps: 10_000,
        }
    }
}

impl SyncParams {
    pub fn validate(&self) -> Result<()> {
        let check = |half: u64, bin: u64, what: &str| {
            if bin == 0 || half == 0 || (2 * half) % bin != 0 {
                Err(Error::Config(format!(
                    "{what}: bin width {bin} ps must be positive and divide 2 x {half} ps"
                )))
            } else {
                Ok(())
            }
        };
        check(self.coarse_half_range_ps, self.coarse_bin_ps, "coarse search")?;
        check(self.coarse_bin_ps, self.fine_bin_ps, "fine search")?;
        check(self.peak_half_range_ps, self.fine_bin_ps, "peak histogram")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width_ps: u64,
    /// Delay at the left edge of bin 0.
    pub origin_ps: i64,
    pub counts: Vec<u64>,
}

impl CorrelationHistogram {
    pub fn bin_center_ps(&self, k: usize) -> f64 {
        self.origin_ps as f64 + (k as f64 + 0.5) * self.bin_width_ps as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// First bin holding the maximum count.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = k;
            }
        }
        best
    }

    pub fn mean(&self) -> f64 {
        self.total() as f64 / self.counts.len() as f64
    }

    pub fn median(&self) -> f64 {
        let mut sorted = self.counts.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidencePair {
    pub alice: TimeTagRecord,
    pub bob: TimeTagRecord,
    /// `t_bob - t_alice - offset`.
    pub dt_ps: i64,
}

#[inline]
fn delay(a: &TimeTagRecord, b: &TimeTagRecord) -> i64 {
    b.time_ps as i64 - a.time_ps as i64
}

/// Alice tags per parallel histogram chunk.
const CHUNK: usize = 1 << 14;

pub fn build_histogram(
    stream_a: &[TimeTagRecord],
    stream_b: &[TimeTagRecord],
    trial_offset_ps: i64,
    bin_width_ps: u64,
    half_range_ps: u64,
) -> Result<CorrelationHistogram> {
    if bin_width_ps == 0 || half_range_ps == 0 || (2 * half_range_ps) % bin_width_ps != 0 {
        return Err(Error::Config(format!(
            "bin width {bin_width_ps} ps must be positive and divide 2 x {half_range_ps} ps"
        )));
    }
    validate_sorted(stream_a)?;
    validate_sorted(stream_b)?;

    let n_bins = (2 * half_range_ps / bin_width_ps) as usize;
    let lo = trial_offset_ps - half_range_ps as i64;
    let hi = trial_offset_ps + half_range_ps as i64;
    let width = bin_width_ps as i64;

    // Chunks sweep independently; counts are summed, so the result does not
    // depend on the thread count.
    let counts = stream_a
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut counts = vec![0u64; n_bins];
            let Some(first) = chunk.first() else {
                return counts;
            };
            let mut start = stream_b.partition_point(|b| delay(first, b) < lo);
            for a in chunk {
                while start < stream_b.len() && delay(a, &stream_b[start]) < lo {
                    start += 1;
                }
                for b in &stream_b[start..] {
                    let d = delay(a, b);
                    if d >= hi {
                        break;
                    }
                    counts[((d - lo) / width) as usize] += 1;
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; n_bins],
            |mut acc, part| {
                acc.iter_mut().zip(part).for_each(|(x, y)| *x += y);
                acc
            },
        );

    Ok(CorrelationHistogram {
        bin_width_ps,
        origin_ps: lo,
        counts,
    })
}

fn significant_peak(h: &CorrelationHistogram) -> Result<usize> {
    let k = h.argmax();
    let mean = h.mean();
    let peak = h.counts[k] as f64;
    if peak <= mean + 5.0 * mean.sqrt() {
        return Err(Error::SyncFailed(format!(
            "largest bin {peak} does not exceed mean {mean:.2} by 5 sigma"
        )));
    }
    Ok(k)
}

/// Center of the coarse peak. A peak straddling a bin edge splits between two
/// bins, so adjacent pairs are tested too and the more significant candidate
/// wins; a winning pair is centered on its shared edge.
fn coarse_peak(h: &CorrelationHistogram) -> Result<i64> {
    let mean = h.mean();
    let z = |count: u64, bins: f64| (count as f64 - bins * mean) / (bins * mean).sqrt().max(f64::MIN_POSITIVE);
    let k = h.argmax();
    let width = h.bin_width_ps as i64;
    let mut best = (z(h.counts[k], 1.0), h.origin_ps + k as i64 * width + width / 2);
    for (j, pair) in h.counts.windows(2).enumerate() {
        let score = z(pair[0] + pair[1], 2.0);
        if score > best.0 {
            best = (score, h.origin_ps + (j as i64 + 1) * width);
        }
    }
    if !(best.0 > 5.0) {
        return Err(Error::SyncFailed(format!(
            "largest bin {} does not exceed mean {mean:.2} by 5 sigma, alone or with a neighbour",
            h.counts[k]
        )));
    }
    Ok(best.1)
}

/// Bins either side of the fine argmax used for the centroid refinement.
const CENTROID_HALF_BINS: usize = 10;

/// Two-stage offset search: coarse argmax, then a fine histogram around it
/// refined by a baseline-subtracted centroid.
pub fn estimate_offset(
    stream_a: &[TimeTagRecord],
    stream_b: &[TimeTagRecord],
    params: &SyncParams,
) -> Result<i64> {
    params.validate()?;
    let coarse = build_histogram(
        stream_a,
        stream_b,
        0,
        params.coarse_bin_ps,
        params.coarse_half_range_ps,
    )?;
    let coarse_center = coarse_peak(&coarse)?;

    let fine = build_histogram(
        stream_a,
        stream_b,
        coarse_center,
        params.fine_bin_ps,
        params.coarse_bin_ps,
    )?;
    let k = significant_peak(&fine)?;
    let baseline = fine.median();
    let from = k.saturating_sub(CENTROID_HALF_BINS);
    let to = (k + CENTROID_HALF_BINS + 1).min(fine.counts.len());
    let (mut weight, mut moment) = (0.0, 0.0);
    for j in from..to {
        let w = (fine.counts[j] as f64 - baseline).max(0.0);
        weight += w;
        moment += w * fine.bin_center_ps(j);
    }
    let estimate = if weight > 0.0 {
        moment / weight
    } else {
        fine.bin_center_ps(k)
    };
    Ok(estimate.round() as i64)
}

/// Full width at half maximum of the histogram peak, in ps.
///
/// Baseline is the median bin; crossings are linearly interpolated between
/// bin centers.
pub fn fwhm(histogram: &CorrelationHistogram) -> Result<f64> {
    let counts = &histogram.counts;
    if counts.is_empty() {
        return Err(Error::NoPeak);
    }
    let k = histogram.argmax();
    let baseline = histogram.median();
    let peak = counts[k] as f64;
    if peak <= baseline {
        return Err(Error::NoPeak);
    }
    let half = baseline + (peak - baseline) / 2.0;
    let w = histogram.bin_width_ps as f64;

    // Offset in bins from k where the profile crosses `half`.
    let crossing = |step: isize| -> f64 {
        let mut prev = k;
        loop {
            let next = prev as isize + step;
            if next < 0 || next as usize >= counts.len() {
                return (prev as isize - k as isize).unsigned_abs() as f64;
            }
            let next = next as usize;
            let c = counts[next] as f64;
            if c < half {
                let p = counts[prev] as f64;
                let frac = (p - half) / (p - c);
                return (prev as isize - k as isize).unsigned_abs() as f64 + frac;
            }
            prev = next;
        }
    };
    Ok((crossing(-1) + crossing(1)) * w)
}

/// Greedy chronological matching within a full gate width of `window_ps`.
///
/// Alice tags are visited in time order. Each takes the unused Bob tag with
/// the smallest `|dt|` among those with `|dt| <= window_ps / 2`; ties go to
/// the earlier Bob tag.
pub fn match_coincidences(
    stream_a: &[TimeTagRecord],
    stream_b: &[TimeTagRecord],
    offset_ps: i64,
    window_ps: u64,
) -> Result<Vec<CoincidencePair>> {
    validate_sorted(stream_a)?;
    validate_sorted(stream_b)?;
    let half = (window_ps / 2) as i64;
    let mut used = vec![false; stream_b.len()];
    let mut start = 0usize;
    let mut pairs = Vec::new();
    for a in stream_a {
        while start < stream_b.len() && delay(a, &stream_b[start]) - offset_ps < -half {
            start += 1;
        }
        let mut best: Option<(usize, i64)> = None;
        for (j, b) in stream_b.iter().enumerate().skip(start) {
            let dt = delay(a, b) - offset_ps;
            if dt > half {
                break;
            }
            if used[j] {
                continue;
            }
            if best.is_none_or(|(_, d)| dt.abs() < d.abs()) {
                best = Some((j, dt));
            }
        }
        if let Some((j, dt)) = best {
            used[j] = true;
            pairs.push(CoincidencePair {
                alice: *a,
                bob: stream_b[j],
                dt_ps: dt,
            });
        }
    }
    Ok(pairs)
}
