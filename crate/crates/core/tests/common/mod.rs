#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qkd_sim::sync::CoincidencePair;
use qkd_sim::{DetectorChannel, TimeTagRecord};

pub fn stream(rng: &mut ChaCha8Rng, n: usize, span_ps: u64, grid_ps: u64) -> Vec<TimeTagRecord> {
    let mut tags: Vec<_> = (0..n)
        .map(|_| {
            let t = rng.random_range(0..span_ps / grid_ps) * grid_ps;
            TimeTagRecord::new(t, DetectorChannel::new(rng.random_range(0..4)).unwrap())
        })
        .collect();
    tags.sort_by_key(|t| (t.time_ps, t.channel));
    tags
}

pub struct Case {
    pub a: Vec<TimeTagRecord>,
    pub b: Vec<TimeTagRecord>,
    pub offset: i64,
    pub window: u64,
}

/// Randomized small instances; coarse time grids force exact ties.
pub fn cases(count: usize, seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n_a = rng.random_range(0..=500);
            let n_b = rng.random_range(0..=500);
            let span = rng.random_range(10_000..2_000_000u64);
            let grid = [1, 10, 100, 250][rng.random_range(0..4)];
            Case {
                a: stream(&mut rng, n_a, span, grid),
                b: stream(&mut rng, n_b, span, grid),
                offset: rng.random_range(-3_000..=3_000),
                window: rng.random_range(1..=6_000),
            }
        })
        .collect()
}

/// All-pairs greedy with the same rule as the production matcher.
pub fn naive_greedy(a: &[TimeTagRecord], b: &[TimeTagRecord], offset: i64, window: u64) -> Vec<CoincidencePair> {
    let half = (window / 2) as i64;
    let mut used = vec![false; b.len()];
    let mut out = Vec::new();
    for ta in a {
        let mut best: Option<(i64, usize)> = None;
        for (j, tb) in b.iter().enumerate() {
            if used[j] {
                continue;
            }
            let dt = tb.time_ps as i64 - ta.time_ps as i64 - offset;
            if dt.abs() <= half && best.is_none_or(|(d, _)| dt.abs() < d) {
                best = Some((dt.abs(), j));
            }
        }
        if let Some((_, j)) = best {
            used[j] = true;
            out.push(CoincidencePair {
                alice: *ta,
                bob: b[j],
                dt_ps: b[j].time_ps as i64 - ta.time_ps as i64 - offset,
            });
        }
    }
    out
}
