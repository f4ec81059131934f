//! CSV file formats.
//!
//! All files are UTF-8 with a header row and LF line endings.
//!
//! | file            | header                                                   |
//! |-----------------|----------------------------------------------------------|
//! | time tags       | `time_ps,channel`                                        |
//! | ground truth    | `alice_idx,bob_idx,error_flag`                           |
//! | matched pairs   | `alice_time_ps,alice_channel,bob_time_ps,bob_channel,dt_ps` |
//! | histogram       | `bin_center_ps,count`                                    |
//! | bias curve      | `q,n_x,n_z,final_key_len`                                |
//! | sifted bits     | `time_ps,alice_bit,bob_bit`                              |

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bias::BiasCurvePoint;
use crate::error::{Error, Result};
use crate::model::{validate_sorted, DetectorChannel, SiftedBitPair, TimeTagRecord};
use crate::scalar::Real;
use crate::sim::{GroundTruth, TruthPair};
use crate::sync::{CoincidencePair, CorrelationHistogram};

fn writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.into(),
            line,
            message: describe(&kind),
        },
    }
}

fn describe(kind: &csv::ErrorKind) -> String {
    match kind {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        csv::ErrorKind::Utf8 { err, .. } => err.to_string(),
        other => format!("{other:?}"),
    }
}

fn write_rows<W: Write, R: Serialize>(
    sink: W,
    header: &[&str],
    rows: impl IntoIterator<Item = R>,
) -> csv::Result<()> {
    let mut w = writer(sink);
    // The header is written explicitly so empty files still carry it.
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: DeserializeOwned>(
    source: R,
    header: &[&str],
    path: &Path,
) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    let found = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("expected header {:?}, found {:?}", header.join(","), found),
        });
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

pub const TAG_HEADER: [&str; 2] = ["time_ps", "channel"];
pub const TRUTH_HEADER: [&str; 3] = ["alice_idx", "bob_idx", "error_flag"];
pub const PAIR_HEADER: [&str; 5] = [
    "alice_time_ps",
    "alice_channel",
    "bob_time_ps",
    "bob_channel",
    "dt_ps",
];
pub const HISTOGRAM_HEADER: [&str; 2] = ["bin_center_ps", "count"];
pub const CURVE_HEADER: [&str; 4] = ["q", "n_x", "n_z", "final_key_len"];
pub const BITS_HEADER: [&str; 3] = ["time_ps", "alice_bit", "bob_bit"];

pub fn write_tags<W: Write>(sink: W, tags: &[TimeTagRecord]) -> csv::Result<()> {
    write_rows(sink, &TAG_HEADER, tags.iter().map(|t| (t.time_ps, t.channel.code())))
}

/// Reads a time-tag stream and checks that it is sorted.
pub fn read_tags<R: Read>(source: R, path: &Path) -> Result<Vec<TimeTagRecord>> {
    let rows: Vec<(u64, u8)> = read_rows(source, &TAG_HEADER, path)?;
    let tags = rows
        .into_iter()
        .enumerate()
        .map(|(i, (t, c))| {
            DetectorChannel::new(c)
                .map(|ch| TimeTagRecord::new(t, ch))
                .map_err(|e| Error::Parse {
                    path: path.into(),
                    line: i as u64 + 2,
                    message: e.to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    validate_sorted(&tags).map_err(|e| match e {
        Error::StreamOrder { index, .. } => Error::Parse {
            path: path.into(),
            line: index as u64 + 2,
            message: e.to_string(),
        },
        e => e,
    })?;
    Ok(tags)
}

pub fn save_tags(path: &Path, tags: &[TimeTagRecord]) -> Result<()> {
    write_tags(create(path)?, tags).map_err(|e| csv_err(path, e))
}

pub fn load_tags(path: &Path) -> Result<Vec<TimeTagRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tags(std::io::BufReader::new(file), path)
}

pub fn save_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let rows = truth
        .pairs
        .iter()
        .map(|p| (p.alice_idx, p.bob_idx, u8::from(p.error_flag)));
    write_rows(create(path)?, &TRUTH_HEADER, rows).map_err(|e| csv_err(path, e))
}

pub fn load_truth_pairs(path: &Path) -> Result<Vec<TruthPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<(usize, usize, u8)> = read_rows(file, &TRUTH_HEADER, path)?;
    Ok(rows
        .into_iter()
        .map(|(a, b, f)| TruthPair {
            alice_idx: a,
            bob_idx: b,
            error_flag: f != 0,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct PairRow {
    alice_time_ps: u64,
    alice_channel: u8,
    bob_time_ps: u64,
    bob_channel: u8,
    dt_ps: i64,
}

pub fn write_pairs<W: Write>(sink: W, pairs: &[CoincidencePair]) -> csv::Result<()> {
    let rows = pairs.iter().map(|p| PairRow {
        alice_time_ps: p.alice.time_ps,
        alice_channel: p.alice.channel.code(),
        bob_time_ps: p.bob.time_ps,
        bob_channel: p.bob.channel.code(),
        dt_ps: p.dt_ps,
    });
    write_rows(sink, &PAIR_HEADER, rows)
}

pub fn save_pairs(path: &Path, pairs: &[CoincidencePair]) -> Result<()> {
    write_pairs(create(path)?, pairs).map_err(|e| csv_err(path, e))
}

pub fn load_pairs(path: &Path) -> Result<Vec<CoincidencePair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<PairRow> = read_rows(std::io::BufReader::new(file), &PAIR_HEADER, path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let channel = |c| {
                DetectorChannel::new(c).map_err(|e| Error::Parse {
                    path: path.into(),
                    line: i as u64 + 2,
                    message: e.to_string(),
                })
            };
            Ok(CoincidencePair {
                alice: TimeTagRecord::new(r.alice_time_ps, channel(r.alice_channel)?),
                bob: TimeTagRecord::new(r.bob_time_ps, channel(r.bob_channel)?),
                dt_ps: r.dt_ps,
            })
        })
        .collect()
}

pub fn save_histogram(path: &Path, h: &CorrelationHistogram) -> Result<()> {
    let rows = h
        .counts
        .iter()
        .enumerate()
        .map(|(k, &c)| (h.bin_center_ps(k), c));
    write_rows(create(path)?, &HISTOGRAM_HEADER, rows).map_err(|e| csv_err(path, e))
}

pub fn save_bias_curve<T: Real + Serialize>(path: &Path, curve: &[BiasCurvePoint<T>]) -> Result<()> {
    let rows = curve.iter().map(|p| (p.q, p.n_x, p.n_z, p.final_key_len));
    write_rows(create(path)?, &CURVE_HEADER, rows).map_err(|e| csv_err(path, e))
}

pub fn save_bits(path: &Path, bits: &[SiftedBitPair]) -> Result<()> {
    let rows = bits
        .iter()
        .map(|b| (b.time_ps, u8::from(b.alice_bit), u8::from(b.bob_bit)));
    write_rows(create(path)?, &BITS_HEADER, rows).map_err(|e| csv_err(path, e))
}
