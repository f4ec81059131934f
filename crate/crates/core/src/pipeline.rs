//! End-to-end and offline analysis pipelines.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finite_key::{key_length, key_rate, FiniteKeyInput, FiniteKeyResult, DEFAULT_EPS_PER_BASIS};
use crate::io;
use crate::model::{Basis, TimeTagRecord};
use crate::sifting::{compute_error_rates, sift, ErrorRates, SiftResult};
use crate::sim::{simulate_session, LinkParams, SessionConfig, SimulationOutput, SourceParams};
use crate::sync::{
    build_histogram, estimate_offset, fwhm, match_coincidences, CoincidencePair,
    CorrelationHistogram, SyncParams, DEFAULT_WINDOW_PS,
};

pub const CONFIG_VERSION: u32 = 1;

pub const ALICE_TAGS_FILE: &str = "alice.csv";
pub const BOB_TAGS_FILE: &str = "bob.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const REPORT_FILE: &str = "report.json";
pub const LOCK_FILE: &str = ".qkd-sim.lock";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiniteKeyParams {
    pub f_x: f64,
    pub f_z: f64,
    pub eps_per_basis: f64,
}

impl Default for FiniteKeyParams {
    fn default() -> Self {
        FiniteKeyParams {
            f_x: 1.1,
            f_z: 1.12,
            eps_per_basis: DEFAULT_EPS_PER_BASIS,
        }
    }
}

fn default_link_a() -> LinkParams {
    LinkParams::alice_reference()
}

fn default_link_b() -> LinkParams {
    LinkParams::bob_reference()
}

fn default_window() -> u64 {
    DEFAULT_WINDOW_PS
}

/// Everything needed to reproduce a run. Missing sections take defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    #[serde(default)]
    pub source: SourceParams,
    #[serde(default = "default_link_a")]
    pub link_a: LinkParams,
    #[serde(default = "default_link_b")]
    pub link_b: LinkParams,
    #[serde(default)]
    pub session: SessionConfig,
    #[serde(default = "default_window")]
    pub window_ps: u64,
    #[serde(default)]
    pub sync: SyncParams,
    #[serde(default)]
    pub finite_key: FiniteKeyParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config_version: CONFIG_VERSION,
            source: SourceParams::default(),
            link_a: default_link_a(),
            link_b: default_link_b(),
            session: SessionConfig::default(),
            window_ps: default_window(),
            sync: SyncParams::default(),
            finite_key: FiniteKeyParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config_version {} (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        self.source.validate()?;
        self.link_a.validate()?;
        self.link_b.validate()?;
        self.session.validate()?;
        self.analysis_params().validate()
    }

    pub fn analysis_params(&self) -> AnalysisParams {
        AnalysisParams {
            window_ps: self.window_ps,
            sync: self.sync,
            finite_key: self.finite_key,
            duration_s: Some(self.session.duration_s),
        }
    }
}

/// Parameters of the post-simulation analysis chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub window_ps: u64,
    pub sync: SyncParams,
    pub finite_key: FiniteKeyParams,
    /// Session length for the per-second key rate.
    pub duration_s: Option<f64>,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        RunConfig::default().analysis_params()
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_ps == 0 {
            return Err(Error::Config("window_ps must be positive".into()));
        }
        self.sync.validate()?;
        FiniteKeyInput {
            n_x: 1,
            n_z: 1,
            e_bx: 0.0,
            e_bz: 0.0,
            f_x: self.finite_key.f_x,
            f_z: self.finite_key.f_z,
            eps_per_basis: self.finite_key.eps_per_basis,
        }
        .validate()?;
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Config(format!("duration_s must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftSummary {
    pub raw_count: u64,
    pub n_x: u64,
    pub n_z: u64,
    pub errors_x: u64,
    pub errors_z: u64,
    pub sift_fraction: Option<f64>,
}

impl From<&SiftResult> for SiftSummary {
    fn from(r: &SiftResult) -> Self {
        SiftSummary {
            raw_count: r.raw_count,
            n_x: r.n_x(),
            n_z: r.n_z(),
            errors_x: r.errors(Basis::X),
            errors_z: r.errors(Basis::Z),
            sift_fraction: r.sift_fraction(),
        }
    }
}

/// Everything derived from a pair of time-tag streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub alice_tags: u64,
    pub bob_tags: u64,
    pub offset_ps: i64,
    pub fwhm_ps: Option<f64>,
    pub window_ps: u64,
    pub sift: SiftSummary,
    pub error_rates: ErrorRates,
    pub finite_key: FiniteKeyResult<f64>,
    pub key_rate_per_raw: f64,
    pub key_rate_per_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seed: u64,
    /// Realized comparator reference `N_0`.
    pub comparator_reference: u16,
    pub realized_bias_z: f64,
    pub alice_tags: u64,
    pub bob_tags: u64,
    pub true_pairs: u64,
    pub background_a: u64,
    pub background_b: u64,
    /// Estimated minus injected clock offset.
    pub offset_error_ps: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Effective configuration, present for simulated runs.
    pub config: Option<RunConfig>,
    pub analysis_params: AnalysisParams,
    pub simulation: Option<SimulationSummary>,
    pub analysis: AnalysisReport,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Plain-text rendering in the layout of the published results table.
    pub fn render_text(&self) -> String {
        let a = &self.analysis;
        let fk = &a.finite_key;
        let mut out = String::new();
        if let Some(s) = &self.simulation {
            let _ = writeln!(
                out,
                "seed {}  N_0 {} (q_z = {:.5})  offset error {} ps",
                s.seed, s.comparator_reference, s.realized_bias_z, s.offset_error_ps
            );
        }
        let fwhm = a.fwhm_ps.map_or("n/a".to_string(), |f| format!("{f:.0} ps"));
        let _ = writeln!(
            out,
            "offset {} ps  FWHM {}  window {} ps",
            a.offset_ps, fwhm, a.window_ps
        );
        let _ = writeln!(
            out,
            "{:>10} {:>8} {:>8} {:>7} {:>7} {:>10} {:>8}",
            "raw", "n_x", "n_z", "f_x", "f_z", "eps_ph", "theta_x"
        );
        let _ = writeln!(
            out,
            "{:>10} {:>8} {:>8} {:>7.3} {:>7.3} {:>10.3e} {:>8.4}",
            a.sift.raw_count,
            a.sift.n_x,
            a.sift.n_z,
            self.analysis_params.finite_key.f_x,
            self.analysis_params.finite_key.f_z,
            fk.eps_ph,
            fk.theta_x
        );
        let _ = writeln!(
            out,
            "{:>10} {:>8} {:>8} {:>10} {:>12} {:>10}",
            "theta_z", "e_bx", "e_bz", "final key", "bit/raw", "bit/s"
        );
        let per_s = a.key_rate_per_s.map_or("n/a".to_string(), |r| format!("{r:.4}"));
        let _ = writeln!(
            out,
            "{:>10.4} {:>8.4} {:>8.4} {:>10} {:>12.4} {:>10}",
            fk.theta_z, a.error_rates.e_bx, a.error_rates.e_bz, fk.final_key_len, a.key_rate_per_raw, per_s
        );
        if !fk.flags.is_empty() {
            let _ = writeln!(out, "flags: {:?}", fk.flags);
        }
        out
    }
}

/// Intermediate products of an analysis, for persisting.
#[derive(Debug, Clone)]
pub struct AnalysisArtifacts {
    pub histogram: CorrelationHistogram,
    pub pairs: Vec<CoincidencePair>,
    pub sift: SiftResult,
    pub report: AnalysisReport,
}

/// Sync, match, sift and finite-key evaluation of two streams.
pub fn analyze_streams(
    alice: &[TimeTagRecord],
    bob: &[TimeTagRecord],
    params: &AnalysisParams,
) -> Result<AnalysisArtifacts> {
    params.validate().map_err(|e| e.in_stage("config"))?;
    let offset = estimate_offset(alice, bob, &params.sync).map_err(|e| e.in_stage("sync"))?;
    let histogram = build_histogram(
        alice,
        bob,
        offset,
        params.sync.fine_bin_ps,
        params.sync.peak_half_range_ps,
    )
    .map_err(|e| e.in_stage("sync"))?;
    let fwhm_ps = fwhm(&histogram).ok();

    let pairs =
        match_coincidences(alice, bob, offset, params.window_ps).map_err(|e| e.in_stage("match"))?;
    let sifted = sift(&pairs);
    let rates = compute_error_rates(&sifted).map_err(|e| e.in_stage("sift"))?;

    let fk = key_length(&FiniteKeyInput {
        n_x: sifted.n_x(),
        n_z: sifted.n_z(),
        e_bx: rates.e_bx,
        e_bz: rates.e_bz,
        f_x: params.finite_key.f_x,
        f_z: params.finite_key.f_z,
        eps_per_basis: params.finite_key.eps_per_basis,
    })
    .map_err(|e| e.in_stage("finite-key"))?;

    let report = AnalysisReport {
        alice_tags: alice.len() as u64,
        bob_tags: bob.len() as u64,
        offset_ps: offset,
        fwhm_ps,
        window_ps: params.window_ps,
        sift: SiftSummary::from(&sifted),
        error_rates: rates,
        key_rate_per_raw: key_rate(&fk, sifted.raw_count),
        key_rate_per_s: params.duration_s.map(|d| fk.final_key_len as f64 / d),
        finite_key: fk,
    };
    Ok(AnalysisArtifacts {
        histogram,
        pairs,
        sift: sifted,
        report,
    })
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory {} is in use (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn persist_analysis(dir: &Path, artifacts: &AnalysisArtifacts) -> Result<()> {
    io::save_histogram(&dir.join(HISTOGRAM_FILE), &artifacts.histogram)?;
    io::save_pairs(&dir.join(PAIRS_FILE), &artifacts.pairs)
}

fn write_report(dir: &Path, report: &RunReport) -> Result<()> {
    let path = dir.join(REPORT_FILE);
    fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))
}

pub fn simulate(config: &RunConfig) -> Result<SimulationOutput> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    simulate_session(&config.source, &config.link_a, &config.link_b, &config.session)
        .map_err(|e| e.in_stage("simulate"))
}

/// Writes the simulated streams and ground truth into `dir`.
pub fn persist_simulation(dir: &Path, sim: &SimulationOutput) -> Result<()> {
    io::save_tags(&dir.join(ALICE_TAGS_FILE), &sim.alice)?;
    io::save_tags(&dir.join(BOB_TAGS_FILE), &sim.bob)?;
    io::save_truth(&dir.join(TRUTH_FILE), &sim.truth)
}

/// Simulate, then analyze blind. With `out`, streams, intermediate CSVs and
/// the report are written there as each stage completes.
pub fn run_e2e(config: &RunConfig, out: Option<&Path>) -> Result<RunReport> {
    let _lock = out.map(OutputLock::acquire).transpose()?;
    let sim = simulate(config)?;
    if let Some(dir) = out {
        persist_simulation(dir, &sim).map_err(|e| e.in_stage("simulate"))?;
    }
    let params = config.analysis_params();
    let artifacts = analyze_streams(&sim.alice, &sim.bob, &params)?;
    if let Some(dir) = out {
        persist_analysis(dir, &artifacts).map_err(|e| e.in_stage("report"))?;
    }
    let simulation = SimulationSummary {
        seed: config.session.seed,
        comparator_reference: sim.comparator.reference(),
        realized_bias_z: sim.comparator.probability_z(),
        alice_tags: sim.alice.len() as u64,
        bob_tags: sim.bob.len() as u64,
        true_pairs: sim.truth.pairs.len() as u64,
        background_a: sim.truth.background_a,
        background_b: sim.truth.background_b,
        offset_error_ps: artifacts.report.offset_ps - config.session.clock_offset_ps,
    };
    let report = RunReport {
        config: Some(*config),
        analysis_params: params,
        simulation: Some(simulation),
        analysis: artifacts.report,
    };
    if let Some(dir) = out {
        write_report(dir, &report).map_err(|e| e.in_stage("report"))?;
    }
    Ok(report)
}

/// Offline analysis of recorded streams.
pub fn analyze(
    alice_path: &Path,
    bob_path: &Path,
    params: &AnalysisParams,
    out: Option<&Path>,
) -> Result<RunReport> {
    let _lock = out.map(OutputLock::acquire).transpose()?;
    let alice = io::load_tags(alice_path).map_err(|e| e.in_stage("load"))?;
    let bob = io::load_tags(bob_path).map_err(|e| e.in_stage("load"))?;
    let artifacts = analyze_streams(&alice, &bob, params)?;
    let report = RunReport {
        config: None,
        analysis_params: *params,
        simulation: None,
        analysis: artifacts.report.clone(),
    };
    if let Some(dir) = out {
        persist_analysis(dir, &artifacts).map_err(|e| e.in_stage("report"))?;
        write_report(dir, &report).map_err(|e| e.in_stage("report"))?;
    }
    Ok(report)
}

/// Reads a report written by [`run_e2e`] or [`analyze`].
pub fn load_report(path: &Path) -> Result<RunReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
