use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qkd_sim::bias::{bias_curve, improvement, optimize_bias, RateModel};
use qkd_sim::finite_key::{key_length, key_length_asymptotic, key_rate, FiniteKeyInput};
use qkd_sim::pipeline::{self, AnalysisParams, OutputLock, RunConfig, RunReport};
use qkd_sim::sifting::sift;
use qkd_sim::sync::{build_histogram, estimate_offset, fwhm, match_coincidences, SyncParams};
use qkd_sim::table1::{table1, Table1Options};
use qkd_sim::{io, Basis, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;
const THREADS_VAR: &str = "QKD_SIM_THREADS";

#[derive(Parser)]
#[command(name = "qkd-sim", version, about = "Biased-basis entanglement QKD simulator and finite-key analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a session and write both time-tag streams plus ground truth.
    Simulate(SimulateArgs),
    /// Estimate the clock offset between two streams and match coincidences.
    Sync(SyncArgs),
    /// Sift matched pairs and report per-basis error rates.
    Sift(SiftArgs),
    /// Finite-key secure key length from counts and error rates.
    Keyrate(KeyrateArgs),
    /// Find the basis bias that maximizes the key.
    Optimize(OptimizeArgs),
    /// Simulate, then analyze blind.
    RunE2e(RunArgs),
    /// Analyze recorded time-tag files.
    Analyze(AnalyzeArgs),
    /// Recompute the published results table.
    Table1(Table1Args),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Text,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Probability of choosing the Z basis.
    #[arg(long)]
    bias_z: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_s: Option<f64>,
    /// Bob's clock offset relative to Alice's.
    #[arg(long, allow_hyphen_values = true)]
    clock_offset_ps: Option<i64>,
    #[arg(long)]
    window_ps: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> qkd_sim::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(q) = self.bias_z {
            config.session.bias_z = q;
        }
        if let Some(seed) = self.seed {
            config.session.seed = seed;
        }
        if let Some(d) = self.duration_s {
            config.session.duration_s = d;
        }
        if let Some(o) = self.clock_offset_ps {
            config.session.clock_offset_ps = o;
        }
        if let Some(w) = self.window_ps {
            config.window_ps = w;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SyncFlags {
    #[arg(long)]
    window_ps: Option<u64>,
    /// Half range of the coarse offset search.
    #[arg(long)]
    coarse_range_ps: Option<u64>,
    #[arg(long)]
    coarse_bin_ps: Option<u64>,
    #[arg(long)]
    fine_bin_ps: Option<u64>,
}

impl SyncFlags {
    fn apply(&self, params: &mut AnalysisParams) {
        if let Some(w) = self.window_ps {
            params.window_ps = w;
        }
        let sync: &mut SyncParams = &mut params.sync;
        if let Some(r) = self.coarse_range_ps {
            sync.coarse_half_range_ps = r;
        }
        if let Some(b) = self.coarse_bin_ps {
            sync.coarse_bin_ps = b;
        }
        if let Some(b) = self.fine_bin_ps {
            sync.fine_bin_ps = b;
        }
    }
}

#[derive(Args)]
struct SyncArgs {
    #[arg(long)]
    alice: PathBuf,
    #[arg(long)]
    bob: PathBuf,
    #[command(flatten)]
    flags: SyncFlags,
    /// Fine histogram around the peak, `bin_center_ps,count`.
    #[arg(long)]
    histogram_out: Option<PathBuf>,
    /// Matched pairs for `sift`.
    #[arg(long)]
    pairs_out: Option<PathBuf>,
}

#[derive(Args)]
struct SiftArgs {
    /// Matched-pair CSV written by `sync`.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    bits_x_out: Option<PathBuf>,
    #[arg(long)]
    bits_z_out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrectionArgs {
    #[arg(long, default_value_t = 1.1)]
    fx: f64,
    #[arg(long, default_value_t = 1.12)]
    fz: f64,
    #[arg(long, default_value_t = qkd_sim::finite_key::DEFAULT_EPS_PER_BASIS)]
    eps_per_basis: f64,
}

#[derive(Args)]
struct KeyrateArgs {
    #[arg(long)]
    nx: u64,
    #[arg(long)]
    nz: u64,
    #[arg(long)]
    ebx: f64,
    #[arg(long)]
    ebz: f64,
    #[command(flatten)]
    correction: CorrectionArgs,
    /// Raw key size for the per-raw-bit rate; defaults to nx + nz.
    #[arg(long)]
    raw: Option<u64>,
    /// Drop the finite-size deviations.
    #[arg(long)]
    asymptotic: bool,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    raw: u64,
    #[arg(long)]
    ebx: f64,
    #[arg(long)]
    ebz: f64,
    #[command(flatten)]
    correction: CorrectionArgs,
    #[arg(long)]
    asymptotic: bool,
    /// Key length over the full bias grid, `q,n_x,n_z,final_key_len`.
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for streams, intermediate CSVs and the report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    alice: PathBuf,
    #[arg(long)]
    bob: PathBuf,
    /// Run configuration supplying the analysis parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: SyncFlags,
    /// Session length for the per-second rate.
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct Table1Args {
    /// Add the asymptotic-limit improvement.
    #[arg(long)]
    asymptotic: bool,
    /// Project the optimum for this raw key size.
    #[arg(long)]
    raw: Option<u64>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Pipeline(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Pipeline(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn configure_threads() -> CliResult {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Config(e.to_string()))
}

fn print_json(value: &impl serde::Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    println!("{text}");
    Ok(())
}

fn print_report(report: &RunReport, format: Format) -> CliResult {
    match format {
        Format::Json => println!("{}", report.to_json()),
        Format::Text => print!("{}", report.render_text()),
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> CliResult {
    let config = args.config.resolve()?;
    let _lock = OutputLock::acquire(&args.out)?;
    let sim = pipeline::simulate(&config)?;
    pipeline::persist_simulation(&args.out, &sim).map_err(|e| e.in_stage("simulate"))?;
    print_json(&json!({
        "seed": config.session.seed,
        "comparator_reference": sim.comparator.reference(),
        "realized_bias_z": sim.comparator.probability_z(),
        "alice_tags": sim.alice.len(),
        "bob_tags": sim.bob.len(),
        "true_pairs": sim.truth.pairs.len(),
        "background_a": sim.truth.background_a,
        "background_b": sim.truth.background_b,
        "config": config,
    }))
}

fn sync(args: &SyncArgs) -> CliResult {
    let mut params = RunConfig::default().analysis_params();
    args.flags.apply(&mut params);
    params.validate()?;
    let alice = io::load_tags(&args.alice).map_err(|e| e.in_stage("load"))?;
    let bob = io::load_tags(&args.bob).map_err(|e| e.in_stage("load"))?;

    let sync = params.sync;
    let offset = estimate_offset(&alice, &bob, &sync).map_err(|e| e.in_stage("sync"))?;
    let histogram = build_histogram(&alice, &bob, offset, sync.fine_bin_ps, sync.peak_half_range_ps)
        .map_err(|e| e.in_stage("sync"))?;
    let pairs = match_coincidences(&alice, &bob, offset, params.window_ps).map_err(|e| e.in_stage("match"))?;
    if let Some(path) = &args.histogram_out {
        io::save_histogram(path, &histogram)?;
    }
    if let Some(path) = &args.pairs_out {
        io::save_pairs(path, &pairs)?;
    }
    print_json(&json!({
        "offset_ps": offset,
        "fwhm_ps": fwhm(&histogram).ok(),
        "window_ps": params.window_ps,
        "matched_pairs": pairs.len(),
        "sync": sync,
    }))
}

fn sift_cmd(args: &SiftArgs) -> CliResult {
    let pairs = io::load_pairs(&args.pairs).map_err(|e| e.in_stage("load"))?;
    let result = sift(&pairs);
    if let Some(path) = &args.bits_x_out {
        io::save_bits(path, result.bits(Basis::X))?;
    }
    if let Some(path) = &args.bits_z_out {
        io::save_bits(path, result.bits(Basis::Z))?;
    }
    print_json(&json!({
        "raw_count": result.raw_count,
        "n_x": result.n_x(),
        "n_z": result.n_z(),
        "e_bx": result.error_rate(Basis::X),
        "e_bz": result.error_rate(Basis::Z),
    }))
}

fn config_failure(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn keyrate(args: &KeyrateArgs) -> CliResult {
    let input = FiniteKeyInput {
        n_x: args.nx,
        n_z: args.nz,
        e_bx: args.ebx,
        e_bz: args.ebz,
        f_x: args.correction.fx,
        f_z: args.correction.fz,
        eps_per_basis: args.correction.eps_per_basis,
    };
    input.validate().map_err(config_failure)?;
    let result = if args.asymptotic {
        key_length_asymptotic(&input)
    } else {
        key_length(&input)
    }
    .map_err(|e| e.in_stage("finite-key"))?;
    let raw = args.raw.unwrap_or(args.nx + args.nz);
    print_json(&json!({
        "theta_x": result.theta_x,
        "theta_z": result.theta_z,
        "k_ec": result.k_ec,
        "k_pr": result.k_pr,
        "n_sift": result.n_sift,
        "final_key_len": result.final_key_len,
        "rate_per_raw": key_rate(&result, raw),
        "eps_ph": result.eps_ph,
        "flags": result.flags,
    }))
}

fn optimize(args: &OptimizeArgs) -> CliResult {
    let model = RateModel {
        raw_count: args.raw,
        e_bx: args.ebx,
        e_bz: args.ebz,
        f_x: args.correction.fx,
        f_z: args.correction.fz,
        eps_per_basis: args.correction.eps_per_basis,
        asymptotic: args.asymptotic,
    };
    model.validate().map_err(config_failure)?;
    let opt = optimize_bias(&model).map_err(|e| e.in_stage("optimize"))?;
    let gain = improvement(&model, opt.q_opt).map_err(|e| e.in_stage("optimize"))?;
    if let Some(path) = &args.curve_out {
        let curve = bias_curve(&model).map_err(|e| e.in_stage("optimize"))?;
        io::save_bias_curve(path, &curve)?;
    }
    print_json(&json!({
        "q_opt": opt.q_opt,
        "key_at_opt": opt.final_key_len,
        "improvement_vs_unbiased_pct": gain,
        "comparator_reference": opt.comparator_reference,
        "grid_q": opt.grid_q,
        "flags": opt.flags,
    }))
}

fn run_e2e(args: &RunArgs) -> CliResult {
    let config = args.config.resolve()?;
    let report = pipeline::run_e2e(&config, args.out.as_deref())?;
    print_report(&report, args.format)
}

fn analyze(args: &AnalyzeArgs) -> CliResult {
    let mut params = match &args.config {
        Some(path) => RunConfig::load(path)?.analysis_params(),
        None => AnalysisParams {
            duration_s: None,
            ..RunConfig::default().analysis_params()
        },
    };
    args.flags.apply(&mut params);
    if args.duration_s.is_some() {
        params.duration_s = args.duration_s;
    }
    params.validate()?;
    let report = pipeline::analyze(&args.alice, &args.bob, &params, args.out.as_deref())?;
    print_report(&report, args.format)
}

fn table1_cmd(args: &Table1Args) -> CliResult {
    let report = table1(&Table1Options {
        asymptotic: args.asymptotic,
        raw: args.raw,
    })?;
    match args.format {
        Format::Json => print_json(&report),
        Format::Text => {
            print!("{}", report.render_text());
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> CliResult {
    configure_threads()?;
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sync(a) => sync(a),
        Command::Sift(a) => sift_cmd(a),
        Command::Keyrate(a) => keyrate(a),
        Command::Optimize(a) => optimize(a),
        Command::RunE2e(a) => run_e2e(a),
        Command::Analyze(a) => analyze(a),
        Command::Table1(a) => table1_cmd(a),
    }
}

fn exit_code(failure: &Failure) -> u8 {
    match failure {
        Failure::Config(_) => EXIT_CONFIG,
        Failure::Pipeline(e) if e.is_config_error() => EXIT_CONFIG,
        Failure::Pipeline(_) => EXIT_STAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Config(msg) => eprintln!("qkd-sim: configuration error: {msg}"),
                Failure::Pipeline(e) => eprintln!("qkd-sim: {e}"),
            }
            ExitCode::from(exit_code(&failure))
        }
    }
}
