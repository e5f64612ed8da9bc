//! `spherekde`: bandwidth selection, density estimation and Monte-Carlo
//! benchmarks for directional data on the sphere.
//!
//! Exit codes: 0 success, 1 I/O or numerical failure, 2 unparsable input or
//! invalid configuration, 3 empty bandwidth grid or bandwidth out of range,
//! 4 too few points for the requested method.

mod output;
mod points;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use spherekde::bench::{self, BenchConfig};
use spherekde::estimator::{FittedEstimator, Sample};
use spherekde::geometry::UnitVector;
use spherekde::kernel::KernelProfile;
use spherekde::selectors::{cv2_select, spco_select, SelectionReport};

use crate::output::write_atomic;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] spherekde::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use spherekde::Error as E;
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Core(e) => match e {
                E::Config(_) | E::UnknownTarget(_) | E::Unsupported(_) => 2,
                E::EmptyGrid { .. } | E::Domain(_) => 3,
                E::InsufficientData { .. } => 4,
                E::Moment(_) | E::Quadrature { .. } => 1,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "spherekde", version, about = "Kernel density estimation on the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SelectMethod {
    Spco,
    Cv2,
}

#[derive(clap::Args, Debug)]
struct InputArgs {
    /// Point file, one direction per row.
    #[arg(long)]
    input: PathBuf,
    /// Rows are `theta,phi` (colatitude, azimuth, radians) instead of Cartesian.
    #[arg(long)]
    spherical: bool,
    #[arg(long, default_value = "vonmises")]
    kernel: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select a bandwidth and write the full criterion table as JSON.
    Select {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value = "spco")]
        method: SelectMethod,
        /// Penalty weight for SPCO.
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate the estimator on a 181 x 360 colatitude/azimuth mesh.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        /// Bandwidth in (0, 1], or `auto` to run SPCO first.
        #[arg(long)]
        h: BandwidthArg,
        /// Penalty weight used with `--h auto`.
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        lambda: f64,
        /// CSV destination; standard output if absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a Monte-Carlo experiment described by a JSON config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// JSON report destination; standard output if absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write per-replication rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Overrides `base_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Record wall-clock time in the report (makes it run-dependent).
        #[arg(long)]
        timing: bool,
    },
}

#[derive(Clone, Copy, Debug)]
enum BandwidthArg {
    Auto,
    Fixed(f64),
}

impl FromStr for BandwidthArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(BandwidthArg::Auto);
        }
        s.parse::<f64>()
            .map(BandwidthArg::Fixed)
            .map_err(|_| format!("expected a number or 'auto', got '{s}'"))
    }
}

fn load_sample(args: &InputArgs) -> Result<Sample, CliError> {
    let file = File::open(&args.input)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", args.input.display())))?;
    points::read_sample(BufReader::new(file), args.spherical)
}

fn report_json(value: &SelectionReport) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_select(
    input: &InputArgs,
    method: SelectMethod,
    lambda: f64,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let kernel = KernelProfile::by_name(&input.kernel)?;
    let sample = load_sample(input)?;
    let report = match method {
        SelectMethod::Spco => spco_select(&sample, &kernel, lambda)?,
        SelectMethod::Cv2 => cv2_select(&sample, &kernel)?,
    };
    if let Some(p) = output {
        write_atomic(p, report_json(&report)?.as_bytes())?;
    }
    println!("{}", report.chosen_h);
    Ok(())
}

pub const MESH_THETA: usize = 181;
pub const MESH_PHI: usize = 360;

fn cmd_estimate(
    input: &InputArgs,
    h: BandwidthArg,
    lambda: f64,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let kernel = KernelProfile::by_name(&input.kernel)?;
    if let BandwidthArg::Fixed(h) = h {
        if !(h > 0.0 && h <= 1.0) {
            return Err(spherekde::Error::Domain(format!("bandwidth must lie in (0, 1], got {h}")).into());
        }
    }
    let sample = load_sample(input)?;
    let h = match h {
        BandwidthArg::Fixed(h) => h,
        BandwidthArg::Auto => spco_select(&sample, &kernel, lambda)?.chosen_h,
    };
    if sample.dim() != 3 {
        return Err(spherekde::Error::Unsupported("the evaluation mesh is only defined on S²".into()).into());
    }
    let est = FittedEstimator::fit(&sample, &kernel, h)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    writer.write_record(["theta", "phi", "x", "y", "z", "fhat"]).map_err(csv_err)?;
    for i in 0..MESH_THETA {
        let theta = std::f64::consts::PI * i as f64 / (MESH_THETA - 1) as f64;
        for j in 0..MESH_PHI {
            let phi = std::f64::consts::TAU * j as f64 / MESH_PHI as f64;
            let x = UnitVector::from_spherical(theta, phi);
            let c = x.coords();
            let f = est.evaluate(&x)?;
            writer
                .write_record([theta, phi, c[0], c[1], c[2], f].iter().map(f64::to_string))
                .map_err(csv_err)?;
        }
    }
    let bytes = writer.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    match output {
        Some(p) => write_atomic(p, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    eprintln!("h = {h}");
    Ok(())
}

fn read_config(path: &Path) -> Result<BenchConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let config: BenchConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let at = e.path().to_string();
        CliError::Parse(format!("invalid config at `{at}`: {}", e.inner()))
    })?;
    config.validate()?;
    Ok(config)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SPHEREKDE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Parse(format!("SPHEREKDE_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))
}

fn cmd_bench(
    config: &Path,
    output: Option<&Path>,
    csv_path: Option<&Path>,
    seed: Option<u64>,
    timing: bool,
) -> Result<(), CliError> {
    let mut config = read_config(config)?;
    if let Some(seed) = seed {
        config.base_seed = seed;
    }
    configure_threads()?;
    let start = Instant::now();
    let mut report = bench::run(&config)?;
    if timing {
        report.set_wall_clock(start.elapsed().as_secs_f64());
    }
    let mut json = report.to_json()?;
    json.push('\n');
    if let Some(p) = csv_path {
        write_atomic(p, report.to_csv().as_bytes())?;
    }
    emit(output, &json)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Select { input, method, lambda, output } => {
            cmd_select(&input, method, lambda, output.as_deref())
        }
        Command::Estimate { input, h, lambda, output } => {
            cmd_estimate(&input, h, lambda, output.as_deref())
        }
        Command::Bench { config, output, csv, seed, timing } => {
            cmd_bench(&config, output.as_deref(), csv.as_deref(), seed, timing)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
