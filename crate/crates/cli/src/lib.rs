//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors and invalid parameters,
//! 2 for I/O and file-format errors.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pwmf::lab::{clt_check, nlm_rate_experiment, simulate_rate, SequenceSpec, WeightModel};
use pwmf::metrics::{
    bench_run, format_db, parse_manifest, psnr_cropped, write_bench_csv, Method, MethodParams,
};
use pwmf::nlm::NlmParams;
use pwmf::noise::{NoiseKind, NoiseSpec};
use pwmf::pgm::{read_pgm, write_pgm};
use pwmf::pwmf::auto_params;
use pwmf::similarity::ds_map;
use pwmf::trif::TrifParams;
use pwmf::Error;

#[derive(Parser, Debug)]
#[command(
    name = "pwmf",
    version,
    about = "Patch-based denoising for Gaussian, impulse and mixed noise"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Add synthetic noise to an image.
    Noise(NoiseArgs),
    /// Denoise an image.
    Denoise(DenoiseArgs),
    /// PSNR between two images; prints "inf" for identical images.
    Psnr {
        a: PathBuf,
        b: PathBuf,
        /// Border to ignore on each side.
        #[arg(long, default_value_t = 0)]
        crop: usize,
    },
    /// Degree of similarity of an image.
    Ds(DsArgs),
    /// Run a benchmark manifest and emit a CSV table.
    Bench {
        manifest: PathBuf,
        /// Directory for relative image paths (default: the manifest's).
        #[arg(long)]
        images: Option<PathBuf>,
        /// CSV destination (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence experiments.
    #[command(subcommand)]
    Lab(LabCommand),
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[arg(long)]
    kind: NoiseKind,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    #[arg(long, default_value_t = 0.0)]
    lo: f64,
    #[arg(long, default_value_t = 255.0)]
    hi: f64,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Nlm,
    Trif,
    Pwmf,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Nlm => Method::Nlm,
            MethodArg::Trif => Method::Trif,
            MethodArg::Pwmf => Method::Pwmf,
        }
    }
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Use the parameter schedule for noise `sigma,p,kind`.
    #[arg(long, value_name = "SIGMA,P,KIND")]
    auto: Option<String>,
    /// Print the parameters and exit without filtering.
    #[arg(long)]
    explain: bool,
    /// Patch diameter (nlm, pwmf).
    #[arg(long = "d")]
    patch: Option<usize>,
    /// Search window diameter.
    #[arg(long = "D")]
    search: Option<usize>,
    #[arg(long)]
    sigma_i: Option<String>,
    #[arg(long)]
    sigma_j: Option<String>,
    #[arg(long)]
    sigma_m: Option<String>,
    #[arg(long)]
    sigma_s: Option<String>,
    #[arg(long)]
    sigma_sm: Option<String>,
    #[arg(long)]
    sigma_r: Option<String>,
    /// ROAD window radius and rank count.
    #[arg(long, value_name = "RADIUS,M")]
    road: Option<String>,
    /// Number of trif passes.
    #[arg(long)]
    iterations: Option<usize>,
    /// Per-pass trif spatial scales.
    #[arg(long, value_name = "S1,S2,...")]
    sigma_s_schedule: Option<String>,
    /// nlm: compare patches without their center and keep the computed
    /// self weight.
    #[arg(long)]
    center_excluded: bool,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DsArgs {
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long = "d", default_value_t = 9)]
    patch: usize,
    #[arg(long = "D", default_value_t = 7)]
    search: usize,
    /// Write per-pixel values as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the per-pixel field as a PGM scaled to [0, 255].
    #[arg(long)]
    map: Option<PathBuf>,
    input: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightsArg {
    Constant,
    Patch,
}

#[derive(Args, Debug)]
struct SequenceArgs {
    /// Comma-separated increasing sample sizes.
    #[arg(
        long,
        value_name = "N1,N2,...",
        default_value = "100,1000,10000,100000"
    )]
    n: String,
    /// Dependence range.
    #[arg(long, default_value_t = 0)]
    l: usize,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[arg(long, default_value_t = 20.0)]
    sigma: f64,
    /// True mean.
    #[arg(long, default_value_t = 128.0)]
    u: f64,
    #[arg(long, value_enum, default_value_t = WeightsArg::Constant)]
    weights: WeightsArg,
    /// Scale of the patch weights.
    #[arg(long, default_value_t = 20.0)]
    sigma_r: f64,
    /// CSV destination (default: standard output).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum LabCommand {
    /// Mean error against sample size and its log-log slope.
    Rate(SequenceArgs),
    /// Normality of the scaled error at the largest n.
    Clt(SequenceArgs),
    /// NL-means error against the number of repetitions of a texture tile.
    NlmRate {
        tile: PathBuf,
        #[arg(long, value_name = "R1,R2,...", default_value = "1,2,4,8,16")]
        replication: String,
        #[arg(long, default_value_t = 20.0)]
        sigma: f64,
        #[arg(long = "d", default_value_t = 5)]
        patch: usize,
        #[arg(long, default_value_t = 20.0)]
        sigma_r: f64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidParameter(_) | Error::PadTooLarge { .. } => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(usage(format!("cannot start thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Noise(a) => noise(a, cli.seed),
        Command::Denoise(a) => denoise(a),
        Command::Psnr { a, b, crop } => {
            let db = psnr_cropped(&read_pgm(a)?, &read_pgm(b)?, *crop)?;
            println!("{}", format_db(db));
            Ok(())
        }
        Command::Ds(a) => ds(a),
        Command::Bench {
            manifest,
            images,
            out,
        } => bench(manifest, images.as_deref(), out.as_deref()),
        Command::Lab(cmd) => lab(cmd, cli.seed),
    }
}

fn noise(a: &NoiseArgs, seed: u64) -> Outcome {
    let spec = NoiseSpec {
        lo: a.lo,
        hi: a.hi,
        ..NoiseSpec::new(a.kind, a.sigma, a.p, seed)
    };
    spec.validate()?;
    let img = read_pgm(&a.input)?;
    write_pgm(&a.output, &spec.apply(&img)?)?;
    Ok(())
}

/// Parses `sigma,p,kind`.
fn parse_auto(s: &str) -> Result<(f64, f64, NoiseKind), Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [sigma, p, kind] = parts[..] else {
        return Err(usage(format!("--auto expects sigma,p,kind, got '{s}'")));
    };
    let num = |t: &str| {
        t.parse::<f64>()
            .map_err(|_| usage(format!("bad number '{t}' in --auto")))
    };
    Ok((num(sigma)?, num(p)?, kind.parse()?))
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| usage(format!("bad value '{t}' in {flag}")))
        })
        .collect()
}

fn base_params(method: Method, auto: Option<&str>) -> Result<MethodParams, Failure> {
    let Some(auto) = auto else {
        // Defaults: impulse noise at p = 0.2 for the impulse-aware filters.
        return Ok(match method {
            Method::Nlm => MethodParams::Nlm(NlmParams::new(7, 7, 10.0)?),
            Method::Trif => MethodParams::Trif(TrifParams::default()),
            Method::Pwmf => MethodParams::Pwmf(auto_params(0.0, 0.2, NoiseKind::Impulse)?),
        });
    };
    let (sigma, p, kind) = parse_auto(auto)?;
    Ok(match method {
        Method::Pwmf => MethodParams::Pwmf(auto_params(sigma, p, kind)?),
        _ => MethodParams::auto(method, &NoiseSpec::new(kind, sigma, p, 0))?,
    })
}

fn denoise(a: &DenoiseArgs) -> Outcome {
    let method = Method::from(a.method);
    let mut params = base_params(method, a.auto.as_deref())?;
    let patch = a.patch.map(|v| v.to_string());
    let search = a.search.map(|v| v.to_string());
    let iterations = a.iterations.map(|v| v.to_string());
    let overrides = [
        ("d", &patch),
        ("D", &search),
        ("sigma_i", &a.sigma_i),
        ("sigma_j", &a.sigma_j),
        ("sigma_m", &a.sigma_m),
        ("sigma_s", &a.sigma_s),
        ("sigma_sm", &a.sigma_sm),
        ("sigma_r", &a.sigma_r),
        ("road", &a.road),
        ("iterations", &iterations),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            params.set(key, v)?;
        }
    }
    if let Some(s) = &a.sigma_s_schedule {
        let MethodParams::Trif(p) = &mut params else {
            return Err(usage("--sigma-s-schedule applies to trif only"));
        };
        p.sigma_s_schedule = parse_list(s, "--sigma-s-schedule")?;
        p.iterations = p.sigma_s_schedule.len();
        p.validate()?;
    }
    if a.center_excluded {
        let MethodParams::Nlm(p) = &mut params else {
            return Err(usage("--center-excluded applies to nlm only"));
        };
        p.exclude_center_norm = true;
        p.self_weight = pwmf::nlm::SelfWeight::Computed;
        p.validate()?;
    }
    if a.explain {
        match &params {
            MethodParams::Nlm(p) => println!("{p}"),
            MethodParams::Trif(p) => println!("{p}"),
            MethodParams::Pwmf(p) => println!("{p}"),
        }
        return Ok(());
    }
    let (Some(input), Some(output)) = (&a.input, &a.output) else {
        return Err(usage("denoise needs INPUT and OUTPUT paths"));
    };
    let img = read_pgm(input)?;
    write_pgm(output, &params.denoise(&img)?)?;
    Ok(())
}

fn ds(a: &DsArgs) -> Outcome {
    let img = read_pgm(&a.input)?;
    let r = ds_map(&img, a.sigma, a.alpha, a.patch, a.search)?;
    println!(
        "DS={:.4} T_alpha={:.4} alpha={} sigma={} d={} D={}",
        r.global, r.t_alpha, r.alpha, r.sigma, r.d, r.search
    );
    if let Some(path) = &a.csv {
        r.write_csv(BufWriter::new(File::create(path)?))?;
    }
    if let Some(path) = &a.map {
        write_pgm(path, &r.to_image())?;
    }
    Ok(())
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn bench(manifest: &Path, images: Option<&Path>, out: Option<&Path>) -> Outcome {
    let text = std::fs::read_to_string(manifest)?;
    let base = match images {
        Some(dir) => dir.to_path_buf(),
        None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let cases = parse_manifest(&text, &base)?;
    let rows = bench_run(&cases);
    for row in &rows {
        if let Err(msg) = &row.outcome {
            eprintln!("case {} ({}) failed: {msg}", row.image, row.method);
        }
    }
    write_bench_csv(&rows, sink(out)?)?;
    Ok(())
}

fn sequence_spec(a: &SequenceArgs, seed: u64) -> Result<SequenceSpec, Failure> {
    let spec = SequenceSpec {
        n_values: parse_list(&a.n, "--n")?,
        l: a.l,
        trials: a.trials,
        sigma: a.sigma,
        u: a.u,
        weight_model: match a.weights {
            WeightsArg::Constant => WeightModel::Constant,
            WeightsArg::Patch => WeightModel::PatchExponential { sigma_r: a.sigma_r },
        },
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn lab(cmd: &LabCommand, seed: u64) -> Outcome {
    match cmd {
        LabCommand::Rate(a) => {
            let report = simulate_rate(&sequence_spec(a, seed)?)?;
            report.write_csv(sink(a.csv.as_deref())?)?;
            println!("# {}", report.summary());
        }
        LabCommand::Clt(a) => {
            let c = clt_check(&sequence_spec(a, seed)?)?;
            let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
            println!(
                "n={} ks={} variance={:.4} variance_half={:.4} variance_ratio={} degenerate={}",
                c.n,
                opt(c.ks),
                c.variance,
                c.variance_half,
                opt(c.variance_ratio),
                c.degenerate
            );
        }
        LabCommand::NlmRate {
            tile,
            replication,
            sigma,
            patch,
            sigma_r,
            trials,
            csv,
        } => {
            let tile = read_pgm(tile)?;
            let params = NlmParams::center_excluded(*patch, 1, *sigma_r)?;
            let reps: Vec<usize> = parse_list(replication, "--replication")?;
            let report = nlm_rate_experiment(&tile, &reps, *sigma, &params, seed, *trials)?;
            report.write_csv(sink(csv.as_deref())?)?;
            println!("# {}", report.summary());
        }
    }
    Ok(())
}
