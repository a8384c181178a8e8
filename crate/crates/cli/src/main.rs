use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bohl_core::exponents::bohl_exponents_direction;
use bohl_core::propagation::{propagate_direction, Representation, WindowConfig};
use bohl_core::spectra::{Analysis, DichotomyMode, SpectralConfig, Verdict};
use bohl_core::systems::{
    load_system, validate_lyapunov, MatrixSequence, ScalarPattern, SystemSpec,
};
use bohl_core::theoremcheck::{run_builtin_suite, CheckConfig, Suite};
use bohl_core::triangularize::qr_normal_form;
use bohl_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bohl, Bohl dichotomy and exponential dichotomy spectra of
/// x(n+1) = A(n) x(n) over a finite horizon.
#[derive(Debug, Parser)]
#[command(name = "bohl-spectra", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// System specification file (JSON).
    #[arg(long, global = true, conflicts_with = "gen")]
    spec: Option<PathBuf>,

    /// Builtin generator.
    #[arg(long, global = true, value_enum)]
    gen: Option<Generator>,

    /// Row-major matrix entries, comma separated (constant, triangular).
    #[arg(long, global = true, allow_hyphen_values = true)]
    matrix: Option<String>,

    /// Period matrices, each row-major and comma separated, joined by ';'.
    #[arg(long, global = true, allow_hyphen_values = true)]
    matrices: Option<String>,

    /// Diagonal entries, comma separated; `a:b:c` makes an entry periodic.
    #[arg(long, global = true, allow_hyphen_values = true)]
    entries: Option<String>,

    /// Dimension for random-qdq and file systems.
    #[arg(long, global = true)]
    dim: Option<usize>,

    /// Seed of the random-qdq generator.
    #[arg(long, global = true, default_value_t = 7)]
    system_seed: u64,

    #[arg(long, global = true, default_value_t = 0.5)]
    d_lo: f64,

    #[arg(long, global = true, default_value_t = 2.0)]
    d_hi: f64,

    /// Switching amplitude of the dyadic scalar system.
    #[arg(long, global = true, default_value_t = 1.0)]
    amplitude: f64,

    /// Matrix file for `--gen file`.
    #[arg(long, global = true)]
    path: Option<PathBuf>,

    /// Number of steps n_max.
    #[arg(long, global = true, default_value_t = 100_000)]
    horizon: usize,

    #[arg(long, global = true, default_value_t = 1e-2)]
    grid_tol: f64,

    #[arg(long, global = true, default_value_t = 1e-2)]
    alpha_min: f64,

    /// Largest window threshold (default horizon / 8).
    #[arg(long, global = true)]
    n_last: Option<usize>,

    /// Sphere directions per dimension in the direction sample.
    #[arg(long, global = true, default_value_t = 64)]
    samples: usize,

    #[arg(long, global = true, value_enum, default_value_t = RepresentationArg::AllM)]
    representation: RepresentationArg,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "BOHL_SPECTRA_THREADS")]
    threads: Option<usize>,

    /// Output file (default: standard output).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute a spectrum.
    Spectrum {
        #[arg(long, value_enum)]
        kind: KindArg,
    },
    /// Bohl exponents of one direction.
    Exponents {
        /// Initial vector, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        direction: String,
    },
    /// QR normal form: writes B(n), optionally T(n) to a second file.
    Triangularize {
        #[arg(long, value_name = "PATH")]
        with_t: Option<PathBuf>,
    },
    /// Classify one γ as resolvent or spectral (CSV format: verdict trace).
    Classify {
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Run property suites on the builtin roster (exit 0 iff nothing fails).
    Check {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
    },
    /// Lyapunov validation report.
    Validate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    Constant,
    Periodic,
    Diag,
    Triangular,
    Dyadic,
    RandomQdq,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Ed,
    Bd,
    Bohl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Bd,
    Ed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    Exponents,
    Relations,
    Invariance,
    Triangular,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RepresentationArg {
    AllM,
    MBeyondN,
}

enum Failure {
    Usage(String),
    Compute(String),
    ChecksFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e.to_string())
    }
}

fn parse_numbers(text: &str, what: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("{what}: `{s}` is not a number")))
        })
        .collect()
}

fn square_dim(len: usize, what: &str) -> Result<usize, Failure> {
    let d = (len as f64).sqrt().round() as usize;
    if d == 0 || d * d != len {
        return Err(Failure::Usage(format!("{what}: {len} entries do not form a square matrix")));
    }
    Ok(d)
}

fn matrix_list(c: &Common) -> Result<Vec<Vec<f64>>, Failure> {
    match (&c.matrices, &c.matrix) {
        (Some(ms), _) => ms.split(';').map(|m| parse_numbers(m, "--matrices")).collect(),
        (None, Some(m)) => Ok(vec![parse_numbers(m, "--matrix")?]),
        (None, None) => Err(Failure::Usage("--matrix or --matrices is required".into())),
    }
}

fn system_spec(c: &Common) -> Result<SystemSpec, Failure> {
    if let Some(path) = &c.spec {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Compute(format!("cannot read {}: {e}", path.display())))?;
        return Ok(SystemSpec::from_json(&text)?);
    }
    let gen = c
        .gen
        .ok_or_else(|| Failure::Usage("either --spec or --gen is required".into()))?;
    // generated systems are evaluated well past the horizon
    let h = 2 * c.horizon + 2;
    let spec = match gen {
        Generator::Constant => {
            let m = parse_numbers(
                c.matrix.as_deref().ok_or_else(|| Failure::Usage("--matrix is required".into()))?,
                "--matrix",
            )?;
            SystemSpec::constant(square_dim(m.len(), "--matrix")?, &m, h)
        }
        Generator::Periodic | Generator::Triangular => {
            let ms = matrix_list(c)?;
            let d = square_dim(ms[0].len(), "--matrices")?;
            if matches!(gen, Generator::Periodic) {
                SystemSpec::periodic(d, &ms, h)
            } else {
                SystemSpec::upper_triangular(d, &ms, h)
            }
        }
        Generator::Diag => {
            let text = c
                .entries
                .as_deref()
                .ok_or_else(|| Failure::Usage("--entries is required".into()))?;
            let entries = text
                .split(',')
                .map(|e| {
                    let vals = e
                        .split(':')
                        .map(|v| {
                            v.trim().parse::<f64>().map_err(|_| {
                                Failure::Usage(format!("--entries: `{v}` is not a number"))
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(if vals.len() == 1 {
                        ScalarPattern::Constant(vals[0])
                    } else {
                        ScalarPattern::Periodic(vals)
                    })
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            SystemSpec::diagonal(entries, h)
        }
        Generator::Dyadic => {
            let mut s = SystemSpec::dyadic(h);
            s.params["amplitude"] = c.amplitude.into();
            s
        }
        Generator::RandomQdq => {
            let d = c.dim.unwrap_or(3);
            SystemSpec::random_qdq(d, c.system_seed, c.d_lo, c.d_hi, h)
        }
        Generator::File => {
            let path = c
                .path
                .as_ref()
                .ok_or_else(|| Failure::Usage("--path is required for --gen file".into()))?;
            let d = c
                .dim
                .ok_or_else(|| Failure::Usage("--dim is required for --gen file".into()))?;
            SystemSpec::file(d, path, c.horizon)
        }
    };
    Ok(spec)
}

fn load(c: &Common) -> Result<MatrixSequence, Failure> {
    let seq = load_system(&system_spec(c)?)?;
    seq.ensure_horizon(c.horizon)?;
    Ok(seq)
}

fn window(c: &Common) -> WindowConfig {
    let w = match c.n_last {
        Some(n) => WindowConfig::with_n_last(c.horizon, n),
        None => WindowConfig::for_horizon(c.horizon),
    };
    w.with_representation(match c.representation {
        RepresentationArg::AllM => Representation::AllM,
        RepresentationArg::MBeyondN => Representation::MBeyondN,
    })
}

fn spectral(c: &Common) -> SpectralConfig {
    let mut cfg = SpectralConfig::from_window(window(c));
    cfg.grid_tol = c.grid_tol;
    cfg.alpha_min = c.alpha_min;
    cfg.sphere_samples_per_dim = c.samples;
    cfg.seed = c.seed;
    cfg
}

fn check_common(c: &Common) -> Result<(), Failure> {
    if c.horizon == 0 {
        return Err(Failure::Usage("--horizon must be positive".into()));
    }
    for (name, v) in [("--grid-tol", c.grid_tol), ("--alpha-min", c.alpha_min)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Failure::Usage(format!("{name} must be positive")));
        }
    }
    if c.samples == 0 {
        return Err(Failure::Usage("--samples must be positive".into()));
    }
    if c.n_last == Some(0) {
        return Err(Failure::Usage("--n-last must be positive".into()));
    }
    if c.threads == Some(0) {
        return Err(Failure::Usage("--threads must be positive".into()));
    }
    Ok(())
}

fn require_json(c: &Common, command: &str) -> Result<(), Failure> {
    if c.format == Format::Csv {
        return Err(Failure::Usage(format!("`{command}` supports --format json only")));
    }
    Ok(())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match path {
        Some(p) => fs::write(p, text)
            .map_err(|e| Failure::Compute(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Compute(format!("cannot write output: {e}"))),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    check_common(c)?;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Compute(format!("thread pool: {e}")))?;
    }
    let out = c.output.as_deref();
    match &cli.command {
        Command::Spectrum { kind } => {
            require_json(c, "spectrum")?;
            let seq = load(c)?;
            let mut an = Analysis::new(&seq, &spectral(c))?;
            let result = match kind {
                KindArg::Ed => an.ed_spectrum()?,
                KindArg::Bd => an.bd_spectrum()?,
                KindArg::Bohl => an.bohl_spectrum()?,
            };
            write_output(out, &result.to_json())
        }
        Command::Exponents { direction } => {
            let x0 = parse_numbers(direction, "--direction")?;
            let seq = load(c)?;
            if x0.len() != seq.dim() {
                return Err(Failure::Usage(format!(
                    "--direction has {} entries, system dimension is {}",
                    x0.len(),
                    seq.dim()
                )));
            }
            let w = window(c);
            w.validate()?;
            let sol = propagate_direction(&seq, &x0, c.horizon)?;
            let est = bohl_exponents_direction(&sol, &w)?;
            match c.format {
                Format::Json => write_output(
                    out,
                    &serde_json::to_string_pretty(&est).expect("estimate serializes"),
                ),
                Format::Csv => write_output(out, &est.to_csv()),
            }
        }
        Command::Triangularize { with_t } => {
            require_json(c, "triangularize")?;
            let seq = load(c)?;
            let tri = qr_normal_form(&seq, c.horizon)?;
            eprintln!(
                "residual {:.3e}, orthogonality defect {:.3e}",
                tri.residual, tri.orthogonality_defect
            );
            if let Some(p) = with_t {
                write_output(Some(p), &tri.t_json())?;
            }
            write_output(out, &tri.b_json())
        }
        Command::Classify { gamma, mode } => {
            let seq = load(c)?;
            let mode = match mode {
                ModeArg::Bd => DichotomyMode::Bd,
                ModeArg::Ed => DichotomyMode::Ed,
            };
            let mut an = Analysis::new(&seq, &spectral(c))?;
            match c.format {
                Format::Json => {
                    let v = an.classify_gamma(*gamma, mode)?;
                    write_output(out, &serde_json::to_string_pretty(&v).expect("verdict serializes"))
                }
                Format::Csv => {
                    let mut text = String::from("gamma,verdict,margin,dim_decaying,dim_growing\n");
                    for v in an.verdict_trace(mode)? {
                        let verdict = match v.verdict {
                            Verdict::Resolvent => "resolvent",
                            Verdict::Spectrum => "spectrum",
                            Verdict::Undecided => "undecided",
                        };
                        text.push_str(&format!(
                            "{},{},{},{},{}\n",
                            v.gamma, verdict, v.margin, v.split_dims.0, v.split_dims.1
                        ));
                    }
                    write_output(out, &text)
                }
            }
        }
        Command::Check { suite } => {
            require_json(c, "check")?;
            let cfg = CheckConfig {
                grid_tol: c.grid_tol,
                alpha_min: c.alpha_min,
                n_last: c.n_last,
                sphere_samples_per_dim: c.samples,
                seed: c.seed,
                probe_count: 5,
            };
            let suite = match suite {
                SuiteArg::Exponents => Suite::Exponents,
                SuiteArg::Relations => Suite::Relations,
                SuiteArg::Invariance => Suite::Invariance,
                SuiteArg::Triangular => Suite::Triangular,
                SuiteArg::All => Suite::All,
            };
            let report = run_builtin_suite(suite, c.horizon, &cfg)?;
            write_output(out, &report.to_json())?;
            let s = report.summary();
            eprintln!("{} passed, {} failed, {} skipped", s.pass, s.fail, s.skipped);
            for f in report.failures() {
                eprintln!("FAIL {} {}", f.name, f.system_id);
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::ChecksFailed)
            }
        }
        Command::Validate => {
            require_json(c, "validate")?;
            let seq = load(c)?;
            let report = validate_lyapunov(&seq, c.horizon);
            write_output(out, &serde_json::to_string_pretty(&report).expect("report serializes"))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::ChecksFailed) => ExitCode::from(1),
    }
}
