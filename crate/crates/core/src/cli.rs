//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns the process exit code.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::data::{prepare_split, read_cohort, synth_cohort, write_cohort, DataError, RawCohort, SynthSpec};
use crate::evaluation::{
    digest_json, fit_method, read_reports, render_table, run_protocol, score, write_predictions, write_reports, EvalError, Method,
    MethodSpec, ProtocolConfig, SavedModel, Selection, VERSION,
};
use crate::trainer::write_trial_log;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "lassornet", version, about = "Circadian phase (ICT) and DLMO prediction from longitudinal expression data")]
pub struct Cli {
    /// Worker threads for search trials and method fan-out.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: u16,
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort in the long CSV layout.
    Synth {
        /// Synthetic spec (JSON); defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; standard output when omitted or `-`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one method with the fixed hyperparameters of the config.
    Train(FitArgs),
    /// Select one method's hyperparameters on validation, then fit it.
    Search {
        #[command(flatten)]
        fit: FitArgs,
        /// JSON-lines log of every LassoRNet search trial.
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Run every configured method on seeded splits and write reports.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cohort CSV; `-` reads standard input.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of splits, seeded `seed`, `seed + 1`, ...
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        repeats: u64,
        /// Report file (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a saved model to a cohort and write per-sample predictions.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV; standard output when omitted or `-`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render JSON-lines reports as a text table.
    Report {
        /// One or more report files.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Output file; standard output when omitted or `-`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cohort CSV; `-` reads standard input.
    #[arg(long)]
    pub data: PathBuf,
    /// One of intercept_only, plsr, time_signature, time_machine, lassornet.
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Append the sampling-time encoding to the inputs.
    #[arg(long)]
    pub augmented: bool,
    /// Fit at the smallest penalty that removes every input.
    #[arg(long)]
    pub at_lambda_max: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Saved model (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional test-set report (JSON lines).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}`"))
}

fn is_stdio(p: &Option<PathBuf>) -> bool {
    p.as_deref().is_none_or(|p| p == Path::new("-"))
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    if is_stdio(path) {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let p = path.as_ref().expect("checked above");
    let f = File::create(p).map_err(|e| io_error(p, e))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn load_data(path: &Path) -> Result<RawCohort, CliError> {
    let reader: Box<dyn Read> = if path == Path::new("-") {
        Box::new(io::stdin().lock())
    } else {
        Box::new(BufReader::new(File::open(path).map_err(|e| io_error(path, e))?))
    };
    read_cohort(reader).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_config(path: &Option<PathBuf>) -> Result<ProtocolConfig, CliError> {
    match path {
        Some(p) => Ok(ProtocolConfig::load(p)?),
        None => Ok(ProtocolConfig::default()),
    }
}

fn provenance(seed: u64, digest: &str) -> Vec<String> {
    vec![format!("lassornet {VERSION}"), format!("seed {seed}"), format!("config_digest {digest}")]
}

/// A closed downstream pipe (e.g. `| head`) is not an error.
fn write_result(r: io::Result<()>, what: &str) -> Result<(), CliError> {
    match r {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::Data(format!("{what}: {e}"))),
        _ => Ok(()),
    }
}

fn flush(mut w: Box<dyn Write>, what: &str) -> Result<(), CliError> {
    write_result(w.flush(), what)
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads as usize).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth { config, seed, out } => {
            let spec = match &config {
                Some(p) => SynthSpec::from_json_file(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
                None => SynthSpec::default(),
            };
            let digest = digest_json(&serde_json::to_value(&spec).expect("spec serializes"));
            let cohort = synth_cohort(&spec, seed)?;
            let mut buf = Vec::new();
            write_cohort(&mut buf, &cohort, &provenance(seed, &digest))?;
            let mut w = open_out(&out)?;
            write_result(w.write_all(&buf), "cohort")?;
            flush(w, "cohort")
        }
        Command::Train(fit) => fit_one(fit, Selection::Fixed, None),
        Command::Search { fit, trials } => fit_one(fit, Selection::Search, trials),
        Command::Evaluate {
            config,
            data,
            seed,
            repeats,
            out,
        } => {
            let cfg = load_config(&config)?;
            let raw = load_data(&data)?;
            let mut reports = Vec::new();
            for s in seed..seed + repeats {
                log::info!("split seed {s}");
                let run = run_protocol(&raw, &cfg, s)?;
                for r in run.reports() {
                    if let Some(e) = &r.error {
                        log::warn!("{} failed on seed {s}: {e}", r.method.label());
                    }
                    reports.push(r);
                }
            }
            let f = File::create(&out).map_err(|e| io_error(&out, e))?;
            let mut w = BufWriter::new(f);
            write_reports(&mut w, &reports)?;
            w.flush().map_err(|e| io_error(&out, e))?;
            Ok(())
        }
        Command::Predict { model, data, out } => {
            let saved = SavedModel::load(&model)?;
            let raw = load_data(&data)?;
            let rows = saved.predict(&raw)?;
            let mut comments = provenance(saved.seed, &saved.config_digest);
            comments.push(format!("model {} ({})", saved.method.label(), if saved.augmented { "+ZT" } else { "plain" }));
            let mut w = open_out(&out)?;
            write_result(write_predictions(&mut w, &rows, &comments), "predictions")?;
            flush(w, "predictions")
        }
        Command::Report { inputs, out } => {
            let mut reports = Vec::new();
            for p in &inputs {
                let f = File::open(p).map_err(|e| io_error(p, e))?;
                reports.extend(read_reports(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?);
            }
            let mut seeds: Vec<u64> = reports.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            seeds.dedup();
            let mut digests: Vec<&str> = reports.iter().map(|r| r.config_digest.as_str()).collect();
            digests.sort_unstable();
            digests.dedup();
            let mut w = open_out(&out)?;
            let header = format!(
                "# lassornet {VERSION}; seeds {:?}; config_digest {}\n",
                seeds,
                digests.join(",")
            );
            write_result(
                w.write_all(header.as_bytes()).and_then(|_| w.write_all(render_table(&reports).as_bytes())),
                "report",
            )?;
            flush(w, "report")
        }
    }
}

fn fit_one(args: FitArgs, selection: Selection, trials: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let raw = load_data(&args.data)?;
    let split = prepare_split(&raw, args.seed, cfg.normalization)?;
    let spec = MethodSpec {
        method: args.method,
        augmented: args.augmented,
        at_lambda_max: args.at_lambda_max,
    };
    let digest = cfg.digest();
    let fitted = fit_method(&split, &spec, &cfg, args.seed, selection)?;
    let report = score(&fitted, &split.test, args.seed, &digest)?;
    eprintln!(
        "{}: validation MSE {:.4}, test MAE_ICT {}, selected {}",
        spec.method.label(),
        fitted.validation_mse,
        report.mae_ict.map(|m| format!("{m:.3} h")).unwrap_or_else(|| "-".into()),
        report.n_selected
    );
    SavedModel::new(&fitted, &split.train, args.seed, &digest).save(&args.out)?;
    if let Some(p) = &args.report {
        let f = File::create(p).map_err(|e| io_error(p, e))?;
        let mut w = BufWriter::new(f);
        write_reports(&mut w, &[report])?;
        w.flush().map_err(|e| io_error(p, e))?;
    }
    if let Some(p) = &trials {
        let f = File::create(p).map_err(|e| io_error(p, e))?;
        let mut w = BufWriter::new(f);
        for c in provenance(args.seed, &digest) {
            writeln!(w, "# {c}").map_err(|e| io_error(p, e))?;
        }
        write_trial_log(&mut w, &fitted.trials).map_err(|e| CliError::Data(e.to_string()))?;
        w.flush().map_err(|e| io_error(p, e))?;
    }
    Ok(())
}
