//! Command-line front end.
//!
//! Every subcommand also reads `--config FILE`, a file of `key=value` lines
//! whose keys are long flag names. Precedence is flags, then file, then
//! built-in defaults. Exit codes: 0 success, 2 bad input, 3 numerical
//! failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::bench::{self, BenchConfig, BENCH_HEADER};
use crate::dataio::{self, parse_key_values, FeatureMatrix};
use crate::error::{Error, Result};
use crate::pipeline::{self, PipelineConfig, TrainedModel};
use crate::retrieval::{self, metrics_csv};
use crate::trainer::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "ascmh", version, about = "Supervised cross-modal hashing: train, encode, query, evaluate")]
#[command(args_override_self = true)]
pub struct Cli {
    /// key=value file of flag defaults (keys are long flag names)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic two-modality dataset (x1.amx, x2.amx, labels.amx)
    Synth(SynthArgs),
    /// Kernelize, train and fit hash functions; writes a model archive
    Train(TrainArgs),
    /// Hash raw features of one modality into an ABC1 code file
    Encode(EncodeArgs),
    /// Rank a code database against freshly encoded query rows
    Query(QueryArgs),
    /// mAP and top-N precision as CSV on standard output
    Eval(EvalArgs),
    /// Time training sweeps on synthetic data of increasing size
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub c: usize,
    #[arg(long, default_value_t = 32)]
    pub d1: usize,
    #[arg(long, default_value_t = 16)]
    pub d2: usize,
    /// Per-coordinate standard deviation of the Gaussian noise
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Modality-1 features (AMX1 or CSV, one row per instance)
    #[arg(long)]
    pub x1: PathBuf,
    /// Modality-2 features
    #[arg(long)]
    pub x2: PathBuf,
    /// Binary c x n label matrix
    #[arg(long)]
    pub labels: PathBuf,
    /// Output model archive
    #[arg(long, default_value = "model.amh")]
    pub out: PathBuf,
    /// Code length r
    #[arg(long, default_value_t = 32)]
    pub bits: usize,
    /// Weight of the quantization term
    #[arg(long, default_value_t = 0.5)]
    pub omega: f64,
    /// Reconstruction weight of modality 1
    #[arg(long, default_value_t = 0.5)]
    pub lambda1: f64,
    /// Reconstruction weight of modality 2
    #[arg(long, default_value_t = 0.5)]
    pub lambda2: f64,
    /// Anchors for modality 1
    #[arg(long, default_value_t = 500)]
    pub k1: usize,
    /// Anchors for modality 2
    #[arg(long, default_value_t = 1000)]
    pub k2: usize,
    /// Ridge weight of the hash functions
    #[arg(long, default_value_t = 1.0)]
    pub lambda_h: f64,
    #[arg(long, default_value_t = 30)]
    pub max_iters: usize,
    /// Relative objective decrease below which training stops
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Rows sampled for the kernel width estimate
    #[arg(long, default_value_t = 2000)]
    pub width_sample_cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Raw features to hash
    #[arg(long)]
    pub x: PathBuf,
    /// 1 or 2
    #[arg(long)]
    pub modality: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Raw query features, one row per query
    #[arg(long)]
    pub x: PathBuf,
    /// Modality of the query rows
    #[arg(long)]
    pub modality: usize,
    /// Database code file
    #[arg(long)]
    pub db: PathBuf,
    /// Results per query
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub query_codes: PathBuf,
    #[arg(long)]
    pub db_codes: PathBuf,
    #[arg(long)]
    pub query_labels: PathBuf,
    #[arg(long)]
    pub db_labels: PathBuf,
    /// Task name written to the CSV (e.g. i2t, t2i)
    #[arg(long, default_value = "i2t")]
    pub task: String,
    /// mAP cutoff; 0 ranks the whole database
    #[arg(long, default_value_t = 0)]
    pub cutoff: usize,
    /// Comma-separated top-N points, e.g. 50,100,200
    #[arg(long, value_delimiter = ',')]
    pub topn: Vec<usize>,
    /// Count queries with no relevant item as AP = 0 instead of skipping them
    #[arg(long)]
    pub include_empty: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "2000,4000,8000,16000")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub bits: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub k1: usize,
    #[arg(long, default_value_t = 1000)]
    pub k2: usize,
    #[arg(long, default_value_t = 10)]
    pub c: usize,
    #[arg(long, default_value_t = 32)]
    pub d1: usize,
    #[arg(long, default_value_t = 16)]
    pub d2: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Timed sweeps per cell; the fastest is reported
    #[arg(long, default_value_t = 3)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Splice config-file entries in front of the subcommand's own flags, so
/// that explicit flags (parsed later) override them.
fn apply_config_file(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config: Option<PathBuf> = None;
    let mut sub_at: Option<usize> = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(path) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
        } else if sub_at.is_none() && !a.starts_with('-') {
            sub_at = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(sub_at)) = (config, sub_at) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let entries = parse_key_values(&text)?;

    let sub_name = args[sub_at].to_string_lossy().into_owned();
    let root = Cli::command();
    let sub = root
        .find_subcommand(&sub_name)
        .ok_or_else(|| Error::Validation(format!("unknown command {sub_name:?}")))?;
    let given = |key: &str| {
        args[sub_at + 1..].iter().any(|a| {
            let a = a.to_string_lossy();
            a == format!("--{key}") || a.starts_with(&format!("--{key}="))
        })
    };
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            return Err(Error::Validation("config files cannot nest --config".into()));
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| {
                Error::Validation(format!("{}: unknown key {key:?} for {sub_name}", path.display()))
            })?;
        // list flags accumulate, so the command line has to replace them here
        if given(&key) {
            continue;
        }
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        } else {
            match value.as_str() {
                "true" => injected.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(Error::Validation(format!(
                        "{}: {key} expects true or false, got {other:?}",
                        path.display()
                    )))
                }
            }
        }
    }
    let mut out = args[..=sub_at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub_at + 1..]);
    Ok(out)
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match apply_config_file(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    match run(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

pub fn run(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a, stdout),
        Command::Encode(a) => cmd_encode(&a),
        Command::Query(a) => cmd_query(&a, stdout),
        Command::Eval(a) => cmd_eval(&a, stdout),
        Command::Bench(a) => cmd_bench(&a, stdout, stderr),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let data = dataio::generate_synthetic(a.n, a.c, a.d1, a.d2, a.noise, a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    dataio::write_matrix(&data.x1, a.out.join("x1.amx"))?;
    dataio::write_matrix(&data.x2, a.out.join("x2.amx"))?;
    dataio::write_labels(&data.labels, a.out.join("labels.amx"))?;
    Ok(())
}

fn read_features(path: &Path, modality: u8) -> Result<FeatureMatrix> {
    let m = dataio::read_matrix(path)?;
    let dtype = m.dtype();
    Ok(FeatureMatrix::new(m.into_values(), modality)?.with_dtype(dtype))
}

pub fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    // all inputs are validated before any training work starts
    let x1 = read_features(&a.x1, 1)?;
    let x2 = read_features(&a.x2, 2)?;
    let labels = dataio::read_labels(&a.labels)?;
    let cfg = PipelineConfig {
        train: TrainConfig {
            bits: a.bits,
            omega: a.omega,
            lambdas: vec![a.lambda1, a.lambda2],
            max_iters: a.max_iters,
            rel_tol: a.tol,
            seed: a.seed,
        },
        anchors: vec![a.k1, a.k2],
        lambda_h: a.lambda_h,
        width_sample_cap: a.width_sample_cap,
    };
    for (t, (x, &k)) in [&x1, &x2].iter().zip(&cfg.anchors).enumerate() {
        if k == 0 || k > x.n() {
            return Err(Error::Validation(format!(
                "--k{} {k} must be within 1..={} (training rows)",
                t + 1,
                x.n()
            )));
        }
    }
    let model = pipeline::fit(&[x1.values(), x2.values()], &labels, &cfg)?;
    dataio::save_model(&model.to_archive(), &a.out)?;
    let mut text = String::new();
    for (i, v) in model.report.objective_history.iter().enumerate() {
        text.push_str(&format!("sweep {:>3}  objective {v:.10e}\n", i + 1));
    }
    text.push_str(&format!(
        "final objective: {:?}\niterations: {}\nconverged: {}\nmodel: {}\n",
        model.report.objective_history.last().copied().unwrap_or(f64::NAN),
        model.report.iterations_run,
        model.report.converged,
        a.out.display()
    ));
    emit(stdout, &text)
}

fn load(path: &Path) -> Result<TrainedModel> {
    TrainedModel::from_archive(&dataio::load_model(path)?)
}

pub fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let model = load(&a.model)?;
    let x = dataio::read_matrix(&a.x)?;
    let codes = model.encode(x.values(), a.modality)?;
    retrieval::write_codes(&codes, &a.out)
}

pub fn cmd_query(a: &QueryArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load(&a.model)?;
    let x = dataio::read_matrix(&a.x)?;
    let queries = model.encode(x.values(), a.modality)?;
    let db = retrieval::read_codes(&a.db)?;
    if db.bits() != queries.bits() {
        return Err(Error::Validation(format!(
            "database codes have {} bits, model produces {}",
            db.bits(),
            queries.bits()
        )));
    }
    let mut text = String::from("query,rank,index,distance\n");
    for q in 0..queries.len() {
        let ranked = retrieval::rank_by_hamming(queries.code(q), &db)?;
        for (rank, &idx) in ranked.iter().take(a.top).enumerate() {
            let d = queries.hamming(q, &db, idx)?;
            text.push_str(&format!("{q},{},{idx},{d}\n", rank + 1));
        }
    }
    emit(stdout, &text)
}

pub fn cmd_eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let queries = retrieval::read_codes(&a.query_codes)?;
    let db = retrieval::read_codes(&a.db_codes)?;
    if queries.bits() != db.bits() {
        return Err(Error::Validation(format!(
            "code length mismatch: queries have {} bits, database has {}",
            queries.bits(),
            db.bits()
        )));
    }
    let ql = dataio::read_labels(&a.query_labels)?;
    let dl = dataio::read_labels(&a.db_labels)?;
    let cutoff = (a.cutoff > 0).then_some(a.cutoff);
    let scores = pipeline::score(&queries, &db, &ql, &dl, cutoff, &a.topn, a.include_empty)?;
    emit(stdout, &metrics_csv(&scores.rows(&a.task, db.bits())))
}

pub fn cmd_bench(a: &BenchArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let cfg = BenchConfig {
        sizes: a.sizes.clone(),
        bits: a.bits.clone(),
        anchors: vec![a.k1, a.k2],
        classes: a.c,
        dims: [a.d1, a.d2],
        noise: a.noise,
        sweeps: a.sweeps,
        seed: a.seed,
    };
    let result = bench::run(&cfg).map_err(|e| match e {
        Error::Validation(m) | Error::Format(m) => Error::Validation(m),
        Error::Numerical(m) | Error::Degenerate(m) => Error::Numerical(m),
        other => Error::Numerical(other.to_string()),
    })?;
    let mut text = String::from(BENCH_HEADER);
    text.push('\n');
    for row in &result.rows {
        text.push_str(&row.csv());
        text.push('\n');
    }
    emit(stdout, &text)?;
    for (bits, slope) in &result.slopes {
        let _ = writeln!(stderr, "log-log slope (bits={bits}): {slope:.4}");
    }
    Ok(())
}
