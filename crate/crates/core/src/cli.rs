//! The `ttd` command line. Reports go to stdout; diagnostics to stderr.
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::datasets::{
    contamination_check, load_dataset, load_texts, ContaminationConfig, DatasetFormat, LoadOptions,
};
use crate::error::{Error, Result};
use crate::evalbench::{
    bench_latency, bench_memory, emit_report_tables, estimate_emissions, evaluate, measure_load_rss, BenchConfig,
    ReportBundle,
};
use crate::model::{ToxicityModel, DEFAULT_THRESHOLD};
use crate::rng::SeedStream;
use crate::tokenizer::{train_vocab, Vocabulary};
use crate::trainer::{run_stages, BenchmarkInput, MetricRow, RunOptions, StageInput, StagePlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "TTD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ttd", version, about = "Compact transformer toxic-comment detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a byte-level BPE vocabulary from a corpus (one document per
    /// line, or the text column of a CSV/TSV dataset).
    BuildVocab {
        /// Corpus file.
        #[arg(long, value_parser = existing_file)]
        corpus: PathBuf,
        /// Target vocabulary size, including the 258 base tokens.
        #[arg(long)]
        size: usize,
        /// Output vocabulary file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a staged training plan; writes per-epoch metrics CSV to stdout.
    Train {
        /// TOML stage plan.
        #[arg(long, value_parser = existing_file)]
        plan: PathBuf,
        /// Directory that relative dataset paths in the plan resolve against.
        #[arg(long, value_parser = existing_dir)]
        data_dir: PathBuf,
        /// Final checkpoint; stage checkpoints are written beside it as `<out>.stage-NN-<name>`.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the plan's initialization seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Train even if a stage dataset overlaps a benchmark.
        #[arg(long)]
        skip_contamination_check: bool,
    },
    /// Accuracy and confusion matrix of a checkpoint on a labeled dataset.
    Eval {
        /// Checkpoint file.
        #[arg(long, value_parser = existing_file)]
        ckpt: PathBuf,
        /// Dataset file (CSV, or TSV by extension).
        #[arg(long, value_parser = existing_file)]
        dataset: PathBuf,
        /// Dataset layout.
        #[arg(long, value_enum)]
        format: DatasetFormat,
        /// Probabilities at or above this are toxic.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD, value_parser = unit_interval_f32)]
        threshold: f32,
        /// Directory for CSV reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify text: one `label<TAB>probability` line per input.
    Predict {
        /// Checkpoint file.
        #[arg(long, value_parser = existing_file)]
        ckpt: PathBuf,
        /// Text to classify.
        #[arg(long, conflicts_with = "stdin", required_unless_present = "stdin")]
        text: Option<String>,
        /// Classify each line of standard input.
        #[arg(long)]
        stdin: bool,
    },
    /// CPU latency (batch 1) and load-memory benchmark.
    Bench {
        /// Checkpoint file.
        #[arg(long, value_parser = existing_file)]
        ckpt: PathBuf,
        /// Comma-separated token lengths.
        #[arg(long, value_delimiter = ',', default_value = "128,512")]
        lengths: Vec<usize>,
        /// Timed runs per length (after 10 warmups).
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Directory for CSV reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact and near-duplicate overlap between a training and a test set; CSV to stdout.
    CheckContamination {
        /// Training dataset.
        #[arg(long, value_parser = existing_file)]
        train: PathBuf,
        /// Test or benchmark dataset.
        #[arg(long, value_parser = existing_file)]
        test: PathBuf,
        /// Near-duplicate Jaccard threshold over word 5-gram shingles.
        #[arg(long, default_value_t = 0.8, value_parser = unit_interval_f64)]
        jaccard: f64,
    },
    /// Training emissions: gross = power x hours x intensity, net after offset.
    EstimateCo2 {
        /// Average power draw in kW.
        #[arg(long)]
        power_kw: f64,
        /// Training time in hours.
        #[arg(long)]
        hours: f64,
        /// Grid carbon intensity in kgCO2eq/kWh.
        #[arg(long)]
        intensity: f64,
        /// Fraction of emissions offset.
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
    },
    /// Load a checkpoint in this fresh process and report resident-set growth.
    #[command(hide = true)]
    MemProbe {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn existing_file(s: &str) -> std::result::Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("no such file: {s}"))
    }
}

fn existing_dir(s: &str) -> std::result::Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_dir() {
        Ok(p)
    } else {
        Err(format!("no such directory: {s}"))
    }
}

fn unit_interval_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn unit_interval_f32(s: &str) -> std::result::Result<f32, String> {
    unit_interval_f64(s).map(|v| v as f32)
}

/// Standard streams for [`run`].
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = io.stdout.write_all(text.as_bytes());
            } else {
                let _ = io.stderr.write_all(text.as_bytes());
            }
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match run(cli, io) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Sizes the global worker pool from `TTD_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        // A pool that already exists keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli, io: &mut Io<'_>) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::BuildVocab { corpus, size, out } => build_vocab(&corpus, size, &out, io),
        Command::Train {
            plan,
            data_dir,
            out,
            seed,
            skip_contamination_check,
        } => train(&plan, &data_dir, &out, seed, skip_contamination_check, io),
        Command::Eval {
            ckpt,
            dataset,
            format,
            threshold,
            out,
        } => eval(&ckpt, &dataset, format, threshold, out.as_deref(), io),
        Command::Predict { ckpt, text, stdin } => predict(&ckpt, text, stdin, io),
        Command::Bench {
            ckpt,
            lengths,
            runs,
            out,
        } => bench(&ckpt, lengths, runs, out.as_deref(), io),
        Command::CheckContamination { train, test, jaccard } => check(&train, &test, jaccard, io),
        Command::EstimateCo2 {
            power_kw,
            hours,
            intensity,
            offset,
        } => {
            let e = estimate_emissions(power_kw, hours, intensity, offset)?;
            io.stdout.write_all(e.to_tsv().as_bytes()).map_err(out_err)
        }
        Command::MemProbe { ckpt } => {
            let (_model, report) = measure_load_rss(&ckpt)?;
            io.stdout.write_all(report.to_tsv().as_bytes()).map_err(out_err)
        }
    }
}

fn is_table(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("tsv"))
}

fn build_vocab(corpus: &Path, size: usize, out: &Path, io: &mut Io<'_>) -> Result<()> {
    let docs: Vec<String> = if is_table(corpus) {
        load_texts(corpus)?.into_iter().map(|r| r.text).collect()
    } else {
        let text = std::fs::read_to_string(corpus).map_err(|e| Error::io(corpus, e))?;
        text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect()
    };
    let vocab = train_vocab(&docs, size)?;
    vocab.save(out)?;
    writeln!(
        io.stdout,
        "documents\t{}\nvocab_size\t{}\nmerges\t{}",
        docs.len(),
        vocab.len(),
        vocab.merges().len()
    )
    .map_err(out_err)
}

fn train(
    plan_path: &Path,
    data_dir: &Path,
    out: &Path,
    seed: Option<u64>,
    skip_contamination_check: bool,
    io: &mut Io<'_>,
) -> Result<()> {
    let plan = StagePlan::load(plan_path)?;
    let opts = LoadOptions::default();
    let mut stages = Vec::with_capacity(plan.stages.len());
    for cfg in &plan.stages {
        let ds = load_dataset(data_dir.join(&cfg.dataset), cfg.format, &opts)?;
        write!(io.stderr, "stage `{}` dataset\n{}", cfg.name, ds.manifest()).map_err(out_err)?;
        stages.push(StageInput {
            config: cfg.clone(),
            examples: ds.examples,
        });
    }
    let mut benchmarks = Vec::with_capacity(plan.benchmarks.len());
    for b in &plan.benchmarks {
        let ds = load_dataset(data_dir.join(&b.dataset), b.format, &opts)?;
        write!(io.stderr, "benchmark `{}`\n{}", b.name, ds.manifest()).map_err(out_err)?;
        benchmarks.push(BenchmarkInput {
            name: b.name.clone(),
            examples: ds.examples,
        });
    }
    let vocab = match (&plan.vocab, plan.vocab_size) {
        (Some(path), _) => Vocabulary::load(data_dir.join(path))?,
        (None, Some(size)) => train_vocab(stages.iter().flat_map(|s| s.examples.iter().map(|e| e.text.as_str())), size)?,
        (None, None) => unreachable!("validated plan"),
    };
    let seed = seed.unwrap_or(plan.seed);
    let mut model = ToxicityModel::initialize(plan.model_config(), vocab, &SeedStream::new(seed))?;
    let options = RunOptions {
        skip_contamination_check,
        checkpoint_prefix: Some(out.to_path_buf()),
        ..Default::default()
    };
    writeln!(io.stdout, "{}", MetricRow::CSV_HEADER).map_err(out_err)?;
    let mut write_err = None;
    let summary = run_stages(&mut model, &stages, &benchmarks, &options, |row| {
        if let Err(e) = writeln!(io.stdout, "{}", row.to_csv_line()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(out_err(e));
    }
    model.save(out)?;
    for stage in &summary.stages {
        for r in &stage.eval {
            writeln!(
                io.stderr,
                "stage `{}` on `{}`: accuracy {:.4}, balanced {:.4} (n={})",
                stage.name, r.dataset, r.accuracy, r.balanced_accuracy, r.n_examples
            )
            .map_err(out_err)?;
        }
    }
    writeln!(io.stderr, "wrote {}", out.display()).map_err(out_err)
}

fn eval(
    ckpt: &Path,
    dataset: &Path,
    format: DatasetFormat,
    threshold: f32,
    out: Option<&Path>,
    io: &mut Io<'_>,
) -> Result<()> {
    let model = ToxicityModel::load(ckpt)?;
    let ds = load_dataset(dataset, format, &LoadOptions::default())?;
    write!(io.stderr, "{}", ds.manifest()).map_err(out_err)?;
    let report = evaluate(&model, &ds.source, &ds.examples, threshold)?;
    let rendered = emit_report_tables(&ReportBundle {
        model_name: "ttd".into(),
        param_count: model.param_count(),
        eval: vec![report],
        ..Default::default()
    })?;
    io.stdout.write_all(rendered.text.as_bytes()).map_err(out_err)?;
    if let Some(dir) = out {
        rendered.write_csv_dir(dir)?;
        std::fs::write(dir.join("rejects.csv"), ds.rejects_csv()?).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn predict(ckpt: &Path, text: Option<String>, stdin: bool, io: &mut Io<'_>) -> Result<()> {
    let model = ToxicityModel::load(ckpt)?;
    let inputs: Vec<String> = match (text, stdin) {
        (Some(t), false) => vec![t],
        (None, true) => {
            let mut lines = Vec::new();
            for line in io.stdin.lines() {
                lines.push(line.map_err(|e| Error::io("<stdin>", e))?);
            }
            lines
        }
        _ => unreachable!("clap enforces exactly one input source"),
    };
    for (i, t) in inputs.iter().enumerate() {
        let p = model.predict(t, DEFAULT_THRESHOLD).map_err(|e| match (e, stdin) {
            (Error::Validation(m), true) => Error::Validation(format!("line {}: {m}", i + 1)),
            (e, _) => e,
        })?;
        writeln!(io.stdout, "{}\t{:.6}", p.label, p.probability).map_err(out_err)?;
    }
    Ok(())
}

fn bench(ckpt: &Path, lengths: Vec<usize>, runs: usize, out: Option<&Path>, io: &mut Io<'_>) -> Result<()> {
    let model = ToxicityModel::load(ckpt)?;
    let config = BenchConfig {
        lengths,
        runs,
        ..Default::default()
    };
    let mut report = bench_latency(&model, &config)?;
    let memory = match std::env::current_exe() {
        Ok(exe) => match bench_memory(&exe, ckpt) {
            Ok(m) => Some(m),
            Err(e) => {
                writeln!(io.stderr, "memory probe unavailable: {e}").map_err(out_err)?;
                None
            }
        },
        Err(_) => None,
    };
    report.rss_delta_bytes = memory.as_ref().map(|m| m.rss_delta);
    let rendered = emit_report_tables(&ReportBundle {
        model_name: "ttd".into(),
        param_count: model.param_count(),
        bench: Some(report),
        memory,
        ..Default::default()
    })?;
    io.stdout.write_all(rendered.text.as_bytes()).map_err(out_err)?;
    if let Some(dir) = out {
        rendered.write_csv_dir(dir)?;
    }
    Ok(())
}

fn check(train: &Path, test: &Path, jaccard: f64, io: &mut Io<'_>) -> Result<()> {
    let a = load_texts(train)?;
    let b = load_texts(test)?;
    let config = ContaminationConfig {
        jaccard_threshold: jaccard,
        ..Default::default()
    };
    let report = contamination_check(&a, &b, &config);
    io.stdout.write_all(report.to_csv()?.as_bytes()).map_err(out_err)?;
    writeln!(
        io.stderr,
        "{} train x {} test: {} exact, {} near-duplicate pairs",
        a.len(),
        b.len(),
        report.exact_matches.len(),
        report.near_duplicates.len()
    )
    .map_err(out_err)
}
