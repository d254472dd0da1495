use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gsoftmax::analysis::{analyze_rows, read_feature_csv, FeatureRow, ImpostorMode, StdDivisor};
use gsoftmax::experiment::{self, ExperimentConfig};
use gsoftmax::gradcheck::{run_gradcheck, GradcheckReport};
use gsoftmax::metrics::{evaluate_multilabel, read_predictions_csv, ZeroPolicy};
use gsoftmax::schedule::{Schedule, ScheduleSpec};
use gsoftmax::{Error, ErrorKind, Result};

/// G-softmax training, analysis and gradient checking.
#[derive(Debug, Parser)]
#[command(name = "gsoftmax", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Train every configured loss mode and seed, then analyse the results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the one in the config.
        #[arg(long, env = "GSOFTMAX_OUT")]
        out: Option<PathBuf>,
    },
    /// Compactness/separability report for a feature dump (CSV or JSON).
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Impostors::Pooled)]
        impostors: Impostors,
        #[arg(long, value_enum, default_value_t = Divisor::Unbiased)]
        divisor: Divisor,
        /// Write report.json and report.csv here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// mAP and precision/recall/F1 from an item_id,class_id,score,label CSV.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t = Zero::Zero)]
        zero_prediction: Zero,
    },
    /// Print `epoch,rate` for every epoch of a schedule.
    SchedulePreview {
        #[arg(long)]
        config: PathBuf,
        /// Number of epochs; required for constant schedules.
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Impostors {
    Pooled,
    PerClass,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Divisor {
    Unbiased,
    Population,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Zero {
    Zero,
    Skip,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gradcheck { trials, seed, format } => gradcheck(trials, seed, format),
        Command::Run { config, out } => run(&config, out).map(|()| ExitCode::SUCCESS),
        Command::Analyze { input, impostors, divisor, out, format } => {
            analyze(&input, impostors, divisor, out.as_deref(), format).map(|()| ExitCode::SUCCESS)
        }
        Command::Metrics { input, threshold, zero_prediction } => {
            metrics(&input, threshold, zero_prediction).map(|()| ExitCode::SUCCESS)
        }
        Command::SchedulePreview { config, epochs } => {
            schedule_preview(&config, epochs).map(|()| ExitCode::SUCCESS)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, value)?;
    writeln!(stdout).map_err(|e| Error::io("<stdout>", e))
}

fn gradcheck(trials: usize, seed: u64, format: Format) -> Result<ExitCode> {
    if trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let report = run_gradcheck(trials, seed)?;
    match format {
        Format::Json => print_json(&report)?,
        Format::Csv => print_gradcheck_csv(&report)?,
    }
    if report.passed() {
        return Ok(ExitCode::SUCCESS);
    }
    for b in report.failures() {
        match &b.worst {
            Some(w) => eprintln!(
                "gradcheck: {} max relative error {:.3e} > {:.0e} at seed {} index {} (analytic {}, numeric {})",
                b.name, b.max_rel_error, report.tolerance, w.seed, w.index, w.analytic, w.numeric
            ),
            None => eprintln!("gradcheck: {} failed", b.name),
        }
    }
    if !report.zero_lambda_distribution_grads_vanish {
        eprintln!("gradcheck: distribution gradients are not zero at lambda = 0");
    }
    Ok(ExitCode::from(ErrorKind::Numeric.exit_code() as u8))
}

fn print_gradcheck_csv(report: &GradcheckReport) -> Result<()> {
    let mut out = io::stdout().lock();
    let mut w = || -> io::Result<()> {
        writeln!(out, "block,checked,max_rel_error,passed,worst_seed,worst_index")?;
        for b in &report.blocks {
            let (seed, index) = b
                .worst
                .map_or((String::new(), String::new()), |w| (w.seed.to_string(), w.index.to_string()));
            writeln!(out, "{},{},{:e},{},{seed},{index}", b.name, b.checked, b.max_rel_error, b.passed())?;
        }
        Ok(())
    };
    w().map_err(|e| Error::io("<stdout>", e))
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    let summary = experiment::run(&cfg, &dir)?;
    for a in &summary.aggregates {
        let acc = a.mean_test_accuracy.map_or("-".to_string(), |v| format!("{v:.4}"));
        eprintln!(
            "{:<20} accuracy {acc}  mAP {:.4}  ratio {:.4}",
            a.mode.name(),
            a.mean_test_map,
            a.mean_ratio
        );
    }
    println!("{}", dir.join("summary.json").display());
    Ok(())
}

fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let text = read(path)?;
    if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    } else {
        read_feature_csv(text.as_bytes())
    }
}

fn analyze(input: &Path, impostors: Impostors, divisor: Divisor, out: Option<&Path>, format: Format) -> Result<()> {
    let mode = match impostors {
        Impostors::Pooled => ImpostorMode::Pooled,
        Impostors::PerClass => ImpostorMode::PerClass,
    };
    let divisor = match divisor {
        Divisor::Unbiased => StdDivisor::Unbiased,
        Divisor::Population => StdDivisor::Population,
    };
    let report = analyze_rows(&read_features(input)?, mode, divisor)?;
    match (out, format) {
        (Some(dir), _) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let json = dir.join("report.json");
            let text = serde_json::to_string_pretty(&report)? + "\n";
            fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
            let csv = dir.join("report.csv");
            report.write_csv(fs::File::create(&csv).map_err(|e| Error::io(&csv, e))?)
        }
        (None, Format::Json) => print_json(&report),
        (None, Format::Csv) => report.write_csv(io::stdout().lock()),
    }
}

fn metrics(input: &Path, threshold: f64, zero: Zero) -> Result<()> {
    let table = read_predictions_csv(open(input)?)?;
    let policy = match zero {
        Zero::Zero => ZeroPolicy::Zero,
        Zero::Skip => ZeroPolicy::Skip,
    };
    print_json(&evaluate_multilabel(&table.scores, &table.labels, threshold, policy)?)
}

fn schedule_preview(config: &Path, epochs: Option<usize>) -> Result<()> {
    let text = read(config)?;
    let schedule = match serde_json::from_str::<Schedule>(&text) {
        Ok(s) => s,
        Err(tagged) => match serde_json::from_str::<ScheduleSpec>(&text) {
            Ok(spec) => Schedule::Malleable(spec),
            Err(_) => return Err(tagged.into()),
        },
    };
    schedule.validate()?;
    let last = match (epochs, schedule.max_epoch()) {
        (Some(n), Some(max)) if n > max => {
            return Err(Error::Config(format!("--epochs {n} exceeds the schedule's {max} epochs")))
        }
        (Some(n), _) => n,
        (None, Some(max)) => max,
        (None, None) => return Err(Error::Config("constant schedules need --epochs".into())),
    };
    let mut out = io::stdout().lock();
    let mut body = String::from("epoch,rate\n");
    for epoch in 1..=last {
        body.push_str(&format!("{epoch},{:e}\n", schedule.rate_at(epoch)?));
    }
    out.write_all(body.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}
