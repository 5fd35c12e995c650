//! Command-line front end: train, evaluate, sweep, gradient-check, and
//! emit curve data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use irco::data::{self, Dataset};
use irco::harness::{self, config::resolve_data_path, ExperimentConfig};
use irco::model::{self, ModelParams};
use irco::problems::{self, ProblemKind};
use irco::{IrcoError, Result};

#[derive(Parser)]
#[command(
    name = "irco",
    version,
    about = "Trains and evaluates scoring models for threshold-based rate metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured method once and write model, history, and
    /// summary files.
    Train {
        /// Experiment config JSON.
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory (created if absent).
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a dataset under a chosen metric.
    Eval {
        /// Model checkpoint JSON.
        #[arg(short, long)]
        model: PathBuf,
        /// Dataset file; .csv extension selects the CSV loader, anything
        /// else the LIBSVM loader.
        #[arg(short, long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        metric: MetricArg,
        /// Rate budget or recall floor, metric-dependent.
        #[arg(long)]
        beta: Option<f64>,
        /// Cutoff for the top-k metric.
        #[arg(long)]
        k: Option<usize>,
        /// Grid resolution for partial-area metrics.
        #[arg(long, default_value_t = 200)]
        grid_m: usize,
        /// Per-group coverage floor.
        #[arg(long)]
        floor: Option<f64>,
        /// Number of groups for the coverage metric.
        #[arg(long)]
        num_groups: Option<usize>,
    },
    /// Run the full multi-trial experiment with grid search and write the
    /// aggregate report.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        /// Report JSON path.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check model and implicit gradients against finite differences; exits
    /// nonzero when the worst relative error exceeds 1e-3.
    Gradcheck {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Write ROC and precision-recall curve CSVs for a model on a dataset.
    Curves {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        data: PathBuf,
        /// Output directory for roc.csv and pr.csv.
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    FnrAtFpr,
    PrecAtRecall,
    PrecAtK,
    PaucRoc,
    PaucPr,
    CoverageFloor,
}

const GRADCHECK_GATE: f64 = 1e-3;

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &log::Record) {
        if self.enabled(record.metadata()) {
            eprintln!("[{}] {}", record.level().to_string().to_lowercase(), record.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

fn init_logger() {
    let level = match std::env::var("IRCO_LOG").as_deref() {
        Ok("error") => log::LevelFilter::Error,
        Ok("warn") => log::LevelFilter::Warn,
        Ok("debug") => log::LevelFilter::Debug,
        Ok("trace") => log::LevelFilter::Trace,
        _ => log::LevelFilter::Info,
    };
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(level);
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let resolved = resolve_data_path(path);
    if resolved.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        data::load_csv_path(&resolved)
    } else {
        data::load_libsvm_path(&resolved)
    }
}

fn load_model(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path)?;
    ModelParams::from_json_str(&text)
}

fn require<T: Copy>(value: Option<T>, flag: &str, metric: &str) -> Result<T> {
    value.ok_or_else(|| IrcoError::Config(format!("metric {metric} requires --{flag}")))
}

fn problem_kind_for(
    metric: MetricArg,
    beta: Option<f64>,
    k: Option<usize>,
    grid_m: usize,
    floor: Option<f64>,
    num_groups: Option<usize>,
) -> Result<ProblemKind> {
    Ok(match metric {
        MetricArg::FnrAtFpr => ProblemKind::FnrAtFpr {
            beta: require(beta, "beta", "fnr_at_fpr")?,
        },
        MetricArg::PrecAtRecall => ProblemKind::PrecAtRecall {
            beta: require(beta, "beta", "prec_at_recall")?,
        },
        MetricArg::PrecAtK => ProblemKind::PrecAtK {
            k: require(k, "k", "prec_at_k")?,
        },
        MetricArg::PaucRoc => ProblemKind::PaucRoc {
            beta: require(beta, "beta", "pauc_roc")?,
            grid_m,
        },
        MetricArg::PaucPr => ProblemKind::PaucPr {
            beta: require(beta, "beta", "pauc_pr")?,
            grid_m,
        },
        MetricArg::CoverageFloor => ProblemKind::GroupCoverageFloor {
            num_groups: require(num_groups, "num-groups", "coverage_floor")?,
            floor: require(floor, "floor", "coverage_floor")?,
        },
    })
}

fn cmd_train(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_path(config)?;
    let run = harness::run_single(&cfg)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("model.json"), run.output.params.to_json()?)?;
    std::fs::write(out.join("history.csv"), run.output.history.to_csv())?;
    let spec = cfg.problem.build()?;
    let summary = serde_json::json!({
        "metric": spec.metric_name(),
        "higher_is_better": spec.metric_higher_is_better(),
        "val_metric": run.val_metric,
        "test_metric": run.test_metric,
        "lambdas": run.output.thresholds.lambdas,
        "slacks": run.output.thresholds.slacks,
    });
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "{}: validation {:.6} ({:.2}%), test {:.6} ({:.2}%)",
        spec.metric_name(),
        run.val_metric,
        run.val_metric * 100.0,
        run.test_metric,
        run.test_metric * 100.0
    );
    println!("artifacts written to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    model: &Path,
    data_path: &Path,
    metric: MetricArg,
    beta: Option<f64>,
    k: Option<usize>,
    grid_m: usize,
    floor: Option<f64>,
    num_groups: Option<usize>,
) -> Result<()> {
    let params = load_model(model)?;
    let dataset = load_dataset(data_path)?;
    let kind = problem_kind_for(metric, beta, k, grid_m, floor, num_groups)?;
    let mut spec = kind.build()?;
    spec.set_count_reference(dataset.len());
    let scores = model::forward(&params, &dataset.features)?;
    let value = problems::eval_metric(&spec, &scores, &dataset.labels, dataset.groups.as_deref())?;
    println!("{}: {:.6} ({:.2}%)", spec.metric_name(), value, value * 100.0);
    Ok(())
}

fn cmd_sweep(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_path(config)?;
    let report = harness::run_experiment(&cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, report.to_json()?)?;
    println!(
        "{} over {} trials: mean {:.6} ({:.2}%), std {:.6} ({:.2}%)",
        report.metric,
        report.trials.len(),
        report.mean,
        report.mean_percent,
        report.std_dev,
        report.std_dev_percent
    );
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_gradcheck(config: &Path) -> Result<bool> {
    let cfg = ExperimentConfig::from_path(config)?;
    let worst = harness::gradcheck(&cfg)?;
    let pass = worst <= GRADCHECK_GATE;
    println!(
        "max relative gradient error {worst:.3e} ({} gate {GRADCHECK_GATE:.0e})",
        if pass { "within" } else { "ABOVE" }
    );
    Ok(pass)
}

fn cmd_curves(model: &Path, data_path: &Path, out: &Path) -> Result<()> {
    let params = load_model(model)?;
    let dataset = load_dataset(data_path)?;
    harness::emit_curves(&params, &dataset, out)?;
    println!("curves written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, out } => cmd_train(&config, &out).map(|()| true),
        Command::Eval {
            model,
            data,
            metric,
            beta,
            k,
            grid_m,
            floor,
            num_groups,
        } => cmd_eval(&model, &data, metric, beta, k, grid_m, floor, num_groups).map(|()| true),
        Command::Sweep { config, out } => cmd_sweep(&config, &out).map(|()| true),
        Command::Gradcheck { config } => cmd_gradcheck(&config),
        Command::Curves { model, data, out } => cmd_curves(&model, &data, &out).map(|()| true),
    }
}

fn main() -> ExitCode {
    init_logger();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
