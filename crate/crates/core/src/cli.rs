//! Command-line frontend.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{default_tasks, load_budget, load_device, load_tasks};
use crate::data::{generate_dataset, read_records, write_records};
use crate::error::{Error, Result};
use crate::lottery::PartitionMode;
use crate::metrics::{build_report, build_rows, parse_csv, MetricRow, ReportFormat};
use crate::model::{load, save, TrainHyper};
use crate::oracle::DeviceSpec;
use crate::space::TaskSpec;
use crate::tuner::{
    compare_strategies, pretrain, source_replay, thread_count, tune_run, Experiment, Strategy, StrategyKind,
    TuneBudget, TuneReport,
};

#[derive(Parser, Debug)]
#[command(name = "moses-lab", version, about = "Cross-device cost-model transfer laboratory")]
pub struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Measure uniformly sampled configurations on one device.
    GenDataset(GenDatasetArgs),
    /// Train the cost model offline on a record file.
    Pretrain(PretrainArgs),
    /// Tune every task with one strategy.
    Tune(TuneArgs),
    /// Run several strategies over several seeds and score them.
    Compare(CompareArgs),
    /// Render metric rows from reports or metric CSVs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub device: PathBuf,
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    #[arg(long, default_value_t = 6000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct LotteryFlags {
    /// Transferable fraction of parameters (ratio mode).
    #[arg(long, conflicts_with = "threshold")]
    pub ratio: Option<f64>,
    /// Cut-off on max-normalized scores (threshold mode).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Drop the adversarial invariance term.
    #[arg(long)]
    pub no_adversarial: bool,
    /// TOML budget file; command-line flags override it.
    #[arg(long)]
    pub budget: Option<PathBuf>,
}

impl LotteryFlags {
    fn mode(&self) -> Option<PartitionMode> {
        match (self.ratio, self.threshold) {
            (Some(r), _) => Some(PartitionMode::Ratio(r)),
            (None, Some(t)) => Some(PartitionMode::Threshold(t)),
            (None, None) => None,
        }
    }

    fn budget(&self, trials: Option<usize>) -> Result<TuneBudget> {
        let mut b = match &self.budget {
            Some(p) => load_budget(p)?,
            None => TuneBudget::default(),
        };
        if let Some(t) = trials {
            b.trials_per_task = t;
        }
        if let Some(m) = self.mode() {
            b.partition = m;
        }
        if self.no_adversarial {
            b.adversary = false;
        }
        check_mode(b.partition)?;
        b.validate()?;
        Ok(b)
    }
}

fn check_mode(mode: PartitionMode) -> Result<()> {
    match mode {
        PartitionMode::Ratio(r) if !(r > 0.0 && r <= 1.0) => Err(Error::InvalidRatio(r)),
        PartitionMode::Threshold(t) if !t.is_finite() => Err(Error::Config(format!("threshold {t} is not finite"))),
        _ => Ok(()),
    }
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Target device file.
    #[arg(long)]
    pub device: PathBuf,
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    #[arg(long, default_value = "moses")]
    pub strategy: String,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
    /// Source device the model was pretrained on (recorded in the report).
    #[arg(long)]
    pub source_device: Option<PathBuf>,
    /// Source records replayed by the adversary.
    #[arg(long)]
    pub source_dataset: Option<PathBuf>,
    #[command(flatten)]
    pub lottery: LotteryFlags,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub source_device: PathBuf,
    #[arg(long)]
    pub target_device: PathBuf,
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "raw,random-init,pretrain-only,vanilla-finetune,moses")]
    pub strategies: Vec<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Reuse a pretrained model instead of pretraining from scratch.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Reuse a source record file instead of generating one.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 6000)]
    pub samples: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Seed of source data generation and pretraining.
    #[arg(long, default_value_t = 0)]
    pub pretrain_seed: u64,
    #[command(flatten)]
    pub lottery: LotteryFlags,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Tune report JSON files or metric CSV files.
    #[arg(long = "in", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Strategy that anchors gains when reading tune reports.
    #[arg(long, default_value = "vanilla-finetune")]
    pub reference: String,
}

/// Parses `argv` and runs it: 0 on success, 1 on bad input, 2 on failure.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenDataset(a) => gen_dataset_cmd(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Tune(a) => tune_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn tasks_from(path: &Option<PathBuf>) -> Result<Vec<TaskSpec>> {
    path.as_deref().map_or_else(|| Ok(default_tasks()), load_tasks)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn print_echo<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).unwrap_or_default());
}

#[derive(Serialize)]
struct GenEcho<'a> {
    command: &'static str,
    device: &'a DeviceSpec,
    tasks: &'a [TaskSpec],
    samples_per_task: usize,
    seed: u64,
    records: usize,
    out: &'a Path,
}

fn gen_dataset_cmd(a: GenDatasetArgs) -> Result<()> {
    let device = load_device(&a.device)?;
    let tasks = tasks_from(&a.tasks)?;
    let store = generate_dataset(&device, &tasks, a.samples, a.seed)?;
    write_records(&store, &a.out)?;
    print_echo(&GenEcho {
        command: "gen-dataset",
        device: &device,
        tasks: &tasks,
        samples_per_task: a.samples,
        seed: a.seed,
        records: store.len(),
        out: &a.out,
    });
    Ok(())
}

#[derive(Serialize)]
struct PretrainEcho<'a> {
    command: &'static str,
    dataset: &'a Path,
    tasks: &'a [TaskSpec],
    hyper: &'a TrainHyper,
    epoch_losses: &'a [f64],
    out: &'a Path,
}

fn pretrain_cmd(a: PretrainArgs) -> Result<()> {
    let tasks = tasks_from(&a.tasks)?;
    let store = read_records(&a.dataset)?;
    store.validate_against(&tasks)?;
    let hyper = TrainHyper { learning_rate: a.lr, max_epochs: a.epochs, batch_size: a.batch_size, seed: a.seed, ..Default::default() };
    hyper.validate()?;
    let (params, log) = pretrain(&store, &tasks, &hyper)?;
    save(&params, &a.out)?;
    print_echo(&PretrainEcho {
        command: "pretrain",
        dataset: &a.dataset,
        tasks: &tasks,
        hyper: &hyper,
        epoch_losses: &log.epoch_losses,
        out: &a.out,
    });
    Ok(())
}

fn parse_strategy(text: &str, flags: &LotteryFlags) -> Result<Strategy> {
    let mut s: Strategy = text.parse()?;
    if s.kind == StrategyKind::Moses && s.partition.is_none() {
        s.partition = flags.mode();
    }
    if let Some(m) = s.partition {
        check_mode(m)?;
    }
    Ok(s)
}

fn tune_cmd(a: TuneArgs) -> Result<()> {
    let strategy = parse_strategy(&a.strategy, &a.lottery)?;
    if strategy.kind != StrategyKind::Moses && a.lottery.mode().is_some() {
        return Err(Error::Config(format!("--ratio/--threshold only apply to moses, not {}", strategy.kind)));
    }
    let budget = a.lottery.budget(a.trials)?;
    let target = load_device(&a.device)?;
    let source = a.source_device.as_deref().map_or_else(|| Ok(DeviceSpec::server()), load_device)?;
    let tasks = tasks_from(&a.tasks)?;
    let model = load(&a.model)?;
    let wants_replay = strategy.kind == StrategyKind::Moses && budget.adversary && budget.hyper.adversary_beta > 0.0;
    let replay = match (&a.source_dataset, wants_replay) {
        (Some(p), true) => Some(source_replay(&read_records(p)?, &tasks)?),
        (None, true) => {
            return Err(Error::Config(
                "moses with the adversary needs --source-dataset (or pass --no-adversarial)".into(),
            ))
        }
        _ => None,
    };
    let exp = Experiment {
        source_device: &source,
        target_device: &target,
        tasks: &tasks,
        budget: &budget,
        pretrained: Some(&model),
        replay: replay.as_ref(),
    };
    let report = tune_run(&exp, &strategy, a.seed)?;
    write_json(&a.report, &report)?;
    println!(
        "{}: end-to-end latency {:.4} ms, search cost {:.1} ms",
        report.strategy, report.end_to_end_latency_ms, report.search_cost_ms
    );
    Ok(())
}

#[derive(Serialize)]
struct CompareEcho<'a> {
    command: &'static str,
    source_device: &'a DeviceSpec,
    target_device: &'a DeviceSpec,
    tasks: &'a [TaskSpec],
    budget: &'a TuneBudget,
    strategies: Vec<String>,
    seeds: &'a [u64],
    source_samples_per_task: usize,
    pretrain_hyper: &'a TrainHyper,
    pretrain_epoch_losses: &'a [f64],
    model: Option<&'a Path>,
    dataset: Option<&'a Path>,
    summary: &'a [crate::tuner::StrategySummary],
}

fn file_label(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let strategies = a.strategies.iter().map(|s| parse_strategy(s.trim(), &a.lottery)).collect::<Result<Vec<_>>>()?;
    if a.seeds.is_empty() {
        return Err(Error::Config("--seeds must list at least one seed".into()));
    }
    let budget = a.lottery.budget(a.trials)?;
    let source = load_device(&a.source_device)?;
    let target = load_device(&a.target_device)?;
    let tasks = tasks_from(&a.tasks)?;
    let hyper = TrainHyper { max_epochs: a.epochs, seed: a.pretrain_seed, ..Default::default() };
    hyper.validate()?;

    let store = match &a.dataset {
        Some(p) => read_records(p)?,
        None => generate_dataset(&source, &tasks, a.samples, a.pretrain_seed)?,
    };
    store.validate_against(&tasks)?;
    let (model, losses) = match &a.model {
        Some(p) => (load(p)?, Vec::new()),
        None => {
            let (m, log) = pretrain(&store, &tasks, &hyper)?;
            (m, log.epoch_losses)
        }
    };
    let replay = source_replay(&store, &tasks)?;
    let exp = Experiment {
        source_device: &source,
        target_device: &target,
        tasks: &tasks,
        budget: &budget,
        pretrained: Some(&model),
        replay: Some(&replay),
    };
    let cmp = compare_strategies(&exp, &strategies, &a.seeds, thread_count())?;
    let target_measured = budget.trials_per_task * tasks.len();
    if store.len() < 10 * target_measured {
        log::warn!("source store has {} records, not much larger than {target_measured} target trials", store.len());
    }

    fs::create_dir_all(&a.out_dir)?;
    for r in &cmp.reports {
        write_json(&a.out_dir.join(format!("report_{}_seed{}.json", file_label(&r.strategy), r.seed)), r)?;
    }
    fs::write(a.out_dir.join("metrics.csv"), build_report(&cmp.rows, ReportFormat::Csv)?)?;
    fs::write(a.out_dir.join("metrics.md"), build_report(&cmp.rows, ReportFormat::Markdown)?)?;
    let echo = CompareEcho {
        command: "compare",
        source_device: &source,
        target_device: &target,
        tasks: &tasks,
        budget: &budget,
        strategies: strategies.iter().map(Strategy::label).collect(),
        seeds: &a.seeds,
        source_samples_per_task: a.samples,
        pretrain_hyper: &hyper,
        pretrain_epoch_losses: &losses,
        model: a.model.as_deref(),
        dataset: a.dataset.as_deref(),
        summary: &cmp.summary,
    };
    write_json(&a.out_dir.join("comparison.json"), &echo)?;
    for s in &cmp.summary {
        println!(
            "{:<24} median latency {:>10.4} ms  cost {:>12.1} ms  CMAT {:>8.2}%",
            s.strategy, s.median_end_latency_ms, s.median_search_cost_ms, s.median_cmat_percent
        );
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let format: ReportFormat = a.format.parse()?;
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut reports: Vec<TuneReport> = Vec::new();
    for p in &a.inputs {
        let bytes = fs::read(p)?;
        match serde_json::from_slice::<TuneReport>(&bytes) {
            Ok(r) => reports.push(r),
            Err(json_err) => match parse_csv(&bytes[..]) {
                Ok(mut r) => rows.append(&mut r),
                Err(_) => {
                    return Err(Error::Config(format!("{}: neither a tune report nor a metrics CSV ({json_err})", p.display())))
                }
            },
        }
    }
    if !reports.is_empty() {
        rows.extend(build_rows(&reports, &a.reference)?);
    }
    fs::write(&a.out, build_report(&rows, format)?)?;
    Ok(())
}
