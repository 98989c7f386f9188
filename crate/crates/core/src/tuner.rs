//! Tuning orchestration: offline pretraining, transfer, and per-task online
//! adaptation under each strategy.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::{plan_split, ControllerSettings, ControllerState, MeasurementPlan};
use crate::data::{encode_store, find_task, plan_epoch, RecordStore};
use crate::error::{Error, Result};
use crate::lottery::{partition, variant_decay, xi_scores, AdversaryState, ParamMask, PartitionMode};
use crate::metrics::{build_rows, median, MetricRow};
use crate::model::{
    apply_update, forward, init_random, loss_and_gradients, AdversaryInput, CostModelParams, RankingBatch,
    TrainHyper, UpdateMode, DEFAULT_DIMS,
};
use crate::oracle::{measure, DeviceSpec, MeasurementRecord};
use crate::search::{evolve, select_batch, ScoredCandidate, SearchParams};
use crate::space::{build_space, encode_features, Configuration, FeatureVector, Fnv1a, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    Raw,
    RandomInit,
    PretrainOnly,
    VanillaFinetune,
    Moses,
}

impl StrategyKind {
    pub fn searches(&self) -> bool {
        !matches!(self, StrategyKind::Raw)
    }

    pub fn updates_model(&self) -> bool {
        matches!(self, StrategyKind::RandomInit | StrategyKind::VanillaFinetune | StrategyKind::Moses)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Raw => "raw",
            StrategyKind::RandomInit => "random-init",
            StrategyKind::PretrainOnly => "pretrain-only",
            StrategyKind::VanillaFinetune => "vanilla-finetune",
            StrategyKind::Moses => "moses",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "raw" => StrategyKind::Raw,
            "random-init" | "randominit" => StrategyKind::RandomInit,
            "pretrain-only" | "pretrainonly" => StrategyKind::PretrainOnly,
            "vanilla-finetune" | "vanillafinetune" => StrategyKind::VanillaFinetune,
            "moses" => StrategyKind::Moses,
            other => return Err(Error::Config(format!("unknown strategy `{other}`"))),
        })
    }
}

/// A strategy plus the lottery settings that only matter for Moses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Overrides the budget's partition mode for this strategy.
    pub partition: Option<PartitionMode>,
}

impl Strategy {
    pub fn plain(kind: StrategyKind) -> Self {
        Strategy { kind, partition: None }
    }

    pub fn moses(mode: PartitionMode) -> Self {
        Strategy { kind: StrategyKind::Moses, partition: Some(mode) }
    }

    pub fn label(&self) -> String {
        match self.partition {
            Some(PartitionMode::Ratio(r)) if self.kind == StrategyKind::Moses => format!("moses:ratio={r}"),
            Some(PartitionMode::Threshold(t)) if self.kind == StrategyKind::Moses => format!("moses:threshold={t}"),
            _ => self.kind.to_string(),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// `kind` or `moses:ratio=R` / `moses:threshold=T`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').map_or((s, None), |(k, r)| (k, Some(r)));
        let kind: StrategyKind = kind.trim().parse()?;
        let partition = match rest {
            None => None,
            Some(spec) => {
                let (key, value) = spec
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("bad strategy option `{spec}`")))?;
                let v: f64 = value.trim().parse().map_err(|_| Error::Config(format!("bad number in `{spec}`")))?;
                match key.trim() {
                    "ratio" => Some(PartitionMode::Ratio(v)),
                    "threshold" => Some(PartitionMode::Threshold(v)),
                    other => return Err(Error::Config(format!("unknown strategy option `{other}`"))),
                }
            }
        };
        if partition.is_some() && kind != StrategyKind::Moses {
            return Err(Error::Config(format!("partition options only apply to moses, not `{kind}`")));
        }
        Ok(Strategy { kind, partition })
    }
}

pub const ONLINE_LEARNING_RATE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneBudget {
    pub trials_per_task: usize,
    pub controller: ControllerSettings,
    pub search: SearchParams,
    /// Online adaptation hyper-parameters; momentum is not used online.
    /// The default step size is larger than the pretraining one: each online
    /// batch holds about a dozen records and is visited for only a few steps.
    /// A partial table in a budget file overrides only the keys it names.
    #[serde(deserialize_with = "online_hyper")]
    pub hyper: TrainHyper,
    /// Gradient steps taken on each freshly measured batch.
    pub online_steps: usize,
    pub partition: PartitionMode,
    pub adversary: bool,
    /// Source rows replayed against each target batch by the adversary.
    pub adversary_rows: usize,
    pub adversary_learning_rate: f64,
}

fn online_hyper<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TrainHyper, D::Error> {
    use serde::de::Error as _;
    let patch = serde_json::Value::deserialize(d)?;
    let mut base = serde_json::to_value(TuneBudget::default().hyper).map_err(D::Error::custom)?;
    match (&mut base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => b.extend(p),
        _ => return Err(D::Error::custom("`hyper` must be a table")),
    }
    serde_json::from_value(base).map_err(D::Error::custom)
}

impl Default for TuneBudget {
    fn default() -> Self {
        TuneBudget {
            trials_per_task: 64,
            controller: ControllerSettings::default(),
            search: SearchParams::default(),
            hyper: TrainHyper { learning_rate: ONLINE_LEARNING_RATE, ..TrainHyper::default() },
            online_steps: 5,
            partition: PartitionMode::Ratio(0.5),
            adversary: true,
            adversary_rows: 32,
            adversary_learning_rate: 0.01,
        }
    }
}

impl TuneBudget {
    pub fn validate(&self) -> Result<()> {
        if self.trials_per_task < self.controller.num_batches {
            return Err(Error::BudgetInfeasible(format!(
                "{} trials per task cannot fill {} batches",
                self.trials_per_task, self.controller.num_batches
            )));
        }
        if self.online_steps == 0 {
            return Err(Error::Config("online_steps must be at least 1".into()));
        }
        if self.adversary && self.adversary_rows == 0 {
            return Err(Error::Config("adversary_rows must be positive".into()));
        }
        self.search.validate()?;
        self.hyper.validate()
    }
}

/// Everything the controller decided for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerTrace {
    pub plan: MeasurementPlan,
    pub batch_means: Vec<f64>,
    pub cv_trace: Vec<Option<f64>>,
    pub termination_batch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub best_config: Configuration,
    pub best_latency_ms: f64,
    pub wall_cost_ms: f64,
    pub records: Vec<MeasurementRecord>,
    pub controller: Option<ControllerTrace>,
    /// Best measured latency after each measured batch.
    pub best_so_far_ms: Vec<f64>,
    pub measured_trials: usize,
    pub prediction_only_trials: usize,
    pub unspent_trials: usize,
    /// Candidates ranked by the final model for the prediction-only trials.
    pub predicted: Vec<ScoredCandidate>,
}

impl TaskResult {
    fn from_records(task_id: &str, records: Vec<MeasurementRecord>) -> Self {
        let best = records
            .iter()
            .min_by(|a, b| a.latency_ms.total_cmp(&b.latency_ms))
            .expect("at least one record");
        TaskResult {
            task_id: task_id.to_string(),
            best_config: best.config.clone(),
            best_latency_ms: best.latency_ms,
            wall_cost_ms: records.iter().map(|r| r.wall_cost_ms).sum(),
            best_so_far_ms: Vec::new(),
            measured_trials: records.len(),
            prediction_only_trials: 0,
            unspent_trials: 0,
            predicted: Vec::new(),
            controller: None,
            records,
        }
    }
}

/// Everything needed to replay a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub source_device: DeviceSpec,
    pub target_device: DeviceSpec,
    pub tasks: Vec<TaskSpec>,
    pub budget: TuneBudget,
    pub strategy: Strategy,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub strategy: String,
    pub seed: u64,
    pub source_device_id: String,
    pub target_device_id: String,
    pub tasks: Vec<TaskResult>,
    /// Sum of per-task best latencies.
    pub end_to_end_latency_ms: f64,
    /// Sum of per-task measurement wall cost.
    pub search_cost_ms: f64,
    pub echo: RunEcho,
}

/// Per-epoch mean loss of a pretraining run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub epoch_losses: Vec<f64>,
    pub dropped_per_epoch: usize,
}

pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Fnv1a::new();
    h.write(&seed.to_le_bytes());
    for p in parts {
        h.write(p.as_bytes());
        h.write(&[0xff]);
    }
    h.finish()
}

/// Offline training on source-device records with momentum.
pub fn pretrain(store: &RecordStore, tasks: &[TaskSpec], hyper: &TrainHyper) -> Result<(CostModelParams, PretrainLog)> {
    pretrain_from(init_random(&DEFAULT_DIMS, hyper.seed)?, store, tasks, hyper)
}

pub fn pretrain_from(
    mut params: CostModelParams,
    store: &RecordStore,
    tasks: &[TaskSpec],
    hyper: &TrainHyper,
) -> Result<(CostModelParams, PretrainLog)> {
    hyper.validate()?;
    if store.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let feats = encode_store(store, tasks)?;
    let records = store.records();
    let mut log = PretrainLog::default();
    for epoch in 0..hyper.max_epochs {
        let plan = plan_epoch(store, hyper.batch_size, derive_seed(hyper.seed, &["epoch", &epoch.to_string()]));
        if plan.batches.is_empty() {
            return Err(Error::EmptyDataset);
        }
        log.dropped_per_epoch = plan.dropped;
        let mut total = 0.0;
        for (task_id, idx) in &plan.batches {
            let batch = RankingBatch {
                features: idx.iter().map(|&i| feats[i].clone()).collect(),
                labels: idx.iter().map(|&i| records[i].throughput_gflops).collect(),
                task_id: task_id.clone(),
            };
            let (loss, grads) = loss_and_gradients(&params, &batch, None, 0.0)?;
            apply_update(&mut params, &grads, None, hyper.learning_rate, UpdateMode::Momentum(hyper.momentum))?;
            total += loss;
        }
        let mean = total / plan.batches.len() as f64;
        log::info!("pretrain epoch {:>2}: loss {mean:.5}", epoch + 1);
        log.epoch_losses.push(mean);
    }
    Ok((params, log))
}

/// Source features per task, replayed by the adversary.
pub type SourceReplay = HashMap<String, Vec<FeatureVector>>;

pub fn source_replay(store: &RecordStore, tasks: &[TaskSpec]) -> Result<SourceReplay> {
    let feats = encode_store(store, tasks)?;
    let mut out: SourceReplay = HashMap::new();
    for (r, f) in store.records().iter().zip(feats) {
        out.entry(r.task_id.clone()).or_default().push(f);
    }
    Ok(out)
}

/// Mutable state a strategy carries from task to task within one run.
pub struct RunState {
    pub model: CostModelParams,
    pub adversary: AdversaryState,
    pub phase: u64,
    pub next_seq: u64,
    /// Replaces computed masks; used to check reductions to fine-tuning.
    pub forced_mask: Option<ParamMask>,
}

impl RunState {
    pub fn new(model: CostModelParams, adversary: AdversaryState) -> Self {
        RunState { model, adversary, phase: 0, next_seq: 0, forced_mask: None }
    }
}

/// Tunes one task on the target device, adapting `state.model` in place.
pub fn tune_task(
    strategy: &Strategy,
    state: &mut RunState,
    device: &DeviceSpec,
    task: &TaskSpec,
    budget: &TuneBudget,
    seed: u64,
    replay: Option<&SourceReplay>,
) -> Result<TaskResult> {
    if !strategy.kind.searches() {
        let mut rec = measure(device, task, &task.default_config(), seed);
        rec.seq = state.next_seq;
        state.next_seq += 1;
        let mut res = TaskResult::from_records(&task.id, vec![rec]);
        res.best_so_far_ms = vec![res.best_latency_ms];
        res.unspent_trials = budget.trials_per_task.saturating_sub(1);
        return Ok(res);
    }
    let plan = plan_split(budget.trials_per_task, budget.controller.train_fraction, budget.controller.num_batches)
        .map_err(|e| Error::BudgetInfeasible(e.to_string()))?;
    let space = build_space(task)?;
    let mode = strategy.partition.unwrap_or(budget.partition);
    if strategy.kind == StrategyKind::Moses && budget.adversary && state.adversary.enabled {
        let rows = replay
            .and_then(|r| r.get(&task.id))
            .filter(|rows| !rows.is_empty())
            .ok_or_else(|| Error::Config(format!("no source replay rows for task {}", task.id)))?;
        state.adversary.set_replay(rows.clone())?;
    }

    let mut controller = ControllerState::new(budget.controller.cv_threshold);
    let mut measured: HashSet<u64> = HashSet::new();
    let mut records: Vec<MeasurementRecord> = Vec::new();
    let mut best_so_far = Vec::new();
    let mut unspent = 0;

    for (b, &size) in plan.batch_sizes.iter().enumerate() {
        if controller.terminated {
            unspent += size;
            continue;
        }
        let search = SearchParams { seed: derive_seed(seed, &[&task.id, "search", &b.to_string()]), ..budget.search.clone() };
        let candidates = evolve(&state.model, &space, &search)?;
        let batch = select_batch(&candidates, &measured, size);
        unspent += size - batch.len();
        if batch.is_empty() {
            continue;
        }
        let mut batch_records = Vec::with_capacity(batch.len());
        for cand in &batch {
            let mut rec = measure(device, task, &cand.config, seed);
            rec.seq = state.next_seq;
            state.next_seq += 1;
            measured.insert(cand.config.canonical_hash());
            batch_records.push(rec);
        }
        records.extend(batch_records.iter().cloned());
        let best = records.iter().map(|r| r.latency_ms).fold(f64::INFINITY, f64::min);
        best_so_far.push(best);

        let mean_score = batch.iter().map(|c| c.score).sum::<f64>() / batch.len() as f64;
        controller.should_terminate(mean_score);

        if strategy.kind.updates_model() && batch_records.len() >= 2 {
            let rank_batch = RankingBatch {
                features: batch_records.iter().map(|r| encode_features(task, &r.config)).collect::<Result<_>>()?,
                labels: batch_records.iter().map(|r| r.throughput_gflops).collect(),
                task_id: task.id.clone(),
            };
            adapt(strategy.kind, mode, state, &rank_batch, budget)?;
        }
        state.phase += 1;
    }

    if records.is_empty() {
        return Err(Error::BudgetInfeasible(format!("no configuration of task {} could be measured", task.id)));
    }
    let predicted = if plan.prediction_only > 0 {
        let search = SearchParams { seed: derive_seed(seed, &[&task.id, "predict"]), ..budget.search.clone() };
        select_batch(&evolve(&state.model, &space, &search)?, &measured, plan.prediction_only)
    } else {
        Vec::new()
    };

    let mut res = TaskResult::from_records(&task.id, records);
    res.best_so_far_ms = best_so_far;
    res.prediction_only_trials = plan.prediction_only;
    res.unspent_trials = unspent;
    res.predicted = predicted;
    res.controller = Some(ControllerTrace {
        plan,
        batch_means: controller.batch_means,
        cv_trace: controller.cv_trace,
        termination_batch: controller.termination_batch,
    });
    Ok(res)
}

/// One online phase on a freshly measured batch.
fn adapt(kind: StrategyKind, mode: PartitionMode, state: &mut RunState, batch: &RankingBatch, budget: &TuneBudget) -> Result<()> {
    let hyper = &budget.hyper;
    match kind {
        StrategyKind::RandomInit | StrategyKind::VanillaFinetune => {
            for _ in 0..budget.online_steps {
                let (_, g) = loss_and_gradients(&state.model, batch, None, 0.0)?;
                apply_update(&mut state.model, &g, None, hyper.learning_rate, UpdateMode::Plain)?;
            }
        }
        StrategyKind::Moses => {
            let beta = hyper.adversary_beta;
            let use_adv = budget.adversary && state.adversary.enabled;
            let mut mask: Option<ParamMask> = None;
            for _ in 0..budget.online_steps {
                let source = if use_adv { state.adversary.sample_source(budget.adversary_rows) } else { Vec::new() };
                let adv_input =
                    use_adv.then(|| AdversaryInput { discriminator: &state.adversary.discriminator, source_features: &source });
                let (_, g) = loss_and_gradients(&state.model, batch, adv_input, beta)?;
                if use_adv {
                    let hs = forward(&state.model, &source)?.a2;
                    let ht = forward(&state.model, &batch.features)?.a2;
                    state.adversary.adversarial_term(&hs, &ht, beta)?;
                }
                let m = match (&state.forced_mask, &mask) {
                    (Some(forced), _) => forced.clone(),
                    (None, Some(m)) => m.clone(),
                    (None, None) => {
                        let xi = xi_scores(&state.model, &g, mode.needs_normalized())?;
                        partition(&xi, mode, state.phase)?
                    }
                };
                apply_update(&mut state.model, &g, Some(&m), hyper.learning_rate, UpdateMode::Plain)?;
                variant_decay(&mut state.model, &m, hyper.learning_rate, hyper.weight_decay)?;
                mask = Some(m);
            }
        }
        StrategyKind::Raw | StrategyKind::PretrainOnly => {}
    }
    Ok(())
}

/// Starting model of a strategy: the pretrained one, or a seeded random init.
pub fn initial_model(strategy: &Strategy, pretrained: Option<&CostModelParams>, seed: u64) -> Result<CostModelParams> {
    match strategy.kind {
        StrategyKind::RandomInit => init_random(&DEFAULT_DIMS, derive_seed(seed, &["random-init"])),
        _ => pretrained.cloned().ok_or_else(|| Error::Config(format!("{} needs a pretrained model", strategy.label()))),
    }
}

pub fn fresh_adversary(budget: &TuneBudget, hidden: usize, seed: u64) -> AdversaryState {
    if budget.adversary {
        AdversaryState::awaiting_replay(hidden, budget.adversary_learning_rate, derive_seed(seed, &["adversary"]))
    } else {
        AdversaryState::disabled(hidden)
    }
}

/// Shared inputs of a tuning experiment.
#[derive(Clone, Copy)]
pub struct Experiment<'a> {
    pub source_device: &'a DeviceSpec,
    pub target_device: &'a DeviceSpec,
    pub tasks: &'a [TaskSpec],
    pub budget: &'a TuneBudget,
    pub pretrained: Option<&'a CostModelParams>,
    pub replay: Option<&'a SourceReplay>,
}

/// Tunes every task in order with one strategy and seed.
pub fn tune_run(exp: &Experiment<'_>, strategy: &Strategy, seed: u64) -> Result<TuneReport> {
    let model = if strategy.kind.searches() { initial_model(strategy, exp.pretrained, seed)? } else { CostModelParams::zeros(&[1, 1, 1, 1])? };
    let adversary = fresh_adversary(exp.budget, model.dims()[2], seed);
    let mut state = RunState::new(model, adversary);
    tune_run_with(exp, strategy, seed, &mut state)
}

pub fn tune_run_with(exp: &Experiment<'_>, strategy: &Strategy, seed: u64, state: &mut RunState) -> Result<TuneReport> {
    exp.budget.validate()?;
    exp.target_device.validate()?;
    let mut results = Vec::with_capacity(exp.tasks.len());
    for task in exp.tasks {
        results.push(tune_task(strategy, state, exp.target_device, task, exp.budget, seed, exp.replay)?);
    }
    let end_to_end_latency_ms = results.iter().map(|r| r.best_latency_ms).sum();
    let search_cost_ms = results.iter().map(|r| r.wall_cost_ms).sum();
    Ok(TuneReport {
        strategy: strategy.label(),
        seed,
        source_device_id: exp.source_device.id.clone(),
        target_device_id: exp.target_device.id.clone(),
        tasks: results,
        end_to_end_latency_ms,
        search_cost_ms,
        echo: RunEcho {
            source_device: exp.source_device.clone(),
            target_device: exp.target_device.clone(),
            tasks: exp.tasks.to_vec(),
            budget: exp.budget.clone(),
            strategy: strategy.clone(),
            seed,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub median_search_cost_ms: f64,
    pub median_end_latency_ms: f64,
    pub median_gain: f64,
    pub median_reduction: f64,
    pub median_cmat_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reference: String,
    pub seeds: Vec<u64>,
    pub reports: Vec<TuneReport>,
    pub rows: Vec<MetricRow>,
    pub summary: Vec<StrategySummary>,
}

impl ComparisonReport {
    pub fn summary_for(&self, label: &str) -> Option<&StrategySummary> {
        self.summary.iter().find(|s| s.strategy == label)
    }

    pub fn report(&self, label: &str, seed: u64) -> Option<&TuneReport> {
        self.reports.iter().find(|r| r.strategy == label && r.seed == seed)
    }
}

/// Runs every strategy for every seed and scores them against vanilla
/// fine-tuning at the same seed.
pub fn compare_strategies(exp: &Experiment<'_>, strategies: &[Strategy], seeds: &[u64], threads: usize) -> Result<ComparisonReport> {
    let reference = Strategy::plain(StrategyKind::VanillaFinetune);
    if !strategies.contains(&reference) {
        return Err(Error::MissingReferenceStrategy(reference.label()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let jobs: Vec<(&Strategy, u64)> = strategies.iter().flat_map(|s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let run = || -> Result<Vec<TuneReport>> {
        use rayon::prelude::*;
        jobs.par_iter().map(|(s, seed)| tune_run(exp, s, *seed)).collect()
    };
    let reports = if threads == 1 {
        jobs.iter().map(|(s, seed)| tune_run(exp, s, *seed)).collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(run)?
    };
    let rows = build_rows(&reports, &reference.label())?;
    let summary = strategies
        .iter()
        .map(|s| {
            let label = s.label();
            let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.strategy == label).collect();
            let med = |f: fn(&MetricRow) -> f64| median(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            StrategySummary {
                median_search_cost_ms: med(|r| r.search_cost_ms),
                median_end_latency_ms: med(|r| r.end_latency_ms),
                median_gain: med(|r| r.gain),
                median_reduction: med(|r| r.reduction),
                median_cmat_percent: med(|r| r.cmat_percent),
                strategy: label,
            }
        })
        .collect();
    Ok(ComparisonReport { reference: reference.label(), seeds: seeds.to_vec(), reports, rows, summary })
}

/// Resolves `MOSES_LAB_THREADS` (0 or unset = all cores).
pub fn thread_count() -> usize {
    std::env::var("MOSES_LAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Looks up tasks referenced by a store; used when replaying reports.
pub fn tasks_for<'a>(tasks: &'a [TaskSpec], ids: &[String]) -> Result<Vec<&'a TaskSpec>> {
    ids.iter().map(|id| find_task(tasks, id)).collect()
}
