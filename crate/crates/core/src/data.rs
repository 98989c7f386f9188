//! Measurement record storage and offline dataset generation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RankingBatch;
use crate::oracle::{measure, DeviceSpec, MeasurementRecord};
use crate::space::{build_space, encode_features, Configuration, FeatureVector, Fnv1a, TaskSpec};

/// Append-only record sequence indexed by task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordStore {
    records: Vec<MeasurementRecord>,
    by_task: BTreeMap<String, Vec<usize>>,
}

impl RecordStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MeasurementRecord) {
        self.by_task.entry(record.task_id.clone()).or_default().push(self.records.len());
        self.records.push(record);
    }

    pub fn records(&self) -> &[MeasurementRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.by_task.keys().map(String::as_str)
    }

    /// Record positions belonging to one task, in insertion order.
    pub fn task_indices(&self, task_id: &str) -> &[usize] {
        self.by_task.get(task_id).map_or(&[], Vec::as_slice)
    }

    /// Checks every record against its task definition.
    pub fn validate_against(&self, tasks: &[TaskSpec]) -> Result<()> {
        for r in &self.records {
            let task = find_task(tasks, &r.task_id)?;
            task.check_config(&r.config)?;
        }
        Ok(())
    }
}

impl FromIterator<MeasurementRecord> for RecordStore {
    fn from_iter<I: IntoIterator<Item = MeasurementRecord>>(iter: I) -> Self {
        let mut s = RecordStore::new();
        iter.into_iter().for_each(|r| s.push(r));
        s
    }
}

pub fn find_task<'a>(tasks: &'a [TaskSpec], id: &str) -> Result<&'a TaskSpec> {
    tasks.iter().find(|t| t.id == id).ok_or_else(|| Error::InvalidTask(format!("unknown task `{id}`")))
}

fn task_seed(seed: u64, task_id: &str) -> u64 {
    let mut h = Fnv1a::new();
    h.write(&seed.to_le_bytes());
    h.write(task_id.as_bytes());
    h.finish()
}

/// Uniformly sampled configurations per task, measured on `device`.
pub fn generate_dataset(device: &DeviceSpec, tasks: &[TaskSpec], samples_per_task: usize, seed: u64) -> Result<RecordStore> {
    if samples_per_task == 0 {
        return Err(Error::Config("samples_per_task must be at least 1".into()));
    }
    device.validate()?;
    let mut store = RecordStore::new();
    let mut seq = 0u64;
    for task in tasks {
        let space = build_space(task)?;
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, &task.id));
        for _ in 0..samples_per_task {
            let config = space.sample(&mut rng);
            let mut rec = measure(device, task, &config, seed);
            rec.seq = seq;
            seq += 1;
            store.push(rec);
        }
    }
    Ok(store)
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    task_id: String,
    values: Vec<i64>,
    throughput_gflops: f64,
    latency_ms: f64,
    wall_cost_ms: f64,
    device_id: String,
    seq: u64,
}

const FIELDS: [&str; 7] = ["task_id", "values", "throughput_gflops", "latency_ms", "wall_cost_ms", "device_id", "seq"];

pub fn write_records_to<W: Write>(store: &RecordStore, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for r in &store.records {
        let line = RecordLine {
            task_id: r.task_id.clone(),
            values: r.config.values.clone(),
            throughput_gflops: r.throughput_gflops,
            latency_ms: r.latency_ms,
            wall_cost_ms: r.wall_cost_ms,
            device_id: r.device_id.clone(),
            seq: r.seq,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_from<R: BufRead>(input: R) -> Result<RecordStore> {
    let mut store = RecordStore::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse { line: line_no, message: "not an object".into() })?;
        if let Some(missing) = FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::MissingField { line: line_no, field: missing.to_string() });
        }
        let rec: RecordLine =
            serde_json::from_value(value).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        store.push(MeasurementRecord {
            task_id: rec.task_id,
            config: Configuration::new(rec.values),
            throughput_gflops: rec.throughput_gflops,
            latency_ms: rec.latency_ms,
            wall_cost_ms: rec.wall_cost_ms,
            device_id: rec.device_id,
            seq: rec.seq,
        });
    }
    Ok(store)
}

pub fn write_records(store: &RecordStore, path: &Path) -> Result<()> {
    write_records_to(store, File::create(path)?)
}

pub fn read_records(path: &Path) -> Result<RecordStore> {
    read_records_from(BufReader::new(File::open(path)?))
}

/// One epoch's batching: record positions grouped per task.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochPlan {
    pub batches: Vec<(String, Vec<usize>)>,
    pub dropped: usize,
}

/// Shuffles each task's records, cuts them into batches, and shuffles the
/// batch order. Singleton leftovers cannot form a pair and are dropped.
pub fn plan_epoch(store: &RecordStore, batch_size: usize, seed: u64) -> EpochPlan {
    let batch_size = batch_size.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batches = Vec::new();
    let mut dropped = 0;
    for (task, idx) in &store.by_task {
        let mut idx = idx.clone();
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(batch_size) {
            if chunk.len() < 2 {
                dropped += chunk.len();
            } else {
                batches.push((task.clone(), chunk.to_vec()));
            }
        }
    }
    batches.shuffle(&mut rng);
    if dropped > 0 {
        log::debug!("dropped {dropped} singleton record(s) while batching");
    }
    EpochPlan { batches, dropped }
}

/// Encodes every record once, in store order.
pub fn encode_store(store: &RecordStore, tasks: &[TaskSpec]) -> Result<Vec<FeatureVector>> {
    store.records.iter().map(|r| encode_features(find_task(tasks, &r.task_id)?, &r.config)).collect()
}

/// Single-task ranking batches labelled by throughput, plus the number of
/// records dropped as singletons.
pub fn make_ranking_batches(
    store: &RecordStore,
    tasks: &[TaskSpec],
    batch_size: usize,
    seed: u64,
) -> Result<(Vec<RankingBatch>, usize)> {
    let feats = encode_store(store, tasks)?;
    let plan = plan_epoch(store, batch_size, seed);
    let batches = plan
        .batches
        .into_iter()
        .map(|(task_id, idx)| RankingBatch {
            features: idx.iter().map(|&i| feats[i].clone()).collect(),
            labels: idx.iter().map(|&i| store.records[i].throughput_gflops).collect(),
            task_id,
        })
        .collect();
    Ok((batches, plan.dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tasks() -> Vec<TaskSpec> {
        (0..8).map(|i| TaskSpec::new(&format!("t{i}"), 1.0 + i as f64 * 10.0, 2.0, 4.0 + i as f64, 3.0)).collect()
    }

    #[test]
    fn one_sample_per_task() {
        let s = generate_dataset(&DeviceSpec::server(), &tasks(), 1, 0).unwrap();
        assert_eq!(s.len(), 8);
        s.validate_against(&tasks()).unwrap();
        assert!(s.records().iter().all(|r| r.device_id == "server"));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&DeviceSpec::server(), &tasks(), 20, 5).unwrap();
        let b = generate_dataset(&DeviceSpec::server(), &tasks(), 20, 5).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_records_to(&a, &mut x).unwrap();
        write_records_to(&b, &mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn empty_roundtrip() {
        let mut buf = Vec::new();
        write_records_to(&RecordStore::new(), &mut buf).unwrap();
        assert!(buf.is_empty());
        assert!(read_records_from(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn missing_field_names_line() {
        let text = concat!(
            r#"{"task_id":"a","values":[1],"throughput_gflops":2.0,"latency_ms":1.0,"wall_cost_ms":3.0,"device_id":"d","seq":0}"#,
            "\n",
            r#"{"task_id":"a","values":[1],"latency_ms":1.0,"wall_cost_ms":3.0,"device_id":"d","seq":1}"#,
            "\n"
        );
        match read_records_from(text.as_bytes()) {
            Err(Error::MissingField { line, field }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "throughput_gflops");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_records_from("{nope\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn batching_rules() {
        let mut s = generate_dataset(&DeviceSpec::server(), &tasks()[..1], 4, 0).unwrap();
        let (b, dropped) = make_ranking_batches(&s, &tasks(), 2, 0).unwrap();
        assert_eq!((b.len(), dropped), (2, 0));
        let mut lone = s.records()[0].clone();
        lone.task_id = "t7".into();
        s.push(lone);
        let (b, dropped) = make_ranking_batches(&s, &tasks(), 2, 0).unwrap();
        assert_eq!((b.len(), dropped), (2, 1));
        assert!(b.iter().all(|x| x.task_id == "t0" && x.features.len() == 2));
    }
}
