//! Synthetic tuning tasks, their knob spaces, and the device-independent
//! feature encoding.
//!
//! A [`TaskSpec`] stands for one subgraph to be tuned. Its knobs span a
//! discrete [`ConfigSpace`]; a [`Configuration`] picks one value per knob.
//! Knobs are matched to schedule roles by name (`tile_x`, `tile_y`,
//! `unroll`, `vectorize`, `parallel`); a task that omits a role behaves as if
//! that knob were pinned at its neutral value (1, or 0 for `unroll`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of every encoded feature vector.
pub const FEATURE_DIM: usize = 16;

/// Largest space `enumerate_configs` walks by default.
pub const ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnobKind {
    Pow2,
    EnumInt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnobSpec {
    pub name: String,
    pub kind: KnobKind,
    pub domain: Vec<i64>,
}

impl KnobSpec {
    pub fn pow2(name: &str, max_log2: u32) -> Self {
        KnobSpec {
            name: name.to_string(),
            kind: KnobKind::Pow2,
            domain: (0..=max_log2).map(|e| 1i64 << e).collect(),
        }
    }

    pub fn enum_int(name: &str, domain: &[i64]) -> Self {
        KnobSpec { name: name.to_string(), kind: KnobKind::EnumInt, domain: domain.to_vec() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain.is_empty() {
            return Err(Error::InvalidTask(format!("knob `{}` has an empty domain", self.name)));
        }
        if self.domain.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidTask(format!(
                "knob `{}` domain must be strictly increasing",
                self.name
            )));
        }
        if self.kind == KnobKind::Pow2 && self.domain.iter().any(|&v| v <= 0 || v & (v - 1) != 0) {
            return Err(Error::InvalidTask(format!(
                "knob `{}` is pow2 but holds a non power of two",
                self.name
            )));
        }
        Ok(())
    }

    pub fn index_of(&self, value: i64) -> Option<usize> {
        self.domain.binary_search(&value).ok()
    }
}

/// The five-knob template every shipped task uses (8820 configurations).
pub fn default_knobs() -> Vec<KnobSpec> {
    vec![
        KnobSpec::pow2("tile_x", 6),
        KnobSpec::pow2("tile_y", 6),
        KnobSpec::enum_int("unroll", &[0, 16, 64, 512]),
        KnobSpec::pow2("vectorize", 4),
        KnobSpec::pow2("parallel", 8),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub work_gflops: f64,
    pub bytes_per_unit: f64,
    pub ideal_log2_tiles: f64,
    pub ideal_log2_unroll: f64,
    #[serde(default = "default_knobs")]
    pub knobs: Vec<KnobSpec>,
}

impl TaskSpec {
    /// A task on the default knob template.
    pub fn new(id: &str, work_gflops: f64, bytes_per_unit: f64, ideal_tiles: f64, ideal_unroll: f64) -> Self {
        TaskSpec {
            id: id.to_string(),
            work_gflops,
            bytes_per_unit,
            ideal_log2_tiles: ideal_tiles,
            ideal_log2_unroll: ideal_unroll,
            knobs: default_knobs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidTask("empty task id".into()));
        }
        if !(self.work_gflops > 0.0 && self.work_gflops.is_finite()) {
            return Err(Error::InvalidTask(format!("{}: work_gflops must be positive", self.id)));
        }
        if !(self.bytes_per_unit > 0.0 && self.bytes_per_unit.is_finite()) {
            return Err(Error::InvalidTask(format!("{}: bytes_per_unit must be positive", self.id)));
        }
        if !(0.0..=16.0).contains(&self.ideal_log2_tiles) {
            return Err(Error::InvalidTask(format!("{}: ideal_log2_tiles outside [0, 16]", self.id)));
        }
        if !(0.0..=10.0).contains(&self.ideal_log2_unroll) {
            return Err(Error::InvalidTask(format!("{}: ideal_log2_unroll outside [0, 10]", self.id)));
        }
        if self.knobs.is_empty() {
            return Err(Error::InvalidTask(format!("{}: no knobs", self.id)));
        }
        for (i, k) in self.knobs.iter().enumerate() {
            k.validate()?;
            if self.knobs[..i].iter().any(|o| o.name == k.name) {
                return Err(Error::InvalidTask(format!("{}: duplicate knob `{}`", self.id, k.name)));
            }
        }
        Ok(())
    }

    pub fn check_config(&self, config: &Configuration) -> Result<()> {
        if config.values.len() != self.knobs.len() {
            return Err(Error::InvalidConfig(format!(
                "{} values for {} knobs of task {}",
                config.values.len(),
                self.knobs.len(),
                self.id
            )));
        }
        for (k, &v) in self.knobs.iter().zip(&config.values) {
            if k.index_of(v).is_none() {
                return Err(Error::InvalidConfig(format!("{v} not in domain of knob `{}`", k.name)));
            }
        }
        Ok(())
    }

    /// Resolves the schedule roles of a configuration.
    pub fn knob_values(&self, config: &Configuration) -> KnobValues {
        let mut kv = KnobValues { tile_x: 1, tile_y: 1, unroll: 0, vectorize: 1, parallel: 1 };
        for (k, &v) in self.knobs.iter().zip(&config.values) {
            match k.name.as_str() {
                "tile_x" => kv.tile_x = v,
                "tile_y" => kv.tile_y = v,
                "unroll" => kv.unroll = v,
                "vectorize" => kv.vectorize = v,
                "parallel" => kv.parallel = v,
                _ => {}
            }
        }
        kv
    }

    /// Every knob at its median domain index; what an untuned build runs.
    pub fn default_config(&self) -> Configuration {
        Configuration { values: self.knobs.iter().map(|k| k.domain[(k.domain.len() - 1) / 2]).collect() }
    }

    /// Working-set size in bytes touched by one tile.
    pub fn footprint_bytes(&self, kv: &KnobValues) -> f64 {
        self.bytes_per_unit * (kv.tile_x * kv.tile_y) as f64 * kv.unroll.max(1) as f64
    }
}

/// Role-resolved knob values of one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KnobValues {
    pub tile_x: i64,
    pub tile_y: i64,
    pub unroll: i64,
    pub vectorize: i64,
    pub parallel: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    pub values: Vec<i64>,
}

impl Configuration {
    pub fn new(values: Vec<i64>) -> Self {
        Configuration { values }
    }

    /// 64-bit FNV-1a over the knob values, each as 8 little-endian bytes.
    pub fn canonical_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        for v in &self.values {
            h.write(&v.to_le_bytes());
        }
        h.finish()
    }
}

/// Plain 64-bit FNV-1a.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Fnv1a(Self::OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSpace {
    pub task: TaskSpec,
    pub size: u64,
}

pub fn build_space(task: &TaskSpec) -> Result<ConfigSpace> {
    task.validate()?;
    let size = task
        .knobs
        .iter()
        .try_fold(1u64, |acc, k| acc.checked_mul(k.domain.len() as u64))
        .ok_or_else(|| Error::InvalidTask(format!("{}: space size overflows u64", task.id)))?;
    Ok(ConfigSpace { task: task.clone(), size })
}

impl ConfigSpace {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        sample_config(self, rng)
    }

    pub fn contains(&self, config: &Configuration) -> bool {
        self.task.check_config(config).is_ok()
    }
}

pub fn sample_config<R: Rng + ?Sized>(space: &ConfigSpace, rng: &mut R) -> Configuration {
    let values = space
        .task
        .knobs
        .iter()
        .map(|k| k.domain[rng.gen_range(0..k.domain.len())])
        .collect();
    Configuration { values }
}

/// Changes exactly one mutable knob to a different value of its domain.
pub fn mutate_config<R: Rng + ?Sized>(
    space: &ConfigSpace,
    config: &Configuration,
    rng: &mut R,
) -> Result<Configuration> {
    space.task.check_config(config)?;
    let mutable: Vec<usize> =
        (0..space.task.knobs.len()).filter(|&i| space.task.knobs[i].domain.len() > 1).collect();
    if mutable.is_empty() {
        return Err(Error::ImmutableSpace);
    }
    let pos = mutable[rng.gen_range(0..mutable.len())];
    let knob = &space.task.knobs[pos];
    let old = knob.index_of(config.values[pos]).expect("checked above");
    let mut new = rng.gen_range(0..knob.domain.len() - 1);
    if new >= old {
        new += 1;
    }
    let mut out = config.clone();
    out.values[pos] = knob.domain[new];
    Ok(out)
}

/// Fixed-length numeric encoding of a (task, configuration) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn encode_features(task: &TaskSpec, config: &Configuration) -> Result<FeatureVector> {
    task.check_config(config)?;
    let kv = task.knob_values(config);
    let l2 = |x: f64| x.log2();
    let mut f = vec![0.0; FEATURE_DIM];
    f[0] = l2(kv.tile_x as f64) / 6.0;
    f[1] = l2(kv.tile_y as f64) / 6.0;
    f[2] = l2(1.0 + kv.unroll as f64) / 10.0;
    f[3] = l2(kv.vectorize as f64) / 4.0;
    f[4] = l2(kv.parallel as f64) / 8.0;
    f[5] = l2((kv.tile_x * kv.tile_y) as f64) / 12.0;
    f[6] = l2(task.footprint_bytes(&kv)) / 24.0;
    f[7] = (task.work_gflops.log10() / 3.0).clamp(0.0, 1.0);
    f[8] = task.ideal_log2_tiles / 16.0;
    f[9] = task.ideal_log2_unroll / 10.0;
    Ok(FeatureVector(f))
}

/// All configurations in lexicographic order of knob indices.
pub fn enumerate_configs(space: &ConfigSpace, cap: u64) -> Result<Vec<Configuration>> {
    if space.size > cap {
        return Err(Error::SpaceTooLarge { size: space.size, cap });
    }
    let knobs = &space.task.knobs;
    let mut out = Vec::with_capacity(space.size as usize);
    let mut idx = vec![0usize; knobs.len()];
    loop {
        out.push(Configuration { values: idx.iter().zip(knobs).map(|(&i, k)| k.domain[i]).collect() });
        let mut pos = knobs.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < knobs[pos].domain.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}
