//! Simulated hardware.
//!
//! Throughput factors into a device-independent term that depends only on how
//! close tiling and unrolling are to a task's ideal, and a device term that
//! scores parallelism, vector width and cache fit against the device. Noise is
//! multiplicative and drawn from a stream keyed by
//! `(seed, device_id, task_id, config hash)` so any record can be regenerated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{build_space, enumerate_configs, Configuration, Fnv1a, TaskSpec, ENUMERATION_CAP};

fn default_noise() -> f64 {
    0.05
}

fn default_repeats() -> u32 {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: String,
    pub peak_gflops: f64,
    pub parallel_units: u32,
    pub vector_lanes: u32,
    pub cache_bytes: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    pub measure_overhead_ms: f64,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
}

impl DeviceSpec {
    /// The large source machine the cost model is pretrained on.
    pub fn server() -> Self {
        DeviceSpec {
            id: "server".into(),
            peak_gflops: 8000.0,
            parallel_units: 64,
            vector_lanes: 16,
            cache_bytes: 6.0e6,
            noise_std: 0.05,
            measure_overhead_ms: 2.0,
            repeats: 3,
        }
    }

    /// The small target board the model is adapted to.
    pub fn embedded() -> Self {
        DeviceSpec {
            id: "embedded".into(),
            peak_gflops: 600.0,
            parallel_units: 4,
            vector_lanes: 4,
            cache_bytes: 2.0e5,
            noise_std: 0.05,
            measure_overhead_ms: 120.0,
            repeats: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("device {}: {m}", self.id)));
        if self.id.is_empty() {
            return bad("empty id");
        }
        if !(self.peak_gflops > 0.0 && self.peak_gflops.is_finite()) {
            return bad("peak_gflops must be positive");
        }
        if self.parallel_units == 0 {
            return bad("parallel_units must be positive");
        }
        if !self.vector_lanes.is_power_of_two() {
            return bad("vector_lanes must be a power of two");
        }
        if !(self.cache_bytes > 0.0 && self.cache_bytes.is_finite()) {
            return bad("cache_bytes must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be non-negative");
        }
        if !(self.measure_overhead_ms >= 0.0 && self.measure_overhead_ms.is_finite()) {
            return bad("measure_overhead_ms must be non-negative");
        }
        if self.repeats == 0 {
            return bad("repeats must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub task_id: String,
    pub config: Configuration,
    pub throughput_gflops: f64,
    pub latency_ms: f64,
    pub wall_cost_ms: f64,
    pub device_id: String,
    pub seq: u64,
}

/// Device-independent efficiency of tiling and unrolling.
pub fn shared_factor(task: &TaskSpec, config: &Configuration) -> f64 {
    let kv = task.knob_values(config);
    let tiles = ((kv.tile_x * kv.tile_y) as f64).log2() - task.ideal_log2_tiles;
    let unroll = (1.0 + kv.unroll as f64).log2() - task.ideal_log2_unroll;
    let f_loc = (-(tiles * tiles) / 8.0).exp();
    let f_unr = 0.8 + 0.2 * (-(unroll * unroll) / 4.0).exp();
    f_loc * f_unr
}

/// Occupancy, vector-width match and cache-fit penalty on one device.
pub fn device_factor(device: &DeviceSpec, task: &TaskSpec, config: &Configuration) -> f64 {
    let kv = task.knob_values(config);
    let p = kv.parallel as f64;
    let u = device.parallel_units as f64;
    let occ = (p / u).min(u / p);
    let v = kv.vectorize as f64;
    let l = device.vector_lanes as f64;
    let vec = (v / l).min(l / v).sqrt();
    let footprint = task.footprint_bytes(&kv);
    let pen = if footprint <= device.cache_bytes { 1.0 } else { device.cache_bytes / footprint };
    occ * vec * pen
}

/// Throughput with noise switched off.
pub fn noiseless_throughput(device: &DeviceSpec, task: &TaskSpec, config: &Configuration) -> f64 {
    device.peak_gflops * shared_factor(task, config) * device_factor(device, task, config)
}

/// Seed of the noise stream for one measurement key.
pub fn noise_stream_key(seed: u64, device_id: &str, task_id: &str, config: &Configuration) -> u64 {
    let mut h = Fnv1a::new();
    h.write(&seed.to_le_bytes());
    h.write(device_id.as_bytes());
    h.write(&[0]);
    h.write(task_id.as_bytes());
    h.write(&[0]);
    h.write(&config.canonical_hash().to_le_bytes());
    h.finish()
}

pub fn latency_ms(task: &TaskSpec, throughput_gflops: f64) -> f64 {
    task.work_gflops / throughput_gflops * 1000.0
}

pub fn wall_cost_ms(device: &DeviceSpec, latency_ms: f64) -> f64 {
    device.measure_overhead_ms + device.repeats as f64 * latency_ms
}

/// One simulated on-device measurement; `seq` is left at 0 for the caller.
pub fn measure(device: &DeviceSpec, task: &TaskSpec, config: &Configuration, seed: u64) -> MeasurementRecord {
    let eps = if device.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_stream_key(seed, &device.id, &task.id, config));
        Normal::new(0.0, device.noise_std).expect("validated noise_std").sample(&mut rng)
    } else {
        0.0
    };
    let throughput = noiseless_throughput(device, task, config) * (1.0 + eps).max(0.05);
    let latency = latency_ms(task, throughput);
    MeasurementRecord {
        task_id: task.id.clone(),
        config: config.clone(),
        throughput_gflops: throughput,
        latency_ms: latency,
        wall_cost_ms: wall_cost_ms(device, latency),
        device_id: device.id.clone(),
        seq: 0,
    }
}

/// Exhaustive noise-free optimum; the lexicographically first config wins ties.
pub fn true_best(device: &DeviceSpec, task: &TaskSpec) -> Result<(Configuration, f64)> {
    let space = build_space(task)?;
    let mut best: Option<(Configuration, f64)> = None;
    for c in enumerate_configs(&space, ENUMERATION_CAP)? {
        let t = noiseless_throughput(device, task, &c);
        if best.as_ref().map_or(true, |(_, bt)| t > *bt) {
            best = Some((c, t));
        }
    }
    let (c, t) = best.expect("spaces are non-empty");
    Ok((c, latency_ms(task, t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn task() -> TaskSpec {
        TaskSpec::new("t", 20.0, 2.0, 8.0, 65f64.log2())
    }

    fn quiet(mut d: DeviceSpec) -> DeviceSpec {
        d.noise_std = 0.0;
        d
    }

    // Independent restatement of the simulator formulas.
    fn oracle_shared(ideal_t: f64, ideal_u: f64, tx: f64, ty: f64, u: f64) -> f64 {
        let a = (tx * ty).log2() - ideal_t;
        let b = (1.0 + u).log2() - ideal_u;
        (-a.powi(2) / 8.0).exp() * (0.8 + 0.2 * (-b.powi(2) / 4.0).exp())
    }

    fn oracle_device(d: &DeviceSpec, bytes: f64, c: &[i64]) -> f64 {
        let (tx, ty, u, v, p) = (c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64, c[4] as f64);
        let uu = d.parallel_units as f64;
        let ll = d.vector_lanes as f64;
        let occ = if p > uu { uu / p } else { p / uu };
        let vec = if v > ll { (ll / v).sqrt() } else { (v / ll).sqrt() };
        let f = bytes * tx * ty * u.max(1.0);
        occ * vec * if f > d.cache_bytes { d.cache_bytes / f } else { 1.0 }
    }

    #[test]
    fn shared_factor_peaks_at_ideal() {
        let t = task();
        assert_eq!(shared_factor(&t, &Configuration::new(vec![16, 16, 64, 1, 1])), 1.0);
        let shifted = shared_factor(&t, &Configuration::new(vec![64, 64, 64, 1, 1]));
        assert!((shifted - (-2.0f64).exp()).abs() < 1e-15);
        assert!((shifted - 0.1353).abs() < 1e-4);
    }

    #[test]
    fn device_factor_examples() {
        let d = DeviceSpec::embedded();
        let t = TaskSpec::new("t", 20.0, 1.0, 4.0, 0.0);
        assert_eq!(device_factor(&d, &t, &Configuration::new(vec![4, 4, 0, 4, 4])), 1.0);
        assert_eq!(device_factor(&d, &t, &Configuration::new(vec![4, 4, 0, 4, 16])), 0.25);
    }

    #[test]
    fn factors_match_independent_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let space = build_space(&task()).unwrap();
        for d in [DeviceSpec::server(), DeviceSpec::embedded()] {
            for _ in 0..500 {
                let c = space.sample(&mut rng);
                let v = &c.values;
                let s = oracle_shared(8.0, 65f64.log2(), v[0] as f64, v[1] as f64, v[2] as f64);
                assert!((shared_factor(&space.task, &c) - s).abs() < 1e-12);
                let g = oracle_device(&d, 2.0, v);
                assert!((device_factor(&d, &space.task, &c) - g).abs() < 1e-12);
                let sf = shared_factor(&space.task, &c);
                assert!(sf > 0.0 && sf <= 1.0);
            }
        }
    }

    #[test]
    fn noiseless_measurement_is_exact_product() {
        let d = quiet(DeviceSpec::server());
        let t = task();
        let space = build_space(&t).unwrap();
        for c in enumerate_configs(&space, ENUMERATION_CAP).unwrap() {
            let r = measure(&d, &t, &c, 1);
            let expect = d.peak_gflops * shared_factor(&t, &c) * device_factor(&d, &t, &c);
            assert_eq!(r.throughput_gflops, expect);
            assert_eq!(r.latency_ms, t.work_gflops / r.throughput_gflops * 1000.0);
            assert_eq!(r.wall_cost_ms, d.measure_overhead_ms + 3.0 * r.latency_ms);
        }
    }

    #[test]
    fn measurement_is_deterministic_per_key() {
        let d = DeviceSpec::embedded();
        let t = task();
        let c = Configuration::new(vec![8, 8, 16, 4, 4]);
        assert_eq!(measure(&d, &t, &c, 42), measure(&d, &t, &c, 42));
        assert_ne!(measure(&d, &t, &c, 42).throughput_gflops, measure(&d, &t, &c, 43).throughput_gflops);
    }

    #[test]
    fn noise_has_requested_spread() {
        let d = DeviceSpec::embedded();
        let t = task();
        let c = Configuration::new(vec![8, 8, 16, 4, 4]);
        let xs: Vec<f64> = (0..1000).map(|s| measure(&d, &t, &c, s).throughput_gflops).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let cv = var.sqrt() / mean;
        assert!((0.04..=0.06).contains(&cv), "cv {cv}");
    }

    #[test]
    fn true_best_tracks_device_peaks() {
        let mut d = quiet(DeviceSpec::embedded());
        d.cache_bytes = 1e12;
        let t = TaskSpec::new("t", 5.0, 1.0, 6.0, 65f64.log2());
        let (best, _) = true_best(&d, &t).unwrap();
        let kv = t.knob_values(&best);
        assert_eq!((kv.parallel, kv.vectorize), (4, 4));

        let mut d2 = d.clone();
        d2.parallel_units = 32;
        let (best2, _) = true_best(&d2, &t).unwrap();
        let diff: Vec<usize> = (0..5).filter(|&i| best.values[i] != best2.values[i]).collect();
        assert_eq!(diff, vec![4]);
        assert_eq!(best2.values[4], 32);
    }

    #[test]
    fn factorization_separates_devices() {
        let t = task();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let space = build_space(&t).unwrap();
        let (a, mut b) = (quiet(DeviceSpec::server()), quiet(DeviceSpec::embedded()));
        for _ in 0..100 {
            let c = space.sample(&mut rng);
            b.parallel_units = rng.gen_range(1..512);
            let sa = noiseless_throughput(&a, &t, &c) / (a.peak_gflops * device_factor(&a, &t, &c));
            let sb = noiseless_throughput(&b, &t, &c) / (b.peak_gflops * device_factor(&b, &t, &c));
            assert!((sa - sb).abs() < 1e-12);
            assert!((sa - shared_factor(&t, &c)).abs() < 1e-12);
        }
    }

    #[test]
    fn overhead_raises_wall_cost() {
        let slow = DeviceSpec::embedded();
        let mut fast = slow.clone();
        fast.measure_overhead_ms = 2.0;
        assert!(wall_cost_ms(&slow, 5.0) > wall_cost_ms(&fast, 5.0));
    }
}
