//! Adaptive measurement controller.
//!
//! A task's trial budget is split into measured batches and a prediction-only
//! tail. After each measured batch the mean predicted score of that batch is
//! recorded; once at least three batches exist and their coefficient of
//! variation drops below the threshold, further measurement is skipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerSettings {
    pub train_fraction: f64,
    pub num_batches: usize,
    pub cv_threshold: f64,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        ControllerSettings { train_fraction: 0.9, num_batches: 5, cv_threshold: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub total_trials: usize,
    pub train_fraction: f64,
    pub batch_sizes: Vec<usize>,
    pub prediction_only: usize,
}

impl MeasurementPlan {
    pub fn measured_trials(&self) -> usize {
        self.batch_sizes.iter().sum()
    }
}

/// `floor(p * total)` measured trials in `q` balanced batches.
pub fn plan_split(total_trials: usize, train_fraction: f64, num_batches: usize) -> Result<MeasurementPlan> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1]")));
    }
    if num_batches < 2 {
        return Err(Error::Config(format!("need at least 2 batches, got {num_batches}")));
    }
    let x = train_fraction * total_trials as f64;
    let train = ((x + x * 1e-12).floor() as usize).min(total_trials);
    if train < num_batches {
        return Err(Error::InfeasibleSplit { train, batches: num_batches });
    }
    let (base, extra) = (train / num_batches, train % num_batches);
    let batch_sizes = (0..num_batches).map(|i| base + usize::from(i < extra)).collect();
    Ok(MeasurementPlan { total_trials, train_fraction, batch_sizes, prediction_only: total_trials - train })
}

/// Population standard deviation over the arithmetic mean.
pub fn batch_cv(batch_means: &[f64]) -> Result<f64> {
    if batch_means.len() < 2 {
        return Err(Error::InsufficientBatches(batch_means.len()));
    }
    let n = batch_means.len() as f64;
    let mean = batch_means.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::ZeroMean);
    }
    let var = batch_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

pub const MIN_BATCHES_BEFORE_STOP: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub batch_means: Vec<f64>,
    pub cv_threshold: f64,
    pub terminated: bool,
    /// CV after each batch, `None` where it is undefined.
    pub cv_trace: Vec<Option<f64>>,
    /// 1-based batch at which measurement stopped.
    pub termination_batch: Option<usize>,
}

impl ControllerState {
    pub fn new(cv_threshold: f64) -> Self {
        ControllerState {
            batch_means: Vec::new(),
            cv_threshold,
            terminated: false,
            cv_trace: Vec::new(),
            termination_batch: None,
        }
    }

    /// Records one batch mean and reports whether measurement should stop.
    ///
    /// Scores are shift-invariant under the ranking loss, so the batch mean
    /// can be negative; the magnitude of the CV is compared.
    pub fn should_terminate(&mut self, new_batch_mean: f64) -> bool {
        self.batch_means.push(new_batch_mean);
        let cv = batch_cv(&self.batch_means).ok();
        self.cv_trace.push(cv);
        if !self.terminated && self.batch_means.len() >= MIN_BATCHES_BEFORE_STOP {
            if let Some(cv) = cv.filter(|c| c.is_finite()) {
                if cv.abs() < self.cv_threshold {
                    self.terminated = true;
                    self.termination_batch = Some(self.batch_means.len());
                }
            }
        }
        self.terminated
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_pass_cv(xs: &[f64]) -> f64 {
        let mut sum = 0.0;
        for x in xs {
            sum += x;
        }
        let mean = sum / xs.len() as f64;
        let mut sq = 0.0;
        for x in xs {
            sq += (x - mean) * (x - mean);
        }
        (sq / xs.len() as f64).sqrt() / mean
    }

    #[test]
    fn split_examples() {
        let p = plan_split(60, 0.9, 5).unwrap();
        assert_eq!(p.batch_sizes, vec![11, 11, 11, 11, 10]);
        assert_eq!(p.prediction_only, 6);
        let p = plan_split(10, 1.0, 2).unwrap();
        assert_eq!(p.batch_sizes, vec![5, 5]);
        assert_eq!(p.prediction_only, 0);
        assert!(matches!(plan_split(5, 0.5, 5), Err(Error::InfeasibleSplit { train: 2, batches: 5 })));
        let p = plan_split(64, 0.9, 5).unwrap();
        assert_eq!(p.batch_sizes, vec![12, 12, 11, 11, 11]);
        assert_eq!(p.prediction_only, 7);
    }

    #[test]
    fn cv_examples() {
        assert_eq!(batch_cv(&[10.0, 10.0, 10.0]).unwrap(), 0.0);
        let cv = batch_cv(&[5.0, 10.0, 15.0]).unwrap();
        assert!((cv - (50.0f64 / 3.0).sqrt() / 10.0).abs() < 1e-12);
        assert!((cv - 0.40825).abs() < 1e-5);
        assert!(matches!(batch_cv(&[1.0]), Err(Error::InsufficientBatches(1))));
        assert!(matches!(batch_cv(&[1.0, -1.0]), Err(Error::ZeroMean)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let xs: Vec<f64> = (0..rng.gen_range(2..20)).map(|_| rng.gen_range(0.1..50.0)).collect();
            assert!((batch_cv(&xs).unwrap() - two_pass_cv(&xs)).abs() < 1e-12);
        }
    }

    #[test]
    fn termination_rules() {
        let mut s = ControllerState::new(0.05);
        assert!(!s.should_terminate(10.0));
        assert!(!s.should_terminate(10.0));
        assert!(s.should_terminate(10.0));
        assert_eq!(s.termination_batch, Some(3));

        let mut s = ControllerState::new(0.05);
        s.should_terminate(5.0);
        s.should_terminate(10.0);
        assert!(!s.should_terminate(15.0));
    }

    #[test]
    fn termination_exactly_at_fifth_batch() {
        let seq = [9.5, 10.5, 11.0, 10.5, 10.5];
        for k in 3..5 {
            assert!(two_pass_cv(&seq[..k]) >= 0.05);
        }
        assert!(two_pass_cv(&seq) < 0.05);
        let mut s = ControllerState::new(0.05);
        let flags: Vec<bool> = seq.iter().map(|&m| s.should_terminate(m)).collect();
        assert_eq!(flags, vec![false, false, false, false, true]);
        assert_eq!(s.termination_batch, Some(5));
    }

    #[test]
    fn termination_is_monotone() {
        let mut s = ControllerState::new(0.05);
        for m in [1.0, 1.0, 1.0] {
            s.should_terminate(m);
        }
        assert!(s.should_terminate(100.0));
        assert_eq!(s.termination_batch, Some(3));
    }
}
