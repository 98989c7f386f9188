//! Lottery-ticket partitioning of cost-model parameters.
//!
//! Each tuning phase scores every scalar by `xi = |w * dL/dw|`, keeps the
//! high-scoring scalars as transferable (they take the gradient step) and
//! shrinks the remaining variant scalars geometrically toward zero. An
//! optional logistic discriminator on the second hidden layer supplies a
//! gradient-reversed domain-confusion term.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostModelParams, GradientSet};
use crate::space::FeatureVector;

#[derive(Clone, Debug, PartialEq)]
pub struct XiScores {
    pub values: Vec<f64>,
    pub normalized: bool,
}

/// How transferable scalars are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum PartitionMode {
    /// Keep scalars whose max-normalized score exceeds the threshold.
    Threshold(f64),
    /// Keep the top `ceil(ratio * Ptot)` scalars by raw score.
    Ratio(f64),
}

impl PartitionMode {
    /// Whether `xi_scores` should normalize before partitioning.
    pub fn needs_normalized(&self) -> bool {
        matches!(self, PartitionMode::Threshold(_))
    }

    pub fn value(&self) -> f64 {
        match *self {
            PartitionMode::Threshold(v) | PartitionMode::Ratio(v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamMask {
    /// `true` marks a transferable scalar.
    pub bits: Vec<bool>,
    pub phase: u64,
    pub mode: Option<PartitionMode>,
}

impl ParamMask {
    pub fn from_bits(bits: Vec<bool>, phase: u64) -> Self {
        ParamMask { bits, phase, mode: None }
    }

    pub fn all_transferable(len: usize, phase: u64) -> Self {
        Self::from_bits(vec![true; len], phase)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn transferable_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch { expected, got });
    }
    Ok(())
}

pub fn xi_scores(params: &CostModelParams, grads: &GradientSet, normalize: bool) -> Result<XiScores> {
    check_len(params.len(), grads.values.len())?;
    let mut values: Vec<f64> = params.values.iter().zip(&grads.values).map(|(w, g)| (w * g).abs()).collect();
    if normalize {
        let max = values.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        }
    }
    Ok(XiScores { values, normalized: normalize })
}

/// `ceil(ratio * total)`, with slack for decimal ratios such as 0.7.
pub fn ratio_count(ratio: f64, total: usize) -> usize {
    let x = ratio * total as f64;
    ((x - x * 1e-12).ceil() as usize).min(total)
}

pub fn partition(xi: &XiScores, mode: PartitionMode, phase: u64) -> Result<ParamMask> {
    let n = xi.values.len();
    let bits = match mode {
        PartitionMode::Threshold(theta) => {
            if !xi.normalized {
                return Err(Error::UnnormalizedThreshold);
            }
            xi.values.iter().map(|&v| v > theta).collect()
        }
        PartitionMode::Ratio(rho) => {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidRatio(rho));
            }
            let k = ratio_count(rho, n);
            let mut order: Vec<usize> = (0..n).collect();
            let by_score = |&a: &usize, &b: &usize| xi.values[b].total_cmp(&xi.values[a]).then(a.cmp(&b));
            if k > 0 && k < n {
                order.select_nth_unstable_by(k - 1, by_score);
            }
            let mut bits = vec![false; n];
            for &i in &order[..k] {
                bits[i] = true;
            }
            bits
        }
    };
    Ok(ParamMask { bits, phase, mode: Some(mode) })
}

/// Gradient step restricted to transferable scalars.
pub fn transferable_step(
    params: &mut CostModelParams,
    grads: &GradientSet,
    mask: &ParamMask,
    learning_rate: f64,
) -> Result<()> {
    check_len(params.len(), grads.values.len())?;
    check_len(params.len(), mask.len())?;
    for ((w, g), &keep) in params.values.iter_mut().zip(&grads.values).zip(&mask.bits) {
        if keep {
            *w -= learning_rate * g;
        }
    }
    Ok(())
}

/// Linear weight decay `w -= alpha * lambda * w` on variant scalars only.
pub fn variant_decay(params: &mut CostModelParams, mask: &ParamMask, learning_rate: f64, weight_decay: f64) -> Result<()> {
    check_len(params.len(), mask.len())?;
    let rate = learning_rate * weight_decay;
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::UnstableDecay(rate));
    }
    if rate == 0.0 {
        return Ok(());
    }
    let keep = 1.0 - rate;
    for (w, &transferable) in params.values.iter_mut().zip(&mask.bits) {
        if !transferable {
            *w *= keep;
        }
    }
    Ok(())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic head labeling source activations 1 and target activations 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Discriminator {
    pub fn zeros(dim: usize) -> Self {
        Discriminator { weights: vec![0.0; dim], bias: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logits(&self, rows: &[f64]) -> Vec<f64> {
        rows.chunks_exact(self.dim())
            .map(|h| self.bias + h.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Binary cross-entropy, averaging the source and target halves.
    pub fn loss(&self, source: &[f64], target: &[f64]) -> f64 {
        let ls = self.logits(source);
        let lt = self.logits(target);
        let s = ls.iter().map(|&a| softplus(-a)).sum::<f64>() / ls.len() as f64;
        let t = lt.iter().map(|&a| softplus(a)).sum::<f64>() / lt.len() as f64;
        0.5 * (s + t)
    }

    /// What the backbone minimizes: the negated discriminator loss.
    pub fn confusion_loss(&self, source: &[f64], target: &[f64]) -> f64 {
        -self.loss(source, target)
    }

    /// Gradient of [`Self::confusion_loss`] with respect to every activation,
    /// returned as `(target rows, source rows)`.
    pub fn confusion_grad(&self, source: &[f64], target: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ns = (source.len() / self.dim()) as f64;
        let nt = (target.len() / self.dim()) as f64;
        let spread = |logits: Vec<f64>, coef: &dyn Fn(f64) -> f64| {
            let mut out = Vec::with_capacity(logits.len() * self.dim());
            for a in logits {
                let c = coef(a);
                out.extend(self.weights.iter().map(|w| c * w));
            }
            out
        };
        let dt = spread(self.logits(target), &|a| -0.5 * sigmoid(a) / nt);
        let ds = spread(self.logits(source), &|a| 0.5 * (1.0 - sigmoid(a)) / ns);
        (dt, ds)
    }

    /// One gradient-descent step on the discriminator loss; returns the loss
    /// before the step.
    pub fn step(&mut self, source: &[f64], target: &[f64], learning_rate: f64) -> f64 {
        let before = self.loss(source, target);
        let ns = (source.len() / self.dim()) as f64;
        let nt = (target.len() / self.dim()) as f64;
        let mut gw = vec![0.0; self.dim()];
        let mut gb = 0.0;
        for (h, a) in source.chunks_exact(self.dim()).zip(self.logits(source)) {
            let c = 0.5 * (sigmoid(a) - 1.0) / ns;
            gb += c;
            gw.iter_mut().zip(h).for_each(|(g, x)| *g += c * x);
        }
        for (h, a) in target.chunks_exact(self.dim()).zip(self.logits(target)) {
            let c = 0.5 * sigmoid(a) / nt;
            gb += c;
            gw.iter_mut().zip(h).for_each(|(g, x)| *g += c * x);
        }
        self.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= learning_rate * g);
        self.bias -= learning_rate * gb;
        before
    }

    pub fn accuracy(&self, source: &[f64], target: &[f64]) -> f64 {
        let ls = self.logits(source);
        let lt = self.logits(target);
        let right = ls.iter().filter(|&&a| a > 0.0).count() + lt.iter().filter(|&&a| a < 0.0).count();
        right as f64 / (ls.len() + lt.len()) as f64
    }
}

/// Discriminator plus the source records it replays against target batches.
#[derive(Clone, Debug)]
pub struct AdversaryState {
    pub discriminator: Discriminator,
    pub replay: Vec<FeatureVector>,
    pub learning_rate: f64,
    pub enabled: bool,
    rng: ChaCha8Rng,
}

impl AdversaryState {
    pub fn new(hidden_dim: usize, replay: Vec<FeatureVector>, learning_rate: f64, seed: u64) -> Result<Self> {
        if replay.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(AdversaryState {
            discriminator: Discriminator::zeros(hidden_dim),
            replay,
            learning_rate,
            enabled: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Enabled, with replay rows installed later through `set_replay`.
    pub fn awaiting_replay(hidden_dim: usize, learning_rate: f64, seed: u64) -> Self {
        AdversaryState {
            discriminator: Discriminator::zeros(hidden_dim),
            replay: Vec::new(),
            learning_rate,
            enabled: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn disabled(hidden_dim: usize) -> Self {
        AdversaryState {
            discriminator: Discriminator::zeros(hidden_dim),
            replay: Vec::new(),
            learning_rate: 0.0,
            enabled: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn set_replay(&mut self, replay: Vec<FeatureVector>) -> Result<()> {
        if self.enabled && replay.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.replay = replay;
        Ok(())
    }

    /// Draws `n` replay rows with replacement.
    pub fn sample_source(&mut self, n: usize) -> Vec<FeatureVector> {
        (0..n).map(|_| self.replay[self.rng.gen_range(0..self.replay.len())].clone()).collect()
    }

    /// Returns the backbone's `beta`-scaled confusion loss at the current
    /// discriminator, then trains the discriminator one step.
    pub fn adversarial_term(&mut self, hidden_source: &[f64], hidden_target: &[f64], beta: f64) -> Result<f64> {
        if !self.enabled {
            return Err(Error::AdversaryDisabled);
        }
        let dim = self.discriminator.dim();
        for rows in [hidden_source, hidden_target] {
            if rows.is_empty() || rows.len() % dim != 0 {
                return Err(Error::DimMismatch { expected: dim, got: rows.len() });
            }
        }
        let contribution = beta * self.discriminator.confusion_loss(hidden_source, hidden_target);
        self.discriminator.step(hidden_source, hidden_target, self.learning_rate);
        Ok(contribution)
    }
}

const MASK_MAGIC: &[u8; 4] = b"MOSK";

/// Writes `MOSK`, u32 version 1, u64 Ptot, u64 phase, u8 mode
/// (0 threshold, 1 ratio, 2 unspecified), f64 mode value, then the bits
/// packed LSB-first.
pub fn write_mask_dump<W: Write>(mask: &ParamMask, mut out: W) -> Result<()> {
    let (code, value) = match mask.mode {
        Some(PartitionMode::Threshold(v)) => (0u8, v),
        Some(PartitionMode::Ratio(v)) => (1, v),
        None => (2, 0.0),
    };
    out.write_all(MASK_MAGIC)?;
    out.write_all(&1u32.to_le_bytes())?;
    out.write_all(&(mask.len() as u64).to_le_bytes())?;
    out.write_all(&mask.phase.to_le_bytes())?;
    out.write_all(&[code])?;
    out.write_all(&value.to_le_bytes())?;
    let mut packed = vec![0u8; mask.len().div_ceil(8)];
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        packed[i / 8] |= 1 << (i % 8);
    }
    out.write_all(&packed)?;
    Ok(())
}

pub fn read_mask_dump<R: Read>(mut input: R) -> Result<ParamMask> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let corrupt = |m: &str| Error::CorruptStream(format!("mask dump: {m}"));
    if buf.len() < 33 || &buf[..4] != MASK_MAGIC {
        return Err(corrupt("bad header"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != 1 {
        return Err(Error::VersionMismatch { expected: 1, found: version });
    }
    let total = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let phase = u64::from_le_bytes(buf[16..24].try_into().expect("8 bytes"));
    let value = f64::from_le_bytes(buf[25..33].try_into().expect("8 bytes"));
    let mode = match buf[24] {
        0 => Some(PartitionMode::Threshold(value)),
        1 => Some(PartitionMode::Ratio(value)),
        2 => None,
        _ => return Err(corrupt("unknown mode")),
    };
    let packed = &buf[33..];
    if packed.len() != total.div_ceil(8) {
        return Err(corrupt("bitset length disagrees with header"));
    }
    let bits = (0..total).map(|i| packed[i / 8] & (1 << (i % 8)) != 0).collect();
    Ok(ParamMask { bits, phase, mode })
}
