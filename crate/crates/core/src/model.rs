//! The learned cost model: a three-layer perceptron scored with a pairwise
//! ranking loss, with hand-written forward and backward passes.
//!
//! All scalars live in one flat vector in declaration order
//! (`W1, b1, W2, b2, W3, b3`, weights row-major as `out x in`), so masks and
//! importance scores can address parameters by a single flat index.

use std::ops::Range;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lottery::{Discriminator, ParamMask};
use crate::space::{FeatureVector, FEATURE_DIM};

pub const HIDDEN: usize = 512;

/// Default architecture `[16, 512, 512, 1]`.
pub const DEFAULT_DIMS: [usize; 4] = [FEATURE_DIM, HIDDEN, HIDDEN, 1];

const MAGIC: &[u8; 4] = b"MOSM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub adversary_beta: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 0.001,
            weight_decay: 0.01,
            max_epochs: 30,
            batch_size: 512,
            momentum: 0.9,
            adversary_beta: 0.01,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.adversary_beta >= 0.0 && self.adversary_beta.is_finite()) {
            return Err(Error::Config("adversary_beta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Rows of one task with their measured throughputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingBatch {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<f64>,
    pub task_id: String,
}

/// Flat gradient, shaped like [`CostModelParams::values`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub values: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(len: usize) -> Self {
        GradientSet { values: vec![0.0; len] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateMode {
    /// Plain gradient descent, used during online adaptation.
    Plain,
    /// Heavy-ball momentum, used for offline pretraining.
    Momentum(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostModelParams {
    dims: [usize; 4],
    pub values: Vec<f64>,
    pub momentum: Vec<f64>,
}

/// Flat ranges of one layer's weight and bias.
#[derive(Clone, Debug)]
pub struct LayerSlices {
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

pub fn param_count(dims: &[usize; 4]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_dims(dims: &[usize]) -> Result<[usize; 4]> {
    match dims {
        &[d, h1, h2, 1] if d > 0 && h1 > 0 && h2 > 0 => Ok([d, h1, h2, 1]),
        _ => Err(Error::BadDims(dims.to_vec())),
    }
}

impl CostModelParams {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let dims = check_dims(dims)?;
        let n = param_count(&dims);
        Ok(CostModelParams { dims, values: vec![0.0; n], momentum: vec![0.0; n] })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layers(&self) -> [LayerSlices; 3] {
        let mut off = 0;
        let mut make = |i: usize| {
            let (fi, fo) = (self.dims[i], self.dims[i + 1]);
            let weight = off..off + fi * fo;
            let bias = weight.end..weight.end + fo;
            off = bias.end;
            LayerSlices { weight, bias, fan_in: fi, fan_out: fo }
        };
        [make(0), make(1), make(2)]
    }

    fn check_same_shape(&self, len: usize) -> Result<()> {
        if len != self.values.len() {
            return Err(Error::ShapeMismatch { expected: self.values.len(), got: len });
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_random(dims: &[usize], seed: u64) -> Result<CostModelParams> {
    let mut p = CostModelParams::zeros(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in p.layers() {
        let lim = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-lim, lim);
        for w in &mut p.values[layer.weight] {
            *w = dist.sample(&mut rng);
        }
    }
    Ok(p)
}

/// `c = a * b + beta * c` over strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the extents asserted above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    pub rows: usize,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    /// Second hidden layer outputs, `rows x H2`.
    pub a2: Vec<f64>,
    pub scores: Vec<f64>,
}

fn stack_rows(params: &CostModelParams, features: &[FeatureVector]) -> Result<Vec<f64>> {
    let d = params.input_dim();
    let mut x = Vec::with_capacity(features.len() * d);
    for f in features {
        if f.len() != d {
            return Err(Error::DimMismatch { expected: d, got: f.len() });
        }
        x.extend_from_slice(f.as_slice());
    }
    Ok(x)
}

fn affine(params: &CostModelParams, layer: &LayerSlices, x: &[f64], rows: usize) -> Vec<f64> {
    let (fi, fo) = (layer.fan_in, layer.fan_out);
    let bias = &params.values[layer.bias.clone()];
    let mut out = Vec::with_capacity(rows * fo);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(rows, fi, fo, x, (fi, 1), &params.values[layer.weight.clone()], (1, fi), 1.0, &mut out, (fo, 1));
    out
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn forward(params: &CostModelParams, features: &[FeatureVector]) -> Result<Activations> {
    let x = stack_rows(params, features)?;
    Ok(forward_rows(params, &x, features.len()))
}

fn forward_rows(params: &CostModelParams, x: &[f64], rows: usize) -> Activations {
    let [l1, l2, l3] = params.layers();
    let z1 = affine(params, &l1, x, rows);
    let a1 = relu(&z1);
    let z2 = affine(params, &l2, &a1, rows);
    let a2 = relu(&z2);
    let scores = affine(params, &l3, &a2, rows);
    Activations { rows, z1, a1, z2, a2, scores }
}

/// Model scores; higher means faster.
pub fn predict_batch(params: &CostModelParams, features: &[FeatureVector]) -> Result<Vec<f64>> {
    Ok(forward(params, features)?.scores)
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

/// Logistic pairwise loss averaged over label-ordered pairs.
pub fn pairwise_ranking_loss(scores: &[f64], labels: &[f64]) -> f64 {
    ranking_loss_and_grad(scores, labels).0
}

/// Loss together with its derivative with respect to each score.
pub fn ranking_loss_and_grad(scores: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n = scores.len();
    let mut grad = vec![0.0; n];
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if labels[i] > labels[j] {
                let margin = scores[i] - scores[j];
                total += softplus(-margin);
                let g = sigmoid(-margin);
                grad[i] -= g;
                grad[j] += g;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / pairs as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (total * inv, grad)
}

/// Fraction of label-ordered pairs whose scores agree in order.
pub fn pairwise_accuracy(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut agree = 0usize;
    let mut pairs = 0usize;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] > labels[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    agree += 1;
                }
            }
        }
    }
    (pairs > 0).then(|| agree as f64 / pairs as f64)
}

/// Source-side inputs of the domain-confusion term.
#[derive(Clone, Copy, Debug)]
pub struct AdversaryInput<'a> {
    pub discriminator: &'a Discriminator,
    pub source_features: &'a [FeatureVector],
}

/// Ranking loss on the batch plus `beta` times the confusion loss.
pub fn objective(
    params: &CostModelParams,
    batch: &RankingBatch,
    adversary: Option<AdversaryInput<'_>>,
    beta: f64,
) -> Result<f64> {
    let acts = forward(params, &batch.features)?;
    let mut loss = pairwise_ranking_loss(&acts.scores, &batch.labels);
    if let Some(adv) = adversary.filter(|_| beta != 0.0) {
        let src = forward(params, adv.source_features)?;
        loss += beta * adv.discriminator.confusion_loss(&src.a2, &acts.a2);
    }
    Ok(loss)
}

/// Exact gradient of [`objective`].
pub fn gradients(
    params: &CostModelParams,
    batch: &RankingBatch,
    adversary: Option<AdversaryInput<'_>>,
    beta: f64,
) -> Result<GradientSet> {
    Ok(loss_and_gradients(params, batch, adversary, beta)?.1)
}

/// [`objective`] and its gradient from a single forward pass.
pub fn loss_and_gradients(
    params: &CostModelParams,
    batch: &RankingBatch,
    adversary: Option<AdversaryInput<'_>>,
    beta: f64,
) -> Result<(f64, GradientSet)> {
    if batch.features.len() != batch.labels.len() {
        return Err(Error::ShapeMismatch { expected: batch.features.len(), got: batch.labels.len() });
    }
    let mut x = stack_rows(params, &batch.features)?;
    let target_rows = batch.features.len();
    let mut rows = target_rows;
    if let Some(adv) = adversary.filter(|_| beta != 0.0) {
        x.extend(stack_rows(params, adv.source_features)?);
        rows += adv.source_features.len();
        let h2 = params.dims[2];
        if adv.discriminator.weights.len() != h2 {
            return Err(Error::DimMismatch { expected: h2, got: adv.discriminator.weights.len() });
        }
    }
    let acts = forward_rows(params, &x, rows);
    let (mut loss, dscore_t) = ranking_loss_and_grad(&acts.scores[..target_rows], &batch.labels);
    let mut dscore = dscore_t;
    dscore.resize(rows, 0.0);

    let h2 = params.dims[2];
    let [_, _, l3] = params.layers();
    let w3 = &params.values[l3.weight.clone()];
    let mut da2 = vec![0.0; rows * h2];
    for (r, &ds) in dscore.iter().enumerate() {
        if ds != 0.0 {
            for (o, &w) in da2[r * h2..(r + 1) * h2].iter_mut().zip(w3) {
                *o = ds * w;
            }
        }
    }
    if let Some(adv) = adversary.filter(|_| beta != 0.0) {
        let (target_a2, source_a2) = acts.a2.split_at(target_rows * h2);
        loss += beta * adv.discriminator.confusion_loss(source_a2, target_a2);
        let (dt, ds) = adv.discriminator.confusion_grad(source_a2, target_a2);
        let extra = dt.iter().chain(ds.iter());
        for (o, e) in da2.iter_mut().zip(extra) {
            *o += beta * e;
        }
    }
    Ok((loss, backward(params, &x, &acts, &dscore, da2)))
}

fn backward(params: &CostModelParams, x: &[f64], acts: &Activations, dscore: &[f64], mut da2: Vec<f64>) -> GradientSet {
    let [d, h1, h2, _] = params.dims;
    let rows = acts.rows;
    let [l1, l2, l3] = params.layers();
    let mut g = GradientSet::zeros(params.len());

    // output layer
    gemm(1, rows, h2, dscore, (rows, 1), &acts.a2, (h2, 1), 0.0, &mut g.values[l3.weight.clone()], (h2, 1));
    g.values[l3.bias.start] = dscore.iter().sum();

    // second hidden layer
    for (v, &z) in da2.iter_mut().zip(&acts.z2) {
        if z <= 0.0 {
            *v = 0.0;
        }
    }
    let dz2 = da2;
    gemm(h2, rows, h1, &dz2, (1, h2), &acts.a1, (h1, 1), 0.0, &mut g.values[l2.weight.clone()], (h1, 1));
    column_sums(&dz2, h2, &mut g.values[l2.bias.clone()]);
    let mut da1 = vec![0.0; rows * h1];
    gemm(rows, h2, h1, &dz2, (h2, 1), &params.values[l2.weight.clone()], (h1, 1), 0.0, &mut da1, (h1, 1));

    // first hidden layer
    for (v, &z) in da1.iter_mut().zip(&acts.z1) {
        if z <= 0.0 {
            *v = 0.0;
        }
    }
    let dz1 = da1;
    gemm(h1, rows, d, &dz1, (1, h1), x, (d, 1), 0.0, &mut g.values[l1.weight.clone()], (d, 1));
    column_sums(&dz1, h1, &mut g.values[l1.bias.clone()]);
    g
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// One gradient step. With a mask only transferable scalars move, plainly.
pub fn apply_update(
    params: &mut CostModelParams,
    grads: &GradientSet,
    mask: Option<&ParamMask>,
    learning_rate: f64,
    mode: UpdateMode,
) -> Result<()> {
    params.check_same_shape(grads.values.len())?;
    match (mask, mode) {
        (Some(mask), _) => crate::lottery::transferable_step(params, grads, mask, learning_rate),
        (None, UpdateMode::Plain) => {
            for (w, g) in params.values.iter_mut().zip(&grads.values) {
                *w -= learning_rate * g;
            }
            Ok(())
        }
        (None, UpdateMode::Momentum(mu)) => {
            for ((w, v), g) in params.values.iter_mut().zip(params.momentum.iter_mut()).zip(&grads.values) {
                *v = mu * *v + g;
                *w -= learning_rate * *v;
            }
            Ok(())
        }
    }
}

/// `MOSM`, u32 version, u32 D, then weights and biases layer by layer,
/// followed by the momentum buffers in the same order. Little-endian.
pub fn serialize(params: &CostModelParams) -> Result<Vec<u8>> {
    let [d, h1, h2, _] = params.dims;
    if h1 != HIDDEN || h2 != HIDDEN {
        return Err(Error::BadDims(params.dims.to_vec()));
    }
    let mut out = Vec::with_capacity(12 + 16 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in params.values.iter().chain(&params.momentum) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<CostModelParams> {
    if bytes.len() < 12 {
        return Err(Error::CorruptStream(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::CorruptStream("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { expected: FORMAT_VERSION, found: version });
    }
    let d = word(8) as usize;
    if d == 0 {
        return Err(Error::CorruptStream("zero input dimension".into()));
    }
    let mut params = CostModelParams::zeros(&[d, HIDDEN, HIDDEN, 1])?;
    let n = params.len();
    let body = &bytes[12..];
    if body.len() != 16 * n {
        return Err(Error::CorruptStream(format!("expected {} payload bytes, found {}", 16 * n, body.len())));
    }
    let mut floats = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for slot in params.values.iter_mut().chain(params.momentum.iter_mut()) {
        let v = floats.next().expect("length checked");
        if !v.is_finite() {
            return Err(Error::CorruptStream("non-finite parameter".into()));
        }
        *slot = v;
    }
    Ok(params)
}

pub fn save(params: &CostModelParams, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, serialize(params)?)?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<CostModelParams> {
    deserialize(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_features<R: Rng>(rng: &mut R, rows: usize, d: usize) -> Vec<FeatureVector> {
        (0..rows).map(|_| FeatureVector((0..d).map(|_| rng.gen_range(0.0..1.0)).collect())).collect()
    }

    // Layer-by-layer evaluation written against the flat layout directly.
    fn hand_forward(p: &CostModelParams, x: &[f64]) -> f64 {
        let [d, h1, h2, _] = p.dims();
        let v = &p.values;
        let mut a1 = vec![0.0; h1];
        let b1 = d * h1;
        for o in 0..h1 {
            let mut s = v[b1 + o];
            for i in 0..d {
                s += v[o * d + i] * x[i];
            }
            a1[o] = s.max(0.0);
        }
        let w2 = b1 + h1;
        let b2 = w2 + h1 * h2;
        let mut a2 = vec![0.0; h2];
        for o in 0..h2 {
            let mut s = v[b2 + o];
            for i in 0..h1 {
                s += v[w2 + o * h1 + i] * a1[i];
            }
            a2[o] = s.max(0.0);
        }
        let w3 = b2 + h2;
        let mut s = v[w3 + h2];
        for i in 0..h2 {
            s += v[w3 + i] * a2[i];
        }
        s
    }

    #[test]
    fn parameter_count_of_default_net() {
        assert_eq!(param_count(&DEFAULT_DIMS), 271_873);
        assert_eq!(init_random(&DEFAULT_DIMS, 0).unwrap().len(), 271_873);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_random(&DEFAULT_DIMS, 0).unwrap();
        let b = init_random(&DEFAULT_DIMS, 0).unwrap();
        assert_eq!(a, b);
        for l in a.layers() {
            assert!(a.values[l.bias].iter().all(|&b| b == 0.0));
        }
        let l1 = &a.layers()[0];
        let w = &a.values[l1.weight.clone()];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        let lim = (6.0f64 / (16 + 512) as f64).sqrt();
        assert!(w.iter().all(|x| x.abs() <= lim));
    }

    #[test]
    fn bad_dims_rejected() {
        assert!(matches!(init_random(&[16, 512, 1], 0), Err(Error::BadDims(_))));
        assert!(matches!(init_random(&[16, 0, 8, 1], 0), Err(Error::BadDims(_))));
        assert!(matches!(init_random(&[16, 8, 8, 2], 0), Err(Error::BadDims(_))));
    }

    #[test]
    fn zero_model_scores_zero() {
        let p = CostModelParams::zeros(&DEFAULT_DIMS).unwrap();
        let s = predict_batch(&p, &[FeatureVector(vec![0.0; 16])]).unwrap();
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn predictions_match_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dims in [[4, 8, 8, 1], [16, 32, 16, 1], DEFAULT_DIMS] {
            let mut p = init_random(&dims, rng.gen()).unwrap();
            for v in p.values.iter_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
            let mut feats = rand_features(&mut rng, 9, dims[0]);
            feats.push(feats[0].clone());
            let s = predict_batch(&p, &feats).unwrap();
            assert_eq!(s[0].to_bits(), s[9].to_bits());
            for (f, got) in feats.iter().zip(&s) {
                let want = hand_forward(&p, f.as_slice());
                assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn dim_mismatch_reported() {
        let p = init_random(&[4, 8, 8, 1], 0).unwrap();
        let err = predict_batch(&p, &[FeatureVector(vec![0.0; 5])]);
        assert!(matches!(err, Err(Error::DimMismatch { expected: 4, got: 5 })));
    }

    #[test]
    fn ranking_loss_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((pairwise_ranking_loss(&[0.3, 0.3, 0.3], &[1.0, 2.0, 2.0]) - ln2).abs() < 1e-15);
        assert_eq!(pairwise_ranking_loss(&[1.0, 5.0], &[3.0, 3.0]), 0.0);
        let mut prev = f64::INFINITY;
        for m in [0.0, 1.0, 5.0, 20.0, 50.0] {
            let l = pairwise_ranking_loss(&[m, 0.0], &[2.0, 1.0]);
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn ranking_loss_matches_pair_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..8).map(|_| rng.gen_range(0..4) as f64).collect();
            let mut tot = 0.0;
            let mut cnt = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    if y[i] > y[j] {
                        tot += (1.0 + (-(s[i] - s[j])).exp()).ln();
                        cnt += 1.0;
                    }
                }
            }
            let want = if cnt > 0.0 { tot / cnt } else { 0.0 };
            assert!((pairwise_ranking_loss(&s, &y) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn no_ordered_pairs_gives_zero_gradient() {
        let p = init_random(&[4, 8, 8, 1], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = RankingBatch { features: rand_features(&mut rng, 5, 4), labels: vec![2.0; 5], task_id: "t".into() };
        let g = gradients(&p, &batch, None, 0.0).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn update_arithmetic() {
        let mut p = CostModelParams::zeros(&[1, 1, 1, 1]).unwrap();
        p.values[0] = 1.0;
        let mut g = GradientSet::zeros(p.len());
        let before = p.clone();
        apply_update(&mut p, &g, None, 0.001, UpdateMode::Plain).unwrap();
        assert_eq!(p, before);
        g.values[0] = 2.0;
        apply_update(&mut p, &g, None, 0.001, UpdateMode::Plain).unwrap();
        assert_eq!(p.values[0], 0.998);
        let none = ParamMask::from_bits(vec![false; p.len()], 0);
        let snap = p.clone();
        apply_update(&mut p, &g, Some(&none), 0.001, UpdateMode::Plain).unwrap();
        assert_eq!(p, snap);
        let short = GradientSet::zeros(2);
        assert!(matches!(apply_update(&mut p, &short, None, 0.1, UpdateMode::Plain), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = CostModelParams::zeros(&[1, 1, 1, 1]).unwrap();
        let mut g = GradientSet::zeros(p.len());
        g.values[0] = 1.0;
        apply_update(&mut p, &g, None, 0.1, UpdateMode::Momentum(0.9)).unwrap();
        apply_update(&mut p, &g, None, 0.1, UpdateMode::Momentum(0.9)).unwrap();
        assert!((p.values[0] - -(0.1 + 0.1 * 1.9)).abs() < 1e-15);
        assert!((p.momentum[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn serialization_roundtrip_and_errors() {
        let mut p = init_random(&DEFAULT_DIMS, 5).unwrap();
        p.momentum[17] = 0.25;
        let bytes = serialize(&p).unwrap();
        assert_eq!(&bytes[..4], b"MOSM");
        let q = deserialize(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(serialize(&q).unwrap(), bytes);
        assert!(matches!(deserialize(&bytes[..bytes.len() - 3]), Err(Error::CorruptStream(_))));
        assert!(matches!(deserialize(&bytes[..7]), Err(Error::CorruptStream(_))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(deserialize(&v2), Err(Error::VersionMismatch { found: 2, .. })));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(deserialize(&bad), Err(Error::CorruptStream(_))));
        assert!(matches!(serialize(&init_random(&[4, 8, 8, 1], 0).unwrap()), Err(Error::BadDims(_))));
    }
}
