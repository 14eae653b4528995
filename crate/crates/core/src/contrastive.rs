//! Supervised contrastive feature learning.
//!
//! Each sample contributes two jittered views. For anchor `i` in the batch of
//! views, the positives `P(i)` are the other views sharing its label and the
//! contrast set `A(i)` is every other view. The loss is
//! `Σ_i [ log Σ_{a∈A(i)} exp(z_i·z_a/τ) − mean_{p∈P(i)} z_i·z_p/τ ]`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::{Activation, AdamConfig, AdamState, Cache, Gradients, Mlp};
use crate::{rng, Error, Result};

/// Tolerance on `‖z‖ = 1` for batch members.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Sum after sorting, so the result does not depend on input order.
fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

/// `2N` unit-norm views with labels and the index of the sample each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    z: Vec<Vec<f64>>,
    labels: Vec<usize>,
    origin: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(z: Vec<Vec<f64>>, labels: Vec<usize>, origin: Vec<usize>) -> Result<Self> {
        let n = z.len();
        for len in [labels.len(), origin.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let d = z[0].len();
        for v in &z {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: v.len() });
            }
            if (norm(v) - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("embedding norm {} is not 1", norm(v))));
            }
        }
        let mut seen: Vec<(usize, usize)> = origin.iter().copied().zip(labels.iter().copied()).collect();
        seen.sort_unstable();
        for pair in seen.chunk_by(|a, b| a.0 == b.0) {
            if pair.len() != 2 {
                return Err(Error::InvalidArgument(format!("sample {} has {} views, expected 2", pair[0].0, pair.len())));
            }
            if pair[0].1 != pair[1].1 {
                return Err(Error::InvalidArgument(format!("views of sample {} carry different labels", pair[0].0)));
            }
        }
        Ok(EmbeddingBatch { z, labels, origin })
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Two views `x + ε`, `ε ~ N(0, σ²I)`, fully determined by `seed`.
pub fn augment_views(x: &[f64], seed: u64, jitter_sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(jitter_sigma >= 0.0) || !jitter_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("jitter sigma {jitter_sigma} must be finite and non-negative")));
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let view = |r: &mut ChaCha8Rng| -> Vec<f64> {
        x.iter()
            .map(|v| {
                let n: f64 = StandardNormal.sample(r);
                v + jitter_sigma * n
            })
            .collect()
    };
    let a = view(&mut r);
    let b = view(&mut r);
    Ok((a, b))
}

fn check_objective(z: &[Vec<f64>], labels: &[usize], tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    if z.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: z.len(), found: labels.len() });
    }
    for (i, l) in labels.iter().enumerate() {
        if !labels.iter().enumerate().any(|(j, m)| j != i && m == l) {
            return Err(Error::SingleViewLabel { label: *l });
        }
    }
    Ok(())
}

struct AnchorTerms {
    /// `log Σ_a exp(s_ia)` per anchor.
    log_norm: Vec<f64>,
    sims: Vec<Vec<f64>>,
}

fn anchor_terms(z: &[Vec<f64>], tau: f64) -> AnchorTerms {
    let n = z.len();
    let mut sims = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sims[i][j] = dot(&z[i], &z[j]) / tau;
            }
        }
    }
    let log_norm = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|a| *a != i).map(|a| sims[i][a]).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut exps: Vec<f64> = row.iter_mut().map(|s| libm::exp(*s - max)).collect();
            max + libm::log(sorted_sum(&mut exps))
        })
        .collect();
    AnchorTerms { log_norm, sims }
}

/// The contrastive objective on arbitrary (not necessarily normalized) vectors.
pub fn supcon_objective(z: &[Vec<f64>], labels: &[usize], tau: f64) -> Result<f64> {
    check_objective(z, labels, tau)?;
    let t = anchor_terms(z, tau);
    let mut per_anchor: Vec<f64> = (0..z.len())
        .map(|i| {
            let mut pos: Vec<f64> =
                (0..z.len()).filter(|p| *p != i && labels[*p] == labels[i]).map(|p| t.sims[i][p]).collect();
            let count = pos.len() as f64;
            t.log_norm[i] - sorted_sum(&mut pos) / count
        })
        .collect();
    Ok(sorted_sum(&mut per_anchor))
}

/// Gradient of [`supcon_objective`] with respect to each vector.
pub fn supcon_objective_gradient(z: &[Vec<f64>], labels: &[usize], tau: f64) -> Result<Vec<Vec<f64>>> {
    check_objective(z, labels, tau)?;
    let n = z.len();
    let t = anchor_terms(z, tau);
    // c[i][j] = ∂L/∂s_ij = softmax_ij − [j ∈ P(i)] / |P(i)|
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        let positives = (0..n).filter(|p| *p != i && labels[*p] == labels[i]).count() as f64;
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut v = libm::exp(t.sims[i][j] - t.log_norm[i]);
            if labels[j] == labels[i] {
                v -= 1.0 / positives;
            }
            c[i][j] = v;
        }
    }
    let d = z.first().map_or(0, Vec::len);
    Ok((0..n)
        .map(|k| {
            let mut g = vec![0.0; d];
            for j in 0..n {
                if j == k {
                    continue;
                }
                let w = (c[k][j] + c[j][k]) / tau;
                g.iter_mut().zip(&z[j]).for_each(|(acc, v)| *acc += w * v);
            }
            g
        })
        .collect())
}

pub fn supcon_loss(batch: &EmbeddingBatch, tau: f64) -> Result<f64> {
    supcon_objective(&batch.z, &batch.labels, tau)
}

/// `∂L/∂z_i` on the normalized embeddings; the normalization Jacobian is not applied.
pub fn supcon_gradient(batch: &EmbeddingBatch, tau: f64) -> Result<Vec<Vec<f64>>> {
    supcon_objective_gradient(&batch.z, &batch.labels, tau)
}

/// Feedforward encoder followed by the projection head; outputs are L2-normalized
/// unless `normalize` is off.
///
/// The last `projection_depth` layers of `net` form the projection head. They
/// only serve the contrastive objective; [`Encoder::represent`] stops before them.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    net: Mlp,
    projection_depth: usize,
    normalize: bool,
}

/// Saved state of one [`Encoder::forward`] call.
pub struct EncoderCache {
    net: Cache,
    raw_norm: f64,
    output: Vec<f64>,
}

impl Encoder {
    /// The network must end in an identity layer (the projection output).
    pub fn new(net: Mlp, projection_depth: usize, normalize: bool) -> Result<Self> {
        if net.layers().last().map(|l| l.activation()) != Some(Activation::Identity) {
            return Err(Error::InvalidArgument("projection head must end in an identity layer".into()));
        }
        if projection_depth == 0 || projection_depth > net.layers().len() {
            return Err(Error::InvalidArgument(format!(
                "projection depth {projection_depth} outside 1..={}",
                net.layers().len()
            )));
        }
        Ok(Encoder { net, projection_depth, normalize })
    }

    /// ReLU encoder layers `input → encoder..`, then a projection head with ReLU
    /// between its layers and an identity output.
    pub fn init(input_dim: usize, encoder: &[usize], projection: &[usize], normalize: bool, seed: u64, tag: &str) -> Result<Self> {
        if projection.is_empty() {
            return Err(Error::InvalidArgument("projection head needs at least one layer".into()));
        }
        let sizes: Vec<usize> = core::iter::once(input_dim).chain(encoder.iter().copied()).chain(projection.iter().copied()).collect();
        let mut acts = vec![Activation::Relu; sizes.len() - 1];
        *acts.last_mut().unwrap() = Activation::Identity;
        let mut r = rng::stream(seed, &format!("init/{tag}"));
        Encoder::new(Mlp::init(&sizes, &acts, &mut r)?, projection.len(), normalize)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn projection_depth(&self) -> usize {
        self.projection_depth
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Width of [`Encoder::represent`] outputs.
    pub fn representation_dim(&self) -> usize {
        let trunk = self.net.layers().len() - self.projection_depth;
        if trunk == 0 {
            self.net.input_dim()
        } else {
            self.net.layers()[trunk - 1].n_out()
        }
    }

    /// Encoder output before the projection head, the input to the evidential heads.
    pub fn represent(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.net.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.net.input_dim(), found: x.len() });
        }
        let trunk = self.net.layers().len() - self.projection_depth;
        let mut h = x.to_vec();
        for layer in &self.net.layers()[..trunk] {
            h = layer.apply(&h);
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, EncoderCache)> {
        let (raw, cache) = self.net.forward(x)?;
        let n = norm(&raw);
        let output = if self.normalize {
            if !(n > f64::MIN_POSITIVE) {
                return Err(Error::DegenerateEmbedding);
            }
            raw.iter().map(|v| v / n).collect()
        } else {
            raw
        };
        Ok((output.clone(), EncoderCache { net: cache, raw_norm: n, output }))
    }

    /// Parameter gradients given `∂L/∂z` at the encoder output.
    pub fn backward(&self, cache: &EncoderCache, upstream: &[f64]) -> Result<Gradients> {
        let d_raw: Vec<f64> = if self.normalize {
            // z = h/‖h‖  ⇒  ∂L/∂h = (g − z(z·g)) / ‖h‖
            let zg = dot(&cache.output, upstream);
            upstream.iter().zip(&cache.output).map(|(g, z)| (g - z * zg) / cache.raw_norm).collect()
        } else {
            upstream.to_vec()
        };
        Ok(self.net.backward(&cache.net, &d_raw)?.0)
    }
}

/// Embedding of one feature vector.
pub fn embed(encoder: &Encoder, x: &[f64]) -> Result<Vec<f64>> {
    Ok(encoder.forward(x)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub epochs: usize,
    /// Samples per batch; each contributes two views.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub jitter_sigma: f64,
    pub seed: u64,
    pub encoder_layers: Vec<usize>,
    pub projection_layers: Vec<usize>,
    pub normalize: bool,
    /// Distinguishes the random sub-streams of different branches under one seed.
    pub stream_tag: String,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            epochs: 10,
            batch_size: 14,
            learning_rate: 1e-3,
            tau: 0.05,
            jitter_sigma: 0.1,
            seed: 0,
            encoder_layers: vec![256, 128],
            projection_layers: vec![128, 128],
            normalize: true,
            stream_tag: "encoder".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderRun {
    pub encoder: Encoder,
    /// Mean per-anchor loss for each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Splits a shuffled order into batches; a trailing single sample joins the previous batch.
fn assemble_batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut batches: Vec<&[usize]> = order.chunks(batch_size).collect();
    if batches.len() > 1 && batches.last().map(|b| b.len()) == Some(1) {
        batches.pop();
        let start = (batches.len() - 1) * batch_size;
        *batches.last_mut().unwrap() = &order[start..];
    }
    batches
}

/// Trains one branch encoder with Adam on the contrastive loss.
pub fn train_encoder(features: &[Vec<f64>], labels: &[usize], config: &EncoderConfig) -> Result<EncoderRun> {
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: features.len(), found: labels.len() });
    }
    if config.batch_size < 2 {
        return Err(Error::InvalidArgument("batch size must be at least 2 samples".into()));
    }
    if !(config.tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {} must be positive", config.tau)));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: bad.len() });
    }
    let tag = &config.stream_tag;
    let mut encoder = Encoder::init(dim, &config.encoder_layers, &config.projection_layers, config.normalize, config.seed, tag)?;
    let mut adam = AdamState::new(&encoder.net, AdamConfig { lr: config.learning_rate, ..AdamConfig::default() });
    let mut shuffle = rng::stream(config.seed, &format!("shuffle/{tag}"));
    let mut augment = rng::stream(config.seed, &format!("augment/{tag}"));
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut anchors = 0usize;
        for batch in assemble_batches(&order, config.batch_size) {
            let mut z = Vec::with_capacity(2 * batch.len());
            let mut caches = Vec::with_capacity(2 * batch.len());
            let mut view_labels = Vec::with_capacity(2 * batch.len());
            for &idx in batch {
                let (a, b) = augment_views(&features[idx], augment.random(), config.jitter_sigma)?;
                for view in [a, b] {
                    let (out, cache) = encoder.forward(&view)?;
                    z.push(out);
                    caches.push(cache);
                    view_labels.push(labels[idx]);
                }
            }
            loss_sum += supcon_objective(&z, &view_labels, config.tau)?;
            anchors += z.len();
            let dz = supcon_objective_gradient(&z, &view_labels, config.tau)?;
            let mut grads = Gradients::zeros_like(&encoder.net);
            for (cache, g) in caches.iter().zip(&dz) {
                grads.add_assign(&encoder.backward(cache, g)?);
            }
            adam.step(&mut encoder.net, &grads)?;
        }
        epoch_losses.push(loss_sum / anchors as f64);
    }
    Ok(EncoderRun { encoder, epoch_losses })
}
