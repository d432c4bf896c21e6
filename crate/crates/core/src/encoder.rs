//! Desk-scale contrastive encoder and its NT-Xent trainer.
//!
//! A segment is summarized by temporal pooling (per-band means plus the
//! average magnitude difference of band-group envelopes at a ladder of
//! lags), standardized, and mapped through `linear -> tanh -> linear ->
//! L2-normalize`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentationSpec, Augmenter};
pub use crate::corpus::LoadedTrack;
use crate::corpus::{min_pair_duration, sample_pair};
use crate::error::{Error, Result};
use crate::melfront::{MelConfig, MelSpectrogram};
use crate::rng::{hash_id, stream};
use crate::tensor::{DType, Tensor};

/// Temporal pooling that turns a `U x M` segment into a fixed-length vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub band_groups: usize,
    /// Envelope lags in frames.
    pub lags: Vec<usize>,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        let mut lags: Vec<usize> = (0..25).map(|i| (2.0 * 2f64.powf(i as f64 / 4.0)).round() as usize).collect();
        lags.dedup();
        Self { band_groups: 4, lags }
    }
}

impl PoolingConfig {
    pub fn feature_len(&self, num_bands: usize) -> usize {
        num_bands + self.band_groups * self.lags.len()
    }

    pub fn pool(&self, x: &MelSpectrogram) -> Vec<f64> {
        let bands = x.num_bands();
        let frames = x.num_frames();
        let mut out = x.band_means();
        out.reserve(self.band_groups * self.lags.len());
        for g in 0..self.band_groups {
            let lo = g * bands / self.band_groups;
            let hi = ((g + 1) * bands / self.band_groups).max(lo + 1);
            let mut env = vec![0.0; frames];
            for u in lo..hi {
                for (e, v) in env.iter_mut().zip(x.row(u)) {
                    *e += v;
                }
            }
            let scale = 1.0 / (hi - lo) as f64;
            env.iter_mut().for_each(|e| *e *= scale);
            for &lag in &self.lags {
                let v = if lag >= frames {
                    0.0
                } else {
                    env[lag..].iter().zip(&env).map(|(a, b)| (a - b).abs()).sum::<f64>() / (frames - lag) as f64
                };
                out.push(v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_pairs: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub temperature: f64,
    pub momentum: f64,
    pub hidden_units: usize,
    pub embedding_dim: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_pairs: 64,
            total_steps: 5000,
            warmup_steps: 250,
            peak_lr: 0.001,
            temperature: 0.1,
            momentum: 0.0,
            hidden_units: 256,
            embedding_dim: 64,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "train.warmup_steps {} must be below train.total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("train.temperature must be positive".into()));
        }
        if self.batch_pairs < 2 {
            return Err(Error::Config("train.batch_pairs must be at least 2".into()));
        }
        if !(0.0..=0.9).contains(&self.momentum) {
            return Err(Error::Config("train.momentum must lie in [0, 0.9]".into()));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config("train.peak_lr must be finite and non-negative".into()));
        }
        if self.hidden_units == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("train.hidden_units and train.embedding_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak_lr`, then cosine decay to 0.
pub fn lr_at(step: usize, config: &TrainConfig) -> Result<f64> {
    if step > config.total_steps {
        return Err(Error::Contract(format!(
            "step {step} beyond total_steps {}",
            config.total_steps
        )));
    }
    let peak = config.peak_lr;
    let warm = config.warmup_steps;
    if step < warm {
        return Ok(peak * step as f64 / warm as f64);
    }
    let progress = (step - warm) as f64 / (config.total_steps - warm) as f64;
    Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// NT-Xent loss over `2B` vectors where rows `2i` and `2i + 1` are positives.
///
/// Similarities are cosines, so the returned gradient is with respect to
/// the raw input rows and is orthogonal to each row.
pub fn ntxent_loss(embeddings: &[Vec<f64>], temperature: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = embeddings.len();
    if n < 4 || n % 2 != 0 {
        return Err(Error::BatchSize(n / 2));
    }
    let norms: Vec<f64> = embeddings.iter().map(|v| dot(v, v).sqrt()).collect();
    if norms.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Parameter("zero-length embedding".into()));
    }
    let z: Vec<Vec<f64>> = embeddings
        .iter()
        .zip(&norms)
        .map(|(v, &r)| v.iter().map(|x| x / r).collect())
        .collect();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = dot(&z[i], &z[j]);
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    // a[i][j] = dL/ds_ij with row i coming from anchor i only
    let mut a = vec![0.0; n * n];
    let mut loss = 0.0;
    let inv = 1.0 / (n as f64 * temperature);
    for i in 0..n {
        let pos = i ^ 1;
        let row = &sim[i * n..(i + 1) * n];
        let max = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j] / temperature)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&j| j != i).map(|j| (row[j] / temperature - max).exp()).sum();
        let lse = max + denom.ln();
        loss += lse - row[pos] / temperature;
        for j in 0..n {
            if j == i {
                continue;
            }
            let p = (row[j] / temperature - lse).exp();
            a[i * n + j] = (p - if j == pos { 1.0 } else { 0.0 }) * inv;
        }
    }
    loss /= n as f64;

    let dim = embeddings[0].len();
    let grads = (0..n)
        .map(|i| {
            let mut gz = vec![0.0; dim];
            for j in 0..n {
                let w = a[i * n + j] + a[j * n + i];
                if w != 0.0 {
                    for (g, zj) in gz.iter_mut().zip(&z[j]) {
                        *g += w * zj;
                    }
                }
            }
            let radial = dot(&gz, &z[i]);
            gz.iter()
                .zip(&z[i])
                .map(|(g, zi)| (g - radial * zi) / norms[i])
                .collect()
        })
        .collect();
    Ok((loss, grads))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn normalize(v: &mut [f64]) -> f64 {
    let r = dot(v, v).sqrt();
    if r > 0.0 {
        v.iter_mut().for_each(|x| *x /= r);
    }
    r
}

/// Trainable weights plus the fixed pooling and input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub pooling: PoolingConfig,
    pub input_dim: usize,
    pub hidden: usize,
    pub dim: usize,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// `hidden x input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `dim x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct Activations {
    input: Vec<f64>,
    hidden: Vec<f64>,
    norm: f64,
    output: Vec<f64>,
}

impl EncoderParams {
    /// Xavier-uniform weights; standardization fitted on `pooled` features.
    pub fn init<R: Rng + ?Sized>(
        pooling: PoolingConfig,
        pooled: &[Vec<f64>],
        hidden: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input_dim = pooled.first().map(Vec::len).ok_or_else(|| Error::EmptyInput("no features".into()))?;
        let count = pooled.len() as f64;
        let mut input_mean = vec![0.0; input_dim];
        for f in pooled {
            for (m, v) in input_mean.iter_mut().zip(f) {
                *m += v / count;
            }
        }
        let mut var = vec![0.0; input_dim];
        for f in pooled {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&input_mean) {
                *s += (v - m).powi(2) / count;
            }
        }
        let input_scale = var.iter().map(|v| 1.0 / v.sqrt().max(1e-6)).collect();
        let xavier = |fan_in: usize, fan_out: usize, rng: &mut R| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect::<Vec<_>>()
        };
        let w1 = xavier(input_dim, hidden, rng);
        let w2 = xavier(hidden, dim, rng);
        Ok(Self {
            pooling,
            input_dim,
            hidden,
            dim,
            input_mean,
            input_scale,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; dim],
        })
    }

    fn forward_pooled(&self, pooled: &[f64]) -> Activations {
        let input: Vec<f64> = pooled
            .iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| (dot(&self.w1[h * self.input_dim..(h + 1) * self.input_dim], &input) + self.b1[h]).tanh())
            .collect();
        let mut output: Vec<f64> = (0..self.dim)
            .map(|d| dot(&self.w2[d * self.hidden..(d + 1) * self.hidden], &hidden) + self.b2[d])
            .collect();
        let norm = normalize(&mut output);
        Activations {
            input,
            hidden,
            norm,
            output,
        }
    }

    /// Unit-norm embedding of one segment.
    pub fn embed(&self, x: &MelSpectrogram) -> Vec<f64> {
        self.forward_pooled(&self.pooling.pool(x)).output
    }

    pub fn embed_pooled(&self, pooled: &[f64]) -> Vec<f64> {
        self.forward_pooled(pooled).output
    }

    fn flat(&self) -> Vec<f64> {
        [&self.input_mean, &self.input_scale, &self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }

    fn unflatten(&mut self, data: &[f64]) -> Result<()> {
        let sizes = [
            self.input_dim,
            self.input_dim,
            self.hidden * self.input_dim,
            self.hidden,
            self.dim * self.hidden,
            self.dim,
        ];
        if sizes.iter().sum::<usize>() != data.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} values, header implies {}",
                data.len(),
                sizes.iter().sum::<usize>()
            )));
        }
        let mut rest = data;
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        self.input_mean = take(sizes[0]);
        self.input_scale = take(sizes[1]);
        self.w1 = take(sizes[2]);
        self.b1 = take(sizes[3]);
        self.w2 = take(sizes[4]);
        self.b2 = take(sizes[5]);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub checkpoint_id: String,
    pub pooling: PoolingConfig,
    pub input_dim: usize,
    pub hidden: usize,
    pub dim: usize,
    pub mel: MelConfig,
    pub augmentation: AugmentationSpec,
    pub train: TrainConfig,
    pub seed: u64,
    pub step: usize,
    pub config_hash: String,
    /// Tensor layout inside the EMLT payload, in order.
    pub layout: Vec<(String, Vec<usize>)>,
}

/// Encoder weights with the provenance needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: EncoderParams,
}

impl Checkpoint {
    pub fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
        (dir.join(format!("{name}.json")), dir.join(format!("{name}.emlt")))
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let (json, emlt) = Self::paths(dir, name);
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let flat = self.params.flat();
        Tensor::new(vec![flat.len()], flat)?.write(&emlt, DType::F64)?;
        fs::write(&json, serde_json::to_string_pretty(&self.header)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let (json, emlt) = Self::paths(dir, name);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let header: CheckpointHeader = serde_json::from_str(&text)?;
        let tensor = Tensor::read(&emlt)?;
        let mut params = EncoderParams {
            pooling: header.pooling.clone(),
            input_dim: header.input_dim,
            hidden: header.hidden,
            dim: header.dim,
            input_mean: Vec::new(),
            input_scale: Vec::new(),
            w1: Vec::new(),
            b1: Vec::new(),
            w2: Vec::new(),
            b2: Vec::new(),
        };
        params.unflatten(&tensor.data)?;
        Ok(Self { header, params })
    }
}

pub fn checkpoint_layout(p: &EncoderParams) -> Vec<(String, Vec<usize>)> {
    vec![
        ("input_mean".into(), vec![p.input_dim]),
        ("input_scale".into(), vec![p.input_dim]),
        ("w1".into(), vec![p.hidden, p.input_dim]),
        ("b1".into(), vec![p.hidden]),
        ("w2".into(), vec![p.dim, p.hidden]),
        ("b2".into(), vec![p.dim]),
    ]
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub losses: Vec<f64>,
}

#[derive(Default)]
struct Grads {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

const STEP_STREAM: u64 = 0x7374_6570;
const INIT_STREAM: u64 = 0x696e_6974;

/// Augmented, pooled views for one batch: rows `2i`, `2i + 1` form pair `i`.
pub fn batch_views(
    tracks: &[&LoadedTrack],
    augmenter: &Augmenter,
    spec: &AugmentationSpec,
    pooling: &PoolingConfig,
    seed: u64,
    step: usize,
) -> Result<Vec<Vec<f64>>> {
    let views: Vec<Result<[Vec<f64>; 2]>> = tracks
        .par_iter()
        .enumerate()
        .map(|(slot, t)| {
            let mut rng = stream(seed, &[hash_id(&t.record.track_id), step as u64, slot as u64]);
            let pair = sample_pair(&t.record, &t.features, spec.context_seconds, &mut rng)?;
            let (a, _) = augmenter.apply_chain(&pair.anchor, spec, &mut rng)?;
            let (b, _) = augmenter.apply_chain(&pair.positive, spec, &mut rng)?;
            Ok([pooling.pool(&a), pooling.pool(&b)])
        })
        .collect();
    let mut out = Vec::with_capacity(tracks.len() * 2);
    for v in views {
        let [a, b] = v?;
        out.push(a);
        out.push(b);
    }
    Ok(out)
}

/// Trains from random initialization with SGD (optionally with momentum).
///
/// Augmentation runs on the current rayon pool; every random draw comes from
/// a stream keyed by `(seed, track, step, slot)` and gradients are reduced in
/// batch order, so the result does not depend on the number of workers.
pub fn train(
    tracks: &[LoadedTrack],
    spec: &AugmentationSpec,
    config: &TrainConfig,
    pooling: &PoolingConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    let usable: Vec<&LoadedTrack> = tracks
        .iter()
        .filter(|t| {
            t.record.duration_s >= min_pair_duration(spec.context_seconds)
                && t.features.num_frames() >= t.features.config.frames_for_seconds(spec.context_seconds)
        })
        .collect();
    if usable.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 tracks of {} s or longer, have {}",
            min_pair_duration(spec.context_seconds),
            usable.len()
        )));
    }
    let mel = usable[0].features.config.clone();
    let augmenter = Augmenter::new(&mel)?;
    let seed = config.rng_seed;

    // standardization statistics from unaugmented center crops
    let out_frames = mel.frames_for_seconds(spec.output_seconds);
    let mut init_rng = stream(seed, &[INIT_STREAM]);
    let stats: Vec<Vec<f64>> = usable
        .iter()
        .flat_map(|t| {
            let m = t.features.num_frames();
            let mut rows = Vec::new();
            let mut start = 0;
            while start + out_frames <= m {
                rows.push(pooling.pool(&t.features.slice_frames(start, out_frames).unwrap()));
                start += out_frames;
            }
            rows
        })
        .collect();
    let mut params = EncoderParams::init(
        pooling.clone(),
        &stats,
        config.hidden_units,
        config.embedding_dim,
        &mut init_rng,
    )?;

    let batch = config.batch_pairs.min(usable.len());
    let mut velocity = Grads {
        w1: vec![0.0; params.w1.len()],
        b1: vec![0.0; params.b1.len()],
        w2: vec![0.0; params.w2.len()],
        b2: vec![0.0; params.b2.len()],
    };
    let mut losses = Vec::with_capacity(config.total_steps);
    for step in 0..config.total_steps {
        let mut step_rng = stream(seed, &[STEP_STREAM, step as u64]);
        let chosen: Vec<&LoadedTrack> = sample_indices(&mut step_rng, usable.len(), batch)
            .into_iter()
            .map(|i| usable[i])
            .collect();
        let views = batch_views(&chosen, &augmenter, spec, pooling, seed, step)?;
        let acts: Vec<Activations> = views.iter().map(|v| params.forward_pooled(v)).collect();
        let outputs: Vec<Vec<f64>> = acts.iter().map(|a| a.output.clone()).collect();
        if outputs.iter().any(|o| !(dot(o, o).sqrt() > 0.0)) {
            return Err(Error::Divergence { step });
        }
        let (loss, grads) = ntxent_loss(&outputs, config.temperature)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        losses.push(loss);
        on_step(step, loss);

        let g = backward(&params, &acts, &grads);
        let lr = lr_at(step, config)?;
        let mu = config.momentum;
        let update = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        };
        update(&mut params.w1, &mut velocity.w1, &g.w1);
        update(&mut params.b1, &mut velocity.b1, &g.b1);
        update(&mut params.w2, &mut velocity.w2, &g.w2);
        update(&mut params.b2, &mut velocity.b2, &g.b2);
        if params.w1.iter().chain(&params.w2).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
    }
    Ok(TrainOutcome { params, losses })
}

/// Backpropagates output gradients (w.r.t. the unit-norm outputs, already
/// tangent to them) to every weight.
fn backward(params: &EncoderParams, acts: &[Activations], out_grads: &[Vec<f64>]) -> Grads {
    let (fi, hd, dd) = (params.input_dim, params.hidden, params.dim);
    let mut g = Grads {
        w1: vec![0.0; hd * fi],
        b1: vec![0.0; hd],
        w2: vec![0.0; dd * hd],
        b2: vec![0.0; dd],
    };
    for (act, gz) in acts.iter().zip(out_grads) {
        // z = h / |h| and gz is tangent, so dL/dh = gz / |h|
        let gh: Vec<f64> = gz.iter().map(|v| v / act.norm).collect();
        let mut ga = vec![0.0; hd];
        for d in 0..dd {
            g.b2[d] += gh[d];
            let row = &params.w2[d * hd..(d + 1) * hd];
            let grow = &mut g.w2[d * hd..(d + 1) * hd];
            for h in 0..hd {
                grow[h] += gh[d] * act.hidden[h];
                ga[h] += gh[d] * row[h];
            }
        }
        for h in 0..hd {
            let gp = ga[h] * (1.0 - act.hidden[h] * act.hidden[h]);
            g.b1[h] += gp;
            let grow = &mut g.w1[h * fi..(h + 1) * fi];
            for (w, x) in grow.iter_mut().zip(&act.input) {
                *w += gp * x;
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let mut v = v.to_vec();
        normalize(&mut v);
        v
    }

    #[test]
    fn lr_schedule_anchors() {
        let cfg = TrainConfig {
            total_steps: 100_000,
            warmup_steps: 5_000,
            peak_lr: 0.001,
            ..Default::default()
        };
        assert_eq!(lr_at(0, &cfg).unwrap(), 0.0);
        assert_eq!(lr_at(5_000, &cfg).unwrap(), 0.001);
        assert!(lr_at(100_000, &cfg).unwrap().abs() < 1e-12);
        assert!((lr_at(2_500, &cfg).unwrap() - 0.0005).abs() < 1e-15);
        assert!((lr_at(52_500, &cfg).unwrap() - 0.0005).abs() < 1e-12);
        assert!(matches!(lr_at(100_001, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn train_config_validation() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainConfig { warmup_steps: 5000, ..ok.clone() },
            TrainConfig { temperature: 0.0, ..ok.clone() },
            TrainConfig { momentum: 0.95, ..ok.clone() },
            TrainConfig { batch_pairs: 1, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn ntxent_needs_two_pairs() {
        let v = vec![unit(&[1.0, 0.0]), unit(&[1.0, 0.0])];
        assert!(matches!(ntxent_loss(&v, 0.1), Err(Error::BatchSize(1))));
    }

    #[test]
    fn ntxent_uniform_batch() {
        let v = vec![unit(&[1.0, 2.0, 3.0]); 8];
        let (loss, _) = ntxent_loss(&v, 0.1).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ntxent_gradients_are_tangent() {
        let mut rng = stream(1, &[]);
        let v: Vec<Vec<f64>> = (0..6).map(|_| unit(&(0..5).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())).collect();
        let (_, g) = ntxent_loss(&v, 0.5).unwrap();
        for (gi, vi) in g.iter().zip(&v) {
            assert!(dot(gi, vi).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_shape_and_lags() {
        let p = PoolingConfig::default();
        assert_eq!(p.lags.first(), Some(&2));
        assert_eq!(p.lags.last(), Some(&128));
        assert!(p.lags.windows(2).all(|w| w[0] < w[1]));
        let x = MelSpectrogram::from_fn(MelConfig::default(), 300, "x", |u, m| ((u * 7 + m) % 13) as f64);
        assert_eq!(p.pool(&x).len(), p.feature_len(96));
    }

    #[test]
    fn pooled_envelope_sees_period() {
        // a 50-frame periodic envelope has zero difference at lag 50 only
        let p = PoolingConfig {
            band_groups: 1,
            lags: vec![25, 50],
        };
        let x = MelSpectrogram::from_fn(MelConfig::default(), 300, "x", |_, m| if m % 50 < 5 { 1.0 } else { 0.0 });
        let f = p.pool(&x);
        assert!(f[96] > 0.1);
        assert!(f[97].abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = stream(2, &[]);
        let pooling = PoolingConfig::default();
        let feats: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..pooling.feature_len(96)).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let params = EncoderParams::init(pooling, &feats, 16, 8, &mut rng).unwrap();
        let ck = Checkpoint {
            header: CheckpointHeader {
                checkpoint_id: "x".into(),
                pooling: params.pooling.clone(),
                input_dim: params.input_dim,
                hidden: 16,
                dim: 8,
                mel: MelConfig::default(),
                augmentation: AugmentationSpec::default(),
                train: TrainConfig::default(),
                seed: 0,
                step: 0,
                config_hash: "h".into(),
                layout: checkpoint_layout(&params),
            },
            params,
        };
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path(), "enc").unwrap();
        assert_eq!(Checkpoint::load(dir.path(), "enc").unwrap(), ck);
        let out = ck.params.embed_pooled(&feats[0]);
        assert!((dot(&out, &out) - 1.0).abs() < 1e-12);
    }
}
