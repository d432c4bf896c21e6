//! Tempo classification probe over frozen embeddings.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Manifest, Split};
use crate::embedspace::EmbeddingSet;
use crate::encoder::dot;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{DType, Tensor};

pub const MIN_BPM: usize = 30;
pub const MAX_BPM: usize = 300;
pub const NUM_CLASSES: usize = MAX_BPM - MIN_BPM + 1;
pub const SMOOTHING_TAPS: usize = 15;
pub const TEMPO_TOLERANCE: f64 = 0.04;
pub const ACC2_FACTORS: [f64; 5] = [1.0 / 3.0, 0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden_units: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub rng_seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden_units: 512,
            dropout: 0.75,
            batch_size: 64,
            steps: 2000,
            learning_rate: 0.05,
            momentum: 0.9,
            rng_seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("probe.dropout must lie in [0, 1)".into()));
        }
        if self.hidden_units == 0 || self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config("probe.hidden_units, probe.batch_size and probe.steps must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("probe.learning_rate must be positive".into()));
        }
        if !(0.0..=0.9).contains(&self.momentum) {
            return Err(Error::Config("probe.momentum must lie in [0, 0.9]".into()));
        }
        Ok(())
    }
}

/// `embedding -> ReLU(512) -> 271 class scores` for integer BPM 30..=300.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// `hidden x input_dim`, row-major.
    #[serde(skip)]
    pub w1: Vec<f64>,
    #[serde(skip)]
    pub b1: Vec<f64>,
    /// `NUM_CLASSES x hidden`, row-major.
    #[serde(skip)]
    pub w2: Vec<f64>,
    #[serde(skip)]
    pub b2: Vec<f64>,
}

impl ProbeModel {
    fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, dropout: f64, rng: &mut R) -> Self {
        let he = |fan_in: usize, n: usize, rng: &mut R| {
            let a = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a)).collect::<Vec<_>>()
        };
        let w1 = he(input_dim, hidden * input_dim, rng);
        let w2 = he(hidden, NUM_CLASSES * hidden, rng)
            .into_iter()
            .map(|w| w * 0.1)
            .collect();
        Self {
            input_dim,
            hidden,
            dropout,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; NUM_CLASSES],
        }
    }

    fn hidden_layer(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| (dot(&self.w1[h * self.input_dim..(h + 1) * self.input_dim], x) + self.b1[h]).max(0.0))
            .collect()
    }

    fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        (0..NUM_CLASSES)
            .map(|c| dot(&self.w2[c * self.hidden..(c + 1) * self.hidden], hidden) + self.b2[c])
            .collect()
    }

    /// Softmax class probabilities, dropout inactive.
    pub fn scores(&self, embedding: &[f64]) -> Vec<f64> {
        softmax(&self.logits(&self.hidden_layer(embedding)))
    }

    pub fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
        (dir.join(format!("{name}.json")), dir.join(format!("{name}.emlt")))
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let (json, emlt) = Self::paths(dir, name);
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let flat: Vec<f64> = [&self.w1, &self.b1, &self.w2, &self.b2].iter().flat_map(|v| v.iter().copied()).collect();
        Tensor::new(vec![flat.len()], flat)?.write(&emlt, DType::F64)?;
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let (json, emlt) = Self::paths(dir, name);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let mut model: ProbeModel = serde_json::from_str(&text)?;
        let data = Tensor::read(&emlt)?.data;
        let sizes = [
            model.hidden * model.input_dim,
            model.hidden,
            NUM_CLASSES * model.hidden,
            NUM_CLASSES,
        ];
        if data.len() != sizes.iter().sum::<usize>() {
            return Err(Error::Format {
                path: emlt,
                reason: format!("{} values do not fit the header dimensions", data.len()),
            });
        }
        let (w1, rest) = data.split_at(sizes[0]);
        let (b1, rest) = rest.split_at(sizes[1]);
        let (w2, b2) = rest.split_at(sizes[2]);
        model.w1 = w1.to_vec();
        model.b1 = b1.to_vec();
        model.w2 = w2.to_vec();
        model.b2 = b2.to_vec();
        Ok(model)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Class index of an integer tempo.
pub fn bpm_class(bpm: f64) -> Result<usize> {
    let r = bpm.round();
    if !(r >= MIN_BPM as f64 && r <= MAX_BPM as f64) {
        return Err(Error::Data(format!("tempo {bpm} outside {MIN_BPM}..={MAX_BPM} BPM")));
    }
    Ok(r as usize - MIN_BPM)
}

/// Labeled training rows `(embedding, class)` from the given split.
fn labeled_rows<'a>(set: &'a EmbeddingSet, manifest: &Manifest, split: Split) -> Result<Vec<(&'a [f64], usize)>> {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for id in set.ids() {
        let Some(rec) = manifest.get(id) else {
            return Err(Error::Lookup(format!("track {id} is not in the manifest")));
        };
        if rec.split != split {
            continue;
        }
        match rec.bpm {
            Some(b) => rows.push((set.vector(id).unwrap(), bpm_class(b)?)),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("tracks without a tempo label: {}", missing.join(", "))));
    }
    Ok(rows)
}

/// Trains on the train-split members of `set` with SGD on softmax
/// cross-entropy; dropout is applied to the hidden layer during training.
pub fn train_probe(set: &EmbeddingSet, manifest: &Manifest, config: &ProbeConfig) -> Result<(ProbeModel, Vec<f64>)> {
    config.validate()?;
    let rows = labeled_rows(set, manifest, Split::Train)?;
    let mut classes: Vec<usize> = rows.iter().map(|r| r.1).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Data("probe training needs at least two distinct tempo classes".into()));
    }
    let mut rng = stream(config.rng_seed, &[0x7072_6f62]);
    let mut model = ProbeModel::init(set.dim(), config.hidden_units, config.dropout, &mut rng);
    let (fi, hd) = (model.input_dim, model.hidden);
    let keep = 1.0 - config.dropout;
    let batch = config.batch_size.min(rows.len());
    let mut vel = [
        vec![0.0; model.w1.len()],
        vec![0.0; model.b1.len()],
        vec![0.0; model.w2.len()],
        vec![0.0; model.b2.len()],
    ];
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let mut g = [
            vec![0.0; model.w1.len()],
            vec![0.0; model.b1.len()],
            vec![0.0; model.w2.len()],
            vec![0.0; model.b2.len()],
        ];
        let mut loss = 0.0;
        for i in sample_indices(&mut rng, rows.len(), batch) {
            let (x, target) = rows[i];
            let mut h = model.hidden_layer(x);
            let mask: Vec<f64> = (0..hd)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            h.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            let mut p = softmax(&model.logits(&h));
            loss -= p[target].max(1e-300).ln();
            p[target] -= 1.0;
            let mut gh = vec![0.0; hd];
            for (c, pc) in p.iter().enumerate() {
                g[3][c] += pc;
                let row = &model.w2[c * hd..(c + 1) * hd];
                let grow = &mut g[2][c * hd..(c + 1) * hd];
                for j in 0..hd {
                    grow[j] += pc * h[j];
                    gh[j] += pc * row[j];
                }
            }
            for j in 0..hd {
                if h[j] <= 0.0 {
                    continue;
                }
                let gp = gh[j] * mask[j];
                g[1][j] += gp;
                for (w, xv) in g[0][j * fi..(j + 1) * fi].iter_mut().zip(x) {
                    *w += gp * xv;
                }
            }
        }
        let scale = 1.0 / batch as f64;
        losses.push(loss * scale);
        if !loss.is_finite() {
            return Err(Error::Divergence { step: losses.len() - 1 });
        }
        let params = [&mut model.w1, &mut model.b1, &mut model.w2, &mut model.b2];
        for ((p, v), g) in params.into_iter().zip(vel.iter_mut()).zip(&g) {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = config.momentum * *v + g * scale;
                *p -= config.learning_rate * *v;
            }
        }
    }
    Ok((model, losses))
}

/// Symmetric Hamming window `0.54 - 0.46 cos(2 pi n / (taps - 1))`.
pub fn hamming(taps: usize) -> Vec<f64> {
    (0..taps)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (taps - 1) as f64).cos())
        .collect()
}

/// Same-length, zero-padded, centered convolution with a 15-tap Hamming window.
pub fn smooth_scores(scores: &[f64]) -> Vec<f64> {
    let w = hamming(SMOOTHING_TAPS);
    let half = (SMOOTHING_TAPS / 2) as isize;
    let n = scores.len() as isize;
    (0..n)
        .map(|i| {
            (-half..=half)
                .filter(|&o| (0..n).contains(&(i + o)))
                .map(|o| w[(o + half) as usize] * scores[(i + o) as usize])
                .sum()
        })
        .collect()
}

/// `30 + argmax` of the smoothed scores; ties go to the lowest tempo.
pub fn estimate_from_scores(scores: &[f64]) -> usize {
    let smoothed = smooth_scores(scores);
    let mut best = 0;
    for (i, v) in smoothed.iter().enumerate() {
        if *v > smoothed[best] {
            best = i;
        }
    }
    MIN_BPM + best
}

pub fn estimate_tempo(model: &ProbeModel, embedding: &[f64]) -> usize {
    estimate_from_scores(&model.scores(embedding))
}

fn within(estimate: f64, target: f64) -> bool {
    (estimate - target).abs() / target <= TEMPO_TOLERANCE
}

pub fn acc1_hit(estimate: f64, truth: f64) -> bool {
    within(estimate, truth)
}

pub fn acc2_hit(estimate: f64, truth: f64) -> bool {
    ACC2_FACTORS.iter().any(|o| within(estimate, truth * o))
}

fn accuracy(estimates: &[f64], truths: &[f64], hit: fn(f64, f64) -> bool) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty evaluation".into()));
    }
    if estimates.len() != truths.len() {
        return Err(Error::Parameter(format!(
            "{} estimates against {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let hits = estimates.iter().zip(truths).filter(|(e, t)| hit(**e, **t)).count();
    Ok(hits as f64 / estimates.len() as f64)
}

/// Fraction within 4% of the true tempo.
pub fn acc1(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    accuracy(estimates, truths, acc1_hit)
}

/// Fraction within 4% of the true tempo times any of 1/3, 1/2, 1, 2, 3.
pub fn acc2(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    accuracy(estimates, truths, acc2_hit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub track_id: String,
    pub truth: f64,
    pub estimate: usize,
    pub acc1_hit: bool,
    pub acc2_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEvaluation {
    pub rows: Vec<ProbeRow>,
    pub acc1: f64,
    pub acc2: f64,
}

/// Scores every member of `split` that has a tempo label.
pub fn evaluate_probe(model: &ProbeModel, set: &EmbeddingSet, manifest: &Manifest, split: Split) -> Result<ProbeEvaluation> {
    let mut rows = Vec::new();
    for id in set.ids() {
        let rec = manifest
            .get(id)
            .ok_or_else(|| Error::Lookup(format!("track {id} is not in the manifest")))?;
        let (true, Some(truth)) = (rec.split == split, rec.bpm) else {
            continue;
        };
        let estimate = estimate_tempo(model, set.vector(id).unwrap());
        rows.push(ProbeRow {
            track_id: id.clone(),
            truth,
            estimate,
            acc1_hit: acc1_hit(estimate as f64, truth),
            acc2_hit: acc2_hit(estimate as f64, truth),
        });
    }
    let est: Vec<f64> = rows.iter().map(|r| r.estimate as f64).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.truth).collect();
    Ok(ProbeEvaluation {
        acc1: acc1(&est, &truth)?,
        acc2: acc2(&est, &truth)?,
        rows,
    })
}

impl ProbeEvaluation {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let as_format = |e: csv::Error| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(as_format)?;
        for row in &self.rows {
            w.serialize(row).map_err(as_format)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TrackRecord;
    use crate::embedspace::Provenance;

    fn one_hot(bpm: usize) -> Vec<f64> {
        let mut s = vec![0.0; NUM_CLASSES];
        s[bpm - MIN_BPM] = 1.0;
        s
    }

    #[test]
    fn single_peak_survives_smoothing() {
        assert_eq!(estimate_from_scores(&one_hot(90)), 90);
        assert_eq!(estimate_from_scores(&one_hot(30)), 30);
        assert_eq!(estimate_from_scores(&one_hot(300)), 300);
    }

    #[test]
    fn equal_peaks_pick_lower_tempo() {
        let mut s = one_hot(100);
        s[200 - MIN_BPM] = 1.0;
        assert_eq!(estimate_from_scores(&s), 100);
    }

    #[test]
    fn cluster_beats_isolated_peak() {
        let mut s = vec![0.0; NUM_CLASSES];
        s[119 - MIN_BPM] = 0.3;
        s[120 - MIN_BPM] = 0.4;
        s[121 - MIN_BPM] = 0.3;
        s[240 - MIN_BPM] = 0.45;
        assert_eq!(estimate_from_scores(&s), 120);
    }

    #[test]
    fn hamming_is_symmetric_with_unit_peak() {
        let w = hamming(15);
        assert!((w[7] - 1.0).abs() < 1e-15);
        assert!((w[0] - 0.08).abs() < 1e-15);
        for i in 0..15 {
            assert!((w[i] - w[14 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn accuracy_boundaries() {
        assert_eq!(acc1(&[120.0], &[120.0]).unwrap(), 1.0);
        assert_eq!(acc2(&[120.0], &[120.0]).unwrap(), 1.0);
        assert_eq!(acc1(&[240.0], &[120.0]).unwrap(), 0.0);
        assert_eq!(acc2(&[240.0], &[120.0]).unwrap(), 1.0);
        assert_eq!(acc1(&[124.0], &[120.0]).unwrap(), 1.0);
        assert_eq!(acc1(&[125.0], &[120.0]).unwrap(), 0.0);
        assert!(matches!(acc1(&[], &[]), Err(Error::UndefinedMetric(_))));
    }

    fn toy(n: usize) -> (EmbeddingSet, Manifest) {
        let mut entries = Vec::new();
        let mut records = Vec::new();
        for i in 0..n {
            let (bpm, v) = if i % 2 == 0 { (80.0, vec![1.0, 0.0]) } else { (150.0, vec![0.0, 1.0]) };
            let id = format!("t{i:02}");
            entries.push((id.clone(), v));
            records.push(TrackRecord {
                track_id: id.clone(),
                feature_path: format!("features/{id}.emlt").into(),
                duration_s: 20.0,
                bpm: Some(bpm),
                key_label: None,
                tags: vec![],
                split: if i < n * 3 / 4 { Split::Train } else { Split::Test },
            });
        }
        let prov = Provenance {
            checkpoint_id: "toy".into(),
            chain: "none".into(),
            seed: 0,
            config_hash: "h".into(),
        };
        (EmbeddingSet::new(prov, entries).unwrap(), Manifest::new("/", records).unwrap())
    }

    #[test]
    fn separable_toy_is_learned_deterministically() {
        let (set, manifest) = toy(40);
        let cfg = ProbeConfig {
            steps: 150,
            hidden_units: 32,
            batch_size: 16,
            ..Default::default()
        };
        let (model, losses) = train_probe(&set, &manifest, &cfg).unwrap();
        let train = evaluate_probe(&model, &set, &manifest, Split::Train).unwrap();
        assert_eq!(train.acc1, 1.0);
        let test = evaluate_probe(&model, &set, &manifest, Split::Test).unwrap();
        assert!(test.acc2 >= test.acc1);
        assert!(losses.last().unwrap() < &losses[0]);
        let (again, _) = train_probe(&set, &manifest, &cfg).unwrap();
        assert_eq!(model, again);
        assert_eq!(model.w1, again.w1);

        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path(), "probe").unwrap();
        let loaded = ProbeModel::load(dir.path(), "probe").unwrap();
        assert_eq!(loaded.w2, model.w2);
        assert_eq!(loaded.b2, model.b2);
    }

    #[test]
    fn missing_tempo_is_reported() {
        let (set, manifest) = toy(8);
        let mut records: Vec<TrackRecord> = manifest.tracks().to_vec();
        records[1].bpm = None;
        let manifest = Manifest::new("/", records).unwrap();
        let err = train_probe(&set, &manifest, &ProbeConfig::default()).unwrap_err();
        assert!(err.to_string().contains("t01"), "{err}");
    }
}
