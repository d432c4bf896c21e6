//! Track manifests, local positive-pair sampling and the synthetic corpus.
//!
//! Synthetic tracks mix a sustained triad (known key) with a percussion
//! pattern (known tempo). Tags describe the timbre family, the rhythmic
//! density and the register, giving an 8-tag vocabulary.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::audio::{write_wav, Pcm};
use crate::error::{Error, Result};
use crate::melfront::{MelConfig, MelFrontend, MelSpectrogram};
use crate::tensor::Tensor;
use crate::rng::{hash_id, stream};

/// Maximum offset between the two segments of a positive pair.
pub const PAIR_RADIUS_S: f64 = 5.0;
pub const BPM_LIMITS: (f64, f64) = (30.0, 300.0);

const PITCH_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

/// One of the 24 major/minor keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyLabel {
    pub root: u8,
    pub minor: bool,
}

impl KeyLabel {
    pub fn all() -> impl Iterator<Item = KeyLabel> {
        (0..24u8).map(|i| KeyLabel {
            root: i % 12,
            minor: i >= 12,
        })
    }

    pub fn index(&self) -> usize {
        self.root as usize + if self.minor { 12 } else { 0 }
    }
}

impl fmt::Display for KeyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = if self.minor { "minor" } else { "major" };
        write!(f, "{}:{}", PITCH_NAMES[self.root as usize], mode)
    }
}

impl FromStr for KeyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("unknown key label {s:?}"));
        let (name, mode) = s.split_once(':').ok_or_else(bad)?;
        let root = PITCH_NAMES.iter().position(|p| *p == name).ok_or_else(bad)? as u8;
        let minor = match mode {
            "major" => false,
            "minor" => true,
            _ => return Err(bad()),
        };
        Ok(KeyLabel { root, minor })
    }
}

impl Serialize for KeyLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KeyLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub track_id: String,
    pub feature_path: PathBuf,
    pub duration_s: f64,
    pub bpm: Option<f64>,
    pub key_label: Option<KeyLabel>,
    pub tags: Vec<String>,
    pub split: Split,
}

impl TrackRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(bpm) = self.bpm {
            if !(BPM_LIMITS.0..=BPM_LIMITS.1).contains(&bpm) {
                return Err(Error::Data(format!(
                    "{}: bpm {bpm} outside [{}, {}]",
                    self.track_id, BPM_LIMITS.0, BPM_LIMITS.1
                )));
            }
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Data(format!("{}: invalid duration", self.track_id)));
        }
        Ok(())
    }
}

/// Tracks with an id index. Relative feature paths resolve against `root`.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub root: PathBuf,
    tracks: Vec<TrackRecord>,
    index: HashMap<String, usize>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, tracks: Vec<TrackRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tracks.len());
        for (i, t) in tracks.iter().enumerate() {
            t.validate()?;
            if index.insert(t.track_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate track_id {}", t.track_id)));
            }
        }
        Ok(Self {
            root: root.into(),
            tracks,
            index,
        })
    }

    pub fn tracks(&self) -> &[TrackRecord] {
        &self.tracks
    }

    pub fn get(&self, id: &str) -> Option<&TrackRecord> {
        self.index.get(id).map(|&i| &self.tracks[i])
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TrackRecord> {
        self.tracks.iter().filter(move |t| t.split == split)
    }

    pub fn feature_file(&self, track: &TrackRecord) -> PathBuf {
        self.root.join(&track.feature_path)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for t in &self.tracks {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(root: impl Into<PathBuf>, text: &str) -> Result<Self> {
        let tracks = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Data(format!("manifest line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<TrackRecord>>>()?;
        Self::new(root, tracks)
    }

    /// Loads `path`; relative feature paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        Self::from_jsonl(path.parent().unwrap_or(Path::new(".")), &text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Two nearby segments of one track.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub anchor: MelSpectrogram,
    pub positive: MelSpectrogram,
    pub track_id: String,
    pub anchor_offset_s: f64,
    pub positive_offset_s: f64,
}

/// Shortest track that [`sample_pair`] accepts.
pub fn min_pair_duration(context_s: f64) -> f64 {
    2.0 * context_s + PAIR_RADIUS_S
}

/// Samples an anchor segment uniformly over the track and a positive
/// uniformly within ±5 s of it, each `context_s` long.
pub fn sample_pair<R: Rng + ?Sized>(
    track: &TrackRecord,
    features: &MelSpectrogram,
    context_s: f64,
    rng: &mut R,
) -> Result<PairSample> {
    if track.duration_s < min_pair_duration(context_s) {
        return Err(Error::TooShort(track.track_id.clone()));
    }
    let fps = features.config.frame_rate();
    let frames = features.config.frames_for_seconds(context_s);
    if features.num_frames() < frames {
        return Err(Error::TooShort(track.track_id.clone()));
    }
    let last_start = track.duration_s - context_s;
    let anchor_offset_s = rng.gen_range(0.0..=last_start);
    let lo = (anchor_offset_s - PAIR_RADIUS_S).max(0.0);
    let hi = (anchor_offset_s + PAIR_RADIUS_S).min(last_start);
    let positive_offset_s = rng.gen_range(lo..=hi);
    let max_frame = features.num_frames() - frames;
    let frame_of = |s: f64| ((s * fps).round() as usize).min(max_frame);
    Ok(PairSample {
        anchor: features.slice_frames(frame_of(anchor_offset_s), frames)?,
        positive: features.slice_frames(frame_of(positive_offset_s), frames)?,
        track_id: track.track_id.clone(),
        anchor_offset_s,
        positive_offset_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Timbre {
    Sine,
    SawLike,
    NoisePerc,
}

impl Timbre {
    pub const ALL: [Timbre; 3] = [Timbre::Sine, Timbre::SawLike, Timbre::NoisePerc];

    pub fn tag(self) -> &'static str {
        match self {
            Timbre::Sine => "sine",
            Timbre::SawLike => "saw-like",
            Timbre::NoisePerc => "noise-perc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Sparse,
    Steady,
    Busy,
}

impl Density {
    pub const ALL: [Density; 3] = [Density::Sparse, Density::Steady, Density::Busy];

    pub fn tag(self) -> &'static str {
        match self {
            Density::Sparse => "sparse",
            Density::Steady => "steady",
            Density::Busy => "busy",
        }
    }

    /// Accent level of each subdivision of the beat.
    fn accents(self) -> &'static [f64] {
        match self {
            Density::Sparse => &[1.0],
            Density::Steady => &[1.0, 0.35],
            Density::Busy => &[1.0, 0.25, 0.35, 0.25],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Register {
    Low,
    High,
}

impl Register {
    pub fn tag(self) -> &'static str {
        match self {
            Register::Low => "low-register",
            Register::High => "high-register",
        }
    }

    fn base_midi(self) -> f64 {
        match self {
            Register::Low => 60.0,
            Register::High => 72.0,
        }
    }
}

/// Everything needed to render one synthetic track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub bpm: f64,
    pub key: KeyLabel,
    pub timbre: Timbre,
    pub density: Density,
    pub register: Register,
    /// Harmonic pad level relative to percussion; 0 gives a bare click track.
    pub pad_level: f64,
    pub seed: u64,
}

impl TrackSpec {
    pub fn tags(&self) -> Vec<String> {
        vec![
            self.timbre.tag().to_string(),
            self.density.tag().to_string(),
            self.register.tag().to_string(),
        ]
    }

    /// A bare click track at `bpm` with randomized phase and click colour.
    pub fn click_track(bpm: f64, seed: u64) -> Self {
        Self {
            bpm,
            key: KeyLabel { root: 0, minor: false },
            timbre: Timbre::Sine,
            density: Density::Sparse,
            register: Register::High,
            pad_level: 0.0,
            seed,
        }
    }
}

fn midi_hz(note: f64) -> f64 {
    440.0 * 2f64.powf((note - 69.0) / 12.0)
}

/// Renders a track to PCM in [-1, 1].
pub fn render_track(spec: &TrackSpec, duration_s: f64, sample_rate: u32) -> Vec<f64> {
    let mut rng = stream(spec.seed, &[0x7261_636b]);
    let sr = sample_rate as f64;
    let n = (duration_s * sr).round() as usize;
    let mut out = vec![0.0; n];
    let nyquist = sr / 2.0;

    // sustained triad with the root doubled an octave up
    if spec.pad_level > 0.0 {
        let root = spec.register.base_midi() + spec.key.root as f64;
        let third = if spec.key.minor { 3.0 } else { 4.0 };
        let notes = [(root, 1.0), (root + third, 0.45), (root + 7.0, 0.45), (root + 12.0, 0.6)];
        let harmonics: &[f64] = match spec.timbre {
            Timbre::Sine => &[1.0],
            Timbre::SawLike => &[1.0, 0.5, 0.333, 0.25, 0.2, 0.167],
            Timbre::NoisePerc => &[1.0, 0.0, 0.3],
        };
        let level = match spec.timbre {
            Timbre::NoisePerc => 0.5 * spec.pad_level,
            _ => spec.pad_level,
        };
        for &(note, amp) in &notes {
            let f0 = midi_hz(note);
            let amp = amp * rng.gen_range(0.9..1.1) * level;
            for (h, &ha) in harmonics.iter().enumerate() {
                let f = f0 * (h + 1) as f64;
                if ha == 0.0 || f >= nyquist * 0.95 {
                    continue;
                }
                let phase = rng.gen_range(0.0..2.0 * PI);
                let w = 2.0 * PI * f / sr;
                for (i, s) in out.iter_mut().enumerate() {
                    *s += amp * ha * (w * i as f64 + phase).sin();
                }
            }
        }
    }

    // percussion on a fixed grid
    let (decay_s, brightness) = match spec.timbre {
        Timbre::Sine => (0.015, 0.7),
        Timbre::SawLike => (0.02, 0.5),
        Timbre::NoisePerc => (0.045, 0.2),
    };
    let accents = spec.density.accents();
    let step = 60.0 / spec.bpm / accents.len() as f64;
    let phase = rng.gen_range(0.0..60.0 / spec.bpm);
    let burst_len = (decay_s * 6.0 * sr) as usize;
    let mut k = 0usize;
    loop {
        let t = phase + k as f64 * step;
        let start = (t * sr).round() as usize;
        if start >= n {
            break;
        }
        let accent = accents[k % accents.len()] * 0.5;
        // one-pole smoothed noise: brightness 1 is white, lower is darker
        let mut lp = 0.0;
        for j in 0..burst_len.min(n - start) {
            let white: f64 = rng.gen_range(-1.0..1.0);
            lp += brightness * (white - lp);
            let env = (-(j as f64) / (decay_s * sr)).exp();
            out[start + j] += accent * env * lp;
        }
        k += 1;
    }

    for s in out.iter_mut() {
        *s += 0.002 * rng.gen_range(-1.0..1.0);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        out.iter_mut().for_each(|s| *s *= g);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_tracks: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub train_fraction: f64,
    pub bpm_range: (f64, f64),
    pub pad_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_tracks: 200,
            duration_s: 20.0,
            sample_rate_hz: 16_000,
            train_fraction: 0.8,
            bpm_range: (60.0, 180.0),
            pad_level: 0.15,
            seed: 0,
        }
    }
}

/// Ground-truth plan of a synthetic corpus: track records plus render specs.
pub fn plan_synthetic_corpus(cfg: &SynthConfig) -> Result<Vec<(TrackRecord, TrackSpec)>> {
    if cfg.num_tracks == 0 {
        return Err(Error::Config("synth.num_tracks must be positive".into()));
    }
    if !(BPM_LIMITS.0 <= cfg.bpm_range.0 && cfg.bpm_range.0 <= cfg.bpm_range.1 && cfg.bpm_range.1 <= BPM_LIMITS.1) {
        return Err(Error::Config(format!("synth.bpm_range {:?} invalid", cfg.bpm_range)));
    }
    let n = cfg.num_tracks;
    let mut rng = stream(cfg.seed, &[0x636f_7270]);
    let mut keys: Vec<KeyLabel> = (0..n).map(|i| KeyLabel::all().nth(i % 24).unwrap()).collect();
    keys.shuffle(&mut rng);
    let (lo, hi) = cfg.bpm_range;
    let mut bpms: Vec<f64> = (0..n)
        .map(|i| (lo + (hi - lo) * (i as f64 + rng.gen::<f64>()) / n as f64).round().clamp(lo, hi))
        .collect();
    bpms.shuffle(&mut rng);
    let n_train = ((n as f64) * cfg.train_fraction).round() as usize;

    Ok((0..n)
        .map(|i| {
            let track_id = format!("synth-{i:04}");
            let spec = TrackSpec {
                bpm: bpms[i],
                key: keys[i],
                timbre: *Timbre::ALL.choose(&mut rng).unwrap(),
                density: *Density::ALL.choose(&mut rng).unwrap(),
                register: if rng.gen() { Register::Low } else { Register::High },
                pad_level: cfg.pad_level,
                seed: crate::rng::derive_seed(cfg.seed, &[hash_id(&track_id)]),
            };
            let record = TrackRecord {
                feature_path: PathBuf::from("features").join(format!("{track_id}.emlt")),
                duration_s: cfg.duration_s,
                bpm: Some(spec.bpm),
                key_label: Some(spec.key),
                tags: spec.tags(),
                split: if i < n_train { Split::Train } else { Split::Test },
                track_id,
            };
            (record, spec)
        })
        .collect())
}

pub fn audio_path(root: &Path, track_id: &str) -> PathBuf {
    root.join("audio").join(format!("{track_id}.wav"))
}

/// Writes `audio/<id>.wav` for every planned track plus `manifest.jsonl`
/// under `root`.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, root: &Path) -> Result<Manifest> {
    let plan = plan_synthetic_corpus(cfg)?;
    for (record, spec) in &plan {
        let samples = render_track(spec, cfg.duration_s, cfg.sample_rate_hz);
        write_wav(
            &audio_path(root, &record.track_id),
            &Pcm {
                samples,
                sample_rate: cfg.sample_rate_hz,
            },
        )?;
    }
    let manifest = Manifest::new(root, plan.into_iter().map(|(r, _)| r).collect())?;
    manifest.save(&root.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// A track with its full-length spectrogram.
#[derive(Debug, Clone)]
pub struct LoadedTrack {
    pub record: TrackRecord,
    pub features: MelSpectrogram,
}

/// Renders the planned corpus in memory and computes its spectrograms.
pub fn synthesize_features(cfg: &SynthConfig, mel: &MelConfig) -> Result<(Manifest, Vec<LoadedTrack>)> {
    if mel.sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::Config(format!(
            "mel.sample_rate_hz {} differs from synth.sample_rate_hz {}",
            mel.sample_rate_hz, cfg.sample_rate_hz
        )));
    }
    let plan = plan_synthetic_corpus(cfg)?;
    let front = MelFrontend::new(mel)?;
    let tracks = plan
        .par_iter()
        .map(|(record, spec)| {
            let pcm = render_track(spec, cfg.duration_s, cfg.sample_rate_hz);
            Ok(LoadedTrack {
                record: record.clone(),
                features: front.compute(&pcm, &record.track_id)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(PathBuf::new(), plan.into_iter().map(|(r, _)| r).collect())?;
    Ok((manifest, tracks))
}

/// Reads the stored spectrogram of every manifest track, optionally only
/// from one split.
pub fn load_tracks(manifest: &Manifest, mel: &MelConfig, split: Option<Split>) -> Result<Vec<LoadedTrack>> {
    manifest
        .tracks()
        .par_iter()
        .filter(|r| split.map_or(true, |s| r.split == s))
        .map(|record| {
            let path = manifest.feature_file(record);
            let tensor = Tensor::read(&path)?;
            let features = MelSpectrogram::from_tensor(tensor, mel.clone(), record.track_id.clone()).map_err(|e| Error::Format {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            Ok(LoadedTrack {
                record: record.clone(),
                features,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, duration_s: f64) -> TrackRecord {
        TrackRecord {
            track_id: id.into(),
            feature_path: format!("features/{id}.emlt").into(),
            duration_s,
            bpm: Some(120.0),
            key_label: Some("A:minor".parse().unwrap()),
            tags: vec!["sine".into()],
            split: Split::Train,
        }
    }

    fn frames_for(duration_s: f64) -> MelSpectrogram {
        let cfg = MelConfig::default();
        let samples = (duration_s * 16000.0) as usize;
        let frames = (samples - 400) / 160 + 1;
        MelSpectrogram::from_fn(cfg, frames, "t", |u, m| (u + m) as f64 * 1e-3)
    }

    #[test]
    fn key_labels_roundtrip_and_cover_24() {
        let all: Vec<KeyLabel> = KeyLabel::all().collect();
        assert_eq!(all.len(), 24);
        for k in all {
            assert_eq!(k.to_string().parse::<KeyLabel>().unwrap(), k);
        }
        assert!("H:major".parse::<KeyLabel>().is_err());
    }

    #[test]
    fn manifest_field_names_are_exact() {
        let m = Manifest::new(".", vec![record("a", 20.0)]).unwrap();
        let line = m.to_jsonl().unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(keys, ["bpm", "duration_s", "feature_path", "key_label", "split", "tags", "track_id"]);
        assert_eq!(v["key_label"], "A:minor");
        assert_eq!(v["split"], "train");
    }

    #[test]
    fn manifest_rejects_duplicates_and_bad_bpm() {
        assert!(Manifest::new(".", vec![record("a", 20.0), record("a", 20.0)]).is_err());
        let mut r = record("b", 20.0);
        r.bpm = Some(400.0);
        assert!(Manifest::new(".", vec![r]).is_err());
    }

    #[test]
    fn manifest_roundtrips_through_jsonl() {
        let plan = plan_synthetic_corpus(&SynthConfig {
            num_tracks: 30,
            ..Default::default()
        })
        .unwrap();
        let mut tracks: Vec<TrackRecord> = plan.into_iter().map(|(r, _)| r).collect();
        tracks[3].bpm = None;
        tracks[4].key_label = None;
        tracks[5].tags.clear();
        let m = Manifest::new("/x", tracks.clone()).unwrap();
        let back = Manifest::from_jsonl("/x", &m.to_jsonl().unwrap()).unwrap();
        assert_eq!(back.tracks(), &tracks[..]);
    }

    #[test]
    fn pairs_stay_within_radius() {
        let t = record("a", 20.0);
        let x = frames_for(20.0);
        let mut rng = stream(3, &[]);
        for _ in 0..10_000 {
            let p = sample_pair(&t, &x, 4.5, &mut rng).unwrap();
            assert!((p.anchor_offset_s - p.positive_offset_s).abs() <= PAIR_RADIUS_S);
            assert_eq!(p.anchor.num_frames(), 450);
            assert_eq!(p.positive.num_frames(), 450);
        }
    }

    #[test]
    fn minimum_length_track_has_valid_offsets() {
        let t = record("a", 14.0);
        let x = frames_for(14.0);
        let mut rng = stream(4, &[]);
        for _ in 0..2000 {
            let p = sample_pair(&t, &x, 4.5, &mut rng).unwrap();
            assert!(p.anchor_offset_s >= 0.0 && p.anchor_offset_s <= 9.5);
            assert!(p.positive_offset_s >= 0.0 && p.positive_offset_s <= 9.5);
        }
        let short = record("s", 13.9);
        assert!(matches!(sample_pair(&short, &x, 4.5, &mut rng), Err(Error::TooShort(_))));
    }

    #[test]
    fn pair_sequence_is_seeded() {
        let t = record("a", 20.0);
        let x = frames_for(20.0);
        let draw = |seed| {
            let mut rng = stream(seed, &[]);
            (0..20)
                .map(|_| {
                    let p = sample_pair(&t, &x, 4.5, &mut rng).unwrap();
                    (p.anchor_offset_s, p.positive_offset_s)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn corpus_covers_keys_and_tempi() {
        let plan = plan_synthetic_corpus(&SynthConfig::default()).unwrap();
        assert_eq!(plan.len(), 200);
        let keys: std::collections::HashSet<_> = plan.iter().map(|(r, _)| r.key_label.unwrap()).collect();
        assert_eq!(keys.len(), 24);
        let bpms: std::collections::HashSet<_> = plan.iter().map(|(r, _)| r.bpm.unwrap() as i64).collect();
        assert!(bpms.len() >= 20);
        assert!(plan.iter().all(|(r, _)| (60.0..=180.0).contains(&r.bpm.unwrap())));
        let tags: std::collections::HashSet<_> = plan.iter().flat_map(|(r, _)| r.tags.clone()).collect();
        assert_eq!(tags.len(), 8);
        assert_eq!(plan.iter().filter(|(r, _)| r.split == Split::Train).count(), 160);
    }

    #[test]
    fn click_track_tempo_is_recoverable() {
        let cfg = MelConfig::default();
        let front = MelFrontend::new(&cfg).unwrap();
        let pcm = render_track(&TrackSpec::click_track(120.0, 1), 8.0, 16000);
        let x = front.compute(&pcm, "click").unwrap();
        let bpm = crate::analysis::autocorrelation_tempo(&x).unwrap();
        assert!((bpm - 120.0).abs() <= 2.0, "{bpm}");
    }

    #[test]
    fn key_root_is_recoverable_from_chroma() {
        let cfg = MelConfig::default();
        let front = MelFrontend::new(&cfg).unwrap();
        for (i, key) in KeyLabel::all().enumerate().step_by(5) {
            let spec = TrackSpec {
                bpm: 100.0,
                key,
                timbre: Timbre::ALL[i % 3],
                density: Density::Steady,
                register: if i % 2 == 0 { Register::Low } else { Register::High },
                pad_level: 0.15,
                seed: i as u64,
            };
            let x = front.compute(&render_track(&spec, 4.0, 16000), "k").unwrap();
            assert_eq!(crate::analysis::chroma_root(&x), key.root as usize, "{key} {spec:?}");
        }
    }
}
