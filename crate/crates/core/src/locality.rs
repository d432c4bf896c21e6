//! Locality of musical properties in embedding space: manipulation sweeps
//! and neighborhood metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{pitch_shift, time_stretch_full, PitchShiftParams, TimeStretchParams};
use crate::corpus::Manifest;
use crate::embedspace::{cosine_distance, embed_features, EmbeddingSet, NeighborTable, Provenance, WindowConfig};
use crate::encoder::{EncoderParams, LoadedTrack};
use crate::error::{Error, Result};

/// Tempo octaves applied to the seed's tempo.
pub const TEMPO_OCTAVES: [f64; 5] = [1.0 / 3.0, 0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    TimeStretch,
    PitchShift,
}

impl SweepKind {
    /// Stretch factors `2^(i/8)` for `i = -8..=8`, or shifts of -12..=12 semitones.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepKind::TimeStretch => (-8..=8).map(|i| 2f64.powf(i as f64 / 8.0)).collect(),
            SweepKind::PitchShift => (-12..=12).map(f64::from).collect(),
        }
    }

    pub fn identity(self) -> f64 {
        match self {
            SweepKind::TimeStretch => 1.0,
            SweepKind::PitchShift => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub factor: f64,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub provenance: Provenance,
    pub track_ids: Vec<String>,
    /// `distances[f][t]`: factor `f`, track `t`.
    pub distances: Vec<Vec<f64>>,
    pub points: Vec<SweepPoint>,
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(factor: f64, values: &[f64]) -> SweepPoint {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    SweepPoint {
        factor,
        mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
    }
}

/// Cosine distance between each track's embedding and the embedding of its
/// stretched or shifted version, for every factor of `grid`.
pub fn manipulation_sweep(
    tracks: &[LoadedTrack],
    params: &EncoderParams,
    kind: SweepKind,
    grid: &[f64],
    windows: &WindowConfig,
    provenance: Provenance,
) -> Result<SweepResult> {
    if !grid.iter().any(|&f| (f - kind.identity()).abs() < 1e-12) {
        return Err(Error::Parameter(format!(
            "sweep grid must contain the identity factor {}",
            kind.identity()
        )));
    }
    if tracks.is_empty() {
        return Err(Error::EmptyInput("no tracks to sweep".into()));
    }
    let per_track: Vec<Result<Vec<f64>>> = tracks
        .par_iter()
        .map(|t| {
            let base = embed_features(&t.features, params, windows)?;
            grid.iter()
                .map(|&f| {
                    let modified = match kind {
                        SweepKind::TimeStretch => time_stretch_full(&t.features, TimeStretchParams { tau: f })?,
                        SweepKind::PitchShift => pitch_shift(&t.features, PitchShiftParams::from_semitones(f))?,
                    };
                    Ok(cosine_distance(&base, &embed_features(&modified, params, windows)?))
                })
                .collect()
        })
        .collect();
    let per_track = per_track.into_iter().collect::<Result<Vec<_>>>()?;
    let distances: Vec<Vec<f64>> = (0..grid.len())
        .map(|f| per_track.iter().map(|d| d[f]).collect())
        .collect();
    let points = grid.iter().zip(&distances).map(|(&f, d)| summarize(f, d)).collect();
    Ok(SweepResult {
        kind,
        provenance,
        track_ids: tracks.iter().map(|t| t.record.track_id.clone()).collect(),
        distances,
        points,
    })
}

/// A metric value with the number of seeds that contributed and were skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub seeds: usize,
    pub skipped: usize,
}

fn finish(sum: f64, seeds: usize, skipped: usize, name: &str) -> Result<MetricValue> {
    if seeds == 0 {
        return Err(Error::UndefinedMetric(format!("{name}: no seed track has the required labels")));
    }
    Ok(MetricValue {
        value: sum / seeds as f64,
        seeds,
        skipped,
    })
}

fn lookup<'a>(manifest: &'a Manifest, id: &str) -> Result<&'a crate::corpus::TrackRecord> {
    manifest
        .get(id)
        .ok_or_else(|| Error::Lookup(format!("track {id} is not in the manifest")))
}

/// Neighborhoods of size `k` as `(seed id, neighbor ids)`.
pub struct Neighborhoods<'a> {
    set: &'a EmbeddingSet,
    lists: Vec<&'a [(usize, f64)]>,
}

impl<'a> Neighborhoods<'a> {
    pub fn new(set: &'a EmbeddingSet, table: &'a NeighborTable, k: usize) -> Result<Self> {
        Ok(Self {
            set,
            lists: table.prefix(k)?,
        })
    }

    fn iter(&self) -> impl Iterator<Item = (&'a str, Vec<&'a str>)> + '_ {
        self.lists.iter().enumerate().map(move |(q, l)| {
            (
                self.set.ids()[q].as_str(),
                l.iter().map(|&(i, _)| self.set.ids()[i].as_str()).collect(),
            )
        })
    }
}

/// Root mean over neighbors of the squared distance from each neighbor's
/// tempo to the closest octave of the seed's tempo.
pub fn seed_rmms(seed_bpm: f64, neighbor_bpms: &[f64]) -> f64 {
    let sq: f64 = neighbor_bpms
        .iter()
        .map(|b| TEMPO_OCTAVES.iter().map(|o| (o * seed_bpm - b).powi(2)).fold(f64::INFINITY, f64::min))
        .sum();
    (sq / neighbor_bpms.len() as f64).sqrt()
}

/// Per seed, root mean over neighbors of the squared distance from the
/// neighbor's tempo to the closest octave of the seed's tempo; averaged over
/// seeds. Seeds lacking a tempo on themselves or any neighbor are skipped.
pub fn tempo_rmms_in(nb: &Neighborhoods, manifest: &Manifest) -> Result<MetricValue> {
    let (mut sum, mut seeds, mut skipped) = (0.0, 0, 0);
    for (seed, neighbors) in nb.iter() {
        let Some(s) = lookup(manifest, seed)?.bpm else {
            skipped += 1;
            continue;
        };
        let bpms = neighbors
            .iter()
            .map(|id| Ok(lookup(manifest, id)?.bpm))
            .collect::<Result<Option<Vec<f64>>>>()?;
        let Some(bpms) = bpms.filter(|b| !b.is_empty()) else {
            skipped += 1;
            continue;
        };
        sum += seed_rmms(s, &bpms);
        seeds += 1;
    }
    finish(sum, seeds, skipped, "tempo_rmms")
}

/// Mean fraction of neighbors sharing the seed's key. Seeds without a key
/// are skipped; unlabeled neighbors count as mismatches.
pub fn key_precision_in(nb: &Neighborhoods, manifest: &Manifest) -> Result<MetricValue> {
    let (mut sum, mut seeds, mut skipped) = (0.0, 0, 0);
    for (seed, neighbors) in nb.iter() {
        let Some(key) = lookup(manifest, seed)?.key_label else {
            skipped += 1;
            continue;
        };
        if neighbors.is_empty() {
            skipped += 1;
            continue;
        }
        let mut hits = 0;
        for id in &neighbors {
            if lookup(manifest, id)?.key_label == Some(key) {
                hits += 1;
            }
        }
        sum += hits as f64 / neighbors.len() as f64;
        seeds += 1;
    }
    finish(sum, seeds, skipped, "key_precision")
}

/// Mean over seeds of the share of all tags carried by the neighbors
/// (counted with multiplicity) that the seed also carries. Seeds without
/// tags, or whose neighbors carry none, are skipped.
pub fn tag_precision_in(nb: &Neighborhoods, manifest: &Manifest) -> Result<MetricValue> {
    let (mut sum, mut seeds, mut skipped) = (0.0, 0, 0);
    for (seed, neighbors) in nb.iter() {
        let own: BTreeSet<&str> = lookup(manifest, seed)?.tags.iter().map(String::as_str).collect();
        let (mut hits, mut total) = (0usize, 0usize);
        for id in &neighbors {
            for tag in &lookup(manifest, id)?.tags {
                total += 1;
                hits += own.contains(tag.as_str()) as usize;
            }
        }
        if own.is_empty() || total == 0 {
            skipped += 1;
            continue;
        }
        sum += hits as f64 / total as f64;
        seeds += 1;
    }
    finish(sum, seeds, skipped, "tag_precision")
}

/// Per tag, the fraction of its carriers with at least one carrier among
/// their neighbors; averaged over tags. `seeds` counts tags here.
pub fn tag_retrieval_in(nb: &Neighborhoods, manifest: &Manifest) -> Result<MetricValue> {
    Ok(tag_retrieval_breakdown(nb, manifest)?.0)
}

/// [`tag_retrieval_in`] together with the per-tag values.
pub fn tag_retrieval_breakdown(nb: &Neighborhoods, manifest: &Manifest) -> Result<(MetricValue, BTreeMap<String, f64>)> {
    let mut carriers: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for id in nb.set.ids() {
        for tag in &lookup(manifest, id)?.tags {
            carriers.entry(tag.as_str()).or_default().insert(id.as_str());
        }
    }
    let mut found: BTreeMap<&str, usize> = BTreeMap::new();
    for (seed, neighbors) in nb.iter() {
        for tag in &lookup(manifest, seed)?.tags {
            let holders = &carriers[tag.as_str()];
            if neighbors.iter().any(|n| holders.contains(n)) {
                *found.entry(tag.as_str()).or_default() += 1;
            }
        }
    }
    let per_tag: BTreeMap<String, f64> = carriers
        .iter()
        .map(|(tag, holders)| {
            let hit = found.get(tag).copied().unwrap_or(0);
            (tag.to_string(), hit as f64 / holders.len() as f64)
        })
        .collect();
    let sum = per_tag.values().sum();
    let value = finish(sum, per_tag.len(), 0, "tag_retrieval")?;
    Ok((value, per_tag))
}

macro_rules! single_k {
    ($name:ident, $inner:ident) => {
        pub fn $name(set: &EmbeddingSet, manifest: &Manifest, k: usize) -> Result<MetricValue> {
            let table = NeighborTable::build(set, k)?;
            $inner(&Neighborhoods::new(set, &table, k)?, manifest)
        }
    };
}

single_k!(tempo_rmms, tempo_rmms_in);
single_k!(key_precision, key_precision_in);
single_k!(tag_precision, tag_precision_in);
single_k!(tag_retrieval, tag_retrieval_in);

/// Definition variants recorded alongside every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricVariants {
    pub rmms_octaves: String,
    pub tag_precision: String,
}

impl Default for MetricVariants {
    fn default() -> Self {
        Self {
            rmms_octaves: "seed".into(),
            tag_precision: "neighbor-tag-multiset".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodRow {
    pub k: usize,
    pub tempo_rmms: Option<MetricValue>,
    pub key_precision: Option<MetricValue>,
    pub tag_precision: Option<MetricValue>,
    pub tag_retrieval: Option<MetricValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodReport {
    pub provenance: Provenance,
    pub variants: MetricVariants,
    pub k_grid: Vec<usize>,
    pub rows: Vec<NeighborhoodRow>,
}

fn defined(r: Result<MetricValue>) -> Result<Option<MetricValue>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn neighbor_table_for(set: &EmbeddingSet, k_grid: &[usize]) -> Result<NeighborTable> {
    let kmax = *k_grid
        .iter()
        .max()
        .ok_or_else(|| Error::Parameter("empty k grid".into()))?;
    if k_grid.contains(&0) {
        return Err(Error::Parameter("k must be positive".into()));
    }
    NeighborTable::build(set, kmax)
}

/// All four neighborhood metrics for every `k` of the grid.
pub fn neighborhood_report(
    set: &EmbeddingSet,
    manifest: &Manifest,
    k_grid: &[usize],
    variants: MetricVariants,
) -> Result<NeighborhoodReport> {
    let table = neighbor_table_for(set, k_grid)?;
    let rows = k_grid
        .iter()
        .map(|&k| {
            let nb = Neighborhoods::new(set, &table, k)?;
            Ok(NeighborhoodRow {
                k,
                tempo_rmms: defined(tempo_rmms_in(&nb, manifest))?,
                key_precision: defined(key_precision_in(&nb, manifest))?,
                tag_precision: defined(tag_precision_in(&nb, manifest))?,
                tag_retrieval: defined(tag_retrieval_in(&nb, manifest))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(NeighborhoodReport {
        provenance: set.provenance.clone(),
        variants,
        k_grid: k_grid.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub k: usize,
    pub tag_precision: Option<MetricValue>,
    pub tag_retrieval: Option<MetricValue>,
    pub per_tag: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub provenance: Provenance,
    pub variants: MetricVariants,
    pub k_grid: Vec<usize>,
    pub rows: Vec<RetrievalRow>,
}

/// Tag precision and tag retrieval (with per-tag values) for every `k`.
pub fn retrieval_report(
    set: &EmbeddingSet,
    manifest: &Manifest,
    k_grid: &[usize],
    variants: MetricVariants,
) -> Result<RetrievalReport> {
    let table = neighbor_table_for(set, k_grid)?;
    let rows = k_grid
        .iter()
        .map(|&k| {
            let nb = Neighborhoods::new(set, &table, k)?;
            let (tag_retrieval, per_tag) = match tag_retrieval_breakdown(&nb, manifest) {
                Ok((v, per_tag)) => (Some(v), per_tag),
                Err(Error::UndefinedMetric(_)) => (None, BTreeMap::new()),
                Err(e) => return Err(e),
            };
            Ok(RetrievalRow {
                k,
                tag_precision: defined(tag_precision_in(&nb, manifest))?,
                tag_retrieval,
                per_tag,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RetrievalReport {
        provenance: set.provenance.clone(),
        variants,
        k_grid: k_grid.to_vec(),
        rows,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn opt(v: Option<MetricValue>) -> String {
    v.map(|m| m.value.to_string()).unwrap_or_default()
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn provenance_cells(p: &Provenance, v: &MetricVariants) -> Vec<String> {
    vec![
        p.checkpoint_id.clone(),
        p.chain.clone(),
        p.seed.to_string(),
        p.config_hash.clone(),
        v.rmms_octaves.clone(),
        v.tag_precision.clone(),
    ]
}

const PROVENANCE_COLUMNS: [&str; 6] = ["checkpoint_id", "chain", "seed", "config_hash", "rmms_octaves", "tag_precision_variant"];

impl NeighborhoodReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["k", "tempo_rmms", "key_precision", "tag_precision", "tag_retrieval"];
        header.extend(PROVENANCE_COLUMNS);
        write_rows(
            path,
            &header,
            self.rows.iter().map(|r| {
                let mut row = vec![
                    r.k.to_string(),
                    opt(r.tempo_rmms),
                    opt(r.key_precision),
                    opt(r.tag_precision),
                    opt(r.tag_retrieval),
                ];
                row.extend(provenance_cells(&self.provenance, &self.variants));
                row
            }),
        )
    }
}

impl RetrievalReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["k", "tag_precision", "tag_retrieval"];
        header.extend(PROVENANCE_COLUMNS);
        write_rows(
            path,
            &header,
            self.rows.iter().map(|r| {
                let mut row = vec![r.k.to_string(), opt(r.tag_precision), opt(r.tag_retrieval)];
                row.extend(provenance_cells(&self.provenance, &self.variants));
                row
            }),
        )
    }
}

impl SweepResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = ["kind", "factor", "mean", "q1", "median", "q3", "checkpoint_id", "chain", "seed", "config_hash"];
        let kind = match self.kind {
            SweepKind::TimeStretch => "time_stretch",
            SweepKind::PitchShift => "pitch_shift",
        };
        let p = &self.provenance;
        write_rows(
            path,
            &header,
            self.points.iter().map(|pt| {
                vec![
                    kind.to_string(),
                    pt.factor.to_string(),
                    pt.mean.to_string(),
                    pt.q1.to_string(),
                    pt.median.to_string(),
                    pt.q3.to_string(),
                    p.checkpoint_id.clone(),
                    p.chain.clone(),
                    p.seed.to_string(),
                    p.config_hash.clone(),
                ]
            }),
        )
    }
}
