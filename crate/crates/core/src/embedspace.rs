//! Track-average embeddings and exact cosine nearest-neighbor search.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{dot, normalize, EncoderParams, LoadedTrack};
use crate::error::{Error, Result};
use crate::melfront::MelSpectrogram;
use crate::tensor::{DType, Tensor};

const UNIT_TOLERANCE: f64 = 1e-6;

/// Where a set of embeddings came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_id: String,
    pub chain: String,
    pub seed: u64,
    pub config_hash: String,
}

/// Unit-norm embeddings keyed by track id, kept in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct SetHeader {
    dim: usize,
    provenance: Provenance,
    ids: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(provenance: Provenance, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut dim = None;
        for (id, v) in entries {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d || d == 0 {
                return Err(Error::Data(format!("embedding for {id} has dimension {}, expected {d}", v.len())));
            }
            let norm = dot(&v, &v).sqrt();
            if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
                return Err(Error::Data(format!("embedding for {id} has norm {norm}")));
            }
            if map.insert(id.clone(), v).is_some() {
                return Err(Error::Data(format!("duplicate track id {id}")));
            }
        }
        let (ids, vectors) = map.into_iter().unzip();
        Ok(Self {
            dim: dim.unwrap_or(0),
            ids,
            vectors,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|probe| probe.as_str().cmp(id)).ok()
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.vectors[i].as_slice())
    }

    pub fn vector_at(&self, index: usize) -> &[f64] {
        &self.vectors[index]
    }

    /// Subset restricted to the given ids (unknown ids are ignored).
    pub fn restrict<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Self {
        let entries = ids
            .into_iter()
            .filter_map(|id| self.vector(id).map(|v| (id.to_string(), v.to_vec())))
            .collect();
        Self::new(self.provenance.clone(), entries).expect("subset of a valid set")
    }

    pub fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
        (dir.join(format!("{name}.json")), dir.join(format!("{name}.emlt")))
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let (json, emlt) = Self::paths(dir, name);
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let data = self.vectors.iter().flatten().copied().collect();
        Tensor::new(vec![self.len(), self.dim], data)?.write(&emlt, DType::F64)?;
        let header = SetHeader {
            dim: self.dim,
            provenance: self.provenance.clone(),
            ids: self.ids.clone(),
        };
        fs::write(&json, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let (json, emlt) = Self::paths(dir, name);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let header: SetHeader = serde_json::from_str(&text)?;
        let tensor = Tensor::read(&emlt)?;
        if tensor.dims != [header.ids.len(), header.dim] {
            return Err(Error::Format {
                path: emlt,
                reason: format!("matrix {:?} does not match {} ids of dimension {}", tensor.dims, header.ids.len(), header.dim),
            });
        }
        let entries = header
            .ids
            .into_iter()
            .zip(tensor.data.chunks(header.dim.max(1)).map(<[f64]>::to_vec))
            .collect();
        Self::new(header.provenance, entries)
    }
}

/// `1 - a.b` for unit vectors, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    (1.0 - dot(a, b)).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_seconds: f64,
    /// Hop between windows; equal to the window for non-overlapping windows.
    pub hop_seconds: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_seconds: 3.0,
            hop_seconds: 3.0,
        }
    }
}

/// Averages per-window encoder outputs and renormalizes.
pub fn embed_features(
    x: &MelSpectrogram,
    params: &EncoderParams,
    windows: &WindowConfig,
) -> Result<Vec<f64>> {
    let len = x.config.frames_for_seconds(windows.window_seconds);
    let hop = x.config.frames_for_seconds(windows.hop_seconds);
    if len == 0 || hop == 0 {
        return Err(Error::Parameter("window and hop must span at least one frame".into()));
    }
    if x.num_frames() < len {
        return Err(Error::TooShort(x.source_id.clone()));
    }
    let mut acc = vec![0.0; params.dim];
    let mut start = 0;
    while start + len <= x.num_frames() {
        let e = params.embed(&x.slice_frames(start, len)?);
        acc.iter_mut().zip(&e).for_each(|(a, v)| *a += v);
        start += hop;
    }
    if normalize(&mut acc) == 0.0 {
        return Err(Error::Parameter(format!("window embeddings of {} cancel out", x.source_id)));
    }
    Ok(acc)
}

pub fn embed_track(track: &LoadedTrack, params: &EncoderParams, windows: &WindowConfig) -> Result<Vec<f64>> {
    embed_features(&track.features, params, windows).map_err(|e| match e {
        Error::TooShort(_) => Error::TooShort(track.record.track_id.clone()),
        other => other,
    })
}

/// Embeds every track, returning the set and the ids skipped as too short.
pub fn embed_tracks(
    tracks: &[LoadedTrack],
    params: &EncoderParams,
    windows: &WindowConfig,
    provenance: Provenance,
) -> Result<(EmbeddingSet, Vec<String>)> {
    let results: Vec<Result<Vec<f64>>> = tracks.par_iter().map(|t| embed_track(t, params, windows)).collect();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (t, r) in tracks.iter().zip(results) {
        match r {
            Ok(v) => entries.push((t.record.track_id.clone(), v)),
            Err(Error::TooShort(id)) => skipped.push(id),
            Err(e) => return Err(e),
        }
    }
    Ok((EmbeddingSet::new(provenance, entries)?, skipped))
}

/// Exact `k` nearest neighbors of `query_id`, excluding itself, ordered by
/// distance then ascending id.
pub fn knn(set: &EmbeddingSet, query_id: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let q = set
        .index_of(query_id)
        .ok_or_else(|| Error::Lookup(format!("track {query_id} is not in the embedding set")))?;
    if k >= set.len() {
        return Err(Error::Parameter(format!("k = {k} must be below the set size {}", set.len())));
    }
    Ok(knn_indices(set, q, k)
        .into_iter()
        .map(|(i, d)| (set.ids[i].clone(), d))
        .collect())
}

fn knn_indices(set: &EmbeddingSet, q: usize, k: usize) -> Vec<(usize, f64)> {
    let query = &set.vectors[q];
    let mut all: Vec<(usize, f64)> = (0..set.len())
        .filter(|&i| i != q)
        .map(|i| (i, cosine_distance(query, &set.vectors[i])))
        .collect();
    // ids are stored sorted, so index order is id order
    let by = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if k < all.len() {
        all.select_nth_unstable_by(k, by);
        all.truncate(k);
    }
    all.sort_by(by);
    all
}

/// Neighbor lists of every member for one `k`, as indices into the set.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    pub k: usize,
    pub lists: Vec<Vec<(usize, f64)>>,
}

impl NeighborTable {
    pub fn build(set: &EmbeddingSet, k: usize) -> Result<Self> {
        if k >= set.len() {
            return Err(Error::Parameter(format!("k = {k} must be below the set size {}", set.len())));
        }
        let lists = (0..set.len()).into_par_iter().map(|q| knn_indices(set, q, k)).collect();
        Ok(Self { k, lists })
    }

    /// The first `k` neighbors of every member (a prefix of each list).
    pub fn prefix(&self, k: usize) -> Result<Vec<&[(usize, f64)]>> {
        if k > self.k {
            return Err(Error::Parameter(format!("table holds {} neighbors, {k} requested", self.k)));
        }
        Ok(self.lists.iter().map(|l| &l[..k]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn prov() -> Provenance {
        Provenance {
            checkpoint_id: "ck".into(),
            chain: "none".into(),
            seed: 1,
            config_hash: "h".into(),
        }
    }

    fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut v);
        v
    }

    #[test]
    fn tiny_knn() {
        let set = EmbeddingSet::new(
            prov(),
            vec![
                ("q".into(), vec![1.0, 0.0]),
                ("a".into(), vec![1.0, 0.0]),
                ("b".into(), vec![0.0, 1.0]),
            ],
        )
        .unwrap();
        assert_eq!(knn(&set, "q", 2).unwrap(), vec![("a".to_string(), 0.0), ("b".to_string(), 1.0)]);
        assert!(matches!(knn(&set, "zz", 1), Err(Error::Lookup(_))));
        assert!(matches!(knn(&set, "q", 3), Err(Error::Parameter(_))));
    }

    #[test]
    fn rejects_duplicates_and_non_unit() {
        let dup = vec![("a".into(), vec![1.0, 0.0]), ("a".into(), vec![0.0, 1.0])];
        assert!(EmbeddingSet::new(prov(), dup).is_err());
        assert!(EmbeddingSet::new(prov(), vec![("a".into(), vec![2.0, 0.0])]).is_err());
    }

    #[test]
    fn matches_full_scan() {
        let mut rng = stream(11, &[]);
        let entries: Vec<(String, Vec<f64>)> = (0..500).map(|i| (format!("t{i:03}"), random_unit(&mut rng, 8))).collect();
        let set = EmbeddingSet::new(prov(), entries.clone()).unwrap();
        for (qid, qv) in entries.iter().step_by(37) {
            let mut scan: Vec<(String, f64)> = entries
                .iter()
                .filter(|(id, _)| id != qid)
                .map(|(id, v)| (id.clone(), (1.0 - dot(qv, v)).clamp(0.0, 2.0)))
                .collect();
            scan.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            scan.truncate(8);
            assert_eq!(knn(&set, qid, 8).unwrap(), scan);
        }
    }

    #[test]
    fn ties_break_by_id_regardless_of_order() {
        let v = vec![0.6, 0.8];
        let mut entries: Vec<(String, Vec<f64>)> = ["d", "b", "c", "a"].iter().map(|s| (s.to_string(), v.clone())).collect();
        entries.push(("q".into(), vec![1.0, 0.0]));
        let forward = EmbeddingSet::new(prov(), entries.clone()).unwrap();
        entries.reverse();
        let backward = EmbeddingSet::new(prov(), entries).unwrap();
        let ids: Vec<String> = knn(&forward, "q", 3).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(knn(&forward, "q", 3).unwrap(), knn(&backward, "q", 3).unwrap());
    }

    #[test]
    fn save_load_roundtrip() {
        let mut rng = stream(3, &[]);
        let set = EmbeddingSet::new(prov(), (0..5).map(|i| (format!("x{i}"), random_unit(&mut rng, 4))).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save(dir.path(), "none").unwrap();
        assert_eq!(EmbeddingSet::load(dir.path(), "none").unwrap(), set);
    }

    #[test]
    fn table_prefix_equals_smaller_k() {
        let mut rng = stream(5, &[]);
        let set = EmbeddingSet::new(prov(), (0..40).map(|i| (format!("x{i:02}"), random_unit(&mut rng, 3))).collect()).unwrap();
        let big = NeighborTable::build(&set, 8).unwrap();
        let small = NeighborTable::build(&set, 3).unwrap();
        let prefix = big.prefix(3).unwrap();
        for (a, b) in prefix.iter().zip(&small.lists) {
            assert_eq!(*a, b.as_slice());
        }
    }
}
