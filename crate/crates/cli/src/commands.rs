use std::fs;
use std::path::{Path, PathBuf};

use embedloc::audio::{read_raw_f32, read_wav};
use embedloc::corpus::{audio_path, generate_synthetic_corpus, load_tracks, LoadedTrack, Manifest, Split};
use embedloc::embedspace::{embed_tracks, EmbeddingSet, Provenance};
use embedloc::encoder::{checkpoint_layout, lr_at, train, Checkpoint, CheckpointHeader};
use embedloc::locality::{manipulation_sweep, neighborhood_report, retrieval_report, SweepKind};
use embedloc::melfront::MelFrontend;
use embedloc::probe::{evaluate_probe, train_probe};
use embedloc::tensor::DType;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::failure::Failure;

type Outcome = Result<(), Failure>;

/// A JSON artifact stamped with the run's config hash and seed.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    pub body: T,
}

pub struct Run {
    pub config: RunConfig,
    pub hash: String,
}

impl Run {
    pub fn new(config: RunConfig) -> Self {
        let hash = config.hash();
        Self { config, hash }
    }

    fn chain(&self) -> String {
        self.config.augmentation.name()
    }

    fn out(&self, sub: &str) -> PathBuf {
        self.config.paths.output_dir.join(sub)
    }

    fn manifest(&self) -> Result<Manifest, Failure> {
        let path = self.config.paths.corpus_dir.join("manifest.jsonl");
        if !path.exists() {
            return Err(Failure::data(format!(
                "no manifest at {}; run `synth` or provide a corpus",
                path.display()
            )));
        }
        Ok(Manifest::load(&path)?)
    }

    fn tracks(&self, manifest: &Manifest, split: Option<Split>) -> Result<Vec<LoadedTrack>, Failure> {
        Ok(load_tracks(manifest, &self.config.mel, split)?)
    }

    fn stamp<T: Serialize>(&self, body: T) -> Stamped<T> {
        Stamped {
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            body,
        }
    }

    fn write_json<T: Serialize>(&self, path: &Path, body: T) -> Outcome {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
        }
        let text = serde_json::to_string_pretty(&self.stamp(body)).expect("artifact serializes");
        fs::write(path, text + "\n").map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
    }

    fn embeddings(&self, manifest: &Manifest) -> Result<EmbeddingSet, Failure> {
        let set = EmbeddingSet::load(&self.out("embeddings"), &self.chain())?;
        if self.config.metrics.test_split_only {
            Ok(set.restrict(manifest.split(Split::Test).map(|r| r.track_id.as_str())))
        } else {
            Ok(set)
        }
    }

    pub fn synth(&self) -> Outcome {
        let root = &self.config.paths.corpus_dir;
        let manifest = generate_synthetic_corpus(&self.config.synth_config(), root)?;
        self.write_json(&root.join("synth.json"), &self.config.synth_config())?;
        println!("wrote {} tracks to {}", manifest.len(), root.display());
        Ok(())
    }

    pub fn extract(&self) -> Outcome {
        let manifest = self.manifest()?;
        let front = MelFrontend::new(&self.config.mel)?;
        let root = &self.config.paths.corpus_dir;
        let sr = self.config.mel.sample_rate_hz;
        let frames: Vec<(String, usize)> = manifest
            .tracks()
            .par_iter()
            .map(|record| {
                let wav = audio_path(root, &record.track_id);
                let pcm = if wav.exists() {
                    let pcm = read_wav(&wav)?;
                    if pcm.sample_rate != sr {
                        return Err(embedloc::Error::Data(format!(
                            "{} is sampled at {} Hz, mel.sample_rate_hz is {sr}",
                            wav.display(),
                            pcm.sample_rate
                        )));
                    }
                    pcm
                } else {
                    read_raw_f32(&wav.with_extension("f32"), sr)?
                };
                let x = front.compute(&pcm.samples, &record.track_id)?;
                x.to_tensor().write(&manifest.feature_file(record), DType::F32)?;
                Ok((record.track_id.clone(), x.num_frames()))
            })
            .collect::<embedloc::Result<_>>()?;
        let body = serde_json::json!({ "mel": self.config.mel, "frames": frames });
        self.write_json(&root.join("features").join("extraction.json"), body)?;
        println!("extracted {} feature files", frames.len());
        Ok(())
    }

    pub fn train(&self) -> Outcome {
        let manifest = self.manifest()?;
        let tracks = self.tracks(&manifest, Some(Split::Train))?;
        let spec = self.config.augmentation_spec();
        let cfg = self.config.train_config();
        let report_every = (cfg.total_steps / 20).max(1);
        let outcome = train(&tracks, &spec, &cfg, &self.config.pooling, |step, loss| {
            if step % report_every == 0 {
                eprintln!("step {step:>6}  loss {loss:.5}");
            }
        })?;
        let chain = self.chain();
        let header = CheckpointHeader {
            checkpoint_id: format!("{chain}-s{}-{}", self.config.seed, &self.hash[..12]),
            pooling: outcome.params.pooling.clone(),
            input_dim: outcome.params.input_dim,
            hidden: outcome.params.hidden,
            dim: outcome.params.dim,
            mel: self.config.mel.clone(),
            augmentation: spec,
            train: cfg.clone(),
            seed: self.config.seed,
            step: cfg.total_steps,
            config_hash: self.hash.clone(),
            layout: checkpoint_layout(&outcome.params),
        };
        let dir = self.out("checkpoints");
        Checkpoint {
            header,
            params: outcome.params,
        }
        .save(&dir, &chain)?;
        let rows: Vec<(usize, f64, f64)> = outcome
            .losses
            .iter()
            .enumerate()
            .map(|(s, l)| Ok((s, *l, lr_at(s, &cfg)?)))
            .collect::<embedloc::Result<_>>()?;
        let mut csv = String::from("step,loss,lr,config_hash,seed\n");
        for (s, l, lr) in rows {
            csv.push_str(&format!("{s},{l},{lr},{},{}\n", self.hash, self.config.seed));
        }
        let path = dir.join(format!("{chain}-loss.csv"));
        fs::write(&path, csv).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?;
        println!(
            "trained {chain} for {} steps, final loss {:.5}",
            cfg.total_steps,
            outcome.losses.last().copied().unwrap_or(f64::NAN)
        );
        Ok(())
    }

    fn checkpoint(&self) -> Result<Checkpoint, Failure> {
        let dir = self.out("checkpoints");
        let chain = self.chain();
        if !Checkpoint::paths(&dir, &chain).0.exists() {
            return Err(Failure::data(format!(
                "no checkpoint for chain {chain} in {}; run `train` first",
                dir.display()
            )));
        }
        Ok(Checkpoint::load(&dir, &chain)?)
    }

    fn provenance(&self, ck: &Checkpoint) -> Provenance {
        Provenance {
            checkpoint_id: ck.header.checkpoint_id.clone(),
            chain: self.chain(),
            seed: self.config.seed,
            config_hash: self.hash.clone(),
        }
    }

    pub fn embed(&self) -> Outcome {
        let manifest = self.manifest()?;
        let ck = self.checkpoint()?;
        let tracks = self.tracks(&manifest, None)?;
        let (set, skipped) = embed_tracks(&tracks, &ck.params, &self.config.windows, self.provenance(&ck))?;
        set.save(&self.out("embeddings"), &self.chain())?;
        for id in &skipped {
            eprintln!("skipped {id}: shorter than one window");
        }
        println!("embedded {} tracks ({} skipped)", set.len(), skipped.len());
        Ok(())
    }

    pub fn sweep(&self, kind: SweepKind) -> Outcome {
        let manifest = self.manifest()?;
        let ck = self.checkpoint()?;
        let tracks = self.tracks(&manifest, Some(Split::Test))?;
        let grid = match kind {
            SweepKind::TimeStretch => &self.config.sweep.time_stretch_grid,
            SweepKind::PitchShift => &self.config.sweep.pitch_shift_grid,
        };
        let result = manipulation_sweep(&tracks, &ck.params, kind, grid, &self.config.windows, self.provenance(&ck))?;
        let name = match kind {
            SweepKind::TimeStretch => "time-stretch",
            SweepKind::PitchShift => "pitch-shift",
        };
        let stem = self.out("reports").join(format!("sweep-{name}-{}", self.chain()));
        result.write_csv(&stem.with_extension("csv"))?;
        self.write_json(&stem.with_extension("json"), &result)?;
        for p in &result.points {
            println!("{:>8.4}  mean {:.4}  iqr [{:.4}, {:.4}]", p.factor, p.mean, p.q1, p.q3);
        }
        Ok(())
    }

    pub fn neighborhood(&self) -> Outcome {
        let manifest = self.manifest()?;
        let set = self.embeddings(&manifest)?;
        let m = &self.config.metrics;
        let report = neighborhood_report(&set, &manifest, &m.k_grid, m.variants.clone())?;
        let stem = self.out("reports").join(format!("neighborhood-{}", self.chain()));
        report.write_csv(&stem.with_extension("csv"))?;
        self.write_json(&stem.with_extension("json"), &report)?;
        let show = |v: Option<embedloc::locality::MetricValue>| v.map_or("-".to_string(), |m| format!("{:.4}", m.value));
        for r in &report.rows {
            println!(
                "k={:<3} tempo_rmms {}  key_precision {}  tag_precision {}  tag_retrieval {}",
                r.k,
                show(r.tempo_rmms),
                show(r.key_precision),
                show(r.tag_precision),
                show(r.tag_retrieval)
            );
        }
        Ok(())
    }

    pub fn retrieval(&self) -> Outcome {
        let manifest = self.manifest()?;
        let set = self.embeddings(&manifest)?;
        let m = &self.config.metrics;
        let report = retrieval_report(&set, &manifest, &m.k_grid, m.variants.clone())?;
        let stem = self.out("reports").join(format!("retrieval-{}", self.chain()));
        report.write_csv(&stem.with_extension("csv"))?;
        self.write_json(&stem.with_extension("json"), &report)?;
        for r in &report.rows {
            println!(
                "k={:<3} tag_precision {}  tag_retrieval {}",
                r.k,
                r.tag_precision.map_or("-".into(), |v| format!("{:.4}", v.value)),
                r.tag_retrieval.map_or("-".into(), |v| format!("{:.4}", v.value))
            );
        }
        Ok(())
    }

    pub fn probe(&self) -> Outcome {
        let manifest = self.manifest()?;
        let set = EmbeddingSet::load(&self.out("embeddings"), &self.chain())?;
        let cfg = self.config.probe_config();
        let (model, losses) = train_probe(&set, &manifest, &cfg)?;
        model.save(&self.out("probes"), &self.chain())?;
        let eval = evaluate_probe(&model, &set, &manifest, Split::Test)?;
        let stem = self.out("reports").join(format!("probe-{}", self.chain()));
        eval.write_csv(&stem.with_extension("csv"))?;
        let body = serde_json::json!({
            "provenance": set.provenance,
            "probe": cfg,
            "acc1": eval.acc1,
            "acc2": eval.acc2,
            "final_loss": losses.last(),
            "tracks": eval.rows.len(),
        });
        self.write_json(&stem.with_extension("json"), body)?;
        println!("probe acc1 {:.4}  acc2 {:.4} over {} test tracks", eval.acc1, eval.acc2, eval.rows.len());
        Ok(())
    }

    /// Flattens every JSON report into `summary.csv` (one row per value)
    /// and `summary.json`.
    pub fn report(&self) -> Outcome {
        let dir = self.out("reports");
        let mut names: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Failure::data(format!("cannot read {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_stem().is_some_and(|s| s != "summary"))
            .collect();
        names.sort();
        let mut rows: Vec<[String; 7]> = Vec::new();
        for path in &names {
            let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
            let doc: Stamped<Value> = serde_json::from_str(&text)
                .map_err(|e| Failure::data(format!("{} is not a report: {e}", path.display())))?;
            let stem = path.file_stem().unwrap().to_string_lossy().to_string();
            let (kind, chain) = stem.rsplit_once('-').unwrap_or((stem.as_str(), ""));
            let base = |key: String, metric: &str, value: &Value| {
                [
                    kind.to_string(),
                    chain.to_string(),
                    doc.seed.to_string(),
                    doc.config_hash.clone(),
                    key,
                    metric.to_string(),
                    value.to_string(),
                ]
            };
            let body = &doc.body;
            if let Some(list) = body.get("rows").and_then(Value::as_array) {
                for row in list {
                    let k = row.get("k").map(|v| v.to_string()).unwrap_or_default();
                    for (metric, v) in row.as_object().into_iter().flatten() {
                        if let Some(value) = v.get("value") {
                            rows.push(base(k.clone(), metric, value));
                        }
                    }
                }
            } else if let Some(points) = body.get("points").and_then(Value::as_array) {
                for p in points {
                    let f = p.get("factor").map(|v| v.to_string()).unwrap_or_default();
                    for metric in ["mean", "q1", "median", "q3"] {
                        if let Some(v) = p.get(metric) {
                            rows.push(base(f.clone(), metric, v));
                        }
                    }
                }
            } else {
                for metric in ["acc1", "acc2"] {
                    if let Some(v) = body.get(metric) {
                        rows.push(base(String::new(), metric, v));
                    }
                }
            }
        }
        let mut csv = String::from("report,chain,seed,config_hash,k_or_factor,metric,value\n");
        for r in &rows {
            csv.push_str(&r.join(","));
            csv.push('\n');
        }
        let path = dir.join("summary.csv");
        fs::write(&path, csv).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?;
        let json: Vec<Value> = rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "report": r[0], "chain": r[1], "seed": r[2], "config_hash": r[3],
                    "k_or_factor": r[4], "metric": r[5], "value": serde_json::from_str::<Value>(&r[6]).unwrap_or(Value::Null),
                })
            })
            .collect();
        self.write_json(&dir.join("summary.json"), json)?;
        println!("merged {} reports into {} rows", names.len(), rows.len());
        Ok(())
    }
}
