use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use embedloc::augment::AugmentationSpec;
use embedloc::corpus::SynthConfig;
use embedloc::embedspace::WindowConfig;
use embedloc::encoder::{PoolingConfig, TrainConfig};
use embedloc::locality::{MetricVariants, SweepKind};
use embedloc::probe::ProbeConfig;
use embedloc::MelConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const SEED_ENV: &str = "EMBEDLOC_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("corpus"),
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub k_grid: Vec<usize>,
    pub variants: MetricVariants,
    /// Restrict neighborhoods to the test split instead of the whole corpus.
    pub test_split_only: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            k_grid: vec![1, 2, 4, 8],
            variants: MetricVariants::default(),
            test_split_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub time_stretch_grid: Vec<f64>,
    pub pitch_shift_grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            time_stretch_grid: SweepKind::TimeStretch.default_grid(),
            pitch_shift_grid: SweepKind::PitchShift.default_grid(),
        }
    }
}

/// Everything a run depends on. `seed` feeds every component seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub mel: MelConfig,
    pub synth: SynthConfig,
    pub augmentation: AugmentationSpec,
    pub pooling: PoolingConfig,
    pub train: TrainConfig,
    pub windows: WindowConfig,
    pub probe: ProbeConfig,
    pub metrics: MetricsConfig,
    pub sweep: SweepConfig,
    pub seed: u64,
}

impl RunConfig {
    /// Reads the config file (or defaults), then applies `EMBEDLOC_SEED` and
    /// the dotted `key=value` overrides, in that order.
    pub fn load(path: Option<&Path>, overrides: &[String], env_seed: Option<String>) -> Result<Self, Failure> {
        let template = serde_json::to_value(RunConfig::default()).expect("default config serializes");
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| Failure::config(format!("config {} is not valid JSON: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        check_known(&doc, &template, "")?;
        if let Some(seed) = env_seed {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Failure::config(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
            set_path(&mut doc, &template, "seed", Value::from(seed))?;
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Failure::config(format!("override {o:?} must look like key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, &template, key.trim(), value)?;
        }
        let config: RunConfig = serde_path_to_error::deserialize(doc)
            .map_err(|e| Failure::config(format!("config field `{}`: {}", e.path(), e.inner())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let named = |field: &str, e: embedloc::Error| Failure::config(format!("config field `{field}`: {e}"));
        self.mel.validate().map_err(|e| named("mel", e))?;
        self.augmentation.validate().map_err(|e| named("augmentation", e))?;
        self.train.validate().map_err(|e| named("train", e))?;
        self.probe.validate().map_err(|e| named("probe", e))?;
        if self.metrics.k_grid.is_empty() || self.metrics.k_grid.contains(&0) {
            return Err(Failure::config("config field `metrics.k_grid`: needs positive values"));
        }
        if self.synth.sample_rate_hz != self.mel.sample_rate_hz {
            return Err(Failure::config(
                "config field `synth.sample_rate_hz`: must equal mel.sample_rate_hz",
            ));
        }
        if !(self.windows.window_seconds > 0.0 && self.windows.hop_seconds > 0.0) {
            return Err(Failure::config("config field `windows`: window and hop must be positive"));
        }
        Ok(())
    }

    /// Component configs with the global seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rng_seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            rng_seed: self.seed,
            ..self.probe.clone()
        }
    }

    pub fn augmentation_spec(&self) -> AugmentationSpec {
        AugmentationSpec {
            rng_seed: self.seed,
            ..self.augmentation.clone()
        }
    }

    /// SHA-256 over the config without its paths, in hex.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("paths");
        }
        let digest = Sha256::digest(serde_json::to_vec(&v).expect("value serializes"));
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

fn check_known(doc: &Value, template: &Value, prefix: &str) -> Result<(), Failure> {
    if let (Value::Object(d), Value::Object(t)) = (doc, template) {
        for (k, v) in d {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match t.get(k) {
                Some(tv) => check_known(v, tv, &path)?,
                None => return Err(Failure::config(format!("unknown config field `{path}`"))),
            }
        }
    }
    Ok(())
}

fn set_path(doc: &mut Value, template: &Value, key: &str, value: Value) -> Result<(), Failure> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut t = template;
    for p in &parts {
        t = t
            .get(p)
            .ok_or_else(|| Failure::config(format!("unknown config field `{key}`")))?;
    }
    let mut node = doc;
    for p in &parts[..parts.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Failure::config(format!("config field `{key}` crosses a non-object value")))?;
        node = map.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Failure::config(format!("config field `{key}` crosses a non-object value")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = RunConfig::load(None, &[], None).unwrap();
        assert_eq!(c, RunConfig::default());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn overrides_and_env_seed() {
        let c = RunConfig::load(
            None,
            &["train.total_steps=10".into(), "train.warmup_steps=2".into(), "augmentation.chain=[\"TS\"]".into()],
            Some("42".into()),
        )
        .unwrap();
        assert_eq!(c.train.total_steps, 10);
        assert_eq!(c.seed, 42);
        assert_eq!(c.train_config().rng_seed, 42);
        assert_eq!(c.augmentation.chain.len(), 1);
        let c = RunConfig::load(None, &["seed=7".into()], Some("42".into())).unwrap();
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::load(None, &["train.bogus=1".into()], None).unwrap_err();
        assert!(e.message.contains("train.bogus"), "{}", e.message);
        let e = RunConfig::load(None, &["train.total_steps=\"many\"".into()], None).unwrap_err();
        assert!(e.message.contains("train.total_steps"), "{}", e.message);
        let e = RunConfig::load(None, &["train.warmup_steps=9000".into()], None).unwrap_err();
        assert!(e.message.contains("train"), "{}", e.message);
        assert_eq!(e.code, 2);
    }

    #[test]
    fn hash_ignores_paths_but_not_seed() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
