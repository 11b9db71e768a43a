//! Run configuration: profile defaults, then the JSON config file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ptmaml_core::data::SynthConfig;
use ptmaml_core::learner::LearnerConfig;
use ptmaml_core::meta::MetaConfig;
use ptmaml_core::relevance::ClassifierConfig;

use crate::error::{io_err, json_err, CliError};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "PTMAML_CONFIG";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    /// Raw benchmark-format files: `{train,dev,test}.jsonl`, `tables.jsonl`.
    pub data: PathBuf,
    /// Everything the pipeline produces.
    pub out: PathBuf,
}

/// Fully resolved configuration, echoed into every run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    /// Overrides the seed of every component below.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub classifier: ClassifierConfig,
    /// Group training examples by gold rather than predicted type when retrieving.
    pub gold_types: bool,
    pub learner: LearnerConfig,
    pub meta: MetaConfig,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (learner, meta) = match profile {
            Profile::Desk => (LearnerConfig::desk(), MetaConfig::desk()),
            Profile::Paper => (LearnerConfig::paper(), MetaConfig::paper()),
        };
        Self {
            profile,
            seed: 0,
            paths: Paths {
                data: PathBuf::from("data"),
                out: PathBuf::from("out"),
            },
            synth: SynthConfig::default(),
            classifier: ClassifierConfig::default(),
            gold_types: false,
            learner,
            meta,
        }
    }

    /// Pushes the top-level seed into every component.
    fn propagate_seed(&mut self) {
        self.synth.seed = self.seed;
        self.classifier.seed = self.seed;
        self.meta.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.learner.validate().map_err(CliError::Config)?;
        self.meta.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.synth.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Flag values that override the config file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// JSON config file (default: $PTMAML_CONFIG if set).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// Resolves profile defaults, the config file and flags, in that order.
pub fn resolve(o: &Overrides) -> Result<RunConfig, CliError> {
    let path = o
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let file = match &path {
        Some(p) => read_file(p)?,
        None => Value::Object(Default::default()),
    };
    if !file.is_object() {
        return Err(CliError::Config("config file must hold a JSON object".into()));
    }
    let profile = match (o.profile, file.get("profile")) {
        (Some(p), _) => p,
        (None, Some(v)) => serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("profile: {e}")))?,
        (None, None) => Profile::Desk,
    };
    let mut value = serde_json::to_value(RunConfig::for_profile(profile)).expect("config serializes");
    merge(&mut value, file);
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.profile = profile;

    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(d) = &o.data_dir {
        cfg.paths.data = d.clone();
    }
    if let Some(d) = &o.out_dir {
        cfg.paths.out = d.clone();
    }
    if let Some(e) = o.epochs {
        cfg.meta.epochs = e;
    }
    if let Some(t) = o.threads {
        cfg.meta.threads = t;
    }
    if let Some(a) = o.alpha {
        cfg.meta.alpha = a;
    }
    if let Some(b) = o.beta {
        cfg.meta.beta = b;
    }
    if let Some(k) = o.k {
        cfg.meta.k = k;
    }
    cfg.propagate_seed();
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_profile() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"profile":"paper","seed":5,"meta":{"epochs":7,"alpha":0.5}}"#).unwrap();
        let cfg = resolve(&Overrides {
            config: Some(path),
            epochs: Some(3),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.profile, Profile::Paper);
        assert_eq!(cfg.meta.task_batch, 200);
        assert_eq!(cfg.meta.epochs, 3);
        assert_eq!(cfg.meta.alpha, 0.5);
        assert_eq!(cfg.learner.hidden_dim, 100);
        assert_eq!((cfg.seed, cfg.synth.seed, cfg.meta.seed), (5, 5, 5));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = resolve(&Overrides::default()).unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.meta.task_batch, 16);
    }

    #[test]
    fn bad_values_rejected() {
        let err = resolve(&Overrides {
            beta: Some(-1.0),
            ..Default::default()
        })
        .unwrap_err();
        assert_eq!(err.kind(), "config");
    }
}
