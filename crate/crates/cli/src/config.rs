//! The run configuration: one JSON document, validated before any work.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sst_core::dsp::PreprocessConfig;
use sst_core::recording::default_bipolar_pairs;
use sst_core::sst::{DEFAULT_THRESHOLD, DEFAULT_WINDOW};
use sst_core::synth::SynthConfig;
use sst_core::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SstSettings {
    pub threshold: f64,
    /// Median window in epochs (odd).
    pub window: usize,
    /// Per-channel fusion weights; uniform when absent.
    pub weights: Option<Vec<f64>>,
}

impl Default for SstSettings {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            window: DEFAULT_WINDOW,
            weights: None,
        }
    }
}

/// Everything a command may need. The top-level `seed` is the only source
/// of randomness; it is copied into the synth and train sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory of `<subject>.edf` files with `<subject>.<expert>.csv`
    /// annotation sidecars.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub bipolar_pairs: Vec<(String, String)>,
    pub preprocess: PreprocessConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub sst: SstSettings,
    pub checkpoint: Option<PathBuf>,
    pub recording: Option<PathBuf>,
    pub sst_csv: Option<PathBuf>,
    /// Extra annotation files for `infer`, `eval` and `baseline`.
    pub annotations: Vec<PathBuf>,
    /// Derivation used by the envelope baseline.
    pub baseline_channel: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: "data".into(),
            out_dir: "out".into(),
            bipolar_pairs: default_bipolar_pairs(),
            preprocess: PreprocessConfig::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            sst: SstSettings::default(),
            checkpoint: None,
            recording: None,
            sst_csv: None,
            annotations: Vec::new(),
            baseline_channel: "P3-P4".into(),
        }
    }
}

impl RunConfig {
    /// Parse JSON, reporting the offending field path on failure.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    /// Check every section. Nested seeds must agree with the top-level one.
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, s) in [("synth.seed", self.synth.seed), ("train.seed", self.train.seed)] {
            if s != self.seed && s != 0 {
                return Err(CliError::Config(format!("{name} is set; use the top-level seed instead")));
            }
        }
        self.synth.validate()?;
        self.train.validate()?;
        self.preprocess
            .artifact
            .validate()
            .map_err(|m| CliError::Config(format!("preprocess.artifact: {m}")))?;
        if !(self.sst.threshold > 0.0 && self.sst.threshold < 1.0) {
            return Err(CliError::Config(format!("sst.threshold must lie in (0, 1), got {}", self.sst.threshold)));
        }
        if self.sst.window == 0 || self.sst.window % 2 == 0 {
            return Err(CliError::Config(format!("sst.window must be odd, got {}", self.sst.window)));
        }
        if let Some(w) = &self.sst.weights {
            if w.len() != self.bipolar_pairs.len() || w.iter().any(|v| !(*v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
                return Err(CliError::Config(
                    "sst.weights needs one non-negative weight per bipolar pair, not all zero".into(),
                ));
            }
        }
        if self.bipolar_pairs.is_empty() {
            return Err(CliError::Config("bipolar_pairs is empty".into()));
        }
        Ok(())
    }

    /// Validated config with the seed propagated.
    pub fn resolved(mut self) -> Result<Self, CliError> {
        self.validate()?;
        let seed = self.seed;
        self.set_seed(seed);
        Ok(self)
    }
}
