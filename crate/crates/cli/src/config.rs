//! Declarative run description: a TOML file, then command-line overrides,
//! then validation before anything is computed.

use std::path::{Path, PathBuf};

use serde::de::{value::StrDeserializer, DeserializeOwned, IntoDeserializer};
use serde::{Deserialize, Serialize};

use ici::data::{EpisodeSpec, SynthParams};
use ici::selftrain::{LoopConfig, Selection};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Feature file (`.icif` or `.csv`). Without it, a synthetic store is
    /// generated from `synth`.
    pub input: Option<PathBuf>,
    pub episodes: usize,
    pub seed: u64,
    /// Worker threads. Like the output destinations it cannot change
    /// results, so it is left out of serialized configs and report headers.
    #[serde(skip_serializing)]
    pub jobs: usize,
    /// Extra selection strategies run on the same episodes.
    pub compare: Vec<Selection>,
    /// Largest tolerated fraction of episodes with a non-converged path
    /// point before the run exits with the numerical status.
    pub max_nonconverged: f64,
    /// JSON report destination; stdout summary only when absent.
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
    /// Per-episode CSV destination.
    #[serde(skip_serializing)]
    pub csv: Option<PathBuf>,
    pub episode: EpisodeSpec,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub synth: SynthParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            episodes: 2000,
            seed: 0,
            jobs: 1,
            compare: Vec::new(),
            max_nonconverged: 0.05,
            output: None,
            csv: None,
            episode: EpisodeSpec::default(),
            loop_cfg: LoopConfig::default(),
            synth: SynthParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    /// The config file when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.episodes == 0 {
            return Err(CliError::config("episodes must be >= 1"));
        }
        if self.jobs == 0 {
            return Err(CliError::config("jobs must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.max_nonconverged) {
            return Err(CliError::config("max_nonconverged must lie in [0, 1]"));
        }
        if self.compare.contains(&self.loop_cfg.selection) {
            return Err(CliError::config(format!(
                "compare lists the primary selection '{}'",
                self.loop_cfg.selection.as_str()
            )));
        }
        self.episode.validate()?;
        self.loop_cfg.validate()?;
        if self.input.is_none() {
            let s = &self.synth;
            if s.classes < self.episode.ways {
                return Err(CliError::config(format!(
                    "synthetic store has {} classes but episodes need {}",
                    s.classes, self.episode.ways
                )));
            }
            if s.per_class < self.episode.per_class_demand() {
                return Err(CliError::config(format!(
                    "synthetic store has {} instances per class but episodes need {}",
                    s.per_class,
                    self.episode.per_class_demand()
                )));
            }
        }
        Ok(())
    }
}

/// Parse a lowercase enum name the same way the config file does.
pub fn parse_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    let de: StrDeserializer<serde::de::value::Error> = s.into_deserializer();
    T::deserialize(de).map_err(|e| e.to_string())
}
