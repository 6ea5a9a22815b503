//! Single-file run configuration covering every pipeline stage.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cql::CqlConfig;
use crate::dataset::PolicyMix;
use crate::env::{EnvConfig, RelayEnv};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::feasibility::CandidateConfig;
use crate::radio::{LinkParams, ThresholdSet};
use crate::repr::ReprConfig;
use crate::terrain::{MapGenConfig, TerrainMap};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub link: LinkParams,
    pub thresholds: ThresholdSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_transitions: usize,
    pub mix: PolicyMix,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n_transitions: 50_000,
            mix: PolicyMix::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds dataset generation and codec training; CQL uses `eval.seeds`.
    pub seed: u64,
    /// Worker threads; the `UAVRELAY_THREADS` variable overrides it.
    pub threads: usize,
    pub map: MapGenConfig,
    pub env: EnvConfig,
    pub radio: RadioSection,
    pub csfub: CandidateConfig,
    pub dataset: DatasetSection,
    pub repr: ReprConfig,
    pub cql: CqlConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            map: MapGenConfig::default(),
            env: EnvConfig::default(),
            radio: RadioSection::default(),
            csfub: CandidateConfig::default(),
            dataset: DatasetSection::default(),
            repr: ReprConfig::default(),
            cql: CqlConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(one_line(&e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        self.env.validate()?;
        self.radio.link.validate()?;
        self.radio.thresholds.validate()?;
        self.csfub.validate(&self.env)?;
        self.dataset.mix.validate()?;
        if self.dataset.n_transitions == 0 {
            return Err(Error::Config(
                "dataset.n_transitions must be positive".into(),
            ));
        }
        self.repr.validate(self.env.obs_dim())?;
        self.cql.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    /// Effective worker count after the environment override.
    pub fn thread_count(&self) -> usize {
        crate::par::thread_count(self.threads)
    }

    /// Scenario over `map` with this config's environment settings.
    pub fn relay_env(&self, map: Arc<TerrainMap>) -> Result<RelayEnv> {
        RelayEnv::new(
            map,
            self.env.clone(),
            self.radio.link.clone(),
            self.radio.thresholds.clone(),
            self.csfub.clone(),
        )
    }
}

/// TOML errors span several lines; CLI errors must fit on one.
fn one_line(e: &toml::de::Error) -> String {
    let mut msg = e.message().to_string();
    if let Some(span) = e.span() {
        msg = format!("at byte {}: {msg}", span.start);
    }
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}
