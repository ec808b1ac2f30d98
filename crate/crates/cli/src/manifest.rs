use std::path::Path;

use anyhow::{bail, Context};
use lrs_flow::data::Splits;
use lrs_flow::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::data_spec::DataSpec;

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataHash {
    pub train: String,
    pub val: String,
    pub test: String,
}

impl DataHash {
    pub fn of(splits: &Splits) -> Self {
        DataHash {
            train: splits.train.content_hash(),
            val: splits.val.content_hash(),
            test: splits.test.content_hash(),
        }
    }
}

/// Everything needed to repeat a training run: the resolved configuration
/// (which carries the seed), the data source and hashes of the splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub data: DataSpec,
    pub data_hash: DataHash,
}

impl Manifest {
    pub fn new(config: TrainConfig, data: DataSpec, data_hash: DataHash) -> Self {
        Manifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config,
            data,
            data_hash,
        }
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.manifest_version != MANIFEST_VERSION {
            bail!("unsupported manifest version {}", m.manifest_version);
        }
        if m.seed != m.config.seed {
            bail!("manifest seed {} disagrees with config seed {}", m.seed, m.config.seed);
        }
        m.config.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
