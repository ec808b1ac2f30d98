use std::path::Path;

use anyhow::{bail, Context};
use lrs_flow::data::{generator, image_density, load_csv, load_csv_standardized, split, CsvOptions, Dataset, Splits, Standardization};
use lrs_flow::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Where training rows come from, as recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// CSV path, `generator:<name>` or `image:<path>`.
    pub source: String,
    /// Size of generated or image-derived data.
    pub samples: usize,
    /// Seed of generated or image-derived data.
    pub seed: u64,
    pub has_header: bool,
}

enum Source<'a> {
    Generator(&'a str),
    Image(&'a Path),
    Csv(&'a Path),
}

impl DataSpec {
    fn kind(&self) -> Source<'_> {
        if let Some(name) = self.source.strip_prefix("generator:") {
            Source::Generator(name)
        } else if let Some(path) = self.source.strip_prefix("image:") {
            Source::Image(Path::new(path))
        } else {
            Source::Csv(Path::new(&self.source))
        }
    }

    fn generated(&self) -> anyhow::Result<Option<Dataset>> {
        Ok(match self.kind() {
            Source::Generator(name) => Some(generator(name, self.samples, self.seed)?),
            Source::Image(path) => Some(image_density(path, self.samples, self.seed)?),
            Source::Csv(_) => None,
        })
    }

    /// Train / validation / test splits using the fractions and seed of `config`.
    pub fn load(&self, config: &TrainConfig) -> anyhow::Result<Splits> {
        if let Some(ds) = self.generated()? {
            return Ok(split(&ds, config.validation_fraction, config.test_fraction, config.seed)?);
        }
        let Source::Csv(path) = self.kind() else { unreachable!() };
        let opts = CsvOptions {
            has_header: self.has_header,
            validation_fraction: config.validation_fraction,
            test_fraction: config.test_fraction,
            seed: config.seed,
        };
        load_csv(path, &opts).with_context(|| format!("loading {}", path.display()))
    }

    /// Every row, mapped with `stats` when the source is a CSV.
    pub fn load_all(&self, stats: Option<&Standardization>) -> anyhow::Result<Dataset> {
        if let Some(ds) = self.generated()? {
            return Ok(ds);
        }
        let Source::Csv(path) = self.kind() else { unreachable!() };
        match stats {
            Some(stats) => Ok(load_csv_standardized(path, self.has_header, stats)?),
            None => bail!("the checkpoint has no standardization statistics for CSV data"),
        }
    }
}
