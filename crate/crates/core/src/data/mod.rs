//! Dataset construction: synthetic 2-D generators, image-derived densities
//! and CSV ingestion with standardization.

mod image;
mod synthetic;
mod tabular;

pub use image::{image_density, parse_pgm, sample_image, GrayImage};
pub use synthetic::{checkerboard, generator, rings, rings_with, standard_normal, two_moons, RingsConfig};
pub use tabular::{load_csv, load_csv_standardized, CsvOptions, Standardization};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A finite `rows x dim` sample with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    data: Tensor,
    standardization: Option<Standardization>,
    source: String,
}

impl Dataset {
    pub fn new(data: Tensor, source: impl Into<String>) -> Result<Self> {
        data.require_matrix("dataset")?;
        if !data.all_finite() {
            return Err(Error::Data("dataset contains NaN or infinite values".into()));
        }
        Ok(Dataset {
            data,
            standardization: None,
            source: source.into(),
        })
    }

    pub(crate) fn with_standardization(mut self, s: Standardization) -> Self {
        self.standardization = Some(s);
        self
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// SHA-256 over the shape and the little-endian values, as lowercase hex.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for d in self.data.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in self.data.data() {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn select(&self, rows: &[usize], tag: &str) -> Dataset {
        let dim = self.dim();
        let mut out = Vec::with_capacity(rows.len() * dim);
        for &r in rows {
            out.extend_from_slice(self.data.row(r));
        }
        Dataset {
            data: Tensor::matrix(rows.len(), dim, out).expect("selected shape"),
            standardization: self.standardization.clone(),
            source: format!("{}#{tag}", self.source),
        }
    }
}

/// Disjoint train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Sizes of the test and validation parts; validation is a fraction of what
/// remains after removing the test part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(rows: usize, validation_fraction: f64, test_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) || !(0.0..1.0).contains(&validation_fraction) {
            return Err(Error::Data(format!(
                "split fractions must be in [0, 1): validation {validation_fraction}, test {test_fraction}"
            )));
        }
        let test = (rows as f64 * test_fraction).round() as usize;
        let val = ((rows - test) as f64 * validation_fraction).round() as usize;
        let train = rows - test - val;
        if train == 0 {
            return Err(Error::Data(format!("{rows} rows leave no training data")));
        }
        Ok(SplitSizes { train, val, test })
    }
}

/// Shuffles row indices with `seed` and partitions them.
pub(crate) fn shuffled_partition(rows: usize, sizes: SplitSizes, seed: u64) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order[..sizes.test].to_vec();
    let val = order[sizes.test..sizes.test + sizes.val].to_vec();
    let train = order[sizes.test + sizes.val..].to_vec();
    [train, val, test]
}

/// Seeded shuffle followed by a train / validation / test split.
pub fn split(dataset: &Dataset, validation_fraction: f64, test_fraction: f64, seed: u64) -> Result<Splits> {
    let sizes = SplitSizes::new(dataset.rows(), validation_fraction, test_fraction)?;
    let [train, val, test] = shuffled_partition(dataset.rows(), sizes, seed);
    Ok(Splits {
        train: dataset.select(&train, "train"),
        val: dataset.select(&val, "val"),
        test: dataset.select(&test, "test"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let data: Vec<f64> = (0..50).map(|v| v as f64).collect();
        let ds = Dataset::new(Tensor::matrix(50, 1, data).unwrap(), "seq").unwrap();
        let s = split(&ds, 0.2, 0.1, 7).unwrap();
        assert_eq!((s.train.rows(), s.val.rows(), s.test.rows()), (36, 9, 5));
        let mut all: Vec<f64> = [&s.train, &s.val, &s.test]
            .iter()
            .flat_map(|d| d.data().data().to_vec())
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..50).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(s, split(&ds, 0.2, 0.1, 7).unwrap());
        assert_eq!(s.train.content_hash().len(), 64);
        assert_ne!(s.train.content_hash(), s.val.content_hash());
    }

    #[test]
    fn content_hash_matches_reference_digest() {
        let ds = Dataset::new(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap(), "x").unwrap();
        assert_eq!(
            ds.content_hash(),
            "cafc987464ca0a61b47e382ab0218861f4e07f14f216abf8f55cd613f93dcd5b"
        );
    }

    #[test]
    fn non_finite_values_are_rejected() {
        assert!(Dataset::new(Tensor::matrix(1, 2, vec![0.0, f64::NAN]).unwrap(), "x").is_err());
    }
}
