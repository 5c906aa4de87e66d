//! Checkpoint persistence: config, epoch, and every parameter tensor at full
//! precision. JSON preserves f64 values exactly, so round trips are bit-exact.

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::metrics::Metrics;
use crate::harness::train::{evaluate_split, Split};
use crate::params::ParamSet;
use crate::synthdata::Dataset;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: usize,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        ckpt.config.validate()?;
        Ok(ckpt)
    }

    /// Evaluates the stored parameters on one split of `ds` without mutation.
    pub fn evaluate(&self, ds: &Dataset, split: Split) -> Result<Metrics> {
        if ds.spec != self.config.data {
            return Err(Error::Config(
                "dataset spec does not match the checkpoint's data config".into(),
            ));
        }
        let idx = match split {
            Split::Train => &ds.train_idx,
            Split::Test => &ds.test_idx,
        };
        evaluate_split(&self.config, &self.params, ds, idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::model::tiny_bench_config;
    use crate::harness::train::train;
    use crate::synthdata::generate_dataset;

    #[test]
    fn round_trip_preserves_evaluation_bit_exactly() {
        let cfg = tiny_bench_config();
        let out = train(&cfg).unwrap();
        let ds = generate_dataset(&cfg.data, cfg.n_samples, cfg.data_seed, Default::default())
            .unwrap();
        let before = out.checkpoint.evaluate(&ds, Split::Test).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        out.checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, out.checkpoint);
        let after = loaded.evaluate(&ds, Split::Test).unwrap();
        assert_eq!(before.acc, after.acc);
        assert_eq!(before.logloss, after.logloss);
    }

    #[test]
    fn mismatched_dataset_rejected() {
        let cfg = tiny_bench_config();
        let out = train(&cfg).unwrap();
        let mut other = cfg.data.clone();
        other.noise_sigma += 0.5;
        let ds = generate_dataset(&other, cfg.n_samples, cfg.data_seed, Default::default())
            .unwrap();
        assert!(matches!(
            out.checkpoint.evaluate(&ds, Split::Test),
            Err(Error::Config(_))
        ));
    }
}
