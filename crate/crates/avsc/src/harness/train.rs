//! The training loop and split evaluation.

use crate::error::{Error, Result};
use crate::fusion::LossValues;
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::RunConfig;
use crate::harness::metrics::{compute_metrics, Metrics};
use crate::harness::model::{forward_sample, init_params, predict_sample};
use crate::harness::optimizer::AdamW;
use crate::numcore::Tape;
use crate::params::{BoundParams, ParamSet};
use crate::synthdata::{generate_dataset, Dataset};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the pre-training snapshot; training epochs count from 1.
    pub epoch: usize,
    pub train: Metrics,
    pub test: Metrics,
    /// Mean loss components over the epoch's batches (zero for epoch 0).
    pub loss: LossValues,
}

#[derive(Serialize)]
pub struct TrainOutput {
    pub history: Vec<EpochRecord>,
    pub checkpoint: Checkpoint,
}

impl TrainOutput {
    pub fn final_test(&self) -> Metrics {
        self.history.last().expect("history never empty").test
    }

    pub fn final_train(&self) -> Metrics {
        self.history.last().expect("history never empty").train
    }
}

/// Metrics of `params` on one split of `ds`.
pub fn evaluate_split(
    cfg: &RunConfig,
    params: &ParamSet,
    ds: &Dataset,
    idx: &[usize],
) -> Result<Metrics> {
    let mut truths = Vec::with_capacity(idx.len());
    let mut probs = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &ds.samples[i];
        truths.push(s.scene);
        probs.push(predict_sample(cfg, params, s, i)?);
    }
    compute_metrics(&truths, &probs, cfg.data.c_s, cfg.accuracy)
}

/// Full deterministic training run: dataset generation, initialization,
/// epochs of shuffled minibatches, and per-epoch evaluation on both splits.
pub fn train(cfg: &RunConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let ds = generate_dataset(&cfg.data, cfg.n_samples, cfg.data_seed, Default::default())?;
    train_on(cfg, &ds)
}

/// Same as [`train`] but on a caller-provided dataset, so runners can share
/// one generation across cells.
pub fn train_on(cfg: &RunConfig, ds: &Dataset) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut params = init_params(cfg);
    let mut opt = AdamW::new(cfg.optimizer);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    history.push(EpochRecord {
        epoch: 0,
        train: evaluate_split(cfg, &params, ds, &ds.train_idx)?,
        test: evaluate_split(cfg, &params, ds, &ds.test_idx)?,
        loss: LossValues::default(),
    });

    let mut last_finite: Option<usize> = None;
    for epoch in 1..=cfg.epochs {
        let mut order = ds.train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut sums = LossValues::default();
        let mut n_batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &params, true);
            let mut totals = Vec::with_capacity(batch.len());
            let mut batch_vals = LossValues::default();
            for &i in batch {
                let fwd = forward_sample(&mut tape, &bound, cfg, &ds.samples[i], i)?;
                let v = fwd.bundle.values(&tape);
                batch_vals.l_e += v.l_e;
                batch_vals.l_o += v.l_o;
                batch_vals.l_e2o += v.l_e2o;
                batch_vals.l_o2e += v.l_o2e;
                batch_vals.l_s += v.l_s;
                batch_vals.total += v.total;
                totals.push(fwd.bundle.total);
            }
            let sum = if totals.len() == 1 {
                totals[0]
            } else {
                let mut acc = totals[0];
                for &t in &totals[1..] {
                    acc = tape.add(acc, t)?;
                }
                acc
            };
            let batch_loss = tape.scale(sum, 1.0 / batch.len() as f64);
            let loss_val = tape.scalar_value(batch_loss);
            if !loss_val.is_finite() {
                return Err(Error::Diverged { epoch, last_finite });
            }
            tape.backward(batch_loss)?;
            let grads = bound.collect_grads(&tape);
            opt.step(&mut params, &grads, cfg.learning_rate)?;

            let m = batch.len() as f64;
            sums.l_e += batch_vals.l_e / m;
            sums.l_o += batch_vals.l_o / m;
            sums.l_e2o += batch_vals.l_e2o / m;
            sums.l_o2e += batch_vals.l_o2e / m;
            sums.l_s += batch_vals.l_s / m;
            sums.total += batch_vals.total / m;
            n_batches += 1;
        }
        last_finite = Some(epoch);
        let k = n_batches.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            train: evaluate_split(cfg, &params, ds, &ds.train_idx)?,
            test: evaluate_split(cfg, &params, ds, &ds.test_idx)?,
            loss: LossValues {
                l_e: sums.l_e / k,
                l_o: sums.l_o / k,
                l_e2o: sums.l_e2o / k,
                l_o2e: sums.l_o2e / k,
                l_s: sums.l_s / k,
                total: sums.total / k,
            },
        });
    }

    Ok(TrainOutput {
        history,
        checkpoint: Checkpoint {
            config: cfg.clone(),
            epoch: cfg.epochs,
            params,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::model::tiny_bench_config;

    #[test]
    fn zero_epochs_returns_initialization_metrics() {
        let mut cfg = tiny_bench_config();
        cfg.epochs = 0;
        let out = train(&cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        let m = out.final_test();
        assert!((0.0..=1.0).contains(&m.acc));
        // Small random init keeps the scene head near uniform.
        assert!((m.logloss - (cfg.data.c_s as f64).ln()).abs() < 0.5);
    }

    #[test]
    fn same_seed_reproduces_history_bit_exactly() {
        let mut cfg = tiny_bench_config();
        cfg.epochs = 2;
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
    }

    #[test]
    fn scene_only_training_learns_separable_data() {
        let mut cfg = tiny_bench_config();
        cfg.lambdas = [0.0, 0.0, 0.0, 0.0, 1.0];
        cfg.sf_enabled = false;
        cfg.data.noise_sigma = 0.0;
        cfg.n_samples = 48;
        cfg.epochs = 40;
        let out = train(&cfg).unwrap();
        assert!(
            out.final_test().acc >= 0.95,
            "test acc {} after {} epochs",
            out.final_test().acc,
            cfg.epochs
        );
    }

    #[test]
    fn training_loss_trends_down() {
        let mut cfg = tiny_bench_config();
        cfg.epochs = 6;
        cfg.n_samples = 24;
        let out = train(&cfg).unwrap();
        let first = out.history[1].loss.total;
        let last = out.history.last().unwrap().loss.total;
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn absurd_learning_rate_reports_divergence() {
        let mut cfg = tiny_bench_config();
        cfg.learning_rate = 1e200;
        cfg.epochs = 5;
        match train(&cfg) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.final_test())),
        }
    }

    #[test]
    fn batch_size_larger_than_split_still_works() {
        let mut cfg = tiny_bench_config();
        cfg.batch_size = 1000;
        cfg.epochs = 1;
        train(&cfg).unwrap();
    }
}
