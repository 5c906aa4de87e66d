//! Experiment runners: module ablation, K sweep, loss-weight sweep, and
//! modality ablation. Each runner executes a grid of (configuration, seed)
//! cells, optionally in parallel, and emits a CSV report. Cells are
//! independent; every run regenerates its dataset from the shared data seed.

use crate::ceoa::NegativeMode;
use crate::error::Result;
use crate::harness::config::{Modality, RunConfig};
use crate::harness::metrics::Metrics;
use crate::harness::report::{fmt_float, Report};
use crate::harness::train::train;
use crate::parallel::{map_items, Parallelism};

/// The 12 loss-weight combinations exercised by the full-scale study.
pub const LAMBDA_COMBOS: [[f64; 5]; 12] = [
    [1.0, 1.0, 1.0, 1.0, 1.0],
    [0.5, 1.0, 1.0, 1.0, 1.0],
    [0.5, 0.5, 1.0, 1.0, 1.0],
    [0.25, 0.5, 1.0, 1.0, 1.0],
    [0.25, 0.5, 0.25, 1.0, 1.0],
    [0.25, 0.5, 0.25, 0.5, 1.0],
    [0.25, 0.5, 0.01, 0.01, 1.0],
    [0.05, 0.25, 0.05, 0.25, 1.0],
    [0.01, 0.5, 0.01, 0.01, 1.0],
    [0.01, 0.1, 0.01, 0.1, 1.0],
    [0.01, 0.01, 0.05, 0.1, 1.0],
    [0.005, 0.1, 0.025, 0.1, 1.0],
];

/// The K grid of the full-scale negative-selection study.
pub const K_GRID: [usize; 7] = [1, 5, 10, 15, 20, 25, 30];

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub seed: u64,
    pub train: Metrics,
    pub test: Metrics,
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub label: String,
    pub runs: Vec<RunRecord>,
    pub error: Option<String>,
}

impl Cell {
    pub fn mean_test_acc(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.test.acc))
    }

    pub fn mean_test_logloss(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.test.logloss))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn sd(vals: &[f64]) -> f64 {
    if vals.len() < 2 {
        return 0.0;
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
}

/// Runs every valid (cell, seed) pair; invalid cells are kept in the output
/// with their error and the rest of the grid still runs.
fn run_grid(
    cells: Vec<(String, RunConfig)>,
    seeds: &[u64],
    par: Parallelism,
) -> Result<Vec<Cell>> {
    let mut jobs = Vec::new();
    let mut prepared = Vec::new();
    for (label, cfg) in cells {
        match cfg.validate() {
            Ok(()) => {
                for &seed in seeds {
                    let mut c = cfg.clone();
                    c.seed = seed;
                    jobs.push((prepared.len(), seed, c));
                }
                prepared.push(Cell {
                    label,
                    runs: Vec::new(),
                    error: None,
                });
            }
            Err(e) => prepared.push(Cell {
                label,
                runs: Vec::new(),
                error: Some(e.to_string()),
            }),
        }
    }
    let results = map_items(par, &jobs, |(cell_idx, seed, cfg)| {
        (*cell_idx, *seed, train(cfg))
    });
    for (cell_idx, seed, res) in results {
        match res {
            Ok(out) => prepared[cell_idx].runs.push(RunRecord {
                seed,
                train: out.final_train(),
                test: out.final_test(),
            }),
            Err(e) => {
                let slot = &mut prepared[cell_idx].error;
                if slot.is_none() {
                    *slot = Some(format!("seed {seed}: {e}"));
                }
            }
        }
    }
    Ok(prepared)
}

fn meta_lines(cfg: &RunConfig) -> Vec<String> {
    vec![
        format!(
            "optimizer: adamw beta1={} beta2={} eps={} weight_decay={}",
            cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps, cfg.optimizer.weight_decay
        ),
        format!("accuracy: {:?}", cfg.accuracy).to_lowercase(),
        format!(
            "lr={} batch_size={} epochs={} n_samples={} data_seed={}",
            cfg.learning_rate, cfg.batch_size, cfg.epochs, cfg.n_samples, cfg.data_seed
        ),
    ]
}

fn cells_to_report(title: &str, meta: Vec<String>, cells: &[Cell]) -> Report {
    let header = vec![
        "cell".to_string(),
        "seed".to_string(),
        "test_acc".to_string(),
        "test_logloss".to_string(),
        "train_acc".to_string(),
        "train_logloss".to_string(),
    ];
    let mut rows = Vec::new();
    for cell in cells {
        if let Some(err) = &cell.error {
            rows.push(vec![
                cell.label.clone(),
                "error".into(),
                err.replace(',', ";"),
                String::new(),
                String::new(),
                String::new(),
            ]);
            continue;
        }
        for r in &cell.runs {
            rows.push(vec![
                cell.label.clone(),
                r.seed.to_string(),
                fmt_float(r.test.acc),
                fmt_float(r.test.logloss),
                fmt_float(r.train.acc),
                fmt_float(r.train.logloss),
            ]);
        }
        let accs: Vec<f64> = cell.runs.iter().map(|r| r.test.acc).collect();
        let lls: Vec<f64> = cell.runs.iter().map(|r| r.test.logloss).collect();
        let tr_accs: Vec<f64> = cell.runs.iter().map(|r| r.train.acc).collect();
        let tr_lls: Vec<f64> = cell.runs.iter().map(|r| r.train.logloss).collect();
        for (tag, a, b, c, d) in [
            (
                "mean",
                mean(accs.iter().copied()),
                mean(lls.iter().copied()),
                mean(tr_accs.iter().copied()),
                mean(tr_lls.iter().copied()),
            ),
            ("sd", sd(&accs), sd(&lls), sd(&tr_accs), sd(&tr_lls)),
        ] {
            rows.push(vec![
                cell.label.clone(),
                tag.into(),
                fmt_float(a),
                fmt_float(b),
                fmt_float(c),
                fmt_float(d),
            ]);
        }
    }
    Report {
        title: title.to_string(),
        meta,
        header,
        rows,
    }
}

fn ceoa_lambdas(base: &RunConfig) -> (f64, f64) {
    let l3 = if base.lambdas[2] > 0.0 { base.lambdas[2] } else { 1.0 };
    let l4 = if base.lambdas[3] > 0.0 { base.lambdas[3] } else { 1.0 };
    (l3, l4)
}

pub fn backbone_config(base: &RunConfig) -> RunConfig {
    let mut c = base.clone();
    c.sf_enabled = false;
    c.lambdas[2] = 0.0;
    c.lambdas[3] = 0.0;
    c
}

pub fn full_config(base: &RunConfig) -> RunConfig {
    let (l3, l4) = ceoa_lambdas(base);
    let mut c = base.clone();
    c.sf_enabled = true;
    c.lambdas[2] = l3;
    c.lambdas[3] = l4;
    c
}

/// Module ablation: backbone, +SF, +CEOA, both.
pub fn ablate(base: &RunConfig, seeds: &[u64], par: Parallelism) -> Result<(Vec<Cell>, Report)> {
    let (l3, l4) = ceoa_lambdas(base);
    let mut sf_only = backbone_config(base);
    sf_only.sf_enabled = true;
    let mut ceoa_only = backbone_config(base);
    ceoa_only.lambdas[2] = l3;
    ceoa_only.lambdas[3] = l4;
    let cells = vec![
        ("backbone".to_string(), backbone_config(base)),
        ("+sf".to_string(), sf_only),
        ("+ceoa".to_string(), ceoa_only),
        ("+ceoa+sf".to_string(), full_config(base)),
    ];
    let cells = run_grid(cells, seeds, par)?;
    let mut meta = meta_lines(base);
    meta.push("full-scale reference acc: backbone 88.42, +sf 90.34, +ceoa 90.75, +ceoa+sf 91.58".into());
    let report = cells_to_report("module ablation", meta, &cells);
    Ok((cells, report))
}

/// Grid over K values and negative-selection modes.
pub fn sweep_k(
    base: &RunConfig,
    k_values: &[usize],
    modes: &[NegativeMode],
    seeds: &[u64],
    par: Parallelism,
) -> Result<(Vec<Cell>, Report)> {
    let base = full_config(base);
    let mut cells = Vec::new();
    for &mode in modes {
        for &k in k_values {
            let mut c = base.clone();
            c.contrastive.k = k;
            c.contrastive.mode = mode;
            cells.push((format!("{mode}-k{k}"), c));
        }
    }
    let cells = run_grid(cells, seeds, par)?;
    let mut meta = meta_lines(&base);
    meta.push("full-scale reference: lkm best k=15 acc 91.58; rkm best k=10 acc 91.30".into());
    let report = cells_to_report("negative-selection sweep", meta, &cells);
    Ok((cells, report))
}

/// One run per loss-weight combination.
pub fn sweep_lambda(
    base: &RunConfig,
    combos: &[[f64; 5]],
    seeds: &[u64],
    par: Parallelism,
) -> Result<(Vec<Cell>, Report)> {
    let mut cells = Vec::new();
    for (i, combo) in combos.iter().enumerate() {
        let mut c = base.clone();
        c.lambdas = *combo;
        let label = format!(
            "combo{}-({},{},{},{},{})",
            i + 1,
            combo[0],
            combo[1],
            combo[2],
            combo[3],
            combo[4]
        );
        cells.push((label, c));
    }
    let cells = run_grid(cells, seeds, par)?;
    let mut meta = meta_lines(base);
    meta.push(
        "full-scale reference best: combo 6 (0.25,0.5,0.25,0.5,1) acc 94.10 logloss 0.192".into(),
    );
    let report = cells_to_report("loss-weight sweep", meta, &cells);
    Ok((cells, report))
}

/// Audio-only, visual-only, and both-modality rows.
pub fn ablate_modality(
    base: &RunConfig,
    seeds: &[u64],
    par: Parallelism,
) -> Result<(Vec<Cell>, Report)> {
    let mut audio = base.clone();
    audio.modality = Modality::Audio;
    let mut visual = base.clone();
    visual.modality = Modality::Visual;
    let mut both = base.clone();
    both.modality = Modality::Both;
    let cells = vec![
        ("audio".to_string(), audio),
        ("visual".to_string(), visual),
        ("both".to_string(), both),
    ];
    let cells = run_grid(cells, seeds, par)?;
    let mut meta = meta_lines(base);
    meta.push("full-scale reference acc: audio 73.55, visual 88.86, both 94.10".into());
    let report = cells_to_report("modality ablation", meta, &cells);
    Ok((cells, report))
}
