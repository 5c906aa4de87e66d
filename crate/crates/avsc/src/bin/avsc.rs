//! Command-line entry point for training, evaluation, and the experiment
//! runners.

use avsc::ceoa::NegativeMode;
use avsc::error::{Error, Result};
use avsc::harness::checkpoint::Checkpoint;
use avsc::harness::config::RunConfig;
use avsc::harness::gradcheck::composite_grad_check;
use avsc::harness::projection::export_projection;
use avsc::harness::report::{fmt_float, Report};
use avsc::harness::runners::{
    ablate, ablate_modality, sweep_k, sweep_lambda, K_GRID, LAMBDA_COMBOS,
};
use avsc::harness::train::{train, Split};
use avsc::parallel::Parallelism;
use avsc::synthdata::{generate_dataset, Dataset};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "avsc", about = "Audio-visual scene classification experiments")]
struct Cli {
    /// JSON config file mirroring RunConfig; unknown keys are errors.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Overrides the config's training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports and checkpoints.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Lkm,
    Rkm,
}

#[derive(Subcommand)]
enum Cmd {
    /// Trains a model and writes history CSV plus a checkpoint.
    Train,
    /// Evaluates a checkpoint on one dataset split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Module ablation: backbone, +SF, +CEOA, both.
    Ablate {
        #[arg(long, default_value_t = 10)]
        runs: u64,
    },
    /// Negative-selection sweep over K and LKM/RKM.
    SweepK {
        #[arg(long, value_delimiter = ',')]
        k_values: Option<Vec<usize>>,
        #[arg(long, value_enum, value_delimiter = ',')]
        modes: Option<Vec<ModeArg>>,
        #[arg(long, default_value_t = 1)]
        runs: u64,
    },
    /// Loss-weight sweep over the default 12 combinations.
    SweepLambda {
        #[arg(long, default_value_t = 1)]
        runs: u64,
    },
    /// Audio-only, visual-only, both.
    AblateModality {
        #[arg(long, default_value_t = 10)]
        runs: u64,
    },
    /// Finite-difference check of the composite loss gradients.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Generates and saves the synthetic dataset.
    GenData,
    /// PCA projection of the learned head weights from a checkpoint.
    ProjectWeights {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => match cli.preset {
            Preset::Desk => RunConfig::desk(),
            Preset::Paper => RunConfig::paper(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn seeds(base: u64, runs: u64) -> Vec<u64> {
    (0..runs).map(|i| base + i).collect()
}

fn run(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out)?;
    let out = &cli.out;
    match &cli.cmd {
        Cmd::Train => {
            let cfg = load_config(cli)?;
            let result = train(&cfg)?;
            let report = Report {
                title: "training history".into(),
                meta: vec![format!("seed: {}", cfg.seed)],
                header: vec![
                    "epoch".into(),
                    "train_acc".into(),
                    "train_logloss".into(),
                    "test_acc".into(),
                    "test_logloss".into(),
                    "loss_e".into(),
                    "loss_o".into(),
                    "loss_e2o".into(),
                    "loss_o2e".into(),
                    "loss_s".into(),
                    "loss_total".into(),
                ],
                rows: result
                    .history
                    .iter()
                    .map(|r| {
                        vec![
                            r.epoch.to_string(),
                            fmt_float(r.train.acc),
                            fmt_float(r.train.logloss),
                            fmt_float(r.test.acc),
                            fmt_float(r.test.logloss),
                            fmt_float(r.loss.l_e),
                            fmt_float(r.loss.l_o),
                            fmt_float(r.loss.l_e2o),
                            fmt_float(r.loss.l_o2e),
                            fmt_float(r.loss.l_s),
                            fmt_float(r.loss.total),
                        ]
                    })
                    .collect(),
            };
            report.write_csv(&out.join("history.csv"))?;
            result.checkpoint.save(&out.join("checkpoint.json"))?;
            let m = result.final_test();
            println!("final test acc {:.4} logloss {:.4}", m.acc, m.logloss);
            println!("wrote {}", out.join("history.csv").display());
        }
        Cmd::Evaluate { checkpoint, split } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let cfg = &ckpt.config;
            let ds = generate_dataset(
                &cfg.data,
                cfg.n_samples,
                cfg.data_seed,
                Parallelism::default(),
            )?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let m = ckpt.evaluate(&ds, split)?;
            println!("acc {} logloss {}", fmt_float(m.acc), fmt_float(m.logloss));
        }
        Cmd::Ablate { runs } => {
            let cfg = load_config(cli)?;
            let (_, report) = ablate(&cfg, &seeds(cfg.seed, *runs), Parallelism::default())?;
            report.write_csv(&out.join("ablate.csv"))?;
            println!("wrote {}", out.join("ablate.csv").display());
        }
        Cmd::SweepK {
            k_values,
            modes,
            runs,
        } => {
            let cfg = load_config(cli)?;
            let ks = k_values.clone().unwrap_or_else(|| K_GRID.to_vec());
            let modes: Vec<NegativeMode> = modes
                .clone()
                .map(|ms| {
                    ms.into_iter()
                        .map(|m| match m {
                            ModeArg::Lkm => NegativeMode::Lkm,
                            ModeArg::Rkm => NegativeMode::Rkm,
                        })
                        .collect()
                })
                .unwrap_or_else(|| vec![NegativeMode::Lkm, NegativeMode::Rkm]);
            let (_, report) = sweep_k(
                &cfg,
                &ks,
                &modes,
                &seeds(cfg.seed, *runs),
                Parallelism::default(),
            )?;
            report.write_csv(&out.join("sweep_k.csv"))?;
            println!("wrote {}", out.join("sweep_k.csv").display());
        }
        Cmd::SweepLambda { runs } => {
            let cfg = load_config(cli)?;
            let (_, report) = sweep_lambda(
                &cfg,
                &LAMBDA_COMBOS,
                &seeds(cfg.seed, *runs),
                Parallelism::default(),
            )?;
            report.write_csv(&out.join("sweep_lambda.csv"))?;
            println!("wrote {}", out.join("sweep_lambda.csv").display());
        }
        Cmd::AblateModality { runs } => {
            let cfg = load_config(cli)?;
            let (_, report) =
                ablate_modality(&cfg, &seeds(cfg.seed, *runs), Parallelism::default())?;
            report.write_csv(&out.join("ablate_modality.csv"))?;
            println!("wrote {}", out.join("ablate_modality.csv").display());
        }
        Cmd::Gradcheck { seeds } => {
            let mut worst = 0.0f64;
            for seed in 0..*seeds {
                let report = composite_grad_check(seed, 1e-5, 1e-4)?;
                let err = report.max_rel_err();
                worst = worst.max(err);
                println!(
                    "seed {seed}: {} (max rel err {err:.3e})",
                    if report.pass { "pass" } else { "FAIL" }
                );
                if !report.pass {
                    return Err(Error::Contract(format!(
                        "gradient check failed at seed {seed}"
                    )));
                }
            }
            println!("all {seeds} seeds passed, worst rel err {worst:.3e}");
        }
        Cmd::GenData => {
            let cfg = load_config(cli)?;
            let ds = generate_dataset(
                &cfg.data,
                cfg.n_samples,
                cfg.data_seed,
                Parallelism::default(),
            )?;
            let path = out.join("dataset.json");
            ds.save(&path)?;
            let check = Dataset::load(&path)?;
            assert_eq!(check, ds, "dataset round trip must be bit-exact");
            println!("wrote {} ({} samples)", path.display(), ds.n);
        }
        Cmd::ProjectWeights { checkpoint } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let proj = export_projection(&ckpt)?;
            let path = out.join("projection.csv");
            proj.to_report().write_csv(&path)?;
            println!("wrote {} (rank {})", path.display(), proj.rank);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
