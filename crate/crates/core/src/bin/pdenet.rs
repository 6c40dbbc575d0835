//! `pdenet` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
//! 4 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use pdenet::config::{ExperimentConfig, SCHEMA};
use pdenet::io;
use pdenet::report::{evaluate_prediction, identify, TestSet};
use pdenet::simulator::generate_batch;
use pdenet::trainer::{
    equation_snapshot, initial_model, layerwise_train, BatchSource, FixedBatch, SimulatedBatches,
    TrainingReport,
};
use pdenet::{Error, PdeNetModel, Result};

#[derive(Parser)]
#[command(
    name = "pdenet",
    version,
    about = "Learn evolution PDEs and their discretisations from data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset of noisy coarse trajectories.
    Simulate(Common),
    /// Warm-up plus layer-wise training; writes per-stage checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train on a dataset written by `simulate` instead of fresh batches.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compare a checkpoint's recovered equation with the true one.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Prediction-error percentiles of a checkpoint on fresh test data.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `report.n_tests`.
        #[arg(long)]
        tests: Option<usize>,
    },
    /// Train, identify and predict in one go.
    Reproduce(Common),
    /// Print one snapshot of a dataset sample as CSV.
    Dump {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        snapshot: usize,
    },
    /// Print the config JSON schema.
    Schema,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep filters at their initial stencils.
    #[arg(long)]
    frozen: bool,
    /// Disable pseudo-upwinding.
    #[arg(long)]
    no_upwind: bool,
    /// Disable the SymNet sparsity penalty.
    #[arg(long)]
    no_sparsity: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.train.frozen |= self.frozen;
        cfg.train.pseudo_upwind &= !self.no_upwind;
        cfg.train.sparsity &= !self.no_sparsity;
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(cfg)
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_training(
    out: &Path,
    report: &TrainingReport,
    model: &PdeNetModel,
    threshold: f64,
) -> Result<()> {
    write(&out.join("loss.csv"), &report.loss_csv())?;
    write(&out.join("stages.csv"), &report.stage_csv())?;
    let mut eq = equation_snapshot(model, threshold).join("\n");
    eq.push('\n');
    write(&out.join("equation.txt"), &eq)
}

fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let spec = cfg.spec();
    let set = generate_batch(
        &spec,
        cfg.dataset.samples,
        cfg.dataset.snapshots,
        cfg.dataset_seed(),
    )?;
    let dir = cfg.output_dir.join("dataset");
    io::write_dataset(&dir, &set, &spec, cfg.seed)?;
    info!(
        "wrote {} samples × {} snapshots to {}",
        set.len(),
        set.n_snapshots(),
        dir.display()
    );
    Ok(())
}

fn train(cfg: &ExperimentConfig, dataset: Option<&Path>) -> Result<PdeNetModel> {
    let spec = cfg.spec();
    let tcfg = cfg.train_config();
    let mut model = initial_model(&spec, &tcfg)?;
    let mut source: Box<dyn BatchSource> = match dataset {
        Some(dir) => {
            let (m, set) = io::read_dataset(dir)?;
            if m.components != spec.system.components() || !m.grid.matches(&spec.coarse_grid()) {
                return Err(Error::Config(format!(
                    "dataset {} does not match the config",
                    dir.display()
                )));
            }
            Box::new(FixedBatch(set))
        }
        None => Box::new(SimulatedBatches {
            spec,
            batch_size: tcfg.batch_size,
            seed: tcfg.seed,
        }),
    };
    let out = cfg.output_dir.clone();
    let ckpt = out.join("checkpoints");
    let threshold = cfg.report.display_threshold;
    let report = layerwise_train(&mut model, source.as_mut(), &tcfg, |stage, m, r| {
        io::save_model(&ckpt.join(format!("stage_{stage:02}.json")), m)?;
        write_training(&out, r, m, threshold)
    })?;
    io::save_model(&out.join("model.json"), &model)?;
    write(
        &out.join("training.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    print!("{}", fs::read_to_string(out.join("equation.txt"))?);
    Ok(model)
}

fn identify_cmd(cfg: &ExperimentConfig, model: &PdeNetModel) -> Result<()> {
    cfg.check_model(model)?;
    let rep = identify(model, &cfg.spec().system, cfg.report.prune_tol)?;
    let text = rep.to_text();
    write(&cfg.output_dir.join("identification.txt"), &text)?;
    write(&cfg.output_dir.join("identification.csv"), &rep.to_csv())?;
    print!("{text}");
    Ok(())
}

fn predict_cmd(cfg: &ExperimentConfig, model: &PdeNetModel, n_tests: usize) -> Result<()> {
    cfg.check_model(model)?;
    let tests = TestSet::generate(
        &cfg.spec(),
        n_tests,
        cfg.prediction_steps(),
        cfg.test_seed(),
    )?;
    let rep = evaluate_prediction(model, &tests)?;
    write(&cfg.output_dir.join("prediction.csv"), &rep.to_csv())?;
    if cfg.report.html {
        let title = format!("{} prediction error", cfg.spec().system.name());
        write(
            &cfg.output_dir.join("prediction.html"),
            &rep.to_html(&title),
        )?;
    }
    println!(
        "median relative error at t = {}: {:e}",
        rep.times.last().copied().unwrap_or(0.0),
        rep.final_median()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => simulate(&c.load()?),
        Command::Train { common, dataset } => {
            train(&common.load()?, dataset.as_deref()).map(|_| ())
        }
        Command::Identify { common, checkpoint } => {
            let cfg = common.load()?;
            identify_cmd(&cfg, &io::load_model(&checkpoint)?)
        }
        Command::Predict {
            common,
            checkpoint,
            tests,
        } => {
            let cfg = common.load()?;
            let n = tests.unwrap_or(cfg.report.n_tests);
            if n == 0 {
                return Err(Error::Config("--tests must be at least 1".into()));
            }
            predict_cmd(&cfg, &io::load_model(&checkpoint)?, n)
        }
        Command::Reproduce(c) => {
            let cfg = c.load()?;
            let model = train(&cfg, None)?;
            identify_cmd(&cfg, &model)?;
            predict_cmd(&cfg, &model, cfg.report.n_tests)
        }
        Command::Dump {
            dataset,
            sample,
            snapshot,
        } => {
            let (m, set) = io::read_dataset(&dataset)?;
            let state = set
                .samples
                .get(sample)
                .and_then(|s| s.get(snapshot))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("no sample {sample} snapshot {snapshot}"))
                })?;
            print!("{}", io::state_csv(state, &m.components));
            Ok(())
        }
        Command::Schema => {
            print!("{SCHEMA}");
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 4,
        Error::Divergence { .. } | Error::TrainingDiverged { .. } | Error::Degenerate(_) => 3,
        Error::Config(_) | Error::Json(_) | Error::InvalidArgument(_) | Error::Shape(_) => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
