//! Warm-up and layer-wise training.
//!
//! Stage 0 (warm-up) fits the SymNets on one block with filters held at
//! their initial stencils and no regularisation. Stage `r = 1…n` then
//! trains all parameters on `r` chained blocks, each stage on a fresh batch
//! and starting from the previous stage's parameters.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::fmt::Write as _;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{loss_and_gradient, set_params, ParamLayout, ParamVector};
use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, LossWeights};
use crate::model::{ModelSpec, PdeNetModel};
use crate::optim::{minimize_observed, LbfgsSettings, Minimum, Termination};
use crate::simulator::{derive_seed, generate_batch, PdeSpec, TrajectorySet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of chained blocks in the last stage.
    pub max_blocks: usize,
    pub batch_size: usize,
    pub optimizer: LbfgsSettings,
    pub warmup_optimizer: LbfgsSettings,
    pub seed: u64,
    pub frozen: bool,
    pub pseudo_upwind: bool,
    pub sparsity: bool,
    pub weights: LossWeights,
    pub filter_size: usize,
    pub accuracy: usize,
    pub symnet_depth: usize,
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_blocks: 9,
            batch_size: 28,
            optimizer: LbfgsSettings::default(),
            warmup_optimizer: LbfgsSettings::default(),
            seed: 0,
            frozen: false,
            pseudo_upwind: true,
            sparsity: true,
            weights: LossWeights::default(),
            filter_size: 5,
            accuracy: 2,
            symnet_depth: 5,
            init_std: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_blocks == 0 {
            return Err(Error::Config("max_blocks must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.filter_size % 2 == 0 {
            return Err(Error::Config("filter_size must be odd".into()));
        }
        self.optimizer.validate()?;
        self.warmup_optimizer.validate()?;
        self.weights.validate()
    }

    pub fn model_spec(&self, components: Vec<String>, dt: f64) -> ModelSpec {
        ModelSpec {
            components,
            filter_size: self.filter_size,
            accuracy: self.accuracy,
            symnet_depth: self.symnet_depth,
            dt,
            pseudo_upwind: self.pseudo_upwind,
            frozen: self.frozen,
            init_std: self.init_std,
        }
    }

    /// Loss weights for the joint stages: SymNet sparsity dropped when
    /// disabled.
    pub fn stage_weights(&self) -> LossWeights {
        if self.sparsity {
            self.weights
        } else {
            LossWeights {
                lambda_symnet: 0.0,
                ..self.weights
            }
        }
    }
}

/// Supplies training batches on demand.
pub trait BatchSource {
    /// A batch for `stage` (0 = warm-up) with at least `n_blocks + 1`
    /// snapshots per sample. `attempt` > 0 asks for a replacement batch.
    fn batch(&mut self, stage: usize, attempt: usize, n_blocks: usize) -> Result<TrajectorySet>;
}

/// Fresh simulated batches, seeded per stage and attempt.
pub struct SimulatedBatches {
    pub spec: PdeSpec,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchSource for SimulatedBatches {
    fn batch(&mut self, stage: usize, attempt: usize, n_blocks: usize) -> Result<TrajectorySet> {
        let seed = derive_seed(self.seed, (stage as u64) << 8 | attempt as u64);
        generate_batch(&self.spec, self.batch_size, n_blocks, seed)
    }
}

/// A fixed dataset reused by every stage.
pub struct FixedBatch(pub TrajectorySet);

impl BatchSource for FixedBatch {
    fn batch(&mut self, _stage: usize, _attempt: usize, n_blocks: usize) -> Result<TrajectorySet> {
        if self.0.n_snapshots() < n_blocks + 1 {
            return Err(Error::invalid(format!(
                "dataset has {} snapshots per sample, stage needs {}",
                self.0.n_snapshots(),
                n_blocks + 1
            )));
        }
        Ok(self.0.clone())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: usize,
    pub iteration: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub n_blocks: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub retried: bool,
    pub initial: LossBreakdown,
    pub last: LossBreakdown,
    /// Recovered right-hand sides after this stage, one per component.
    pub equations: Vec<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainingReport {
    pub stages: Vec<StageReport>,
    pub iterations: Vec<IterationRecord>,
}

impl TrainingReport {
    /// `stage,iter,L_data,L_moment,L_SymNet,total` rows.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("stage,iter,L_data,L_moment,L_SymNet,total\n");
        for r in &self.iterations {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e},{:e}",
                r.stage, r.iteration, r.loss.data, r.loss.moment, r.loss.symnet, r.loss.total
            );
        }
        s
    }

    /// One line per stage: blocks, iterations, final losses, termination.
    pub fn stage_csv(&self) -> String {
        let mut s =
            String::from("stage,blocks,iterations,evaluations,retried,termination,L_data,total\n");
        for r in &self.stages {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:?},{:e},{:e}",
                r.stage,
                r.n_blocks,
                r.iterations,
                r.evaluations,
                r.retried,
                r.termination,
                r.last.data,
                r.last.total
            );
        }
        s
    }
}

/// Display threshold for the per-stage equation snapshot.
const SNAPSHOT_THRESHOLD: f64 = 1e-3;

/// Term budget of the per-stage snapshot; it is a progress display, so a
/// coarser expansion than [`crate::report::identify`] uses is acceptable.
const SNAPSHOT_MAX_TERMS: usize = 256;

/// Runs L-BFGS over either all parameters or only the SymNet parameters.
fn optimize_stage(
    model: &mut PdeNetModel,
    batch: &TrajectorySet,
    n_blocks: usize,
    weights: &LossWeights,
    train_filters: bool,
    settings: &LbfgsSettings,
    stage: usize,
    log: &mut Vec<IterationRecord>,
) -> Result<(LossBreakdown, LossBreakdown, Minimum)> {
    let layout = ParamLayout::of(model);
    let full = ParamVector::pack(model).values;
    let active: Vec<usize> = if train_filters {
        (0..layout.len()).collect()
    } else {
        layout.symnets_range().collect()
    };
    let x0: Vec<f64> = active.iter().map(|&i| full[i]).collect();

    // Recent evaluations, so accepted steps can be logged with their breakdown.
    let seen: RefCell<VecDeque<(Vec<f64>, LossBreakdown)>> = RefCell::new(VecDeque::new());
    let first: RefCell<Option<LossBreakdown>> = RefCell::new(None);
    let mut frozen_probe = model.clone();
    // skips kernel adjoints when only the SymNets move
    frozen_probe.frozen |= !train_filters;
    let probe = RefCell::new(frozen_probe);
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut theta = full.clone();
        for (&i, &v) in active.iter().zip(x) {
            theta[i] = v;
        }
        let mut m = probe.borrow_mut();
        set_params(&mut m, &theta)?;
        let (b, g) = loss_and_gradient(&m, batch, n_blocks, weights)?;
        first.borrow_mut().get_or_insert(b);
        let mut q = seen.borrow_mut();
        if q.len() == 64 {
            q.pop_front();
        }
        q.push_back((x.to_vec(), b));
        Ok((b.total, active.iter().map(|&i| g[i]).collect()))
    };
    let lookup = |x: &[f64]| {
        seen.borrow()
            .iter()
            .rev()
            .find(|(p, _)| p.as_slice() == x)
            .map(|(_, b)| *b)
    };
    let mut accepted = Vec::new();
    let result = minimize_observed(objective, &x0, settings, |it, x, f| {
        let loss = lookup(x).unwrap_or(LossBreakdown {
            total: f,
            ..Default::default()
        });
        accepted.push(IterationRecord {
            stage,
            iteration: it,
            loss,
        });
    })?;
    let initial = first.borrow().unwrap_or_default();
    let last = accepted.last().map(|r| r.loss).unwrap_or(initial);
    log.push(IterationRecord {
        stage,
        iteration: 0,
        loss: initial,
    });
    log.extend(accepted);
    let mut theta = full;
    for (&i, &v) in active.iter().zip(&result.x) {
        theta[i] = v;
    }
    set_params(model, &theta)?;
    Ok((initial, last, result))
}

/// Recovered right-hand sides, one line per component.
pub fn equation_snapshot(model: &PdeNetModel, threshold: f64) -> Vec<String> {
    let labels = model.input_labels();
    model
        .symnets
        .iter()
        .zip(&model.components)
        .map(|(net, c)| {
            format!(
                "{c}_t = {}",
                net.expand(threshold * 1e-3, SNAPSHOT_MAX_TERMS)
                    .polynomial
                    .display(&labels, threshold)
            )
        })
        .collect()
}

fn run_stage(
    model: &mut PdeNetModel,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
    stage: usize,
    report: &mut TrainingReport,
) -> Result<()> {
    let warm = stage == 0;
    let n_blocks = if warm { 1 } else { stage };
    let (weights, settings) = if warm {
        (LossWeights::data_only(), cfg.warmup_optimizer)
    } else {
        (cfg.stage_weights(), cfg.optimizer)
    };
    let train_filters = !warm && !cfg.frozen;

    let start = model.clone();
    let mut retried = false;
    let outcome = loop {
        let attempt = usize::from(retried);
        let batch = source.batch(stage, attempt, n_blocks)?;
        let s = if retried {
            LbfgsSettings {
                initial_step: 0.5 * settings.initial_step,
                ..settings
            }
        } else {
            settings
        };
        let mut log = Vec::new();
        match optimize_stage(
            model,
            &batch,
            n_blocks,
            &weights,
            train_filters,
            &s,
            stage,
            &mut log,
        ) {
            Ok(r) => {
                report.iterations.extend(log);
                break r;
            }
            Err(Error::Divergence { .. }) if !retried => {
                warn!(
                    "stage {stage} diverged; retrying with a fresh batch and a halved initial step"
                );
                *model = start.clone();
                retried = true;
            }
            Err(Error::Divergence { .. }) => {
                *model = start;
                return Err(Error::Divergence { block: n_blocks });
            }
            Err(e) => return Err(e),
        }
    };
    let (initial, last, result) = outcome;
    if matches!(result.termination, Termination::LineSearchFailed) {
        warn!("stage {stage}: line search failed, keeping the best iterate");
    }
    info!(
        "stage {stage} ({n_blocks} blocks): {} iterations, L_data {:.4e} -> {:.4e}",
        result.iterations, initial.data, last.data
    );
    report.stages.push(StageReport {
        stage,
        n_blocks,
        iterations: result.iterations,
        evaluations: result.evaluations,
        termination: result.termination,
        retried,
        initial,
        last,
        equations: equation_snapshot(model, SNAPSHOT_THRESHOLD),
    });
    Ok(())
}

/// Warm-up: SymNets only, one block, no regularisation. Filters are left
/// untouched.
pub fn warmup(
    model: &mut PdeNetModel,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
) -> Result<TrainingReport> {
    cfg.validate()?;
    let mut report = TrainingReport::default();
    run_stage(model, source, cfg, 0, &mut report)?;
    Ok(report)
}

/// Warm-up followed by stages `1..=max_blocks`. `on_stage` is called with
/// the model and the report so far after every stage (e.g. to write
/// checkpoints). On failure the model keeps the last completed stage.
pub fn layerwise_train(
    model: &mut PdeNetModel,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
    mut on_stage: impl FnMut(usize, &PdeNetModel, &TrainingReport) -> Result<()>,
) -> Result<TrainingReport> {
    cfg.validate()?;
    model.frozen = cfg.frozen;
    let mut report = TrainingReport::default();
    for stage in 0..=cfg.max_blocks {
        run_stage(model, source, cfg, stage, &mut report).map_err(|e| match e {
            Error::Divergence { .. } => Error::TrainingDiverged { stage },
            e => e,
        })?;
        on_stage(stage, model, &report)?;
    }
    Ok(report)
}

/// Fresh model for `spec`, seeded from the training seed.
pub fn initial_model(spec: &PdeSpec, cfg: &TrainConfig) -> Result<PdeNetModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let mspec = cfg.model_spec(spec.system.components(), spec.snapshot_dt);
    PdeNetModel::initialize(spec.coarse_grid(), &mspec, &mut rng)
}

/// Initializes a model and runs the full schedule on simulated batches.
pub fn train(spec: &PdeSpec, cfg: &TrainConfig) -> Result<(PdeNetModel, TrainingReport)> {
    let mut model = initial_model(spec, cfg)?;
    let mut source = SimulatedBatches {
        spec: *spec,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let report = layerwise_train(&mut model, &mut source, cfg, |_, _, _| Ok(()))?;
    Ok((model, report))
}
