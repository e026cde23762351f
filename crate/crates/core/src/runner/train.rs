//! Training loops shared by the commands: data preparation, the sampled
//! baseline run and projected retraining.


use crate::data::{self, batches, blobs_with_holdout, corrupt_labels, load_idx, Batch, Dataset, NoiseRecord};
use crate::linalg::norm;
use crate::nn::{self, init_params};
use crate::optim::{
    adam_step, pbfgs_step, psgd_step, sgd_step, AdamState, BatchObjective, PBfgsState, PBfgsStepMetrics, SgdState,
};
use crate::trajectory::StepMeta;
use crate::{Error, ParamVector, Result, SubspaceBasis};

use super::config::{BaselineOptimizer, DataSource, ExperimentConfig, ProjectedOptimizer};
use super::metrics::{MetricsRow, Phase};

/// Shuffle streams for the projected phase start here so they never reuse a
/// baseline epoch's permutation.
const PROJECTED_STREAM: u64 = 1 << 32;

/// Training and test sets ready for a run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Training set with the labels actually trained on.
    pub train: Dataset,
    pub clean_train_labels: Vec<usize>,
    /// Always clean.
    pub test: Dataset,
    pub noise: Option<NoiseRecord>,
}

/// Loads the configured data, normalises it with training-set statistics and
/// applies label noise: `existing` if given (so phases share one corruption),
/// otherwise a fresh draw when `noise.fraction` is set.
pub fn prepare_data(cfg: &ExperimentConfig, existing: Option<NoiseRecord>) -> Result<PreparedData> {
    let classes = cfg.model.num_classes();
    let (mut train, mut test) = match &cfg.data {
        DataSource::Idx { train_images, train_labels, test_images, test_labels, train_limit, test_limit } => {
            let mut train = load_idx(train_images, train_labels)?;
            let mut test = load_idx(test_images, test_labels)?;
            if let Some(n) = train_limit {
                train = train.truncate(*n)?;
            }
            if let Some(n) = test_limit {
                test = test.truncate(*n)?;
            }
            (train.with_num_classes(classes)?, test.with_num_classes(classes)?)
        }
        DataSource::Blobs { classes: k, per_class, test_per_class, dim, spread } => {
            if *test_per_class == 0 {
                return Err(Error::config("data.test_per_class", "must be at least 1"));
            }
            let (train, test) = blobs_with_holdout(*k, *per_class, *test_per_class, *dim, *spread, cfg.seeds.data)?;
            (train.with_num_classes(classes)?, test.expect("holdout requested").with_num_classes(classes)?)
        }
    };
    let width = train.inputs.row_len();
    if width != cfg.model.input_width() {
        return Err(Error::config(
            "model.layers",
            format!("input width {} does not match the data's {width} features", cfg.model.input_width()),
        ));
    }
    if cfg.normalize {
        let stats = train.channel_stats();
        train.normalize(&stats)?;
        test.normalize(&stats)?;
    }
    let clean_train_labels = train.labels.clone();
    let noise = match (existing, cfg.noise_fraction) {
        (Some(record), _) => {
            train = record.apply(&train)?;
            Some(record)
        }
        (None, Some(c)) => {
            let (noisy, record) = corrupt_labels(&train, c, cfg.seeds.noise)?;
            train = noisy;
            Some(record)
        }
        (None, None) => None,
    };
    Ok(PreparedData { train, clean_train_labels, test, noise })
}

fn evaluate_row(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    w: &[f64],
    phase: Phase,
    epoch: usize,
    wall_ms: u64,
) -> Result<MetricsRow> {
    let (train_loss, train_acc) = nn::evaluate(&cfg.model, w, &data.train.inputs, &data.train.labels, cfg.eval_chunk)?;
    let (test_loss, test_acc) = nn::evaluate(&cfg.model, w, &data.test.inputs, &data.test.labels, cfg.eval_chunk)?;
    Ok(MetricsRow {
        phase,
        epoch,
        train_loss,
        train_acc,
        test_loss,
        test_acc,
        wall_ms,
        alpha: None,
        backtracks: None,
        skipped_updates: None,
    })
}

fn check_finite(loss: f64, what: &str, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} loss became {loss} at epoch {epoch}, step {step}")))
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub w0: ParamVector,
    pub w_final: ParamVector,
    /// Epochs `0..=E`; row 0 is the untrained model.
    pub rows: Vec<MetricsRow>,
    pub samples: usize,
    pub final_test_acc: f64,
    /// Best clean-test accuracy over epochs `1..=E`.
    pub best_test_acc: f64,
    /// Test accuracy after the last sampled epoch.
    pub end_of_sampling_test_acc: f64,
}

/// Wall-clock milliseconds since the call. Bare wasm has no clock, so it reads 0 there.
#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> u64 {
    let started = std::time::Instant::now();
    move || started.elapsed().as_millis() as u64
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> u64 {
    || 0
}

/// Trains the baseline from `init_params(seeds.init)`, handing each scheduled
/// snapshot (and `w_0` first when `include_init` is set) to `record`.
pub fn run_baseline(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    record: &mut dyn FnMut(StepMeta, &[f64]) -> Result<()>,
) -> Result<BaselineOutcome> {
    let base = &cfg.baseline;
    let w0 = init_params(&cfg.model, cfg.seeds.init);
    let mut w = w0.clone();
    let n = w.len();
    let mut samples = 0;
    if cfg.include_init {
        record(StepMeta { epoch: 0, global_step: 0 }, &w)?;
        samples += 1;
    }
    let mut sgd = SgdState::new(n, base.lr, base.momentum, base.weight_decay)
        .map_err(|e| prefix_key(e, "baseline"))?
        .with_schedule(base.schedule.clone());
    let mut adam = AdamState::new(n, base.lr);
    let steps = data::steps_per_epoch(data.train.len(), base.batch_size);

    let mut rows = vec![evaluate_row(cfg, data, &w, Phase::Baseline, 0, 0)?];
    let mut global_step = 0u64;
    for epoch in 0..base.epochs {
        let elapsed_ms = stopwatch();
        sgd.set_epoch(epoch);
        adam.lr = sgd.lr;
        for (j, batch) in batches(&data.train, base.batch_size, cfg.seeds.data, epoch as u64).enumerate() {
            let (loss, g) = nn::backward(&cfg.model, &w, &batch.inputs, &batch.labels)?;
            check_finite(loss, "baseline", epoch, j)?;
            match base.optimizer {
                BaselineOptimizer::Sgd => sgd_step(&mut w, &g, &mut sgd)?,
                BaselineOptimizer::Adam => adam_step(&mut w, &g, &mut adam)?,
            }
            global_step += 1;
            if cfg.sampling.due(epoch, j, steps) {
                record(StepMeta { epoch: epoch as u32, global_step }, &w)?;
                samples += 1;
            }
        }
        let ms = elapsed_ms();
        rows.push(evaluate_row(cfg, data, &w, Phase::Baseline, epoch + 1, ms)?);
    }
    let final_test_acc = rows.last().unwrap().test_acc;
    let best_test_acc = rows[1..].iter().map(|r| r.test_acc).fold(f64::NEG_INFINITY, f64::max);
    let end_of_sampling_test_acc = rows[cfg.sampling.end_epoch].test_acc;
    Ok(BaselineOutcome { w0, w_final: w, rows, samples, final_test_acc, best_test_acc, end_of_sampling_test_acc })
}

fn prefix_key(e: Error, section: &str) -> Error {
    match e {
        Error::Config { key, message } => Error::Config { key: format!("{section}.{key}"), message },
        other => other,
    }
}

/// What an observer sees after every projected step.
pub struct ProjectedStep<'a> {
    pub epoch: usize,
    pub step: usize,
    pub batch: &'a Batch,
    pub w_before: &'a [f64],
    pub w_after: &'a [f64],
    /// `None` for P-SGD.
    pub pbfgs: Option<&'a PBfgsStepMetrics>,
}

/// Per-step P-BFGS record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PBfgsLogRow {
    pub epoch: usize,
    pub step: usize,
    pub metrics: PBfgsStepMetrics,
}

#[derive(Debug, Clone)]
pub struct ProjectedOutcome {
    pub w_final: ParamVector,
    pub rows: Vec<MetricsRow>,
    pub pbfgs_log: Vec<PBfgsLogRow>,
    pub final_test_acc: f64,
    pub best_test_acc: f64,
    /// `||(I - P P^T)(w_final - w_0)|| / ||w_final - w_0||` (0 when nothing moved).
    pub confinement: f64,
}

/// Largest tolerated confinement ratio at exit.
pub const CONFINEMENT_TOL: f64 = 1e-6;

/// Retrains from `w0` inside `span(basis)` with the configured projected optimizer.
pub fn run_projected(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    basis: &SubspaceBasis,
    w0: &[f64],
    mut observer: Option<&mut dyn FnMut(&ProjectedStep<'_>)>,
) -> Result<ProjectedOutcome> {
    let n = cfg.model.param_count();
    if basis.n() != n || w0.len() != n {
        return Err(Error::Shape(format!(
            "model has {n} parameters, basis lives in R^{} and the initial point has {}",
            basis.n(),
            w0.len()
        )));
    }
    let p = &cfg.projected;
    let d = basis.dim();
    let mut w = w0.to_vec();
    let mut sgd = SgdState::new(d, p.lr, p.momentum, p.weight_decay)
        .map_err(|e| prefix_key(e, "projected"))?
        .with_schedule(p.schedule.clone());
    let mut bfgs = PBfgsState::new(d);
    let mut pbfgs_log = Vec::new();
    let mut rows = vec![evaluate_row(cfg, data, &w, Phase::Projected, 0, 0)?];
    if p.optimizer == ProjectedOptimizer::Pbfgs {
        rows[0].skipped_updates = Some(0);
    }
    let mut before = vec![0.0; n];
    for epoch in 0..p.epochs {
        let elapsed_ms = stopwatch();
        sgd.set_epoch(epoch);
        let (mut alpha_sum, mut accepted, mut backtracks) = (0.0, 0usize, 0usize);
        let stream = PROJECTED_STREAM + epoch as u64;
        for (j, batch) in batches(&data.train, p.batch_size, cfg.seeds.data, stream).enumerate() {
            before.copy_from_slice(&w);
            let metrics = match p.optimizer {
                ProjectedOptimizer::Psgd => {
                    let (loss, g) = nn::backward(&cfg.model, &w, &batch.inputs, &batch.labels)?;
                    check_finite(loss, "projected", epoch, j)?;
                    psgd_step(&mut w, &g, basis, &mut sgd)?;
                    None
                }
                ProjectedOptimizer::Pbfgs => {
                    let mut objective = BatchObjective { spec: &cfg.model, inputs: &batch.inputs, labels: &batch.labels };
                    let m = pbfgs_step(&mut w, &mut objective, basis, &mut bfgs, &p.line_search)?;
                    check_finite(m.loss_before, "projected", epoch, j)?;
                    if m.line_search_failed && bfgs.k == 1 {
                        return Err(Error::LineSearchFailed { backtracks: p.line_search.max_backtracks });
                    }
                    if !m.line_search_failed {
                        alpha_sum += m.alpha;
                        accepted += 1;
                        backtracks += m.backtracks;
                    }
                    pbfgs_log.push(PBfgsLogRow { epoch, step: j, metrics: m });
                    Some(m)
                }
            };
            if let Some(obs) = observer.as_mut() {
                obs(&ProjectedStep { epoch, step: j, batch: &batch, w_before: &before, w_after: &w, pbfgs: metrics.as_ref() });
            }
        }
        let ms = elapsed_ms();
        let mut row = evaluate_row(cfg, data, &w, Phase::Projected, epoch + 1, ms)?;
        if p.optimizer == ProjectedOptimizer::Pbfgs {
            row.alpha = Some(if accepted > 0 { alpha_sum / accepted as f64 } else { 0.0 });
            row.backtracks = Some(backtracks);
            row.skipped_updates = Some(bfgs.skipped_updates);
        }
        rows.push(row);
    }

    let delta: Vec<f64> = w.iter().zip(w0).map(|(a, b)| a - b).collect();
    let moved = norm(&delta);
    let confinement = if moved > 0.0 { basis.residual_norm(&delta)? / moved } else { 0.0 };
    if !(confinement <= CONFINEMENT_TOL) {
        return Err(Error::Numerical(format!(
            "projected run left the subspace: residual ratio {confinement:e} exceeds {CONFINEMENT_TOL:e}"
        )));
    }
    let final_test_acc = rows.last().unwrap().test_acc;
    let best_test_acc = rows[1..].iter().map(|r| r.test_acc).fold(f64::NEG_INFINITY, f64::max);
    Ok(ProjectedOutcome { w_final: ParamVector::new(w), rows, pbfgs_log, final_test_acc, best_test_acc, confinement })
}
