//! The training loop: per-epoch sampling, mode scheduling, Adam updates and
//! periodic scoring on a frozen test set.

mod config;
mod record;

pub use config::{ModeName, ModelConfig, Mode, PlateauConfig, ScheduleConfig, TrainConfig, Transition};
pub use record::{RecordRow, RunRecord};

use std::time::Instant;

use ndarray::{s, Array1};

use crate::error::{Error, Result};
use crate::loss::{total_loss, BoundaryTerm, LossMode, LossWeights};
use crate::nn::{AdamState, Mlp};
use crate::pde::{AugmentedModel, PdeProblem};
use crate::sampling::{draw_point_noise, draw_point_noise_range, draw_training_noise, CollocationBatch, NoisePair, RngStream, StreamKey};
use crate::smoothing::estimate_value;

/// Stencil rows scored at once during evaluation.
const EVAL_CHUNK_ROWS: usize = 1 << 15;

/// Stream group of the boundary points; their noise uses the groups above.
const BOUNDARY_GROUP: u64 = 1000;

/// `‖pred − exact‖ / ‖exact‖`, or the absolute norm when `exact` vanishes.
pub fn relative_l2(pred: &Array1<f64>, exact: &Array1<f64>) -> Result<f64> {
    if pred.len() != exact.len() {
        return Err(Error::Shape(format!("{} predictions for {} exact values", pred.len(), exact.len())));
    }
    let diff = (pred - exact).mapv(|v| v * v).sum().sqrt();
    let norm = exact.mapv(|v| v * v).sum().sqrt();
    if norm == 0.0 {
        log::warn!("exact values are all zero; reporting the absolute L2 error");
        return Ok(diff);
    }
    Ok(diff / norm)
}

/// Relative L2 error of the smoothed model on `test_points`. Point `j` is
/// scored with its own noise stream, so the result does not depend on how
/// the set is chunked.
pub fn evaluate_error(
    model: AugmentedModel,
    test_points: &CollocationBatch,
    exact_values: &Array1<f64>,
    k_test: usize,
    sigma_x: f64,
    sigma_t: Option<f64>,
    noise_seed: u64,
) -> Result<f64> {
    if exact_values.len() != test_points.len() {
        return Err(Error::Shape(format!(
            "{} exact values for {} test points",
            exact_values.len(),
            test_points.len()
        )));
    }
    if k_test == 0 {
        return Err(Error::Config("K_test must be at least 1".into()));
    }
    let n = test_points.len();
    let dim = test_points.dim();
    let sigma_t = sigma_t.filter(|_| test_points.is_time_dependent());
    let chunk = (EVAL_CHUNK_ROWS / (2 * k_test)).max(1);
    let mut pred = Array1::zeros(n);
    for start in (0..n).step_by(chunk) {
        let range = start..(start + chunk).min(n);
        let x = draw_point_noise_range(noise_seed, StreamKey::test_noise(0), range.clone(), k_test, dim, sigma_x)?;
        let t = sigma_t
            .map(|s| draw_point_noise_range(noise_seed, StreamKey::new(u64::MAX, 0, 2), range.clone(), k_test, 1, s))
            .transpose()?;
        let v = estimate_value(&model, &test_points.slice(range.clone()), &NoisePair { x, t })?;
        pred.slice_mut(s![range]).assign(&v);
    }
    relative_l2(&pred, exact_values)
}

/// Switch logic for the hybrid schedule.
struct Scheduler {
    mode: Mode,
    active: LossMode,
    losses: Vec<f64>,
}

impl Scheduler {
    fn new(mode: Mode) -> Self {
        Self {
            mode,
            active: mode.initial(),
            losses: Vec::new(),
        }
    }

    /// Mode of the step at `epoch`; `Some` when it changes there.
    fn advance(&mut self, epoch: usize) -> Option<LossMode> {
        let Mode::Hybrid { transition, post_mode } = self.mode else {
            return None;
        };
        if self.active == post_mode {
            return None;
        }
        let switch = match transition {
            Transition::AtEpoch(t) => epoch == t,
            Transition::Plateau(p) => {
                let w = p.window;
                let l = &self.losses;
                l.len() >= 2 * w && {
                    let mean = |s: &[f64]| s.iter().sum::<f64>() / w as f64;
                    let prev = mean(&l[l.len() - 2 * w..l.len() - w]);
                    let cur = mean(&l[l.len() - w..]);
                    (prev - cur) < p.rel_tol * prev.abs()
                }
            }
        };
        if switch {
            self.active = post_mode;
            return Some(post_mode);
        }
        None
    }
}

/// Trains one seed and returns its record. `sink` sees every row as it is
/// recorded. Wall time counts training steps only, not evaluations.
///
/// A non-finite loss or gradient aborts the run with [`Error::Diverged`],
/// which carries the rows recorded so far.
pub fn train_with(config: &TrainConfig, seed: u64, sink: &mut dyn FnMut(&RecordRow)) -> Result<RunRecord> {
    let (problem, mode) = config.resolve()?;
    let sched = &config.schedule;
    let sm = &config.smoothing;
    let sigma_t = problem.time_dependent().then_some(sm.sigma_t);
    let weights = sched.loss_weights.unwrap_or_else(|| LossWeights::for_problem(&problem));

    let dims = config.model.layer_dims(problem.input_dim());
    let mut net = Mlp::new(&dims, config.model.activation, &mut RngStream::new(seed, StreamKey::init()).rng())?;
    let mut adam = AdamState::new(&net, config.optimizer)?;
    let test = problem.sample_test(&RngStream::new(seed, StreamKey::test_set()), sched.test_set_size)?;
    let exact = problem.exact_values(&test)?;

    let mut record = RunRecord::new(seed);
    let mut scheduler = Scheduler::new(mode);
    let mut elapsed = 0.0;
    let mut last_loss = f64::NAN;

    let evaluate = |net: &Mlp| {
        evaluate_error(problem.model(net), &test, &exact, sm.k_test, sm.sigma_x, sigma_t, seed)
    };

    for epoch in 0..sched.epochs {
        if let Some(m) = scheduler.advance(epoch) {
            log::info!("seed {seed}: switching to {m} at epoch {epoch}");
            record.transitions.push((epoch, m));
        }
        let active = scheduler.active;
        if epoch % sched.eval_interval == 0 {
            let row = RecordRow {
                epoch,
                wall_time_s: elapsed,
                train_loss: last_loss,
                test_rel_l2: evaluate(&net)?,
                mode: active,
                learning_rate: config.optimizer.learning_rate(epoch as u64),
            };
            sink(&row);
            record.push(row);
        }

        let started = Instant::now();
        let loss = step_loss(config, &problem, &net, seed, epoch, active, weights, sigma_t)
            .and_then(|v| {
                if !v.loss.is_finite() || !v.param_grad.is_finite() {
                    return Err(Error::NonFinite(format!("loss {} or its gradient is not finite", v.loss)));
                }
                Ok(v)
            })
            .and_then(|v| adam.step(&mut net, &v.param_grad).map(|_| v.loss));
        let loss = match loss {
            Ok(l) => l,
            Err(e @ (Error::NonFinite(_) | Error::Numerical(_))) => {
                return Err(Error::Diverged {
                    epoch,
                    diagnostic: e.to_string(),
                    record: Box::new(record),
                })
            }
            Err(e) => return Err(e),
        };
        elapsed += started.elapsed().as_secs_f64();
        last_loss = loss;
        scheduler.losses.push(loss);
        log::debug!("seed {seed} epoch {epoch}: loss {loss:.6e}");
    }

    let row = RecordRow {
        epoch: sched.epochs,
        wall_time_s: elapsed,
        train_loss: last_loss,
        test_rel_l2: evaluate(&net)?,
        mode: scheduler.active,
        learning_rate: config.optimizer.learning_rate(sched.epochs as u64),
    };
    sink(&row);
    record.push(row);
    Ok(record)
}

pub fn train(config: &TrainConfig, seed: u64) -> Result<RunRecord> {
    train_with(config, seed, &mut |_| {})
}

#[allow(clippy::too_many_arguments)]
fn step_loss(
    config: &TrainConfig,
    problem: &PdeProblem,
    net: &Mlp,
    seed: u64,
    epoch: usize,
    mode: LossMode,
    weights: LossWeights,
    sigma_t: Option<f64>,
) -> Result<crate::loss::LossValue> {
    let sched = &config.schedule;
    let sm = &config.smoothing;
    let e = epoch as u64;
    let d = problem.dim();
    let batch = problem.sample_residual(&RngStream::new(seed, StreamKey::collocation(e)), sched.batch_size)?;
    let groups = problem.groups_for(mode)?;
    let noise = draw_training_noise(seed, e, batch.len(), groups, sm.k, d, sm.sigma_x, sigma_t)?;

    let boundary = if weights.boundary > 0.0 {
        let nb = sched.boundary_batch_size.unwrap_or(sched.batch_size);
        let rng = RngStream::new(seed, StreamKey::new(e, StreamKey::WHOLE_BATCH, BOUNDARY_GROUP));
        let (points, targets) = problem.sample_boundary(&rng, nb)?;
        let bgroups = if mode == LossMode::Biased { 1 } else { 2 };
        let bnoise = (0..bgroups)
            .map(|g| {
                let base = BOUNDARY_GROUP + 2 * g;
                let x = draw_point_noise(seed, StreamKey::new(e, 0, base), nb, sm.k, d, sm.sigma_x)?;
                let t = sigma_t
                    .map(|s| draw_point_noise(seed, StreamKey::new(e, 0, base + 1), nb, sm.k, 1, s))
                    .transpose()?;
                Ok(NoisePair { x, t })
            })
            .collect::<Result<Vec<_>>>()?;
        Some((points, targets, bnoise))
    } else {
        None
    };

    let model = problem.model(net);
    total_loss(
        model,
        problem,
        &batch,
        &noise,
        boundary.as_ref().map(|(points, targets, noise)| BoundaryTerm { points, targets, noise }),
        mode,
        weights,
        sm.antithetic,
    )
}

/// Mean and sample standard deviation of the final errors of several seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    pub runs: Vec<RunRecord>,
    pub mean: f64,
    /// Zero for a single seed.
    pub std: f64,
}

/// Mean and sample standard deviation, independent of the input order.
pub fn summarize(errors: &[f64]) -> (f64, f64) {
    let mut e = errors.to_vec();
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    let std = if e.len() > 1 {
        (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Trains every seed in turn.
pub fn run_suite(config: &TrainConfig, seeds: &[u64]) -> Result<SuiteSummary> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let runs = seeds.iter().map(|&s| train(config, s)).collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = runs.iter().map(|r| r.final_error).collect();
    let (mean, std) = summarize(&errors);
    Ok(SuiteSummary { runs, mean, std })
}
