//! Boundary and residual losses in the biased, MSE-debiased and fully
//! debiased forms, with parameter gradients.
//!
//! Every loss is a mean over points of a product `F_A · F_B` of two residual
//! factors. The modes differ only in which noise group feeds each factor
//! slot:
//!
//! | mode      | slots of `F_A` | slots of `F_B`   |
//! |-----------|----------------|------------------|
//! | biased    | `0, 0, …`      | `0, 0, …`        |
//! | unbiased1 | `0, 0, …`      | `1, 1, …`        |
//! | unbiased2 | `0, 1, …, p−1` | `p, …, 2p − 1`   |
//!
//! where `p` is the number of slots of the factor (the nonlinearity order).

mod factor;
mod mode;

pub use mode::{LossMode, NonlinearityOrder};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamGradient;
use crate::pde::{AugmentedModel, Operator, PdeProblem, ResidualKind};
use crate::sampling::{CollocationBatch, NoisePair};
use crate::smoothing::{EstimateCotangent, Request, SmoothedEval, Stencil};
use factor::Factor;

/// Upper bound on stencil rows evaluated at once; larger batches are
/// processed in point chunks and their gradients summed.
const MAX_CHUNK_ROWS: usize = 1 << 15;

/// Per-point statistics of the loss terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDiagnostics {
    /// `F_A · F_B` at every point.
    pub per_point: Array1<f64>,
    pub mean: f64,
    /// Sample variance of `per_point`.
    pub variance: f64,
    /// Stencil rows pushed through the network.
    pub rows_evaluated: usize,
}

impl LossDiagnostics {
    fn from_points(per_point: Array1<f64>, rows_evaluated: usize) -> Self {
        let n = per_point.len() as f64;
        let mean = per_point.sum() / n;
        let variance = if per_point.len() > 1 {
            per_point.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            per_point,
            mean,
            variance,
            rows_evaluated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub param_grad: ParamGradient,
    pub diagnostics: LossDiagnostics,
}

/// `λ_b` and `λ_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub boundary: f64,
    pub residual: f64,
}

impl LossWeights {
    /// `λ_r = 1`, and `λ_b = 0` under a hard constraint, `1` otherwise.
    pub fn for_problem(problem: &PdeProblem) -> Self {
        Self {
            boundary: if problem.augmentation().is_hard_constraint() { 0.0 } else { 1.0 },
            residual: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("boundary", self.boundary), ("residual", self.residual)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} loss weight must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Slot-to-group assignment of the two factors.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    a: Vec<usize>,
    b: Vec<usize>,
    groups: usize,
}

impl Layout {
    fn new(mode: LossMode, arity: usize) -> Self {
        match mode {
            LossMode::Biased => Self {
                a: vec![0; arity],
                b: vec![0; arity],
                groups: 1,
            },
            LossMode::Unbiased1 => Self {
                a: vec![0; arity],
                b: vec![1; arity],
                groups: 2,
            },
            LossMode::Unbiased2 => Self {
                a: (0..arity).collect(),
                b: (arity..2 * arity).collect(),
                groups: 2 * arity,
            },
        }
    }

    fn group_request(&self, factor: &Factor, group: usize) -> Request {
        self.a
            .iter()
            .enumerate()
            .chain(self.b.iter().enumerate())
            .filter(|(_, g)| **g == group)
            .fold(Request::VALUE, |r, (slot, _)| r.union(factor.request(slot)))
    }
}

fn check_noise(noise: &[NoisePair], expected: usize, mode: LossMode) -> Result<()> {
    if noise.len() != expected {
        return Err(Error::Contract(format!(
            "{mode} loss needs {expected} independent noise group(s), got {}",
            noise.len()
        )));
    }
    for (i, a) in noise.iter().enumerate() {
        for b in &noise[i + 1..] {
            let t_shared = matches!((&a.t, &b.t), (Some(x), Some(y)) if x.shares_stream_with(y));
            if a.x.shares_stream_with(&b.x) || t_shared {
                return Err(Error::Contract(format!(
                    "{mode} loss needs independent noise groups, two of them share a stream"
                )));
            }
        }
    }
    Ok(())
}

/// Shared evaluator: mean over points of `F_A · F_B` and its gradient.
fn evaluate(
    model: AugmentedModel,
    factor: &Factor,
    batch: &CollocationBatch,
    noise: &[NoisePair],
    mode: LossMode,
    antithetic: bool,
) -> Result<LossValue> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Input("loss needs at least one point".into()));
    }
    let cols = batch.dim() + usize::from(batch.is_time_dependent());
    if model.net.input_dim() != cols || model.dim != batch.dim() {
        return Err(Error::Shape(format!(
            "network takes {} inputs, points have {cols} columns",
            model.net.input_dim()
        )));
    }
    let layout = Layout::new(mode, factor.arity());
    check_noise(noise, layout.groups, mode)?;
    let requests: Vec<Request> = (0..layout.groups).map(|g| layout.group_request(factor, g)).collect();

    // rows per point, from a one-point probe of each stencil
    let probe = batch.slice(0..1);
    let mut rows_pp = 0;
    for (pair, req) in noise.iter().zip(&requests) {
        let sub = select(pair, 0..1)?;
        rows_pp += Stencil::build(&probe, &sub, antithetic, *req)?.rows_per_point();
    }
    let chunk = (MAX_CHUNK_ROWS / rows_pp).max(1);

    let nf = n as f64;
    let mut grad = ParamGradient::zeros_like(model.net);
    let mut per_point = Array1::zeros(n);
    let mut rows_evaluated = 0;
    for lo in (0..n).step_by(chunk) {
        let hi = (lo + chunk).min(n);
        let pts = batch.slice(lo..hi);
        let m = hi - lo;
        let subs = noise.iter().map(|p| select(p, lo..hi)).collect::<Result<Vec<_>>>()?;
        let stencils = subs
            .iter()
            .zip(&requests)
            .map(|(p, r)| Stencil::build(&pts, p, antithetic, *r))
            .collect::<Result<Vec<_>>>()?;
        let tapes = stencils
            .iter()
            .map(|s| model.net.forward_tape(s.inputs()))
            .collect::<Result<Vec<_>>>()?;
        let mut factors = Vec::with_capacity(stencils.len());
        let mut evals = Vec::with_capacity(stencils.len());
        for ((s, tape), p) in stencils.iter().zip(&tapes).zip(&subs) {
            let (a, b) = model.augmentation.rows(s.inputs(), model.dim)?;
            let outputs = &a * tape.outputs() + &b;
            evals.push(s.estimate(&outputs, p)?);
            factors.push(a);
            rows_evaluated += s.inputs().nrows();
        }

        let mut cots: Vec<EstimateCotangent> = requests
            .iter()
            .map(|r| EstimateCotangent::zeros(m, batch.dim(), r.union(Request::VALUE)))
            .collect();
        let slots = |groups: &[usize]| -> Vec<&SmoothedEval> { groups.iter().map(|&g| &evals[g]).collect() };
        let (ea, eb) = (slots(&layout.a), slots(&layout.b));
        for j in 0..m {
            let fa = factor.value(j, lo + j, &ea);
            let fb = factor.value(j, lo + j, &eb);
            per_point[lo + j] = fa * fb;
            factor.backward(j, &ea, &layout.a, fb / nf, &mut cots);
            factor.backward(j, &eb, &layout.b, fa / nf, &mut cots);
        }
        if per_point.slice(ndarray::s![lo..hi]).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{mode} loss is not finite")));
        }
        for (((s, tape), (p, cot)), a) in stencils.iter().zip(&tapes).zip(subs.iter().zip(&cots)).zip(&factors) {
            let rows = s.row_cotangents(p, cot)? * a;
            grad.add_assign(&model.net.backward_tape(tape, rows.as_slice().expect("contiguous"))?);
        }
    }
    let diagnostics = LossDiagnostics::from_points(per_point, rows_evaluated);
    Ok(LossValue {
        loss: diagnostics.mean,
        param_grad: grad,
        diagnostics,
    })
}

fn select(pair: &NoisePair, range: std::ops::Range<usize>) -> Result<NoisePair> {
    Ok(NoisePair {
        x: pair.x.select_points(range.clone())?,
        t: pair.t.as_ref().map(|t| t.select_points(range)).transpose()?,
    })
}

/// `(û − target)²` in the biased form, `(û − target)(û' − target)` in the
/// debiased ones; the boundary operator is linear so both debiased modes
/// coincide.
pub fn boundary_loss(
    model: AugmentedModel,
    points: &CollocationBatch,
    targets: &Array1<f64>,
    mode: LossMode,
    noise: &[NoisePair],
) -> Result<LossValue> {
    if targets.len() != points.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} boundary points",
            targets.len(),
            points.len()
        )));
    }
    let mode = if mode == LossMode::Unbiased2 { LossMode::Unbiased1 } else { mode };
    evaluate(model, &Factor::Boundary { targets }, points, noise, mode, false)
}

/// Residual loss of any problem in the suite.
pub fn residual_loss(
    model: AugmentedModel,
    problem: &PdeProblem,
    batch: &CollocationBatch,
    mode: LossMode,
    noise: &[NoisePair],
    antithetic: bool,
) -> Result<LossValue> {
    problem.check_batch(batch)?;
    problem.groups_for(mode)?;
    if model.augmentation != problem.augmentation() {
        return Err(Error::Contract("model augmentation differs from the problem's".into()));
    }
    let forcing = || -> Array1<f64> { (0..batch.len()).map(|j| problem.forcing(batch.x(j))).collect() };
    let (factor, mode) = match problem.operator() {
        // a linear residual has a single slot, so the two debiased modes agree
        Operator::FokkerPlanck { drift } => (
            Factor::FokkerPlanck { drift },
            if mode == LossMode::Unbiased2 { LossMode::Unbiased1 } else { mode },
        ),
        Operator::Hjb { .. } => (Factor::Hjb, mode),
        Operator::Burgers { nu } => (Factor::Burgers { nu: *nu }, mode),
        Operator::AllenCahn { .. } => (Factor::AllenCahn { forcing: forcing() }, mode),
        Operator::SineGordon { .. } => (Factor::SineGordon { forcing: forcing() }, mode),
    };
    evaluate(model, &factor, batch, noise, mode, antithetic)
}

fn expect_kind(problem: &PdeProblem, kinds: &[ResidualKind]) -> Result<()> {
    if !kinds.contains(&problem.kind()) {
        return Err(Error::Contract(format!("this loss does not apply to {}", problem.kind())));
    }
    Ok(())
}

/// Fokker–Planck residual loss.
pub fn residual_loss_linear(
    model: AugmentedModel,
    problem: &PdeProblem,
    batch: &CollocationBatch,
    mode: LossMode,
    noise: &[NoisePair],
    antithetic: bool,
) -> Result<LossValue> {
    expect_kind(problem, &[ResidualKind::FpIso, ResidualKind::FpAniso])?;
    residual_loss(model, problem, batch, mode, noise, antithetic)
}

pub fn residual_loss_hjb(
    model: AugmentedModel,
    problem: &PdeProblem,
    batch: &CollocationBatch,
    mode: LossMode,
    noise: &[NoisePair],
    antithetic: bool,
) -> Result<LossValue> {
    expect_kind(problem, &[ResidualKind::HjbQuadratic, ResidualKind::HjbRosenbrock])?;
    residual_loss(model, problem, batch, mode, noise, antithetic)
}

pub fn residual_loss_burgers(
    model: AugmentedModel,
    problem: &PdeProblem,
    batch: &CollocationBatch,
    mode: LossMode,
    noise: &[NoisePair],
    antithetic: bool,
) -> Result<LossValue> {
    expect_kind(problem, &[ResidualKind::Burgers])?;
    residual_loss(model, problem, batch, mode, noise, antithetic)
}

pub fn residual_loss_allen_cahn(
    model: AugmentedModel,
    problem: &PdeProblem,
    batch: &CollocationBatch,
    mode: LossMode,
    noise: &[NoisePair],
    antithetic: bool,
) -> Result<LossValue> {
    expect_kind(problem, &[ResidualKind::AllenCahn])?;
    residual_loss(model, problem, batch, mode, noise, antithetic)
}

pub fn residual_loss_sine_gordon(
    model: AugmentedModel,
    problem: &PdeProblem,
    batch: &CollocationBatch,
    mode: LossMode,
    noise: &[NoisePair],
    antithetic: bool,
) -> Result<LossValue> {
    expect_kind(problem, &[ResidualKind::SineGordon])?;
    residual_loss(model, problem, batch, mode, noise, antithetic)
}

/// Boundary points, their data and their noise groups.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryTerm<'a> {
    pub points: &'a CollocationBatch,
    pub targets: &'a Array1<f64>,
    pub noise: &'a [NoisePair],
}

/// `λ_b L_b + λ_r L_r`. The boundary term is skipped when `λ_b = 0`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    model: AugmentedModel,
    problem: &PdeProblem,
    batch: &CollocationBatch,
    noise: &[NoisePair],
    boundary: Option<BoundaryTerm>,
    mode: LossMode,
    weights: LossWeights,
    antithetic: bool,
) -> Result<LossValue> {
    weights.validate()?;
    let mut total = residual_loss(model, problem, batch, mode, noise, antithetic)?;
    total.loss *= weights.residual;
    total.param_grad.scale(weights.residual);
    if weights.boundary > 0.0 {
        let b = boundary.ok_or_else(|| Error::Contract("boundary weight is positive but no boundary term was given".into()))?;
        let lb = boundary_loss(model, b.points, b.targets, mode, b.noise)?;
        total.loss += weights.boundary * lb.loss;
        total.param_grad.scaled_add(weights.boundary, &lb.param_grad);
        total.diagnostics.rows_evaluated += lb.diagnostics.rows_evaluated;
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
