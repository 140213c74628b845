use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use rayon::prelude::*;

use super::{mean_se, Check, Report};
use crate::error::{Error, Result};
use crate::loss::{boundary_loss, residual_loss, LossMode, LossValue};
use crate::nn::{Mlp, ParamGradient};
use crate::pde::{Augmentation, AugmentedModel, Operator, PdeProblem, ProblemSpec, ResidualKind};
use crate::sampling::{draw_training_noise, CollocationBatch};

/// Points per loss call when resampling.
const AUDIT_CHUNK: usize = 20_000;

/// Batches used for the standard error of a gradient variance.
const VARIANCE_BATCHES: usize = 20;

/// Which loss a bias audit resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditTarget {
    Boundary,
    Residual(ResidualKind),
}

impl FromStr for AuditTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "boundary" {
            return Ok(AuditTarget::Boundary);
        }
        s.parse().map(AuditTarget::Residual)
    }
}

impl fmt::Display for AuditTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditTarget::Boundary => f.write_str("boundary"),
            AuditTarget::Residual(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub target: AuditTarget,
    pub mode: LossMode,
    pub k: usize,
    pub resamples: usize,
    pub dim: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Draws per mode for the gradient-variance table; zero skips it.
    pub variance_draws: usize,
}

impl AuditConfig {
    pub fn new(target: AuditTarget, mode: LossMode, k: usize, resamples: usize) -> Self {
        Self {
            target,
            mode,
            k,
            resamples,
            dim: 2,
            sigma: 0.1,
            seed: 0,
            variance_draws: 10_000,
        }
    }
}

/// Trace of the per-draw covariance of a parameter gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientVariance {
    pub variance: f64,
    /// From the spread over batches of draws.
    pub std_error: f64,
    pub draws: usize,
}

/// Mean squared deviation of `grad_at(draw)` from its mean over
/// `draws` independent draws, summed over parameters.
pub fn gradient_variance(draws: usize, grad_at: impl Fn(u64) -> Result<ParamGradient> + Sync) -> Result<GradientVariance> {
    if draws < 2 * VARIANCE_BATCHES {
        return Err(Error::Config(format!("need at least {} draws", 2 * VARIANCE_BATCHES)));
    }
    let per = draws / VARIANCE_BATCHES;
    let mut total = Welford::default();
    let mut batch_vars = Vec::with_capacity(VARIANCE_BATCHES);
    for b in 0..VARIANCE_BATCHES {
        let end = if b + 1 == VARIANCE_BATCHES { draws } else { (b + 1) * per };
        let grads = (b * per..end)
            .into_par_iter()
            .map(|i| grad_at(i as u64).map(|g| g.flatten()))
            .collect::<Result<Vec<_>>>()?;
        let mut local = Welford::default();
        for g in &grads {
            local.push(g);
            total.push(g);
        }
        batch_vars.push(local.trace());
    }
    let (_, spread) = mean_se(&batch_vars);
    Ok(GradientVariance {
        variance: total.trace(),
        std_error: spread,
        draws,
    })
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn push(&mut self, g: &[f64]) {
        if self.n == 0 {
            self.mean = vec![0.0; g.len()];
            self.m2 = vec![0.0; g.len()];
        }
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(g) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    fn trace(&self) -> f64 {
        self.m2.iter().sum::<f64>() / (self.n as f64 - 1.0)
    }
}

/// Result of resampling one loss of an affine model at a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasAudit {
    /// Loss built from exact derivatives.
    pub exact: f64,
    pub mean: f64,
    pub std_error: f64,
    /// Closed-form expectation of the resampled loss, where one is known.
    pub expected: Option<f64>,
    /// Gradient variance of every mode defined for the target.
    pub variances: Vec<(LossMode, GradientVariance)>,
    pub report: Report,
}

/// Affine test model `wᵀz + b` with the point it is audited at.
struct Setup {
    net: Mlp,
    problem: Option<PdeProblem>,
    batch: CollocationBatch,
    w: Vec<f64>,
    u: f64,
}

impl Setup {
    fn new(cfg: &AuditConfig) -> Result<Self> {
        let d = cfg.dim;
        if d == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        // a point inside the unit ball, so every problem accepts it
        let x: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 0.3 } else { -0.2 } / (d as f64).sqrt()).collect();
        let (problem, t, mut w) = match cfg.target {
            AuditTarget::Boundary => (None, None, vec![1.0; d]),
            AuditTarget::Residual(kind) => {
                let mut spec = ProblemSpec::new(kind, d);
                spec.augment = false;
                spec.reference_mc = 1;
                let p = spec.build()?;
                let w: Vec<f64> = (0..d).map(|i| [0.6, -0.4, 0.3, -0.5][i % 4] / (d as f64).sqrt()).collect();
                let t = p.time_dependent().then_some(0.3);
                (Some(p), t, w)
            }
        };
        if t.is_some() {
            w.push(0.4);
        }
        let b = 0.2;
        let mut z = x.clone();
        z.extend(t);
        let u = w.iter().zip(&z).map(|(a, c)| a * c).sum::<f64>() + b;
        Ok(Self {
            net: Mlp::affine(&w, b)?,
            problem,
            batch: CollocationBatch::repeat(&x, t, 1)?,
            w,
            u,
        })
    }

    fn dim(&self) -> usize {
        self.batch.dim()
    }

    fn wx(&self) -> &[f64] {
        &self.w[..self.dim()]
    }

    fn wt(&self) -> f64 {
        if self.batch.is_time_dependent() { self.w[self.dim()] } else { 0.0 }
    }

    /// Residual from exact derivatives: for affine `f` the smoothed model is
    /// `f` itself, with gradient `w` and zero Laplacian.
    fn exact(&self) -> f64 {
        let wx = self.wx();
        let sum: f64 = wx.iter().sum();
        let norm2: f64 = wx.iter().map(|v| v * v).sum();
        let u = self.u;
        let r = match self.problem.as_ref().map(|p| p.operator()) {
            None => u,
            Some(Operator::FokkerPlanck { drift }) => {
                self.wt() + drift.iter().zip(wx).map(|(m, w)| m * w).sum::<f64>()
            }
            Some(Operator::Hjb { .. }) => self.wt() - norm2,
            Some(Operator::Burgers { .. }) => self.wt() + u * sum,
            Some(Operator::AllenCahn { .. }) => u - u.powi(3) - self.forcing(),
            Some(Operator::SineGordon { .. }) => u.sin() - self.forcing(),
        };
        r * r
    }

    fn forcing(&self) -> f64 {
        self.problem.as_ref().map_or(0.0, |p| p.forcing(self.batch.x(0)))
    }

    /// Closed-form mean of the resampled loss under `mode`, where known.
    fn expected(&self, mode: LossMode, k: usize, sigma: f64) -> Option<f64> {
        let exact = self.exact();
        let kf = k as f64;
        let wx = self.wx();
        let norm2: f64 = wx.iter().map(|v| v * v).sum();
        let d = self.dim() as f64;
        let unbiased = match self.problem.as_ref().map(|p| p.kind().nonlinearity()) {
            None => mode != LossMode::Biased,
            Some(order) => match order {
                crate::loss::NonlinearityOrder::Polynomial(1) => mode != LossMode::Biased,
                crate::loss::NonlinearityOrder::Polynomial(_) => mode == LossMode::Unbiased2,
                crate::loss::NonlinearityOrder::NonPolynomial => false,
            },
        };
        if unbiased {
            return Some(exact);
        }
        match (self.problem.as_ref().map(|p| p.operator()), mode) {
            // plain value estimate: Var û = σ²‖w‖²/K
            (None, LossMode::Biased) => Some(exact + sigma * sigma * norm2 / kf),
            // ût = w_t mean(τ²)/σ² and μᵀ∇̂ = mean((μᵀδ)(δᵀw))/σ² are independent
            (Some(Operator::FokkerPlanck { drift }), LossMode::Biased) => {
                let mu2: f64 = drift.iter().map(|v| v * v).sum();
                let mw: f64 = drift.iter().zip(wx).map(|(a, b)| a * b).sum();
                Some(exact + (2.0 * self.wt().powi(2) + mu2 * norm2 + mw * mw) / kf)
            }
            // E‖∇̂‖² = ‖w‖²(1 + (d + 1)/K) and the two factors are independent
            (Some(Operator::Hjb { .. }), LossMode::Unbiased1) => {
                Some((self.wt() - norm2 * (1.0 + (d + 1.0) / kf)).powi(2))
            }
            _ => None,
        }
    }

    fn model(&self) -> AugmentedModel<'_> {
        match &self.problem {
            Some(p) => p.model(&self.net),
            None => AugmentedModel {
                net: &self.net,
                augmentation: &Augmentation::None,
                dim: self.dim(),
            },
        }
    }

    fn groups(&self, mode: LossMode) -> Result<usize> {
        match &self.problem {
            Some(p) => p.groups_for(mode),
            None => Ok(if mode == LossMode::Biased { 1 } else { 2 }),
        }
    }

    /// Loss on `n` copies of the point with noise drawn under key `draw`.
    fn loss(&self, mode: LossMode, k: usize, sigma: f64, seed: u64, draw: u64, n: usize) -> Result<LossValue> {
        let groups = self.groups(mode)?;
        let st = self.batch.is_time_dependent().then_some(sigma);
        let noise = draw_training_noise(seed, draw, n, groups, k, self.dim(), sigma, st)?;
        let x = self.batch.x(0).to_vec();
        let batch = CollocationBatch::repeat(&x, self.batch.t(0), n)?;
        match &self.problem {
            Some(p) => residual_loss(self.model(), p, &batch, mode, &noise, true),
            None => boundary_loss(self.model(), &batch, &Array1::zeros(n), mode, &noise),
        }
    }
}

/// Resamples the chosen loss of an affine model at one point and compares
/// the mean with the exact loss and, where known, its closed-form
/// expectation. Also tabulates the gradient variance of every mode.
pub fn bias_audit(cfg: &AuditConfig) -> Result<BiasAudit> {
    if cfg.k == 0 || cfg.resamples < 2 {
        return Err(Error::Config("bias audit needs K >= 1 and at least two resamples".into()));
    }
    if !(cfg.sigma > 0.0) {
        return Err(Error::Config("sigma must be positive".into()));
    }
    let s = Setup::new(cfg)?;
    s.groups(cfg.mode)?;
    let mut samples = Vec::with_capacity(cfg.resamples);
    for (c, start) in (0..cfg.resamples).step_by(AUDIT_CHUNK).enumerate() {
        let n = AUDIT_CHUNK.min(cfg.resamples - start);
        let v = s.loss(cfg.mode, cfg.k, cfg.sigma, cfg.seed, c as u64, n)?;
        samples.extend(v.diagnostics.per_point.iter());
    }
    let (mean, se) = mean_se(&samples);
    let exact = s.exact();
    let expected = s.expected(cfg.mode, cfg.k, cfg.sigma);
    let mut report = Report::default();
    let label = format!("{} {} K={}", cfg.target, cfg.mode, cfg.k);
    match expected {
        Some(e) => report.push(Check::within(format!("{label} mean vs closed form"), &samples, e, 3.0)),
        None => report.notes.push(format!("{label}: no closed-form expectation; gap reported only")),
    }
    report.notes.push(format!(
        "{label}: mean {mean:.6e} (se {se:.2e}), exact {exact:.6e}, gap {:.6e} = {:+.2} se",
        mean - exact,
        (mean - exact) / se
    ));

    let mut variances = Vec::new();
    if cfg.variance_draws > 0 {
        let mut modes: Vec<LossMode> = LossMode::ALL.into_iter().filter(|m| s.groups(*m).is_ok()).collect();
        if s.problem.as_ref().is_none_or(|p| !matches!(p.kind().nonlinearity(), crate::loss::NonlinearityOrder::Polynomial(o) if o > 1)) {
            // one slot per factor: the fully debiased loss is the MSE-debiased one
            modes.retain(|m| *m != LossMode::Unbiased2);
        }
        for m in modes {
            // keys past the resampling chunks keep the draws independent
            let base = cfg.resamples.div_ceil(AUDIT_CHUNK) as u64 + 1;
            let gv = gradient_variance(cfg.variance_draws, |i| {
                Ok(s.loss(m, cfg.k, cfg.sigma, cfg.seed, base + i, 1)?.param_grad)
            })?;
            report.notes.push(format!(
                "gradient variance {:<9} {:.6e} (se {:.2e}, {} draws)",
                m.as_str(),
                gv.variance,
                gv.std_error,
                gv.draws
            ));
            variances.push((m, gv));
        }
        if let (Some(first), Some(last)) = (variances.first(), variances.last()) {
            if variances.len() > 1 {
                report.push(Check {
                    name: format!("gradient variance {} >= {}", last.0, first.0),
                    measured: last.1.variance,
                    target: first.1.variance,
                    std_error: 0.0,
                    passed: last.1.variance >= first.1.variance,
                    criterion: "ordering".into(),
                });
            }
        }
    }
    Ok(BiasAudit {
        exact,
        mean,
        std_error: se,
        expected,
        variances,
        report,
    })
}
