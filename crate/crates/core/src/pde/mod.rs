//! The benchmark PDEs: operators, exact or reference solutions, forcing
//! terms, samplers and hard-constraint augmentations.

mod augmentation;
mod exact;
mod manufactured;

pub use augmentation::{Augmentation, AugmentedModel};
pub use exact::{
    exact_burgers, exact_fp_anisotropic, exact_fp_isotropic, exact_hjb_quadratic, reference_hjb_rosenbrock, HjbCost,
    McEstimate,
};
pub use manufactured::{Jet, ManufacturedSolution};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossMode, NonlinearityOrder};
use crate::nn::Mlp;
use crate::sampling::{
    draw_drift, sample_fp_anisotropic, sample_fp_conditional, sample_hjb, sample_unit_ball, CollocationBatch,
    RngStream, StreamKey,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    FpIso,
    FpAniso,
    HjbQuadratic,
    HjbRosenbrock,
    Burgers,
    AllenCahn,
    SineGordon,
}

impl ResidualKind {
    pub const ALL: [ResidualKind; 7] = [
        ResidualKind::FpIso,
        ResidualKind::FpAniso,
        ResidualKind::HjbQuadratic,
        ResidualKind::HjbRosenbrock,
        ResidualKind::Burgers,
        ResidualKind::AllenCahn,
        ResidualKind::SineGordon,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResidualKind::FpIso => "fp_iso",
            ResidualKind::FpAniso => "fp_aniso",
            ResidualKind::HjbQuadratic => "hjb_quadratic",
            ResidualKind::HjbRosenbrock => "hjb_rosenbrock",
            ResidualKind::Burgers => "burgers",
            ResidualKind::AllenCahn => "allen_cahn",
            ResidualKind::SineGordon => "sine_gordon",
        }
    }

    pub fn nonlinearity(self) -> NonlinearityOrder {
        match self {
            ResidualKind::FpIso | ResidualKind::FpAniso => NonlinearityOrder::Polynomial(1),
            ResidualKind::HjbQuadratic | ResidualKind::HjbRosenbrock | ResidualKind::Burgers => {
                NonlinearityOrder::Polynomial(2)
            }
            ResidualKind::AllenCahn => NonlinearityOrder::Polynomial(3),
            ResidualKind::SineGordon => NonlinearityOrder::NonPolynomial,
        }
    }

    pub fn time_dependent(self) -> bool {
        !matches!(self, ResidualKind::AllenCahn | ResidualKind::SineGordon)
    }

    /// Noise groups a residual loss in `mode` consumes.
    pub fn groups_for(self, mode: LossMode) -> Result<usize> {
        self.nonlinearity().groups_for(mode).ok_or_else(|| {
            Error::UnsupportedNonlinearity(format!(
                "{mode} does not exist for this equation: the sin(u) term of {self} is not polynomial, \
                 so no finite set of independent noise groups removes its bias (use biased or unbiased1)"
            ))
        })
    }
}

impl fmt::Display for ResidualKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResidualKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.as_str()).collect();
                Error::Config(format!("unknown problem '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

fn default_horizon() -> f64 {
    1.0
}

fn default_nu() -> f64 {
    0.5
}

fn default_reference_mc() -> usize {
    100_000
}

fn default_true() -> bool {
    true
}

/// Declarative problem description; random parameters are drawn from
/// `param_seed` so they stay fixed across training seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ResidualKind,
    pub dim: usize,
    #[serde(default)]
    pub param_seed: u64,
    /// Terminal time of the HJB problems.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Burgers viscosity.
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Monte Carlo samples per point of the Rosenbrock HJB reference.
    #[serde(default = "default_reference_mc")]
    pub reference_mc: usize,
    /// Hard-constraint augmentation; without it a boundary loss is needed.
    #[serde(default = "default_true")]
    pub augment: bool,
}

impl ProblemSpec {
    pub fn new(kind: ResidualKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            param_seed: 0,
            horizon: default_horizon(),
            nu: default_nu(),
            reference_mc: default_reference_mc(),
            augment: true,
        }
    }

    pub fn build(&self) -> Result<PdeProblem> {
        PdeProblem::new(self)
    }
}

/// The differential operator with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// `u_t − ½Δu + Σ μ_i ∂_i u = 0`.
    FokkerPlanck { drift: Vec<f64> },
    /// `u_t + Δu − ‖∇u‖² = 0`, `u(·, T) = g`.
    Hjb { horizon: f64, cost: HjbCost },
    /// `u_t + u Σ ∂_i u − νΔu = 0`.
    Burgers { nu: f64 },
    /// `Δu + u − u³ = g` on the unit ball.
    AllenCahn { solution: ManufacturedSolution },
    /// `Δu + sin u = g` on the unit ball.
    SineGordon { solution: ManufacturedSolution },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeProblem {
    kind: ResidualKind,
    dim: usize,
    operator: Operator,
    augmentation: Augmentation,
    reference_mc: usize,
    param_seed: u64,
}

impl PdeProblem {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        let d = spec.dim;
        if d == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        let params = |slot| RngStream::new(spec.param_seed, StreamKey::problem_params(slot));
        let operator = match spec.kind {
            ResidualKind::FpIso => Operator::FokkerPlanck { drift: vec![1.0; d] },
            ResidualKind::FpAniso => Operator::FokkerPlanck {
                drift: draw_drift(&params(0), d),
            },
            ResidualKind::HjbQuadratic | ResidualKind::HjbRosenbrock => {
                if !(spec.horizon > 0.0 && spec.horizon.is_finite()) {
                    return Err(Error::Config(format!("horizon must be positive, got {}", spec.horizon)));
                }
                let cost = if spec.kind == ResidualKind::HjbQuadratic {
                    HjbCost::Quadratic
                } else {
                    if spec.horizon != 1.0 {
                        return Err(Error::Config(
                            "the Rosenbrock reference solution is defined for horizon 1".into(),
                        ));
                    }
                    let mut g = params(1).gaussian();
                    let c1 = (0..d / 2).map(|_| g.uniform()).collect();
                    let c2 = (0..d / 2).map(|_| g.uniform()).collect();
                    HjbCost::Rosenbrock { c1, c2 }
                };
                cost.validate(d)?;
                Operator::Hjb {
                    horizon: spec.horizon,
                    cost,
                }
            }
            ResidualKind::Burgers => {
                if !(spec.nu > 0.0 && spec.nu.is_finite()) {
                    return Err(Error::Config(format!("viscosity must be positive, got {}", spec.nu)));
                }
                Operator::Burgers { nu: spec.nu }
            }
            ResidualKind::AllenCahn | ResidualKind::SineGordon => {
                if d < 2 {
                    return Err(Error::Config("the manufactured solution needs dimension at least 2".into()));
                }
                let mut g = params(2).gaussian();
                let solution = ManufacturedSolution::new((0..d - 1).map(|_| g.sample()).collect())?;
                if spec.kind == ResidualKind::AllenCahn {
                    Operator::AllenCahn { solution }
                } else {
                    Operator::SineGordon { solution }
                }
            }
        };
        if spec.reference_mc == 0 {
            return Err(Error::Config("reference_mc must be at least 1".into()));
        }
        let augmentation = if !spec.augment {
            Augmentation::None
        } else {
            match &operator {
                Operator::FokkerPlanck { .. } => Augmentation::FpInitial,
                Operator::Hjb { horizon, cost } => Augmentation::HjbTerminal {
                    horizon: *horizon,
                    cost: cost.clone(),
                },
                Operator::Burgers { nu } => Augmentation::BurgersInitial { nu: *nu },
                Operator::AllenCahn { .. } | Operator::SineGordon { .. } => Augmentation::Ball,
            }
        };
        Ok(Self {
            kind: spec.kind,
            dim: d,
            operator,
            augmentation,
            reference_mc: spec.reference_mc,
            param_seed: spec.param_seed,
        })
    }

    pub fn kind(&self) -> ResidualKind {
        self.kind
    }

    pub fn name(&self) -> String {
        format!("{}_{}d", self.kind, self.dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operator(&self) -> &Operator {
        &self.operator
    }

    pub fn augmentation(&self) -> &Augmentation {
        &self.augmentation
    }

    pub fn nonlinearity(&self) -> NonlinearityOrder {
        self.kind.nonlinearity()
    }

    pub fn time_dependent(&self) -> bool {
        self.kind.time_dependent()
    }

    /// `net` wrapped in this problem's augmentation.
    pub fn model<'a>(&'a self, net: &'a Mlp) -> AugmentedModel<'a> {
        AugmentedModel {
            net,
            augmentation: &self.augmentation,
            dim: self.dim,
        }
    }

    /// Network input width.
    pub fn input_dim(&self) -> usize {
        self.dim + usize::from(self.time_dependent())
    }

    pub fn groups_for(&self, mode: LossMode) -> Result<usize> {
        self.kind.groups_for(mode)
    }

    /// The drift `μ` of the Fokker–Planck problems.
    pub fn drift(&self) -> Option<&[f64]> {
        match &self.operator {
            Operator::FokkerPlanck { drift } => Some(drift),
            _ => None,
        }
    }

    /// Residual collocation points. Test points come from the same law.
    pub fn sample_residual(&self, rng: &RngStream, n: usize) -> Result<CollocationBatch> {
        let d = self.dim;
        match &self.operator {
            Operator::FokkerPlanck { drift } => sample_fp_anisotropic(rng, n, d, drift),
            // the isotropic trajectory law, as for the Fokker–Planck problem
            Operator::Burgers { .. } => sample_fp_anisotropic(rng, n, d, &vec![1.0; d]),
            Operator::Hjb { .. } => sample_hjb(rng, n, d),
            Operator::AllenCahn { .. } | Operator::SineGordon { .. } => sample_unit_ball(rng, n, d),
        }
    }

    pub fn sample_test(&self, rng: &RngStream, n: usize) -> Result<CollocationBatch> {
        self.sample_residual(rng, n)
    }

    /// Points on the initial, terminal or spatial boundary with their data.
    pub fn sample_boundary(&self, rng: &RngStream, n: usize) -> Result<(CollocationBatch, Array1<f64>)> {
        let d = self.dim;
        let batch = match &self.operator {
            Operator::FokkerPlanck { drift } => sample_fp_conditional(rng, &vec![0.0; n], drift)?,
            Operator::Burgers { .. } => sample_fp_conditional(rng, &vec![0.0; n], &vec![1.0; d])?,
            Operator::Hjb { horizon, .. } => {
                let mut b = sample_hjb(rng, n, d)?;
                b.time = Some(Array1::from_elem(n, *horizon));
                b
            }
            Operator::AllenCahn { .. } | Operator::SineGordon { .. } => {
                let mut g = rng.gaussian();
                let mut spatial = Array2::zeros((n, d));
                for mut row in spatial.rows_mut() {
                    loop {
                        row.iter_mut().for_each(|v| *v = g.sample());
                        let norm = row.dot(&row).sqrt();
                        if norm > 0.0 {
                            row /= norm;
                            break;
                        }
                    }
                }
                CollocationBatch::new(spatial, None)?
            }
        };
        let targets = (0..batch.len())
            .map(|j| self.exact_closed_form(batch.x(j), batch.t(j)))
            .collect::<Result<Array1<f64>>>()?;
        Ok((batch, targets))
    }

    /// Closed-form solution where one exists; the Rosenbrock problem has one
    /// only at the terminal time.
    fn exact_closed_form(&self, x: ArrayView1<f64>, t: Option<f64>) -> Result<f64> {
        let time = || t.ok_or_else(|| Error::Input(format!("{} needs a time coordinate", self.kind)));
        Ok(match &self.operator {
            Operator::FokkerPlanck { drift } => exact_fp_anisotropic(x, time()?, drift),
            Operator::Hjb {
                horizon,
                cost: HjbCost::Quadratic,
            } => exact_hjb_quadratic(x, time()?, *horizon),
            Operator::Hjb { horizon, cost } => {
                let t = time()?;
                if t != *horizon {
                    return Err(Error::Contract("the Rosenbrock solution needs Monte Carlo".into()));
                }
                cost.eval(x)
            }
            Operator::Burgers { nu } => exact_burgers(x, time()?, *nu),
            Operator::AllenCahn { solution } | Operator::SineGordon { solution } => solution.value(x),
        })
    }

    /// Exact values on a batch. The Rosenbrock HJB reference is a Monte Carlo
    /// estimate with one independent stream per point.
    pub fn exact_values(&self, batch: &CollocationBatch) -> Result<Array1<f64>> {
        self.check_batch(batch)?;
        let values: Vec<f64> = match &self.operator {
            Operator::Hjb {
                cost: cost @ HjbCost::Rosenbrock { .. },
                ..
            } => (0..batch.len())
                .into_par_iter()
                .map(|j| {
                    let stream = RngStream::new(self.param_seed, StreamKey::new(u64::MAX - 3, j as u64, 0));
                    let t = batch.t(j).expect("checked");
                    reference_hjb_rosenbrock(batch.x(j), t, cost, self.reference_mc, &mut stream.gaussian())
                        .map(|r| r.value)
                })
                .collect::<Result<_>>()?,
            _ => (0..batch.len())
                .map(|j| self.exact_closed_form(batch.x(j), batch.t(j)))
                .collect::<Result<_>>()?,
        };
        Ok(Array1::from(values))
    }

    /// Right-hand side `g` of the residual; zero except on the ball problems.
    pub fn forcing(&self, x: ArrayView1<f64>) -> f64 {
        match &self.operator {
            Operator::AllenCahn { solution } => solution.allen_cahn_forcing(x),
            Operator::SineGordon { solution } => solution.sine_gordon_forcing(x),
            _ => 0.0,
        }
    }

    pub fn check_batch(&self, batch: &CollocationBatch) -> Result<()> {
        if batch.dim() != self.dim {
            return Err(Error::Shape(format!(
                "points have dimension {}, problem has {}",
                batch.dim(),
                self.dim
            )));
        }
        if batch.is_time_dependent() != self.time_dependent() {
            return Err(Error::Input(format!(
                "{} expects {} points",
                self.kind,
                if self.time_dependent() { "space-time" } else { "spatial" }
            )));
        }
        Ok(())
    }
}
