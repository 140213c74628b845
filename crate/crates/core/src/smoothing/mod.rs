//! Monte Carlo estimators of the Gaussian-smoothed surrogate
//! `u(x) = E f(x + δ)` and of its input derivatives.
//!
//! All estimators are linear in the per-sample outputs `f(x ± δ_i)`. The
//! [`Stencil`] packs every perturbed input for a batch into one matrix,
//! [`Stencil::estimate`] contracts the outputs into estimates, and
//! [`Stencil::row_cotangents`] maps derivatives with respect to the
//! estimates back onto the rows for a single reverse pass through the
//! network.

mod stencil;

pub use stencil::{EstimateCotangent, Stencil};

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::sampling::{CollocationBatch, NoiseGroup, NoisePair};

/// Noise scales and sample count shared by every estimator of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct SmoothingConfig {
    pub sigma_x: f64,
    /// Ignored for time-independent problems.
    pub sigma_t: f64,
    /// Monte Carlo samples per estimate during training.
    pub k: usize,
    /// Samples per point when scoring the model on the test set.
    pub k_test: usize,
    pub antithetic: bool,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            sigma_x: 1e-2,
            sigma_t: 1e-2,
            k: 1024,
            k_test: 128,
            antithetic: true,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("sigma_x", self.sigma_x), ("sigma_t", self.sigma_t)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {s}")));
            }
        }
        if self.k == 0 || self.k_test == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which estimates to compute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Request {
    pub value: bool,
    pub gradient: bool,
    pub laplacian: bool,
    pub hessian: bool,
    pub time_derivative: bool,
}

impl Request {
    pub const VALUE: Request = Request {
        value: true,
        gradient: false,
        laplacian: false,
        hessian: false,
        time_derivative: false,
    };
    pub const GRADIENT: Request = Request {
        gradient: true,
        ..Request::NONE
    };
    pub const LAPLACIAN: Request = Request {
        laplacian: true,
        ..Request::NONE
    };
    pub const HESSIAN: Request = Request {
        hessian: true,
        ..Request::NONE
    };
    pub const TIME_DERIVATIVE: Request = Request {
        time_derivative: true,
        ..Request::NONE
    };
    const NONE: Request = Request {
        value: false,
        gradient: false,
        laplacian: false,
        hessian: false,
        time_derivative: false,
    };

    pub const fn union(self, o: Request) -> Request {
        Request {
            value: self.value || o.value,
            gradient: self.gradient || o.gradient,
            laplacian: self.laplacian || o.laplacian,
            hessian: self.hessian || o.hessian,
            time_derivative: self.time_derivative || o.time_derivative,
        }
    }
}

/// Batched estimates at `n` points plus the network outputs they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedEval {
    pub value: Array1<f64>,
    pub gradient: Option<Array2<f64>>,
    pub laplacian: Option<Array1<f64>>,
    /// Symmetric by construction.
    pub hessian: Option<Array3<f64>>,
    pub time_derivative: Option<Array1<f64>>,
    /// Outputs on the stencil rows, in [`Stencil`] order.
    pub outputs: Array1<f64>,
}

impl SmoothedEval {
    pub fn gradient(&self) -> Result<&Array2<f64>> {
        self.gradient.as_ref().ok_or_else(|| missing("gradient"))
    }

    pub fn laplacian(&self) -> Result<&Array1<f64>> {
        self.laplacian.as_ref().ok_or_else(|| missing("laplacian"))
    }

    pub fn hessian(&self) -> Result<&Array3<f64>> {
        self.hessian.as_ref().ok_or_else(|| missing("hessian"))
    }

    pub fn time_derivative(&self) -> Result<&Array1<f64>> {
        self.time_derivative.as_ref().ok_or_else(|| missing("time derivative"))
    }
}

fn missing(what: &str) -> Error {
    Error::Contract(format!("{what} estimate was not requested"))
}

/// A scalar function of `[x, t]` rows that can be smoothed.
pub trait SmoothedFn: Sync {
    /// Columns of an input row: the spatial dimension, plus one with time.
    fn input_dim(&self) -> usize;
    fn eval(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>>;
}

impl SmoothedFn for Mlp {
    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn eval(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.forward_batch(inputs)
    }
}

/// Wraps a closure over single rows; mostly for analytic test functions.
pub struct RowFn<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(ArrayView1<f64>) -> f64 + Sync> RowFn<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(ArrayView1<f64>) -> f64 + Sync> SmoothedFn for RowFn<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        if inputs.ncols() != self.dim {
            return Err(Error::Shape(format!(
                "inputs have {} columns, function expects {}",
                inputs.ncols(),
                self.dim
            )));
        }
        Ok(inputs.rows().into_iter().map(|r| (self.f)(r)).collect())
    }
}

/// Builds the stencil, evaluates `f` on it and contracts the outputs.
pub fn smooth(
    f: &dyn SmoothedFn,
    points: &CollocationBatch,
    noise: &NoisePair,
    antithetic: bool,
    request: Request,
) -> Result<SmoothedEval> {
    let cols = points.dim() + usize::from(points.is_time_dependent());
    if f.input_dim() != cols {
        return Err(Error::Shape(format!(
            "function takes {} inputs, points have {cols} columns",
            f.input_dim()
        )));
    }
    let stencil = Stencil::build(points, noise, antithetic, request)?;
    let outputs = f.eval(stencil.inputs())?;
    stencil.estimate(&outputs, noise)
}

/// `û(x) = (1/K) Σ f(x + δ_i)`.
pub fn estimate_value(f: &dyn SmoothedFn, points: &CollocationBatch, noise: &NoisePair) -> Result<Array1<f64>> {
    Ok(smooth(f, points, noise, false, Request::VALUE)?.value)
}

pub fn estimate_gradient(
    f: &dyn SmoothedFn,
    points: &CollocationBatch,
    noise: &NoisePair,
    antithetic: bool,
) -> Result<Array2<f64>> {
    smooth(f, points, noise, antithetic, Request::GRADIENT)?
        .gradient
        .ok_or_else(|| missing("gradient"))
}

pub fn estimate_laplacian(
    f: &dyn SmoothedFn,
    points: &CollocationBatch,
    noise: &NoisePair,
    antithetic: bool,
) -> Result<Array1<f64>> {
    smooth(f, points, noise, antithetic, Request::LAPLACIAN)?
        .laplacian
        .ok_or_else(|| missing("laplacian"))
}

pub fn estimate_hessian(
    f: &dyn SmoothedFn,
    points: &CollocationBatch,
    noise: &NoisePair,
    antithetic: bool,
) -> Result<Array3<f64>> {
    smooth(f, points, noise, antithetic, Request::HESSIAN)?
        .hessian
        .ok_or_else(|| missing("hessian"))
}

/// `(1/K) Σ τ_i/(2σ_t²) (f(x + δ_i, t + τ_i) − f(x + δ_i, t − τ_i))`, with
/// spatial and temporal noise drawn from independent streams.
pub fn estimate_time_derivative(
    f: &dyn SmoothedFn,
    points: &CollocationBatch,
    noise_x: &NoiseGroup,
    noise_t: &NoiseGroup,
    antithetic: bool,
) -> Result<Array1<f64>> {
    let noise = NoisePair {
        x: noise_x.clone(),
        t: Some(noise_t.clone()),
    };
    smooth(f, points, &noise, antithetic, Request::TIME_DERIVATIVE)?
        .time_derivative
        .ok_or_else(|| missing("time derivative"))
}

/// Spatial Laplacian with the time increment mirrored along with the space
/// increment: `f(x + δ, t + τ) + f(x − δ, t − τ) − 2 f(x, t)`.
///
/// The second difference then picks up `τ² ∂²f/∂t²` and the mixed term,
/// which do not cancel per draw. Kept only to compare against the
/// independent-noise stencil used everywhere else.
pub fn estimate_laplacian_mirrored_time(
    f: &dyn SmoothedFn,
    points: &CollocationBatch,
    noise_x: &NoiseGroup,
    noise_t: &NoiseGroup,
) -> Result<Array1<f64>> {
    let n = points.len();
    let d = points.dim();
    let time = points
        .time
        .as_ref()
        .ok_or_else(|| Error::Input("mirrored-time stencil needs time-dependent points".into()))?;
    noise_x.check_covers(n, d)?;
    noise_t.check_covers(n, 1)?;
    let k = noise_x.k();
    if noise_t.k() != k {
        return Err(Error::Shape("spatial and temporal noise differ in K".into()));
    }
    let rpp = 2 * k + 1;
    let mut inputs = Array2::zeros((n * rpp, d + 1));
    for j in 0..n {
        let (dx, dt) = (noise_x.for_point(j), noise_t.for_point(j));
        for i in 0..k {
            for sign in [1.0, -1.0] {
                let row = j * rpp + if sign > 0.0 { i } else { k + i };
                let mut out = inputs.row_mut(row);
                for c in 0..d {
                    out[c] = points.spatial[[j, c]] + sign * dx[[i, c]];
                }
                out[d] = time[j] + sign * dt[[i, 0]];
            }
        }
        let mut center = inputs.row_mut(j * rpp + 2 * k);
        center.slice_mut(ndarray::s![..d]).assign(&points.x(j));
        center[d] = time[j];
    }
    let out = f.eval(inputs.view())?;
    let s2 = noise_x.sigma().powi(2);
    Ok((0..n)
        .map(|j| {
            let o = &out.as_slice().expect("contiguous")[j * rpp..(j + 1) * rpp];
            let dx = noise_x.for_point(j);
            (0..k)
                .map(|i| {
                    let delta = dx.row(i);
                    let w = (delta.dot(&delta) - s2 * d as f64) / (2.0 * s2 * s2);
                    w * (o[i] + o[k + i] - 2.0 * o[2 * k])
                })
                .sum::<f64>()
                / k as f64
        })
        .collect())
}
