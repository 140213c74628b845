use ndarray::{Array1, ArrayView1};

use super::{variance_se, Check, Report};
use crate::error::Result;
use crate::sampling::{draw_point_noise, CollocationBatch, NoisePair, StreamKey};
use crate::smoothing::{
    estimate_gradient, estimate_hessian, estimate_laplacian, estimate_laplacian_mirrored_time,
    estimate_time_derivative, estimate_value, RowFn, Request, smooth,
};

/// `draws` copies of one point, each with its own noise; the per-point
/// estimates are then independent draws of the estimator.
fn resampled(x: &[f64], t: Option<f64>, draws: usize, k: usize, sigma: f64, seed: u64) -> Result<(CollocationBatch, NoisePair)> {
    let points = CollocationBatch::repeat(x, t, draws)?;
    let nx = draw_point_noise(seed, StreamKey::new(0, 0, 0), draws, k, x.len(), sigma)?;
    let nt = t
        .map(|_| draw_point_noise(seed, StreamKey::new(0, 0, 1), draws, k, 1, sigma))
        .transpose()?;
    Ok((points, NoisePair { x: nx, t: nt }))
}

fn sq_norm(r: ArrayView1<f64>) -> f64 {
    r.dot(&r)
}

/// Empirical means of every estimator against closed-form targets on
/// quadratic and affine test functions, plus the variance comparison of the
/// two space-time Laplacian stencils.
pub fn verify_estimators(draws: usize, seed: u64) -> Result<Report> {
    let (k, sigma) = (8, 0.1);
    let mut report = Report::default();
    let quad = RowFn::new(2, sq_norm);

    let (origin, noise) = resampled(&[0.0, 0.0], None, draws, k, sigma, seed)?;
    let v = estimate_value(&quad, &origin, &noise)?;
    report.push(Check::within("value of |x|^2 at 0 (d sigma^2)", v.as_slice().unwrap(), 2.0 * sigma * sigma, 4.0));

    let (pts, noise) = resampled(&[1.0, 0.0], None, draws, k, sigma, seed + 1)?;
    for (antithetic, tag) in [(true, "antithetic"), (false, "plain")] {
        let g = estimate_gradient(&quad, &pts, &noise, antithetic)?;
        for (i, target) in [2.0, 0.0].into_iter().enumerate() {
            let col: Vec<f64> = g.column(i).to_vec();
            report.push(Check::within(format!("{tag} gradient[{i}] of |x|^2 at (1,0)"), &col, target, 4.0));
        }
    }
    let lap = estimate_laplacian(&quad, &pts, &noise, true)?;
    report.push(Check::within("laplacian of |x|^2", lap.as_slice().unwrap(), 4.0, 4.0));
    let hess = estimate_hessian(&quad, &pts, &noise, true)?;
    for (i, j, target) in [(0, 0, 2.0), (1, 1, 2.0), (0, 1, 0.0)] {
        let entry: Vec<f64> = (0..draws).map(|p| hess[[p, i, j]]).collect();
        report.push(Check::within(format!("hessian[{i},{j}] of |x|^2"), &entry, target, 4.0));
    }
    let trace_gap = (0..draws)
        .map(|p| (hess[[p, 0, 0]] + hess[[p, 1, 1]] - lap[p]).abs() / (1.0 + lap[p].abs()))
        .fold(0.0, f64::max);
    report.push(Check::exact("hessian trace equals laplacian per draw", trace_gap, 0.0, 1e-10));

    let affine = RowFn::new(2, |r: ArrayView1<f64>| 0.7 * r[0] - 1.3 * r[1] + 0.4);
    let both = Request::LAPLACIAN.union(Request::HESSIAN);
    let e = smooth(&affine, &pts, &noise, true, both)?;
    let lap_max = e.laplacian()?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let hess_max = e.hessian()?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    report.push(Check::exact("antithetic laplacian of affine f, max |.|", lap_max, 0.0, 1e-10));
    report.push(Check::exact("antithetic hessian of affine f, max |.|", hess_max, 0.0, 1e-10));

    let t0 = 0.3;
    let (st, noise) = resampled(&[0.5, -0.2], Some(t0), draws, k, sigma, seed + 2)?;
    let tsq = RowFn::new(3, |r: ArrayView1<f64>| r[2] * r[2]);
    let nt = noise.t.as_ref().expect("time noise");
    let ut = estimate_time_derivative(&tsq, &st, &noise.x, nt, true)?;
    report.push(Check::within("time derivative of t^2 at t = 0.3", ut.as_slice().unwrap(), 2.0 * t0, 4.0));
    let flat = RowFn::new(3, |r: ArrayView1<f64>| r[0].sin() + r[1]);
    let ut0 = estimate_time_derivative(&flat, &st, &noise.x, nt, true)?;
    let ut0_max = ut0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    report.push(Check::exact("time derivative of t-free f, max |.|", ut0_max, 0.0, 0.0));

    let cmp = laplacian_variance_comparison(draws, 4, sigma, seed + 3)?;
    report.push(Check {
        name: "mirrored-time / independent laplacian variance".into(),
        measured: cmp.ratio(),
        target: 1.0,
        std_error: 0.0,
        passed: cmp.separated(3.0),
        criterion: "ratio > 1, variances 3 SE apart".into(),
    });
    report.notes.push(format!(
        "laplacian variance: independent {:.4e} (se {:.2e}), mirrored {:.4e} (se {:.2e})",
        cmp.corrected.0, cmp.corrected.1, cmp.flawed.0, cmp.flawed.1
    ));
    Ok(report)
}

/// Per-draw variances of the two space-time Laplacian stencils on the same
/// noise, as `(variance, standard error)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComparison {
    /// Independent temporal noise, shared by the whole second difference.
    pub corrected: (f64, f64),
    /// Temporal noise mirrored together with the spatial noise.
    pub flawed: (f64, f64),
}

impl VarianceComparison {
    pub fn ratio(&self) -> f64 {
        self.flawed.0 / self.corrected.0
    }

    /// Whether the flawed variance exceeds the corrected one by more than
    /// `z` combined standard errors.
    pub fn separated(&self, z: f64) -> bool {
        let se = self.flawed.1.hypot(self.corrected.1);
        self.flawed.0 - self.corrected.0 > z * se
    }
}

/// Compares the spatial Laplacian stencils on `f(x, t) = ‖x‖² + t²`.
pub fn laplacian_variance_comparison(draws: usize, k: usize, sigma: f64, seed: u64) -> Result<VarianceComparison> {
    let f = RowFn::new(3, sq_norm);
    let (points, noise) = resampled(&[0.5, -0.2], Some(0.3), draws, k, sigma, seed)?;
    let good: Array1<f64> = estimate_laplacian(&f, &points, &noise, true)?;
    let bad = estimate_laplacian_mirrored_time(&f, &points, &noise.x, noise.t.as_ref().expect("time noise"))?;
    Ok(VarianceComparison {
        corrected: variance_se(good.as_slice().unwrap()),
        flawed: variance_se(bad.as_slice().unwrap()),
    })
}
