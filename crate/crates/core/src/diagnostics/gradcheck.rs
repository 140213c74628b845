use std::sync::atomic::{AtomicU64, Ordering};

use super::{Check, Report};
use crate::error::{Error, Result};
use crate::loss::{boundary_loss, residual_loss, total_loss, LossMode, LossValue, LossWeights};
use crate::nn::{Activation, Mlp};
use crate::pde::{PdeProblem, ProblemSpec, ResidualKind};
use crate::sampling::{draw_training_noise, RngStream, StreamKey};

/// Step of the fourth-order central difference.
const FD_STEP: f64 = 1e-4;

/// Largest entrywise gap between the reverse-mode gradient of `loss` and a
/// fourth-order central difference, each entry scaled by
/// `|fd_i| + 1e-3 ‖fd‖_∞`.
///
/// The loss must be a deterministic function of the parameters; two
/// evaluations at the same point that disagree are a contract error.
pub fn finite_difference_error(net: &Mlp, loss: impl Fn(&Mlp) -> Result<LossValue>) -> Result<f64> {
    let first = loss(net)?;
    let again = loss(net)?;
    if first.loss.to_bits() != again.loss.to_bits() {
        return Err(Error::Contract(format!(
            "loss changed between identical evaluations ({} vs {}); noise must stay frozen while probing",
            first.loss, again.loss
        )));
    }
    let g = first.param_grad.flatten();
    let theta = net.flat_params();
    let mut probe = net.clone();
    let mut at = |i: usize, step: f64| -> Result<f64> {
        let mut t = theta.clone();
        t[i] += step;
        probe.set_flat_params(&t)?;
        Ok(loss(&probe)?.loss)
    };
    let h = FD_STEP;
    let mut fd = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let near = at(i, h)? - at(i, -h)?;
        let far = at(i, 2.0 * h)? - at(i, -2.0 * h)?;
        fd.push((8.0 * near - far) / (12.0 * h));
    }
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(g.iter()
        .zip(&fd)
        .map(|(a, b)| {
            let gap = (a - b).abs();
            let denom = b.abs() + 1e-3 * scale;
            if gap == 0.0 {
                0.0
            } else if denom == 0.0 {
                f64::INFINITY
            } else {
                gap / denom
            }
        })
        .fold(0.0, f64::max))
}

fn problem(kind: ResidualKind, augment: bool) -> Result<PdeProblem> {
    let d = if kind == ResidualKind::HjbRosenbrock { 4 } else { 3 };
    let mut spec = ProblemSpec::new(kind, d);
    spec.augment = augment;
    spec.reference_mc = 10;
    spec.build()
}

/// Reverse-mode against finite differences for every problem and mode on
/// small random networks with frozen noise, plus the zero-gradient and
/// non-frozen-noise edge cases.
pub fn gradcheck(seed: u64, tol: f64) -> Result<Report> {
    let (k, sigma, n) = (4, 0.1, 3);
    let mut report = Report::default();
    for kind in ResidualKind::ALL {
        let p = problem(kind, true)?;
        let mut rng = RngStream::new(seed, StreamKey::init()).rng();
        let net = Mlp::new(&[p.input_dim(), 8, 8, 1], Activation::Tanh, &mut rng)?;
        let batch = p.sample_residual(&RngStream::new(seed, StreamKey::collocation(0)), n)?;
        let st = p.time_dependent().then_some(sigma);
        for mode in LossMode::ALL {
            let Ok(groups) = p.groups_for(mode) else { continue };
            let noise = draw_training_noise(seed, 0, n, groups, k, p.dim(), sigma, st)?;
            let err = finite_difference_error(&net, |m| residual_loss(p.model(m), &p, &batch, mode, &noise, true))?;
            report.push(Check::exact(format!("residual {kind} {mode}"), err, 0.0, tol));
        }

        let soft = problem(kind, false)?;
        let (points, targets) = soft.sample_boundary(&RngStream::new(seed, StreamKey::collocation(1)), n)?;
        for mode in [LossMode::Biased, LossMode::Unbiased1] {
            let groups = if mode == LossMode::Biased { 1 } else { 2 };
            let noise = draw_training_noise(seed, 1, n, groups, k, soft.dim(), sigma, st)?;
            let err = finite_difference_error(&net, |m| boundary_loss(soft.model(m), &points, &targets, mode, &noise))?;
            report.push(Check::exact(format!("boundary {kind} {mode}"), err, 0.0, tol));
        }
    }

    // vanishing weights: loss and gradient are identically zero
    let p = problem(ResidualKind::AllenCahn, true)?;
    let mut rng = RngStream::new(seed, StreamKey::init()).rng();
    let net = Mlp::new(&[p.input_dim(), 8, 8, 1], Activation::Tanh, &mut rng)?;
    let batch = p.sample_residual(&RngStream::new(seed, StreamKey::collocation(0)), n)?;
    let noise = draw_training_noise(seed, 0, n, 1, k, p.dim(), sigma, None)?;
    let zero = LossWeights {
        boundary: 0.0,
        residual: 0.0,
    };
    let total = |m: &Mlp| total_loss(p.model(m), &p, &batch, &noise, None, LossMode::Biased, zero, true);
    let err = finite_difference_error(&net, total)?;
    let norm = total(&net)?.param_grad.norm_sq();
    report.push(Check::exact("zero-gradient loss, gradient error", err, 0.0, 0.0));
    report.push(Check::exact("zero-gradient loss, gradient norm", norm, 0.0, 0.0));

    // redrawing noise on every call must be caught rather than differenced
    let calls = AtomicU64::new(0);
    let unfrozen = finite_difference_error(&net, |m| {
        let draw = calls.fetch_add(1, Ordering::Relaxed);
        let noise = draw_training_noise(seed, draw, n, 1, k, p.dim(), sigma, None)?;
        residual_loss(p.model(m), &p, &batch, LossMode::Biased, &noise, true)
    });
    let detected = matches!(unfrozen, Err(Error::Contract(_)));
    report.push(Check {
        name: "unfrozen noise is rejected".into(),
        measured: f64::from(u8::from(detected)),
        target: 1.0,
        std_error: 0.0,
        passed: detected,
        criterion: "contract error".into(),
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_gradient_matches() {
        let r = gradcheck(12, 1e-5).unwrap();
        assert!(r.all_passed(), "{r}");
        // three modes everywhere except Sine-Gordon, two boundary modes each
        assert_eq!(r.checks.len(), 6 * 3 + 2 + 7 * 2 + 3);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let p = problem(ResidualKind::FpIso, true).unwrap();
        let net = Mlp::new(&[4, 4, 1], Activation::Tanh, &mut RngStream::new(0, StreamKey::init()).rng()).unwrap();
        let batch = p.sample_residual(&RngStream::new(0, StreamKey::collocation(0)), 2).unwrap();
        let noise = draw_training_noise(0, 0, 2, 1, 4, 3, 0.1, Some(0.1)).unwrap();
        let err = finite_difference_error(&net, |m| {
            let mut v = residual_loss(p.model(m), &p, &batch, LossMode::Biased, &noise, true)?;
            v.param_grad.scale(1.01);
            Ok(v)
        })
        .unwrap();
        assert!(err > 1e-3, "{err}");
    }
}
