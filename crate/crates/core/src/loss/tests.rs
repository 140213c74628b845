use ndarray::{array, Array1};

use super::*;
use crate::nn::{Activation, Mlp};
use crate::pde::{Augmentation, ProblemSpec, ResidualKind};
use crate::sampling::{draw_training_noise, RngStream, StreamKey};

fn problem(kind: ResidualKind, d: usize, augment: bool) -> PdeProblem {
    let mut s = ProblemSpec::new(kind, d);
    s.augment = augment;
    s.build().unwrap()
}

fn model<'a>(net: &'a Mlp, p: &'a PdeProblem) -> AugmentedModel<'a> {
    AugmentedModel {
        net,
        augmentation: p.augmentation(),
        dim: p.dim(),
    }
}

fn noise_for(p: &PdeProblem, seed: u64, draw: u64, n: usize, groups: usize, k: usize, sigma: f64) -> Vec<NoisePair> {
    let st = p.time_dependent().then_some(sigma);
    draw_training_noise(seed, draw, n, groups, k, p.dim(), sigma, st).unwrap()
}

/// Mean and standard error.
fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn within(v: &[f64], target: f64, z: f64) -> bool {
    let (m, se) = mean_se(v);
    (m - target).abs() <= z * se
}

#[test]
fn layouts() {
    assert_eq!(Layout::new(LossMode::Biased, 3).a, vec![0, 0, 0]);
    assert_eq!(Layout::new(LossMode::Unbiased1, 2).b, vec![1, 1]);
    let l = Layout::new(LossMode::Unbiased2, 3);
    assert_eq!((l.a, l.b, l.groups), (vec![0, 1, 2], vec![3, 4, 5], 6));
}

#[test]
fn wrong_group_count_is_a_contract_error() {
    let p = problem(ResidualKind::HjbQuadratic, 2, true);
    let net = Mlp::zeros(&[3, 4, 1], Activation::Tanh).unwrap();
    let batch = p.sample_residual(&RngStream::new(0, StreamKey::collocation(0)), 3).unwrap();
    let noise = noise_for(&p, 0, 0, 3, 3, 4, 0.1);
    for mode in LossMode::ALL {
        let err = residual_loss(model(&net, &p), &p, &batch, mode, &noise, true).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{mode}: {err}");
    }
    let same = vec![noise[0].clone(), noise[0].clone()];
    let err = residual_loss(model(&net, &p), &p, &batch, LossMode::Unbiased1, &same, true).unwrap_err();
    assert!(err.to_string().contains("share a stream"), "{err}");
}

#[test]
fn sine_gordon_rejects_unbiased2() {
    let p = problem(ResidualKind::SineGordon, 3, true);
    let net = Mlp::zeros(&[3, 4, 1], Activation::Tanh).unwrap();
    let batch = p.sample_residual(&RngStream::new(0, StreamKey::collocation(0)), 2).unwrap();
    let noise = noise_for(&p, 0, 0, 2, 4, 4, 0.1);
    let err = residual_loss_sine_gordon(model(&net, &p), &p, &batch, LossMode::Unbiased2, &noise, true).unwrap_err();
    assert!(matches!(err, Error::UnsupportedNonlinearity(_)));
    assert!(err.to_string().contains("does not exist for this equation"));
}

#[test]
fn named_losses_check_the_problem() {
    let p = problem(ResidualKind::Burgers, 2, true);
    let net = Mlp::zeros(&[3, 4, 1], Activation::Tanh).unwrap();
    let batch = p.sample_residual(&RngStream::new(0, StreamKey::collocation(0)), 2).unwrap();
    let noise = noise_for(&p, 0, 0, 2, 1, 4, 0.1);
    let err = residual_loss_hjb(model(&net, &p), &p, &batch, LossMode::Biased, &noise, true).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    assert!(residual_loss_burgers(model(&net, &p), &p, &batch, LossMode::Biased, &noise, true).is_ok());
}

fn boundary_setup() -> (Mlp, Augmentation, CollocationBatch) {
    let net = Mlp::affine(&[1.0, 1.0], 0.5).unwrap();
    let pts = CollocationBatch::repeat(&[0.3, -0.7], None, 1).unwrap();
    (net, Augmentation::None, pts)
}

fn spatial_noise(seed: u64, draw: u64, groups: usize, k: usize, d: usize, sigma: f64) -> Vec<NoisePair> {
    draw_training_noise(seed, draw, 1, groups, k, d, sigma, None).unwrap()
}

#[test]
fn boundary_loss_vanishes_on_its_own_estimate() {
    let (net, aug, pts) = boundary_setup();
    let m = AugmentedModel {
        net: &net,
        augmentation: &aug,
        dim: 2,
    };
    let noise = spatial_noise(1, 0, 1, 16, 2, 0.1);
    let uhat = crate::smoothing::estimate_value(&m, &pts, &noise[0]).unwrap();
    let l = boundary_loss(m, &pts, &uhat, LossMode::Biased, &noise).unwrap();
    assert!(l.loss.abs() < 1e-28);
    assert!(l.param_grad.norm_sq() < 1e-28);
}

#[test]
fn boundary_bias_matches_closed_form() {
    // affine f: Var û = σ²‖w‖²/K, so the biased loss overshoots by that much
    let (net, aug, pts) = boundary_setup();
    let m = AugmentedModel {
        net: &net,
        augmentation: &aug,
        dim: 2,
    };
    let (sigma, k) = (0.1, 16);
    let targets = Array1::zeros(1);
    let exact: f64 = 0.3 - 0.7 + 0.5;
    let bias = sigma * sigma * 2.0 / k as f64;
    let r = 20_000;
    let (mut biased, mut unbiased, mut grad_w0) = (vec![], vec![], vec![]);
    for draw in 0..r {
        let noise = spatial_noise(2, draw, 2, k, 2, sigma);
        biased.push(boundary_loss(m, &pts, &targets, LossMode::Biased, &noise[..1]).unwrap().loss - exact * exact);
        let u1 = boundary_loss(m, &pts, &targets, LossMode::Unbiased1, &noise).unwrap();
        unbiased.push(u1.loss);
        grad_w0.push(u1.param_grad.weights[0][[0, 0]]);
    }
    assert!(within(&biased, bias, 4.0), "{:?} vs {bias}", mean_se(&biased));
    assert!(within(&unbiased, exact * exact, 4.0), "{:?}", mean_se(&unbiased));
    // exact gradient of (wᵀx + b)² in w₀ is 2(wᵀx + b)x₀
    assert!(within(&grad_w0, 2.0 * exact * 0.3, 4.0), "{:?}", mean_se(&grad_w0));
}

#[test]
fn fp_exact_solution_has_zero_expected_residual() {
    // net = −2Σx + d t + d turns the augmentation net·t + ‖x‖² into ‖x − t‖² + dt
    let d = 3;
    let p = problem(ResidualKind::FpIso, d, true);
    let net = Mlp::affine(&[-2.0, -2.0, -2.0, d as f64], d as f64).unwrap();
    let batch = p.sample_residual(&RngStream::new(3, StreamKey::collocation(0)), 4).unwrap();
    let (mut biased, mut unbiased) = (vec![], vec![]);
    for draw in 0..3000 {
        let noise = noise_for(&p, 3, draw, 4, 2, 8, 0.1);
        let m = model(&net, &p);
        biased.push(residual_loss_linear(m, &p, &batch, LossMode::Biased, &noise[..1], true).unwrap().loss);
        unbiased.push(residual_loss_linear(m, &p, &batch, LossMode::Unbiased1, &noise, true).unwrap().loss);
    }
    assert!(within(&unbiased, 0.0, 4.0), "{:?}", mean_se(&unbiased));
    let (mb, se) = mean_se(&biased);
    assert!(mb > 10.0 * se, "{mb} ± {se}");
}

#[test]
fn fp_unbiased2_equals_unbiased1() {
    let p = problem(ResidualKind::FpAniso, 3, true);
    let mut rng = RngStream::new(4, StreamKey::init()).rng();
    let net = Mlp::new(&[4, 8, 1], Activation::Tanh, &mut rng).unwrap();
    let batch = p.sample_residual(&RngStream::new(4, StreamKey::collocation(0)), 5).unwrap();
    let noise = noise_for(&p, 4, 0, 5, 2, 8, 0.1);
    let a = residual_loss(model(&net, &p), &p, &batch, LossMode::Unbiased1, &noise, true).unwrap();
    let b = residual_loss(model(&net, &p), &p, &batch, LossMode::Unbiased2, &noise, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn constant_shift_of_the_target_shifts_the_exact_loss() {
    // zero residual plus a constant c in the boundary data gives c²
    let (net, aug, pts) = boundary_setup();
    let m = AugmentedModel {
        net: &net,
        augmentation: &aug,
        dim: 2,
    };
    let noise = spatial_noise(5, 0, 2, 8, 2, 0.1);
    let uhat = crate::smoothing::estimate_value(&m, &pts, &noise[0]).unwrap();
    let l = boundary_loss(m, &pts, &(uhat - 0.25), LossMode::Biased, &noise[..1]).unwrap();
    assert!((l.loss - 0.0625).abs() < 1e-15);
}

/// Resampled loss means of an affine model for the three modes.
fn mode_means(p: &PdeProblem, net: &Mlp, batch: &CollocationBatch, k: usize, r: u64) -> [Vec<f64>; 3] {
    let mut out = [vec![], vec![], vec![]];
    for draw in 0..r {
        for (i, mode) in LossMode::ALL.into_iter().enumerate() {
            let Ok(groups) = p.groups_for(mode) else { continue };
            let noise = noise_for(p, 7, draw, batch.len(), groups, k, 0.1);
            out[i].push(residual_loss(model(net, p), p, batch, mode, &noise, true).unwrap().loss);
        }
    }
    out
}

#[test]
fn hjb_affine_closed_forms() {
    // ∇̂ = (1/K)Σ δδᵀw/σ² has E‖∇̂‖² = ‖w‖²(1 + (d+1)/K); Δ̂ is exactly zero
    let (d, k) = (2, 4);
    let p = problem(ResidualKind::HjbQuadratic, d, false);
    let (w, wt) = ([0.6, -0.4], 0.0);
    let net = Mlp::affine(&[w[0], w[1], wt], 0.2).unwrap();
    let batch = CollocationBatch::repeat(&[0.1, 0.5], Some(0.3), 1).unwrap();
    let w2 = w[0] * w[0] + w[1] * w[1];
    let exact = (wt - w2).powi(2);
    let u1 = (wt - w2 * (1.0 + (d + 1) as f64 / k as f64)).powi(2);
    let [b, m1, m2] = mode_means(&p, &net, &batch, k, 20_000);
    assert!(within(&m2, exact, 4.0), "{:?} vs {exact}", mean_se(&m2));
    assert!(within(&m1, u1, 4.0), "{:?} vs {u1}", mean_se(&m1));
    let ((mb, seb), (mu1, _)) = (mean_se(&b), mean_se(&m1));
    assert!(mb - mu1 > 4.0 * seb && mu1 > exact);
}

#[test]
fn burgers_affine_unbiased2_matches_closed_form() {
    let d = 2;
    let p = problem(ResidualKind::Burgers, d, false);
    let (w, wt, b0) = ([0.5, -0.3], 0.4, 0.1);
    let net = Mlp::affine(&[w[0], w[1], wt], b0).unwrap();
    let (x, t) = ([0.2, 0.7], 0.5);
    let batch = CollocationBatch::repeat(&x, Some(t), 1).unwrap();
    let u = w[0] * x[0] + w[1] * x[1] + wt * t + b0;
    let exact = (wt + u * (w[0] + w[1])).powi(2);
    let [b, _, m2] = mode_means(&p, &net, &batch, 4, 20_000);
    assert!(within(&m2, exact, 4.0), "{:?} vs {exact}", mean_se(&m2));
    let (mb, seb) = mean_se(&b);
    assert!(mb - exact > 4.0 * seb);
}

#[test]
fn allen_cahn_affine_unbiased2_matches_closed_form() {
    let d = 2;
    let p = problem(ResidualKind::AllenCahn, d, false);
    let (w, b0) = ([0.8, -0.6], 0.9);
    let net = Mlp::affine(&w, b0).unwrap();
    let x = [0.3, 0.2];
    let batch = CollocationBatch::repeat(&x, None, 1).unwrap();
    let g = p.forcing(array![x[0], x[1]].view());
    let u = w[0] * x[0] + w[1] * x[1] + b0;
    let exact = (u - u * u * u - g).powi(2);
    let [b, _, m2] = mode_means(&p, &net, &batch, 4, 20_000);
    assert!(within(&m2, exact, 4.0), "{:?} vs {exact}", mean_se(&m2));
    assert!(!within(&b, exact, 4.0), "{:?} vs {exact}", mean_se(&b));
}

#[test]
fn zero_model_reduces_allen_cahn_to_forcing() {
    let p = problem(ResidualKind::AllenCahn, 3, true);
    let net = Mlp::zeros(&[3, 4, 1], Activation::Tanh).unwrap();
    let batch = p.sample_residual(&RngStream::new(8, StreamKey::collocation(0)), 6).unwrap();
    let g: Vec<f64> = (0..6).map(|j| p.forcing(batch.x(j))).collect();
    for mode in LossMode::ALL {
        let noise = noise_for(&p, 8, 0, 6, p.groups_for(mode).unwrap(), 4, 0.1);
        let l = residual_loss_allen_cahn(model(&net, &p), &p, &batch, mode, &noise, true).unwrap();
        for (v, gj) in l.diagnostics.per_point.iter().zip(&g) {
            assert!((v - gj * gj).abs() <= 1e-14 * gj * gj, "{mode}");
        }
    }
}

#[test]
fn sine_gordon_small_angle() {
    let d = 3;
    let p = problem(ResidualKind::SineGordon, d, false);
    let c = 1e-4;
    let net = Mlp::affine(&[0.0; 3], c).unwrap();
    let batch = p.sample_residual(&RngStream::new(9, StreamKey::collocation(0)), 5).unwrap();
    let noise = noise_for(&p, 9, 0, 5, 2, 4, 0.1);
    let l = residual_loss_sine_gordon(model(&net, &p), &p, &batch, LossMode::Unbiased1, &noise, true).unwrap();
    for (j, v) in l.diagnostics.per_point.iter().enumerate() {
        let g = p.forcing(batch.x(j));
        let linear = (c - g) * (c - g);
        assert!((v - linear).abs() < 1e-10, "{v} vs {linear}");
    }
}

#[test]
fn total_loss_weights() {
    let p = problem(ResidualKind::HjbQuadratic, 2, false);
    let mut rng = RngStream::new(10, StreamKey::init()).rng();
    let net = Mlp::new(&[3, 6, 1], Activation::Tanh, &mut rng).unwrap();
    let batch = p.sample_residual(&RngStream::new(10, StreamKey::collocation(0)), 4).unwrap();
    let (bpts, targets) = p.sample_boundary(&RngStream::new(10, StreamKey::collocation(1)), 3).unwrap();
    let noise = noise_for(&p, 10, 0, 4, 2, 4, 0.1);
    let bnoise = noise_for(&p, 10, 1, 3, 2, 4, 0.1);
    let m = model(&net, &p);
    let boundary = BoundaryTerm {
        points: &bpts,
        targets: &targets,
        noise: &bnoise,
    };
    let lr = residual_loss(m, &p, &batch, LossMode::Unbiased1, &noise, true).unwrap();
    let lb = boundary_loss(m, &bpts, &targets, LossMode::Unbiased1, &bnoise).unwrap();
    let w = LossWeights {
        boundary: 0.0,
        residual: 3.0,
    };
    let t = total_loss(m, &p, &batch, &noise, Some(boundary), LossMode::Unbiased1, w, true).unwrap();
    assert!((t.loss - 3.0 * lr.loss).abs() <= 1e-14 * lr.loss.abs());
    let mut g = lr.param_grad.clone();
    g.scale(3.0);
    assert!(t.param_grad.flatten().iter().zip(g.flatten()).all(|(a, b)| (a - b).abs() <= 1e-14 * (1.0 + b.abs())));
    let w = LossWeights {
        boundary: 2.0,
        residual: 1.0,
    };
    let t = total_loss(m, &p, &batch, &noise, Some(boundary), LossMode::Unbiased1, w, true).unwrap();
    assert!((t.loss - (lr.loss + 2.0 * lb.loss)).abs() <= 1e-13);
    assert!(total_loss(m, &p, &batch, &noise, None, LossMode::Unbiased1, w, true).is_err());
    assert_eq!(LossWeights::for_problem(&p).boundary, 1.0);
    assert_eq!(LossWeights::for_problem(&problem(ResidualKind::HjbQuadratic, 2, true)).boundary, 0.0);
}

#[test]
fn chunked_and_whole_batch_evaluation_agree() {
    // enough points that the evaluator splits them into several chunks
    let p = problem(ResidualKind::HjbQuadratic, 3, true);
    let mut rng = RngStream::new(11, StreamKey::init()).rng();
    let net = Mlp::new(&[4, 6, 1], Activation::Tanh, &mut rng).unwrap();
    let n = 300;
    let k = 64;
    let batch = p.sample_residual(&RngStream::new(11, StreamKey::collocation(0)), n).unwrap();
    let noise = noise_for(&p, 11, 0, n, 4, k, 0.1);
    let whole = residual_loss(model(&net, &p), &p, &batch, LossMode::Unbiased2, &noise, true).unwrap();
    assert!(whole.diagnostics.rows_evaluated > MAX_CHUNK_ROWS);
    let mut sum = 0.0;
    let mut grad = ParamGradient::zeros_like(&net);
    for (lo, hi) in [(0, 100), (100, 300)] {
        let sub: Vec<NoisePair> = noise.iter().map(|q| select(q, lo..hi).unwrap()).collect();
        let part = residual_loss(model(&net, &p), &p, &batch.slice(lo..hi), LossMode::Unbiased2, &sub, true).unwrap();
        let w = (hi - lo) as f64 / n as f64;
        sum += w * part.loss;
        grad.scaled_add(w, &part.param_grad);
    }
    assert!((sum - whole.loss).abs() <= 1e-12 * whole.loss.abs());
    for (a, b) in grad.flatten().iter().zip(whole.param_grad.flatten()) {
        assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
    }
}

/// Max entrywise error of the reverse-mode gradient against the fourth-order
/// central difference, scaled by `|fd_i| + 1e-3 ‖fd‖_∞`.
fn fd_error(net: &Mlp, f: impl Fn(&Mlp) -> LossValue) -> f64 {
    let g = f(net).param_grad.flatten();
    let theta = net.flat_params();
    let h = 1e-4;
    let mut probe = net.clone();
    let mut at = |i: usize, step: f64| {
        let mut t = theta.clone();
        t[i] += step;
        probe.set_flat_params(&t).unwrap();
        f(&probe).loss
    };
    let fd: Vec<f64> = (0..theta.len())
        .map(|i| (8.0 * (at(i, h) - at(i, -h)) - (at(i, 2.0 * h) - at(i, -2.0 * h))) / (12.0 * h))
        .collect();
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    g.iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / (b.abs() + 1e-3 * scale))
        .fold(0.0, f64::max)
}

#[test]
fn gradients_match_finite_differences_on_every_problem() {
    let d = 3;
    for kind in ResidualKind::ALL {
        let mut spec = ProblemSpec::new(kind, if kind == ResidualKind::HjbRosenbrock { 4 } else { d });
        spec.reference_mc = 10;
        let p = spec.build().unwrap();
        let mut rng = RngStream::new(12, StreamKey::init()).rng();
        let net = Mlp::new(&[p.input_dim(), 8, 8, 1], Activation::Tanh, &mut rng).unwrap();
        let batch = p.sample_residual(&RngStream::new(12, StreamKey::collocation(0)), 3).unwrap();
        for mode in LossMode::ALL {
            let Ok(groups) = p.groups_for(mode) else { continue };
            let noise = noise_for(&p, 12, 0, 3, groups, 4, 0.1);
            let err = fd_error(&net, |m| residual_loss(model(m, &p), &p, &batch, mode, &noise, true).unwrap());
            assert!(err <= 1e-5, "{kind} {mode}: {err}");
        }
    }
}
