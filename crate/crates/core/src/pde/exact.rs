use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::GaussianSource;

/// `‖x − t·1‖² + d·t`.
pub fn exact_fp_isotropic(x: ArrayView1<f64>, t: f64) -> f64 {
    x.iter().map(|xi| (xi - t).powi(2)).sum::<f64>() + x.len() as f64 * t
}

/// `‖x − μt‖² + d·t`.
pub fn exact_fp_anisotropic(x: ArrayView1<f64>, t: f64, mu: &[f64]) -> f64 {
    x.iter().zip(mu).map(|(xi, m)| (xi - m * t).powi(2)).sum::<f64>() + x.len() as f64 * t
}

/// `‖x‖²/(1 + 4(T − t)) + (d/2) log(1 + 4(T − t))`.
pub fn exact_hjb_quadratic(x: ArrayView1<f64>, t: f64, horizon: f64) -> f64 {
    let s = 1.0 + 4.0 * (horizon - t);
    x.dot(&x) / s + 0.5 * x.len() as f64 * s.ln()
}

/// `1 / (1 + exp((Σx − d·t/2) / (2ν)))`.
pub fn exact_burgers(x: ArrayView1<f64>, t: f64, nu: f64) -> f64 {
    let z = (x.sum() - 0.5 * x.len() as f64 * t) / (2.0 * nu);
    // written through exp(−|z|) to stay finite for large |z|
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Terminal cost of the HJB problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HjbCost {
    /// `‖x‖²`
    Quadratic,
    /// `Σ_i c1_i (x_{2i−1} − x_{2i})² + c2_i x_{2i}²` over coordinate pairs.
    Rosenbrock { c1: Vec<f64>, c2: Vec<f64> },
}

impl HjbCost {
    pub fn eval(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            HjbCost::Quadratic => x.dot(&x),
            HjbCost::Rosenbrock { c1, c2 } => c1
                .iter()
                .zip(c2)
                .enumerate()
                .map(|(i, (a, b))| {
                    let (odd, even) = (x[2 * i], x[2 * i + 1]);
                    a * (odd - even).powi(2) + b * even * even
                })
                .sum(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if let HjbCost::Rosenbrock { c1, c2 } = self {
            if dim % 2 != 0 {
                return Err(Error::Config(format!(
                    "the Rosenbrock cost pairs coordinates, dimension {dim} is odd"
                )));
            }
            if c1.len() != dim / 2 || c2.len() != dim / 2 {
                return Err(Error::Config(format!(
                    "Rosenbrock cost needs {} coefficients per family, got {} and {}",
                    dim / 2,
                    c1.len(),
                    c2.len()
                )));
            }
            if c1.iter().chain(c2).any(|c| !c.is_finite()) {
                return Err(Error::Config("Rosenbrock coefficients must be finite".into()));
            }
        }
        Ok(())
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// `u(x, t) = −log E_y exp(−g(x − √(2(1 − t)) y))`, `y ~ N(0, I)`, the
/// Cole–Hopf representation of the HJB solution with horizon 1.
///
/// The mean is formed as a log-sum-exp; the standard error comes from the
/// delta method on the shifted weights.
pub fn reference_hjb_rosenbrock<R: rand_core::RngCore>(
    x: ArrayView1<f64>,
    t: f64,
    cost: &HjbCost,
    n_mc: usize,
    gauss: &mut GaussianSource<R>,
) -> Result<McEstimate> {
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Input(format!("time {t} outside [0, 1]")));
    }
    let d = x.len();
    let scale = (2.0 * (1.0 - t)).sqrt();
    let mut shifted = ndarray::Array1::zeros(d);
    let exponents: Vec<f64> = (0..n_mc)
        .map(|_| {
            for (s, xi) in shifted.iter_mut().zip(x) {
                *s = xi - scale * gauss.sample();
            }
            -cost.eval(shifted.view())
        })
        .collect();
    let m = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Numerical(format!(
            "every Monte Carlo exponent underflows (max exponent {m})"
        )));
    }
    let n = n_mc as f64;
    let w: Vec<f64> = exponents.iter().map(|e| (e - m).exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    let var = if n_mc > 1 {
        w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        value: -(m + mean.ln()),
        std_error: (var / n).sqrt() / mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{RngStream, StreamKey};
    use ndarray::{array, Array1};

    fn fd_partial(f: &dyn Fn(&[f64]) -> f64, z: &[f64], i: usize, h: f64) -> (f64, f64) {
        let mut p = z.to_vec();
        p[i] += h;
        let up = f(&p);
        p[i] -= 2.0 * h;
        let down = f(&p);
        let mid = f(z);
        ((up - down) / (2.0 * h), (up - 2.0 * mid + down) / (h * h))
    }

    /// `(u_t, ∇u, Δu)` by central differences; the last entry of `z` is time.
    fn fd_derivatives(f: &dyn Fn(&[f64]) -> f64, z: &[f64]) -> (f64, Vec<f64>, f64) {
        let d = z.len() - 1;
        let (ut, _) = fd_partial(f, z, d, 1e-5);
        let mut grad = vec![0.0; d];
        let mut lap = 0.0;
        for i in 0..d {
            let (g, h) = fd_partial(f, z, i, 1e-4);
            grad[i] = g;
            lap += h;
        }
        (ut, grad, lap)
    }

    fn random_points(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut g = RngStream::new(seed, StreamKey::new(0, 0, 0)).gaussian();
        (0..n)
            .map(|_| {
                let mut z: Vec<f64> = (0..d).map(|_| 0.7 * g.sample()).collect();
                z.push(0.1 + 0.8 * g.uniform());
                z
            })
            .collect()
    }

    #[test]
    fn fp_spot_values() {
        assert_eq!(exact_fp_isotropic(array![0.0, 0.0].view(), 0.0), 0.0);
        assert_eq!(exact_fp_isotropic(Array1::ones(10).view(), 1.0), 10.0);
        let x = array![0.3, -1.2, 2.0];
        let swapped = array![2.0, 0.3, -1.2];
        assert_eq!(exact_fp_isotropic(x.view(), 0.4), exact_fp_isotropic(swapped.view(), 0.4));
        assert_eq!(exact_fp_anisotropic(x.view(), 0.4, &[1.0; 3]), exact_fp_isotropic(x.view(), 0.4));
        let mu = [0.5, 2.0, -1.0];
        let on_drift = array![0.25, 1.0, -0.5];
        assert_eq!(exact_fp_anisotropic(on_drift.view(), 0.5, &mu), 1.5);
        // independent evaluation: (0.3 − 0.2)² + (−1.2 − 0.8)² + (2 + 0.4)² + 3·0.4
        let direct = 0.1f64.powi(2) + 2.0f64.powi(2) + 2.4f64.powi(2) + 1.2;
        assert!((exact_fp_anisotropic(x.view(), 0.4, &mu) - direct).abs() < 1e-14);
    }

    #[test]
    fn fp_solutions_satisfy_the_pde() {
        let mu = [0.5, 2.0, -1.0, 1.3];
        for z in random_points(1, 20, 4) {
            let f = |p: &[f64]| exact_fp_anisotropic(ndarray::ArrayView1::from(&p[..4]), p[4], &mu);
            let (ut, grad, lap) = fd_derivatives(&f, &z);
            let drift: f64 = grad.iter().zip(&mu).map(|(g, m)| g * m).sum();
            let residual = ut - 0.5 * lap + drift;
            assert!(residual.abs() < 1e-6 * (1.0 + ut.abs() + lap.abs()), "{residual}");
        }
    }

    #[test]
    fn hjb_quadratic_spot_values() {
        let x = array![0.5, -1.0, 2.0];
        assert!((exact_hjb_quadratic(x.view(), 1.0, 1.0) - x.dot(&x)).abs() < 1e-15);
        let v = exact_hjb_quadratic(Array1::zeros(10).view(), 0.0, 1.0);
        assert!((v - 5.0 * 5f64.ln()).abs() < 1e-12);
        assert!((v - 8.04719).abs() < 1e-5);
        let zero = Array1::zeros(10);
        assert!(exact_hjb_quadratic(zero.view(), 0.2, 1.0) > exact_hjb_quadratic(zero.view(), 0.6, 1.0));
    }

    #[test]
    fn hjb_quadratic_satisfies_the_pde() {
        for z in random_points(2, 20, 5) {
            let f = |p: &[f64]| exact_hjb_quadratic(ndarray::ArrayView1::from(&p[..5]), p[5], 1.0);
            let (ut, grad, lap) = fd_derivatives(&f, &z);
            let g2: f64 = grad.iter().map(|g| g * g).sum();
            let residual = ut + lap - g2;
            assert!(residual.abs() < 1e-6 * (1.0 + ut.abs() + lap.abs() + g2), "{residual}");
        }
    }

    #[test]
    fn burgers_spot_values_and_pde() {
        let d = 10;
        let mid = Array1::from_elem(d, 0.25);
        assert!((exact_burgers(mid.view(), 0.5, 0.5) - 0.5).abs() < 1e-15);
        assert!(exact_burgers(Array1::from_elem(d, 1e3).view(), 0.0, 0.5) < 1e-300);
        assert_eq!(exact_burgers(Array1::from_elem(d, -1e3).view(), 0.0, 0.5), 1.0);
        let v = exact_burgers(Array1::zeros(d).view(), 1.0, 0.5);
        assert!((v - 1.0 / (1.0 + (-5f64).exp())).abs() < 1e-15);
        assert!((v - 0.993307).abs() < 1e-6);

        let nu = 0.5;
        for z in random_points(3, 20, 4) {
            let f = |p: &[f64]| exact_burgers(ndarray::ArrayView1::from(&p[..4]), p[4], nu);
            let u = f(&z);
            let (ut, grad, lap) = fd_derivatives(&f, &z);
            let residual = ut + u * grad.iter().sum::<f64>() - nu * lap;
            assert!(residual.abs() < 1e-6, "{residual}");
        }
    }

    #[test]
    fn rosenbrock_cost() {
        let cost = HjbCost::Rosenbrock {
            c1: vec![1.0, 0.5],
            c2: vec![0.25, 2.0],
        };
        let x = array![1.0, 2.0, -1.0, 0.5];
        assert_eq!(cost.eval(x.view()), 1.0 + 0.25 * 4.0 + 0.5 * 2.25 + 2.0 * 0.25);
        assert!(cost.validate(4).is_ok());
        assert!(cost.validate(6).is_err());
        assert!(HjbCost::Quadratic.validate(3).is_ok());
    }

    #[test]
    fn reference_at_terminal_time_is_the_cost() {
        let cost = HjbCost::Rosenbrock {
            c1: vec![0.3, 0.9],
            c2: vec![0.7, 0.1],
        };
        let x = array![0.4, -0.3, 1.1, 0.2];
        let mut g = RngStream::new(1, StreamKey::new(0, 0, 0)).gaussian();
        let r = reference_hjb_rosenbrock(x.view(), 1.0, &cost, 10, &mut g).unwrap();
        assert!((r.value - cost.eval(x.view())).abs() < 1e-14);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn reference_matches_quadratic_closed_form() {
        // c1 = 0, c2 = 1 leaves g = Σ x_{2i}²: the quadratic solution on the
        // even coordinates, with d/2 in the logarithm
        let d = 6;
        let cost = HjbCost::Rosenbrock {
            c1: vec![0.0; d / 2],
            c2: vec![1.0; d / 2],
        };
        let x = array![0.3, -0.5, 1.0, 0.2, -0.7, 0.9];
        let t = 0.3;
        let mut g = RngStream::new(7, StreamKey::new(0, 0, 0)).gaussian();
        let r = reference_hjb_rosenbrock(x.view(), t, &cost, 100_000, &mut g).unwrap();
        let even = array![x[1], x[3], x[5]];
        let exact = exact_hjb_quadratic(even.view(), t, 1.0);
        assert!((r.value - exact).abs() < 3.0 * r.std_error, "{} vs {exact} ± {}", r.value, r.std_error);
    }

    #[test]
    fn reference_standard_error_shrinks_like_root_n() {
        let cost = HjbCost::Quadratic;
        let x = array![0.5, -0.5];
        let se = |n: usize| {
            let mut g = RngStream::new(11, StreamKey::new(0, 0, 0)).gaussian();
            reference_hjb_rosenbrock(x.view(), 0.2, &cost, n, &mut g).unwrap().std_error
        };
        let ratio = se(50_000) / se(100_000);
        assert!((ratio - 2f64.sqrt()).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn reference_reports_degenerate_exponents() {
        let cost = HjbCost::Rosenbrock {
            c1: vec![f64::INFINITY],
            c2: vec![0.0],
        };
        let x = array![1.0, 0.0];
        let mut g = RngStream::new(1, StreamKey::new(0, 0, 0)).gaussian();
        let err = reference_hjb_rosenbrock(x.view(), 0.5, &cost, 4, &mut g).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("max exponent")), "{err}");
    }
}
