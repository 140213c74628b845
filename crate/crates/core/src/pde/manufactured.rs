use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `u(x) = (1 − ‖x‖²) Σ_{i<d} c_i sin θ_i` with
/// `θ_i = x_i + cos x_{i+1} + x_{i+1} cos x_i`.
///
/// Vanishes on the unit sphere. Each `θ_i` touches two neighbouring
/// coordinates, so value, gradient and Laplacian are all `O(d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedSolution {
    coeffs: Vec<f64>,
}

/// Value, gradient and Laplacian at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub gradient: Array1<f64>,
    pub laplacian: f64,
}

impl ManufacturedSolution {
    /// `coeffs` has `d − 1` entries.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Config("manufactured solution needs dimension at least 2".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("manufactured coefficients must be finite".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len() + 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn value(&self, x: ArrayView1<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let s: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (a, b) = (x[i], x[i + 1]);
                c * (a + b.cos() + b * a.cos()).sin()
            })
            .sum();
        (1.0 - x.dot(&x)) * s
    }

    pub fn jet(&self, x: ArrayView1<f64>) -> Jet {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        let mut s = 0.0;
        let mut grad_s = Array1::zeros(d);
        let mut lap_s = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            let (a, b) = (x[i], x[i + 1]);
            let (sa, ca) = a.sin_cos();
            let (sb, cb) = b.sin_cos();
            let (st, ct) = (a + cb + b * ca).sin_cos();
            let da = 1.0 - b * sa;
            let db = ca - sb;
            let dda = -b * ca;
            let ddb = -cb;
            s += c * st;
            grad_s[i] += c * ct * da;
            grad_s[i + 1] += c * ct * db;
            lap_s += c * (-st * (da * da + db * db) + ct * (dda + ddb));
        }
        let p = 1.0 - x.dot(&x);
        let gradient = &grad_s * p - &(&x * (2.0 * s));
        let laplacian = -2.0 * d as f64 * s - 4.0 * x.dot(&grad_s) + p * lap_s;
        Jet {
            value: p * s,
            gradient,
            laplacian,
        }
    }

    /// `Δu + u − u³`.
    pub fn allen_cahn_forcing(&self, x: ArrayView1<f64>) -> f64 {
        let j = self.jet(x);
        j.laplacian + j.value - j.value.powi(3)
    }

    /// `Δu + sin u`.
    pub fn sine_gordon_forcing(&self, x: ArrayView1<f64>) -> f64 {
        let j = self.jet(x);
        j.laplacian + j.value.sin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_unit_ball, RngStream, StreamKey};
    use ndarray::array;
    use std::ops::{Add, Mul, Sub};

    /// `a + b ε₁ + c ε₂ + e ε₁ε₂` with `ε₁² = ε₂² = 0`; seeding both
    /// infinitesimal parts of one coordinate gives exact first and second
    /// partials in that coordinate.
    #[derive(Debug, Clone, Copy)]
    struct HyperDual {
        a: f64,
        b: f64,
        c: f64,
        e: f64,
    }

    impl HyperDual {
        fn constant(a: f64) -> Self {
            Self { a, b: 0.0, c: 0.0, e: 0.0 }
        }

        fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
            Self {
                a: f,
                b: df * self.b,
                c: df * self.c,
                e: df * self.e + ddf * self.b * self.c,
            }
        }

        fn sin(self) -> Self {
            let (s, c) = self.a.sin_cos();
            self.chain(s, c, -s)
        }

        fn cos(self) -> Self {
            let (s, c) = self.a.sin_cos();
            self.chain(c, -s, -c)
        }
    }

    impl Add for HyperDual {
        type Output = Self;
        fn add(self, o: Self) -> Self {
            Self {
                a: self.a + o.a,
                b: self.b + o.b,
                c: self.c + o.c,
                e: self.e + o.e,
            }
        }
    }

    impl Sub for HyperDual {
        type Output = Self;
        fn sub(self, o: Self) -> Self {
            Self {
                a: self.a - o.a,
                b: self.b - o.b,
                c: self.c - o.c,
                e: self.e - o.e,
            }
        }
    }

    impl Mul for HyperDual {
        type Output = Self;
        fn mul(self, o: Self) -> Self {
            Self {
                a: self.a * o.a,
                b: self.a * o.b + self.b * o.a,
                c: self.a * o.c + self.c * o.a,
                e: self.a * o.e + self.b * o.c + self.c * o.b + self.e * o.a,
            }
        }
    }

    fn value_hd(coeffs: &[f64], x: &[HyperDual]) -> HyperDual {
        let mut s = HyperDual::constant(0.0);
        let mut norm = HyperDual::constant(0.0);
        for v in x {
            norm = norm + *v * *v;
        }
        for (i, c) in coeffs.iter().enumerate() {
            let theta = x[i] + x[i + 1].cos() + x[i + 1] * x[i].cos();
            s = s + HyperDual::constant(*c) * theta.sin();
        }
        (HyperDual::constant(1.0) - norm) * s
    }

    /// Value, gradient and Laplacian from `d` hyper-dual evaluations.
    fn jet_oracle(coeffs: &[f64], x: &[f64]) -> (f64, Vec<f64>, f64) {
        let mut grad = vec![0.0; x.len()];
        let mut lap = 0.0;
        let mut value = 0.0;
        for k in 0..x.len() {
            let seeded: Vec<HyperDual> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let s = if i == k { 1.0 } else { 0.0 };
                    HyperDual { a: v, b: s, c: s, e: 0.0 }
                })
                .collect();
            let r = value_hd(coeffs, &seeded);
            value = r.a;
            grad[k] = r.b;
            lap += r.e;
        }
        (value, grad, lap)
    }

    fn coeffs(seed: u64, d: usize) -> Vec<f64> {
        let mut g = RngStream::new(seed, StreamKey::new(0, 0, 9)).gaussian();
        (0..d - 1).map(|_| g.sample()).collect()
    }

    #[test]
    fn spot_values() {
        let u = ManufacturedSolution::new(vec![1.0]).unwrap();
        assert!((u.value(array![0.0, 0.0].view()) - 1f64.sin()).abs() < 1e-15);
        assert!((u.value(array![0.0, 0.0].view()) - 0.841471).abs() < 1e-6);
        let c = coeffs(1, 5);
        let u = ManufacturedSolution::new(c).unwrap();
        let mut x: Array1<f64> = array![0.3, -0.2, 0.5, 0.1, -0.7];
        x /= x.dot(&x).sqrt();
        assert!(u.value(x.view()).abs() < 1e-15);
        assert!(ManufacturedSolution::new(vec![]).is_err());
    }

    #[test]
    fn jet_matches_hyper_dual_oracle() {
        let d = 10;
        let c = coeffs(2, d);
        let u = ManufacturedSolution::new(c.clone()).unwrap();
        let pts = sample_unit_ball(&RngStream::new(3, StreamKey::test_set()), 50, d).unwrap();
        for j in 0..pts.len() {
            let x = pts.x(j);
            let jet = u.jet(x);
            let (v, g, l) = jet_oracle(&c, x.as_slice().unwrap());
            assert!((jet.value - v).abs() <= 1e-12 * (1.0 + v.abs()));
            assert!((jet.value - u.value(x)).abs() <= 1e-13);
            for (a, b) in jet.gradient.iter().zip(&g) {
                assert!((a - b).abs() <= 1e-11 * (1.0 + b.abs()), "{a} vs {b}");
            }
            assert!((jet.laplacian - l).abs() <= 1e-11 * (1.0 + l.abs()), "{} vs {l}", jet.laplacian);
        }
    }

    #[test]
    fn jet_matches_central_differences() {
        let d = 6;
        let c = coeffs(4, d);
        let u = ManufacturedSolution::new(c).unwrap();
        let pts = sample_unit_ball(&RngStream::new(5, StreamKey::test_set()), 20, d).unwrap();
        let h = 1e-5;
        for j in 0..pts.len() {
            let x = pts.x(j).to_owned();
            let jet = u.jet(x.view());
            let mut lap = 0.0;
            for i in 0..d {
                let mut p = x.clone();
                p[i] += h;
                let up = u.value(p.view());
                p[i] -= 2.0 * h;
                let down = u.value(p.view());
                let g = (up - down) / (2.0 * h);
                assert!((g - jet.gradient[i]).abs() <= 1e-6 * (1.0 + g.abs()));
                // a wider step for the second difference keeps rounding small
                let h2 = 1e-3;
                let mut q = x.clone();
                q[i] += h2;
                let a = u.value(q.view());
                q[i] -= 2.0 * h2;
                let b = u.value(q.view());
                lap += (a + b - 2.0 * u.value(x.view())) / (h2 * h2);
            }
            assert!((lap - jet.laplacian).abs() <= 1e-5 * (1.0 + lap.abs()), "{lap} vs {}", jet.laplacian);
        }
    }

    #[test]
    fn forcing_terms_reproduce_operators() {
        let d = 10;
        let c = coeffs(6, d);
        let u = ManufacturedSolution::new(c.clone()).unwrap();
        let pts = sample_unit_ball(&RngStream::new(7, StreamKey::test_set()), 50, d).unwrap();
        for j in 0..pts.len() {
            let x = pts.x(j);
            let (v, _, l) = jet_oracle(&c, x.as_slice().unwrap());
            let ac = l + v - v * v * v;
            let sg = l + v.sin();
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            assert!(rel(u.allen_cahn_forcing(x), ac) <= 1e-10);
            assert!(rel(u.sine_gordon_forcing(x), sg) <= 1e-10);
        }
    }
}
