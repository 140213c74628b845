use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::exact::{exact_burgers, HjbCost};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::smoothing::SmoothedFn;

/// Hard constraint `a(x, t)·net(x, t) + b(x, t)`, with `a` vanishing where
/// the data lives and `b` carrying the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    /// The raw network.
    None,
    /// `net·t + ‖x‖²`.
    FpInitial,
    /// `net·t + 1/(1 + exp(Σx / 2ν))`.
    BurgersInitial { nu: f64 },
    /// `net·(T − t) + g(x)`.
    HjbTerminal { horizon: f64, cost: HjbCost },
    /// `(1 − ‖x‖²)·net`.
    Ball,
}

impl Augmentation {
    pub fn is_hard_constraint(&self) -> bool {
        !matches!(self, Augmentation::None)
    }

    /// `(a, b)` at one input row `[x, t]` or `[x]`.
    pub fn factor_offset(&self, x: ArrayView1<f64>, t: Option<f64>) -> Result<(f64, f64)> {
        let time = || t.ok_or_else(|| Error::Input("augmentation needs a time coordinate".into()));
        Ok(match self {
            Augmentation::None => (1.0, 0.0),
            Augmentation::FpInitial => (time()?, x.dot(&x)),
            Augmentation::BurgersInitial { nu } => (time()?, exact_burgers(x, 0.0, *nu)),
            Augmentation::HjbTerminal { horizon, cost } => (horizon - time()?, cost.eval(x)),
            Augmentation::Ball => (1.0 - x.dot(&x), 0.0),
        })
    }

    pub fn apply(&self, network_value: f64, x: ArrayView1<f64>, t: Option<f64>) -> Result<f64> {
        let (a, b) = self.factor_offset(x, t)?;
        Ok(a * network_value + b)
    }

    /// Factors and offsets for every row of a packed input matrix whose
    /// first `dim` columns are space and optional last column is time.
    pub fn rows(&self, inputs: ArrayView2<f64>, dim: usize) -> Result<(Array1<f64>, Array1<f64>)> {
        let n = inputs.nrows();
        if inputs.ncols() != dim && inputs.ncols() != dim + 1 {
            return Err(Error::Shape(format!("{} input columns for dimension {dim}", inputs.ncols())));
        }
        let mut a = Array1::ones(n);
        let mut b = Array1::zeros(n);
        if matches!(self, Augmentation::None) {
            return Ok((a, b));
        }
        for (r, row) in inputs.rows().into_iter().enumerate() {
            let t = (row.len() > dim).then(|| row[dim]);
            let (ar, br) = self.factor_offset(row.slice(ndarray::s![..dim]), t)?;
            a[r] = ar;
            b[r] = br;
        }
        Ok((a, b))
    }
}

/// A network composed with its augmentation; this is the function that
/// gets smoothed.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedModel<'a> {
    pub net: &'a Mlp,
    pub augmentation: &'a Augmentation,
    pub dim: usize,
}

impl SmoothedFn for AugmentedModel<'_> {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn eval(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        let net = self.net.forward_batch(inputs)?;
        let (a, b) = self.augmentation.rows(inputs, self.dim)?;
        Ok(a * net + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::sampling::{RngStream, StreamKey};
    use ndarray::{array, Array2};

    fn random_net(d_in: usize) -> Mlp {
        let mut rng = RngStream::new(3, StreamKey::init()).rng();
        Mlp::new(&[d_in, 8, 1], Activation::Tanh, &mut rng).unwrap()
    }

    #[test]
    fn fp_initial_condition_holds_for_any_network() {
        let net = random_net(4);
        let model = AugmentedModel {
            net: &net,
            augmentation: &Augmentation::FpInitial,
            dim: 3,
        };
        let inputs = array![[0.3, -1.0, 2.0, 0.0], [1.0, 1.0, 1.0, 0.0]];
        let out = model.eval(inputs.view()).unwrap();
        assert_eq!(out[0], 0.09 + 1.0 + 4.0);
        assert_eq!(out[1], 3.0);
    }

    #[test]
    fn ball_vanishes_on_the_sphere() {
        let net = random_net(3);
        let model = AugmentedModel {
            net: &net,
            augmentation: &Augmentation::Ball,
            dim: 3,
        };
        let mut g = RngStream::new(1, StreamKey::test_set()).gaussian();
        let mut pts = Array2::from_shape_simple_fn((50, 3), || g.sample());
        for mut r in pts.rows_mut() {
            let n = r.dot(&r).sqrt();
            r /= n;
        }
        let out = model.eval(pts.view()).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-14), "{out}");
    }

    #[test]
    fn hjb_terminal_condition_is_the_cost() {
        let net = random_net(3);
        let cost = HjbCost::Rosenbrock {
            c1: vec![0.4],
            c2: vec![0.9],
        };
        let aug = Augmentation::HjbTerminal {
            horizon: 1.0,
            cost: cost.clone(),
        };
        let model = AugmentedModel {
            net: &net,
            augmentation: &aug,
            dim: 2,
        };
        let inputs = array![[0.5, -1.5, 1.0], [2.0, 0.1, 1.0]];
        let out = model.eval(inputs.view()).unwrap();
        for (r, o) in inputs.rows().into_iter().zip(&out) {
            assert_eq!(*o, cost.eval(r.slice(ndarray::s![..2])));
        }
    }

    #[test]
    fn burgers_initial_condition() {
        let aug = Augmentation::BurgersInitial { nu: 0.5 };
        let x = array![0.2, -0.7];
        let v = aug.apply(123.0, x.view(), Some(0.0)).unwrap();
        assert_eq!(v, 1.0 / (1.0 + (-0.5f64).exp()));
    }

    #[test]
    fn missing_time_is_an_input_error() {
        let x = array![0.2, -0.7];
        assert!(matches!(
            Augmentation::FpInitial.factor_offset(x.view(), None),
            Err(Error::Input(_))
        ));
        assert_eq!(Augmentation::None.apply(2.5, x.view(), None).unwrap(), 2.5);
    }
}
