//! Dense MLP, parameter gradients and the Adam optimizer.
//!
//! Only parameter derivatives are provided. Input derivatives of the
//! network are never backpropagated; the smoothing estimators replace them.

mod adam;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Activation, Mlp, Tape};

use ndarray::{Array1, Array2, Zip};

/// Gradient of a scalar with respect to every parameter of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGradient {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            weights: model.weights().iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: model.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn is_congruent(&self, model: &Mlp) -> bool {
        self.weights.len() == model.weights().len()
            && self.weights.iter().zip(model.weights()).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(model.biases()).all(|(a, b)| a.len() == b.len())
    }

    pub fn add_assign(&mut self, other: &ParamGradient) {
        self.scaled_add(1.0, other);
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &ParamGradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(alpha, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.weights.iter_mut().for_each(|w| *w *= alpha);
        self.biases.iter_mut().for_each(|b| *b *= alpha);
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    /// Same ordering as [`Mlp::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm_sq(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &ParamGradient) -> f64 {
        let w: f64 = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + x * y))
            .sum();
        let b: f64 = self.biases.iter().zip(&other.biases).map(|(a, b)| a.dot(b)).sum();
        w + b
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}
