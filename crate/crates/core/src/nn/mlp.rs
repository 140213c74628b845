use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand_core::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ParamGradient;
use crate::error::{ensure_finite, Error, Result};
use crate::sampling::uniform_f64;

/// Rows per evaluation chunk. Chunks are processed in parallel and reduced
/// in chunk order, so results do not depend on the worker count.
const CHUNK_ROWS: usize = 2048;

/// Hidden-layer nonlinearity. Every variant has a derivative expressible in
/// terms of its output, which is all the backward pass stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
    Softplus,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => fast_tanh(z),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
            Activation::Identity => z,
        }
    }

    fn apply_slice(self, z: &mut [f64]) {
        match self {
            Activation::Tanh => z.iter_mut().for_each(|v| *v = fast_tanh(*v)),
            Activation::Identity => {}
            _ => z.iter_mut().for_each(|v| *v = self.apply(*v)),
        }
    }

    /// d(activation)/dz written in terms of the activation output `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Softplus => -(-a).exp_m1(),
            Activation::Identity => 1.0,
        }
    }
}

/// `tanh` through a branch-free exponential, so the hidden-layer loop
/// vectorizes. Absolute error is a few ulp of 1 over the whole line.
#[inline(always)]
fn fast_tanh(z: f64) -> f64 {
    // exp(-2|z|) underflows below 1 ulp of 1 beyond |z| = 19
    let e = exp_nonpositive((-2.0 * z.abs()).max(-40.0));
    ((1.0 - e) / (1.0 + e)).copysign(z)
}

/// `exp(x)` for `x` in `[-40, 0]`: Cody-Waite reduction to `|r| <= ln2/2`
/// and a degree-12 Taylor polynomial.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const SHIFT: f64 = 6755399441055744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.93147180369123816490e-01;
    const LN2_LO: f64 = 1.90821492927058770002e-10;
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let k = t - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 479001600.0;
    for c in [
        1.0 / 39916800.0,
        1.0 / 3628800.0,
        1.0 / 362880.0,
        1.0 / 40320.0,
        1.0 / 5040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    // the low mantissa bits of `t` hold k in two's complement
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    p * scale
}

/// Dense feed-forward network `f(x; θ)` with a scalar output.
///
/// Weights of layer `l` have shape `(layer_dims[l + 1], layer_dims[l])`.
/// The activation is applied after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
}

/// Forward activations kept for a subsequent [`Mlp::backward_tape`].
pub struct Tape<'a> {
    inputs: ArrayView2<'a, f64>,
    /// Post-activation hidden states, one vector per chunk.
    hidden: Vec<Vec<Array2<f64>>>,
    outputs: Array1<f64>,
}

impl Tape<'_> {
    pub fn outputs(&self) -> &Array1<f64> {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: RngCore>(layer_dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(layer_dims, activation)?;
        for w in &mut model.weights {
            let (fan_out, fan_in) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| limit * (2.0 * uniform_f64(rng) - 1.0));
        }
        Ok(model)
    }

    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        validate_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut dims = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *dims.last().unwrap() {
                return Err(Error::Shape(format!(
                    "layer {l} expects {} inputs, previous layer has {}",
                    w.ncols(),
                    dims.last().unwrap()
                )));
            }
            if b.len() != w.nrows() {
                return Err(Error::Shape(format!(
                    "layer {l} has {} rows but {} biases",
                    w.nrows(),
                    b.len()
                )));
            }
            dims.push(w.nrows());
        }
        validate_dims(&dims)?;
        let model = Self {
            layer_dims: dims,
            weights,
            biases,
            activation,
        };
        ensure_finite(&model.flat_params(), "parameter")?;
        Ok(model)
    }

    /// Single affine layer `wᵀx + b`.
    pub fn affine(w: &[f64], b: f64) -> Result<Self> {
        let weights = Array2::from_shape_vec((1, w.len()), w.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::from_parts(vec![weights], vec![Array1::from_elem(1, b)], Activation::Identity)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights (row-major) before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        ensure_finite(flat, "parameter")?;
        let mut it = flat.iter();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().chain(b.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    pub(crate) fn weights_and_biases_mut(
        &mut self,
    ) -> impl Iterator<Item = (&mut Array2<f64>, &mut Array1<f64>)> {
        self.weights.iter_mut().zip(self.biases.iter_mut())
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "inputs have {} columns, model expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        if let Some(v) = inputs.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite network input {v}")));
        }
        Ok(())
    }

    /// Evaluates `f(x_j; θ)` for every row of `inputs`.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_inputs(&inputs)?;
        let parts: Vec<Array1<f64>> = chunk_ranges(inputs.nrows())
            .into_par_iter()
            .map(|(lo, hi)| {
                let (out, _) = self.forward_chunk(inputs.slice(s![lo..hi, ..]), false);
                out
            })
            .collect();
        Ok(concat(parts, inputs.nrows()))
    }

    /// Forward pass that keeps hidden activations for a later backward pass.
    pub fn forward_tape<'a>(&self, inputs: ArrayView2<'a, f64>) -> Result<Tape<'a>> {
        self.check_inputs(&inputs)?;
        let parts: Vec<(Array1<f64>, Vec<Array2<f64>>)> = chunk_ranges(inputs.nrows())
            .into_par_iter()
            .map(|(lo, hi)| self.forward_chunk(inputs.slice(s![lo..hi, ..]), true))
            .collect();
        let (outs, hidden): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        Ok(Tape {
            inputs,
            hidden,
            outputs: concat(outs, inputs.nrows()),
        })
    }

    /// `Σ_j c_j ∂f(x_j; θ)/∂θ` using activations stored in `tape`.
    pub fn backward_tape(&self, tape: &Tape<'_>, cotangents: &[f64]) -> Result<ParamGradient> {
        if cotangents.len() != tape.len() {
            return Err(Error::Shape(format!(
                "{} cotangents for {} rows",
                cotangents.len(),
                tape.len()
            )));
        }
        ensure_finite(cotangents, "cotangent")?;
        let ranges = chunk_ranges(tape.len());
        let parts: Vec<ParamGradient> = ranges
            .par_iter()
            .zip(tape.hidden.par_iter())
            .map(|(&(lo, hi), hidden)| {
                self.backward_chunk(tape.inputs.slice(s![lo..hi, ..]), hidden, &cotangents[lo..hi])
            })
            .collect();
        let mut total = ParamGradient::zeros_like(self);
        for p in &parts {
            total.add_assign(p);
        }
        Ok(total)
    }

    pub fn backward_params(&self, inputs: ArrayView2<f64>, cotangents: &[f64]) -> Result<ParamGradient> {
        if cotangents.len() != inputs.nrows() {
            return Err(Error::Shape(format!(
                "{} cotangents for {} input rows",
                cotangents.len(),
                inputs.nrows()
            )));
        }
        let tape = self.forward_tape(inputs)?;
        self.backward_tape(&tape, cotangents)
    }

    /// Hidden states are kept feature-major (`[width × rows]`) so bias
    /// broadcasts and activations run over contiguous memory.
    fn forward_chunk(&self, x: ArrayView2<f64>, keep: bool) -> (Array1<f64>, Vec<Array2<f64>>) {
        let last = self.weights.len() - 1;
        let rows = x.nrows();
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(last);
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = Array2::zeros((w.nrows(), rows));
            match hidden.last() {
                Some(a) => general_mat_mul(1.0, w, a, 0.0, &mut z),
                None => general_mat_mul(1.0, w, &x.t(), 0.0, &mut z),
            }
            for (mut zr, &bi) in z.rows_mut().into_iter().zip(b) {
                zr += bi;
            }
            if l == last {
                if !keep {
                    hidden.clear();
                }
                return (z.remove_axis(Axis(0)), hidden);
            }
            self.activation.apply_slice(z.as_slice_mut().expect("fresh arrays are contiguous"));
            hidden.push(z);
        }
        unreachable!("validated models have at least one layer")
    }

    fn backward_chunk(&self, x: ArrayView2<f64>, hidden: &[Array2<f64>], cot: &[f64]) -> ParamGradient {
        let n_layers = self.weights.len();
        let mut grad = ParamGradient::zeros_like(self);
        let mut delta = Array2::from_shape_vec((1, cot.len()), cot.to_vec()).unwrap();
        for l in (0..n_layers).rev() {
            match l {
                0 => general_mat_mul(1.0, &delta, &x, 0.0, &mut grad.weights[0]),
                _ => general_mat_mul(1.0, &delta, &hidden[l - 1].t(), 0.0, &mut grad.weights[l]),
            }
            grad.biases[l] = delta.sum_axis(Axis(1));
            if l > 0 {
                let mut next = self.weights[l].t().dot(&delta);
                let act = self.activation;
                Zip::from(&mut next)
                    .and(&hidden[l - 1])
                    .for_each(|d, &a| *d *= act.derivative_from_output(a));
                delta = next;
            }
        }
        grad
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config("an MLP needs at least input and output dims".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Config(format!("layer dims must be positive, got {dims:?}")));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::Config(format!(
            "output dimension must be 1, got {}",
            dims.last().unwrap()
        )));
    }
    Ok(())
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK_ROWS))
        .map(|c| (c * CHUNK_ROWS, ((c + 1) * CHUNK_ROWS).min(n)))
        .collect()
}

fn concat(parts: Vec<Array1<f64>>, n: usize) -> Array1<f64> {
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p.iter());
    }
    Array1::from(out)
}
