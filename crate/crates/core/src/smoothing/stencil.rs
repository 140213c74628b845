use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};

use super::{Request, SmoothedEval};
use crate::error::{Error, Result};
use crate::sampling::{CollocationBatch, NoisePair};

/// Where the unperturbed-in-space evaluation of the second difference sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Center {
    None,
    /// `f(x)` once per point (no time variable).
    Single,
    /// `f(x, t + τ_i)` per sample, so the second difference in `x` never
    /// sees a time increment.
    PerSample,
}

/// Packed perturbed inputs for a batch of points.
///
/// Rows of point `j` start at `j * rows_per_point` and are laid out as
/// `[plus; K] [minus; K] [center; 0, 1 or K] [time-backward; K]` where
///
/// * plus  = `(x + δ, t + τ)`
/// * minus = `(x − δ, t + τ)`
/// * center = `(x, t + τ)` or `x`
/// * time-backward = `(x + δ, t − τ)`
///
/// Sections that the request does not need are absent.
#[derive(Debug, Clone)]
pub struct Stencil {
    inputs: Array2<f64>,
    n_points: usize,
    k: usize,
    dim: usize,
    sigma_x: f64,
    sigma_t: Option<f64>,
    antithetic: bool,
    request: Request,
    minus: bool,
    center: Center,
    backward_t: bool,
}

impl Stencil {
    pub fn build(points: &CollocationBatch, noise: &NoisePair, antithetic: bool, request: Request) -> Result<Self> {
        let n = points.len();
        let dim = points.dim();
        noise.x.check_covers(n, dim)?;
        let time = points.is_time_dependent();
        let noise_t = match (time, &noise.t) {
            (true, Some(t)) => {
                t.check_covers(n, 1)?;
                if t.k() != noise.x.k() {
                    return Err(Error::Shape(format!(
                        "temporal noise has K = {}, spatial noise K = {}",
                        t.k(),
                        noise.x.k()
                    )));
                }
                if noise.x.shares_stream_with(t) {
                    return Err(Error::Contract(
                        "spatial and temporal noise must come from independent streams".into(),
                    ));
                }
                Some(t)
            }
            (true, None) => {
                return Err(Error::Contract("time-dependent points need temporal noise".into()));
            }
            (false, _) => None,
        };
        if request.time_derivative && !time {
            return Err(Error::Input("time derivative requested for time-independent points".into()));
        }

        let k = noise.x.k();
        let second = request.laplacian || request.hessian;
        let minus = antithetic && (request.gradient || second);
        let center = match (antithetic && second, time) {
            (false, _) => Center::None,
            (true, false) => Center::Single,
            (true, true) => Center::PerSample,
        };
        let backward_t = antithetic && request.time_derivative;
        let mut stencil = Self {
            inputs: Array2::zeros((0, 0)),
            n_points: n,
            k,
            dim,
            sigma_x: noise.x.sigma(),
            sigma_t: noise_t.map(|t| t.sigma()),
            antithetic,
            request,
            minus,
            center,
            backward_t,
        };

        let cols = dim + usize::from(time);
        let rpp = stencil.rows_per_point();
        let mut inputs = Array2::zeros((n * rpp, cols));
        for j in 0..n {
            let x = points.x(j);
            let dx = noise.x.for_point(j);
            let t = points.t(j);
            let dt = noise_t.map(|g| g.for_point(j));
            let mut r = j * rpp;
            let mut put = |row: usize, sign: f64, i: usize, tsign: f64| {
                let mut out = inputs.row_mut(row);
                for c in 0..dim {
                    out[c] = x[c] + sign * dx[[i, c]];
                }
                if let (Some(t), Some(dt)) = (t, dt) {
                    out[dim] = t + tsign * dt[[i, 0]];
                }
            };
            for i in 0..k {
                put(r + i, 1.0, i, 1.0);
            }
            r += k;
            if minus {
                for i in 0..k {
                    put(r + i, -1.0, i, 1.0);
                }
                r += k;
            }
            match center {
                Center::None => {}
                Center::Single => {
                    put(r, 0.0, 0, 0.0);
                    r += 1;
                }
                Center::PerSample => {
                    for i in 0..k {
                        put(r + i, 0.0, i, 1.0);
                    }
                    r += k;
                }
            }
            if backward_t {
                for i in 0..k {
                    put(r + i, 1.0, i, -1.0);
                }
            }
        }
        stencil.inputs = inputs;
        Ok(stencil)
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn rows_per_point(&self) -> usize {
        let k = self.k;
        let center = match self.center {
            Center::None => 0,
            Center::Single => 1,
            Center::PerSample => k,
        };
        k + if self.minus { k } else { 0 } + center + if self.backward_t { k } else { 0 }
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn request(&self) -> Request {
        self.request
    }

    fn center_offset(&self) -> usize {
        self.k * (1 + usize::from(self.minus))
    }

    fn backward_t_offset(&self) -> usize {
        self.center_offset()
            + match self.center {
                Center::None => 0,
                Center::Single => 1,
                Center::PerSample => self.k,
            }
    }

    /// Per-sample weight of the second difference, `(‖δ‖² − σ²d) / σ⁴`,
    /// halved in the antithetic form.
    fn laplacian_weight(&self, delta: ArrayView1<f64>) -> f64 {
        let s2 = self.sigma_x * self.sigma_x;
        let w = (delta.dot(&delta) - s2 * self.dim as f64) / (s2 * s2);
        if self.antithetic {
            0.5 * w
        } else {
            w
        }
    }

    /// Per-sample second difference `f₊ + f₋ − 2f₀` (antithetic) or `f₊`.
    fn second_difference(&self, out: &[f64], i: usize) -> f64 {
        if !self.antithetic {
            return out[i];
        }
        let center = match self.center {
            Center::PerSample => out[self.center_offset() + i],
            _ => out[self.center_offset()],
        };
        out[i] + out[self.k + i] - 2.0 * center
    }

    /// Turns network outputs on the stencil rows into estimates.
    pub fn estimate(&self, outputs: &Array1<f64>, noise: &NoisePair) -> Result<SmoothedEval> {
        let rpp = self.rows_per_point();
        if outputs.len() != self.n_points * rpp {
            return Err(Error::Shape(format!(
                "{} outputs for a stencil of {} rows",
                outputs.len(),
                self.n_points * rpp
            )));
        }
        let (n, k, d) = (self.n_points, self.k, self.dim);
        let kf = k as f64;
        let s2 = self.sigma_x * self.sigma_x;
        let req = self.request;
        let mut value = Array1::zeros(n);
        let mut gradient = req.gradient.then(|| Array2::zeros((n, d)));
        let mut laplacian = req.laplacian.then(|| Array1::zeros(n));
        let mut hessian = req.hessian.then(|| Array3::zeros((n, d, d)));
        let mut time_derivative = req.time_derivative.then(|| Array1::zeros(n));
        let out = outputs.as_slice().expect("contiguous outputs");

        for j in 0..n {
            let o = &out[j * rpp..(j + 1) * rpp];
            let dx = noise.x.for_point(j);
            value[j] = o[..k].iter().sum::<f64>() / kf;

            if let Some(g) = gradient.as_mut() {
                let mut row = g.row_mut(j);
                for i in 0..k {
                    let w = if self.antithetic {
                        (o[i] - o[k + i]) / (2.0 * s2)
                    } else {
                        o[i] / s2
                    };
                    row.scaled_add(w / kf, &dx.row(i));
                }
            }
            if req.laplacian || req.hessian {
                let mut lap = 0.0;
                for i in 0..k {
                    let delta = dx.row(i);
                    let diff = self.second_difference(o, i);
                    lap += self.laplacian_weight(delta) * diff;
                    if let Some(h) = hessian.as_mut() {
                        let scale = if self.antithetic { 0.5 } else { 1.0 } * diff / (s2 * s2 * kf);
                        let mut hj = h.index_axis_mut(ndarray::Axis(0), j);
                        for a in 0..d {
                            for b in 0..d {
                                let m = delta[a] * delta[b] - if a == b { s2 } else { 0.0 };
                                hj[[a, b]] += scale * m;
                            }
                        }
                    }
                }
                if let Some(l) = laplacian.as_mut() {
                    l[j] = lap / kf;
                }
            }
            if let Some(ut) = time_derivative.as_mut() {
                let dt = noise.t.as_ref().expect("checked at build").for_point(j);
                let st2 = self.sigma_t.expect("checked at build").powi(2);
                let off = self.backward_t_offset();
                let mut acc = 0.0;
                for i in 0..k {
                    let tau = dt[[i, 0]];
                    acc += if self.antithetic {
                        tau * (o[i] - o[off + i]) / (2.0 * st2)
                    } else {
                        tau * o[i] / st2
                    };
                }
                ut[j] = acc / kf;
            }
        }
        Ok(SmoothedEval {
            value,
            gradient,
            laplacian,
            hessian,
            time_derivative,
            outputs: outputs.clone(),
        })
    }

    /// Per-row cotangents `∂L/∂f(row)` of a scalar `L` whose partial
    /// derivatives with respect to the estimates are `cot`. Every estimator
    /// is linear in the outputs, so this is exact.
    pub fn row_cotangents(&self, noise: &NoisePair, cot: &EstimateCotangent) -> Result<Array1<f64>> {
        let (n, k, d) = (self.n_points, self.k, self.dim);
        cot.check(n, d, self.request)?;
        let rpp = self.rows_per_point();
        let kf = k as f64;
        let s2 = self.sigma_x * self.sigma_x;
        let mut rows = Array1::zeros(n * rpp);
        let r = rows.as_slice_mut().expect("fresh array");
        for j in 0..n {
            let rj = &mut r[j * rpp..(j + 1) * rpp];
            let dx = noise.x.for_point(j);
            if let Some(cv) = &cot.value {
                let c = cv[j] / kf;
                rj[..k].iter_mut().for_each(|v| *v += c);
            }
            if let Some(cg) = &cot.gradient {
                let cgj = cg.row(j);
                for i in 0..k {
                    let proj = dx.row(i).dot(&cgj) / kf;
                    if self.antithetic {
                        rj[i] += proj / (2.0 * s2);
                        rj[k + i] -= proj / (2.0 * s2);
                    } else {
                        rj[i] += proj / s2;
                    }
                }
            }
            if let Some(cl) = &cot.laplacian {
                let c = cl[j] / kf;
                let off = self.center_offset();
                for i in 0..k {
                    let w = c * self.laplacian_weight(dx.row(i));
                    rj[i] += w;
                    if self.antithetic {
                        rj[k + i] += w;
                        match self.center {
                            Center::PerSample => rj[off + i] -= 2.0 * w,
                            _ => rj[off] -= 2.0 * w,
                        }
                    }
                }
            }
            if let Some(ct) = &cot.time_derivative {
                let dt = noise.t.as_ref().expect("checked at build").for_point(j);
                let st2 = self.sigma_t.expect("checked at build").powi(2);
                let c = ct[j] / kf;
                let off = self.backward_t_offset();
                for i in 0..k {
                    let tau = dt[[i, 0]];
                    if self.antithetic {
                        rj[i] += c * tau / (2.0 * st2);
                        rj[off + i] -= c * tau / (2.0 * st2);
                    } else {
                        rj[i] += c * tau / st2;
                    }
                }
            }
        }
        Ok(rows)
    }
}

/// Partial derivatives of a scalar with respect to each requested estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateCotangent {
    pub value: Option<Array1<f64>>,
    pub gradient: Option<Array2<f64>>,
    pub laplacian: Option<Array1<f64>>,
    pub time_derivative: Option<Array1<f64>>,
}

impl EstimateCotangent {
    pub fn zeros(n: usize, dim: usize, request: Request) -> Self {
        Self {
            value: request.value.then(|| Array1::zeros(n)),
            gradient: request.gradient.then(|| Array2::zeros((n, dim))),
            laplacian: request.laplacian.then(|| Array1::zeros(n)),
            time_derivative: request.time_derivative.then(|| Array1::zeros(n)),
        }
    }

    fn check(&self, n: usize, d: usize, request: Request) -> Result<()> {
        let vec_ok = |v: &Option<Array1<f64>>, wanted: bool, what: &str| -> Result<()> {
            match v {
                Some(_) if !wanted => Err(Error::Contract(format!("{what} cotangent for an estimate that was not requested"))),
                Some(a) if a.len() != n => Err(Error::Shape(format!("{what} cotangent has {} entries, expected {n}", a.len()))),
                _ => Ok(()),
            }
        };
        // the plain Monte Carlo mean is always available
        vec_ok(&self.value, true, "value")?;
        vec_ok(&self.laplacian, request.laplacian, "laplacian")?;
        vec_ok(&self.time_derivative, request.time_derivative, "time-derivative")?;
        match &self.gradient {
            Some(_) if !request.gradient => Err(Error::Contract("gradient cotangent for an estimate that was not requested".into())),
            Some(g) if g.dim() != (n, d) => Err(Error::Shape(format!("gradient cotangent has shape {:?}, expected ({n}, {d})", g.dim()))),
            _ => Ok(()),
        }
    }
}
