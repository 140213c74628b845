use ndarray::{Array1, Array2, ArrayView1};

use super::RngStream;
use crate::error::{Error, Result};

/// Collocation points: spatial coordinates plus optional times.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationBatch {
    pub spatial: Array2<f64>,
    pub time: Option<Array1<f64>>,
}

impl CollocationBatch {
    pub fn new(spatial: Array2<f64>, time: Option<Array1<f64>>) -> Result<Self> {
        if let Some(t) = &time {
            if t.len() != spatial.nrows() {
                return Err(Error::Shape(format!(
                    "{} times for {} points",
                    t.len(),
                    spatial.nrows()
                )));
            }
        }
        let finite = spatial.iter().chain(time.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Input("collocation points must be finite".into()));
        }
        Ok(Self { spatial, time })
    }

    /// `n` copies of one point.
    pub fn repeat(x: &[f64], t: Option<f64>, n: usize) -> Result<Self> {
        let spatial = Array2::from_shape_fn((n, x.len()), |(_, j)| x[j]);
        Self::new(spatial, t.map(|t| Array1::from_elem(n, t)))
    }

    pub fn len(&self) -> usize {
        self.spatial.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.spatial.ncols()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time.is_some()
    }

    pub fn x(&self, j: usize) -> ArrayView1<'_, f64> {
        self.spatial.row(j)
    }

    pub fn t(&self, j: usize) -> Option<f64> {
        self.time.as_ref().map(|t| t[j])
    }

    /// The points in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> CollocationBatch {
        CollocationBatch {
            spatial: self.spatial.slice(ndarray::s![range.clone(), ..]).to_owned(),
            time: self.time.as_ref().map(|t| t.slice(ndarray::s![range]).to_owned()),
        }
    }

    /// Input rows `[x, t]` (or `[x]`) as one matrix.
    pub fn rows(&self) -> Array2<f64> {
        match &self.time {
            Some(t) => ndarray::concatenate![
                ndarray::Axis(1),
                self.spatial,
                t.view().insert_axis(ndarray::Axis(1))
            ],
            None => self.spatial.clone(),
        }
    }
}

fn check_dims(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::Config("spatial dimension must be at least 1".into()));
    }
    Ok(())
}

/// `t ~ Unif(0, 1)`, `x ~ N(μt, (2 − t)·I)`: the Brownian-motion-with-drift
/// trajectory distribution of the Fokker–Planck problems.
pub fn sample_fp_anisotropic(rng: &RngStream, n: usize, d: usize, mu: &[f64]) -> Result<CollocationBatch> {
    check_dims(d)?;
    if mu.len() != d {
        return Err(Error::Shape(format!("drift has {} entries, dimension is {d}", mu.len())));
    }
    let mut g = rng.gaussian();
    let times: Vec<f64> = (0..n).map(|_| g.uniform()).collect();
    fill_trajectory(g, times, mu)
}

pub fn sample_fp_isotropic(rng: &RngStream, n: usize, d: usize) -> Result<CollocationBatch> {
    sample_fp_anisotropic(rng, n, d, &vec![1.0; d])
}

/// Trajectory samples at prescribed times.
pub fn sample_fp_conditional(rng: &RngStream, times: &[f64], mu: &[f64]) -> Result<CollocationBatch> {
    check_dims(mu.len())?;
    if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Input("trajectory times must lie in [0, 1]".into()));
    }
    fill_trajectory(rng.gaussian(), times.to_vec(), mu)
}

fn fill_trajectory<R: rand_core::RngCore>(
    mut g: super::GaussianSource<R>,
    times: Vec<f64>,
    mu: &[f64],
) -> Result<CollocationBatch> {
    let d = mu.len();
    let mut spatial = Array2::zeros((times.len(), d));
    for (mut row, &t) in spatial.rows_mut().into_iter().zip(&times) {
        let sd = (2.0 - t).sqrt();
        for (x, m) in row.iter_mut().zip(mu) {
            *x = m * t + sd * g.sample();
        }
    }
    CollocationBatch::new(spatial, Some(Array1::from(times)))
}

/// Drift vector with `μ_i ~ N(1, 1)`.
pub fn draw_drift(rng: &RngStream, d: usize) -> Vec<f64> {
    let mut g = rng.gaussian();
    (0..d).map(|_| 1.0 + g.sample()).collect()
}

/// `t ~ Unif[0, 1]`, `x ~ N(0, I)`.
pub fn sample_hjb(rng: &RngStream, n: usize, d: usize) -> Result<CollocationBatch> {
    check_dims(d)?;
    let mut g = rng.gaussian();
    let times: Array1<f64> = (0..n).map(|_| g.uniform()).collect();
    let spatial = Array2::from_shape_simple_fn((n, d), || g.sample());
    CollocationBatch::new(spatial, Some(times))
}

/// Uniform points in the closed unit ball: a Gaussian direction scaled by
/// `U^{1/d}`.
pub fn sample_unit_ball(rng: &RngStream, n: usize, d: usize) -> Result<CollocationBatch> {
    check_dims(d)?;
    let mut g = rng.gaussian();
    let mut spatial = Array2::zeros((n, d));
    for mut row in spatial.rows_mut() {
        let norm = loop {
            row.iter_mut().for_each(|v| *v = g.sample());
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        let radius = g.uniform().powf(1.0 / d as f64);
        row.mapv_inplace(|v| (v / norm * radius).clamp(-1.0, 1.0));
    }
    CollocationBatch::new(spatial, None)
}
