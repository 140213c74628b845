use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{RngStream, StreamKey};
use crate::error::{Error, Result};

/// Where a noise group was drawn from; used to detect accidental reuse of
/// one stream for two roles that must be independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseOrigin {
    pub seed: u64,
    pub key: StreamKey,
}

/// `K` i.i.d. `N(0, σ²I)` perturbations, either shared by every collocation
/// point or drawn independently per point.
#[derive(Debug, Clone)]
pub struct NoiseGroup {
    /// `[m, K, dim]`, with `m == 1` for a shared group.
    samples: Array3<f64>,
    sigma: f64,
    per_point: bool,
    origin: Option<NoiseOrigin>,
}

impl NoiseGroup {
    /// A group shared by all points, from explicit `[K × dim]` samples.
    pub fn from_samples(samples: Array2<f64>, sigma: f64) -> Result<Self> {
        let samples = samples.insert_axis(Axis(0));
        Self::build(samples, sigma, false, None)
    }

    /// One independent `[K × dim]` block per point.
    pub fn from_point_samples(samples: Array3<f64>, sigma: f64) -> Result<Self> {
        Self::build(samples, sigma, true, None)
    }

    fn build(samples: Array3<f64>, sigma: f64, per_point: bool, origin: Option<NoiseOrigin>) -> Result<Self> {
        let (_, k, dim) = samples.dim();
        validate(k, dim, sigma)?;
        if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("noise sample {v}")));
        }
        Ok(Self {
            samples,
            sigma,
            per_point,
            origin,
        })
    }

    pub fn k(&self) -> usize {
        self.samples.dim().1
    }

    pub fn dim(&self) -> usize {
        self.samples.dim().2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Number of points covered by per-point noise, `None` when shared.
    pub fn points(&self) -> Option<usize> {
        self.per_point.then(|| self.samples.dim().0)
    }

    pub fn origin(&self) -> Option<NoiseOrigin> {
        self.origin
    }

    /// The `[K × dim]` perturbations applied at point `j`.
    pub fn for_point(&self, j: usize) -> ArrayView2<'_, f64> {
        let idx = if self.per_point { j } else { 0 };
        self.samples.index_axis(Axis(0), idx)
    }

    pub fn samples(&self) -> &Array3<f64> {
        &self.samples
    }

    /// True when both groups are provably the same draw.
    pub fn shares_stream_with(&self, other: &NoiseGroup) -> bool {
        if std::ptr::eq(self.samples.as_ptr(), other.samples.as_ptr()) {
            return true;
        }
        matches!((self.origin, other.origin), (Some(a), Some(b)) if a == b)
    }

    /// Restriction to the points in `range`; a shared group is returned as is.
    pub fn select_points(&self, range: std::ops::Range<usize>) -> Result<NoiseGroup> {
        if !self.per_point {
            return Ok(self.clone());
        }
        if range.end > self.samples.dim().0 {
            return Err(Error::Shape(format!(
                "points {range:?} outside noise covering {}",
                self.samples.dim().0
            )));
        }
        Ok(NoiseGroup {
            samples: self.samples.slice(ndarray::s![range, .., ..]).to_owned(),
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> NoiseGroup {
        NoiseGroup {
            samples: Array3::zeros((0, 0, 0)),
            sigma: self.sigma,
            per_point: self.per_point,
            origin: self.origin,
        }
    }

    pub(crate) fn check_covers(&self, n_points: usize, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::Shape(format!(
                "noise has dimension {}, expected {dim}",
                self.dim()
            )));
        }
        if let Some(m) = self.points() {
            if m != n_points {
                return Err(Error::Shape(format!(
                    "per-point noise covers {m} points, batch has {n_points}"
                )));
            }
        }
        Ok(())
    }
}

fn validate(k: usize, dim: usize, sigma: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("noise sample count K must be positive".into()));
    }
    if dim == 0 {
        return Err(Error::Config("noise dimension must be positive".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// `n_groups` mutually independent groups shared across points. Group `i`
/// is drawn from the stream whose group slot is `rng.key.group + i`.
pub fn draw_noise_groups(rng: &RngStream, n_groups: usize, k: usize, dim: usize, sigma: f64) -> Result<Vec<NoiseGroup>> {
    validate(k, dim, sigma)?;
    if n_groups == 0 {
        return Err(Error::Config("at least one noise group is required".into()));
    }
    (0..n_groups as u64)
        .map(|i| {
            let stream = rng.with_key(StreamKey {
                group: rng.key.group + i,
                ..rng.key
            });
            let mut g = stream.gaussian();
            let mut samples = Array3::zeros((1, k, dim));
            g.fill(samples.as_slice_mut().unwrap(), sigma);
            Ok(NoiseGroup {
                samples,
                sigma,
                per_point: false,
                origin: Some(NoiseOrigin {
                    seed: stream.seed,
                    key: stream.key,
                }),
            })
        })
        .collect()
}

/// Independent noise per point: point `j` uses stream `(base.epoch, j, base.group)`.
pub fn draw_point_noise(seed: u64, base: StreamKey, n_points: usize, k: usize, dim: usize, sigma: f64) -> Result<NoiseGroup> {
    draw_point_noise_range(seed, base, 0..n_points, k, dim, sigma)
}

/// The points `range` of [`draw_point_noise`], bit-identical to slicing the
/// full draw.
pub fn draw_point_noise_range(
    seed: u64,
    base: StreamKey,
    range: std::ops::Range<usize>,
    k: usize,
    dim: usize,
    sigma: f64,
) -> Result<NoiseGroup> {
    validate(k, dim, sigma)?;
    let mut samples = Array3::zeros((range.len(), k, dim));
    for (j, mut block) in range.zip(samples.axis_iter_mut(Axis(0))) {
        let stream = RngStream::new(seed, StreamKey { point: j as u64, ..base });
        stream
            .gaussian()
            .fill(block.as_slice_mut().unwrap(), sigma);
    }
    Ok(NoiseGroup {
        samples,
        sigma,
        per_point: true,
        origin: Some(NoiseOrigin {
            seed,
            key: StreamKey {
                point: StreamKey::WHOLE_BATCH,
                ..base
            },
        }),
    })
}

/// Spatial noise plus, for time-dependent problems, independent temporal noise.
#[derive(Debug, Clone)]
pub struct NoisePair {
    pub x: NoiseGroup,
    pub t: Option<NoiseGroup>,
}

impl NoisePair {
    pub fn spatial(x: NoiseGroup) -> Self {
        Self { x, t: None }
    }
}

/// The independent noise groups consumed by one training step. Logical group
/// `g` draws its spatial noise from stream group `2g` and its temporal noise
/// from `2g + 1`.
pub fn draw_training_noise(
    seed: u64,
    epoch: u64,
    n_points: usize,
    n_groups: usize,
    k: usize,
    dim: usize,
    sigma_x: f64,
    sigma_t: Option<f64>,
) -> Result<Vec<NoisePair>> {
    (0..n_groups as u64)
        .map(|g| {
            let x = draw_point_noise(seed, StreamKey::new(epoch, 0, 2 * g), n_points, k, dim, sigma_x)?;
            let t = sigma_t
                .map(|s| draw_point_noise(seed, StreamKey::new(epoch, 0, 2 * g + 1), n_points, k, 1, s))
                .transpose()?;
            Ok(NoisePair { x, t })
        })
        .collect()
}
