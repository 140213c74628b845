use ndarray::Array1;

use crate::smoothing::{EstimateCotangent, Request, SmoothedEval};

/// One factor of the squared residual, written as a function of estimates
/// taken from `arity` slots. Slot 0 carries every linear term; the other
/// slots only feed the nonlinearity, so they request less.
///
/// The loss layout decides which noise group fills each slot: all slots
/// share one group except under the fully debiased mode.
#[derive(Debug, Clone)]
pub(crate) enum Factor<'a> {
    /// `û − target`.
    Boundary { targets: &'a Array1<f64> },
    /// `û_t − ½Δû + Σ μ_i ∂_i û`.
    FokkerPlanck { drift: &'a [f64] },
    /// `û_t + Δû − ⟨∇û, ∇û'⟩`.
    Hjb,
    /// `û_t + û·Σ ∂_i û' − νΔû`.
    Burgers { nu: f64 },
    /// `Δû + û − û·û'·û'' − g`.
    AllenCahn { forcing: Array1<f64> },
    /// `Δû + sin û − g`.
    SineGordon { forcing: Array1<f64> },
}

impl Factor<'_> {
    pub(crate) fn arity(&self) -> usize {
        match self {
            Factor::Hjb | Factor::Burgers { .. } => 2,
            Factor::AllenCahn { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn request(&self, slot: usize) -> Request {
        let primary = slot == 0;
        match self {
            Factor::Boundary { .. } => Request::VALUE,
            Factor::FokkerPlanck { .. } => Request::TIME_DERIVATIVE
                .union(Request::LAPLACIAN)
                .union(Request::GRADIENT),
            Factor::Hjb if primary => Request::TIME_DERIVATIVE
                .union(Request::LAPLACIAN)
                .union(Request::GRADIENT),
            Factor::Hjb => Request::GRADIENT,
            Factor::Burgers { .. } if primary => Request::VALUE
                .union(Request::TIME_DERIVATIVE)
                .union(Request::LAPLACIAN),
            Factor::Burgers { .. } => Request::GRADIENT,
            Factor::AllenCahn { .. } if primary => Request::VALUE.union(Request::LAPLACIAN),
            Factor::AllenCahn { .. } => Request::VALUE,
            Factor::SineGordon { .. } => Request::VALUE.union(Request::LAPLACIAN),
        }
    }

    /// Factor value at local point `j` (global index `g`); `e[s]` holds the
    /// estimates of slot `s`.
    pub(crate) fn value(&self, j: usize, g: usize, e: &[&SmoothedEval]) -> f64 {
        let lap = |s: usize| e[s].laplacian.as_ref().expect("requested")[j];
        let ut = |s: usize| e[s].time_derivative.as_ref().expect("requested")[j];
        let grad = |s: usize| e[s].gradient.as_ref().expect("requested").row(j);
        match self {
            Factor::Boundary { targets } => e[0].value[j] - targets[g],
            Factor::FokkerPlanck { drift } => {
                let adv: f64 = grad(0).iter().zip(drift.iter()).map(|(a, m)| a * m).sum();
                ut(0) - 0.5 * lap(0) + adv
            }
            Factor::Hjb => ut(0) + lap(0) - grad(0).dot(&grad(1)),
            Factor::Burgers { nu } => ut(0) + e[0].value[j] * grad(1).sum() - nu * lap(0),
            Factor::AllenCahn { forcing } => {
                let u0 = e[0].value[j];
                lap(0) + u0 - u0 * e[1].value[j] * e[2].value[j] - forcing[g]
            }
            Factor::SineGordon { forcing } => lap(0) + e[0].value[j].sin() - forcing[g],
        }
    }

    /// Adds `w · ∂factor/∂estimate` into the cotangent of the group that
    /// fills each slot.
    pub(crate) fn backward(
        &self,
        j: usize,
        e: &[&SmoothedEval],
        slot_groups: &[usize],
        w: f64,
        cots: &mut [EstimateCotangent],
    ) {
        let g0 = slot_groups[0];
        fn add(v: &mut Option<Array1<f64>>, j: usize, x: f64) {
            v.as_mut().expect("requested")[j] += x;
        }
        match self {
            Factor::Boundary { .. } => add(&mut cots[g0].value, j, w),
            Factor::FokkerPlanck { drift } => {
                let c = &mut cots[g0];
                add(&mut c.time_derivative, j, w);
                add(&mut c.laplacian, j, -0.5 * w);
                let mut row = c.gradient.as_mut().expect("requested").row_mut(j);
                for (r, m) in row.iter_mut().zip(drift.iter()) {
                    *r += w * m;
                }
            }
            Factor::Hjb => {
                let g1 = slot_groups[1];
                let grad = |s: usize| e[s].gradient.as_ref().expect("requested").row(j);
                add(&mut cots[g0].time_derivative, j, w);
                add(&mut cots[g0].laplacian, j, w);
                cots[g0]
                    .gradient
                    .as_mut()
                    .expect("requested")
                    .row_mut(j)
                    .scaled_add(-w, &grad(1));
                cots[g1]
                    .gradient
                    .as_mut()
                    .expect("requested")
                    .row_mut(j)
                    .scaled_add(-w, &grad(0));
            }
            Factor::Burgers { nu } => {
                let g1 = slot_groups[1];
                let sum_grad = e[1].gradient.as_ref().expect("requested").row(j).sum();
                let u0 = e[0].value[j];
                add(&mut cots[g0].time_derivative, j, w);
                add(&mut cots[g0].laplacian, j, -nu * w);
                add(&mut cots[g0].value, j, w * sum_grad);
                cots[g1]
                    .gradient
                    .as_mut()
                    .expect("requested")
                    .row_mut(j)
                    .mapv_inplace(|v| v + w * u0);
            }
            Factor::AllenCahn { .. } => {
                let (u0, u1, u2) = (e[0].value[j], e[1].value[j], e[2].value[j]);
                add(&mut cots[g0].laplacian, j, w);
                add(&mut cots[g0].value, j, w * (1.0 - u1 * u2));
                add(&mut cots[slot_groups[1]].value, j, -w * u0 * u2);
                add(&mut cots[slot_groups[2]].value, j, -w * u0 * u1);
            }
            Factor::SineGordon { .. } => {
                add(&mut cots[g0].laplacian, j, w);
                add(&mut cots[g0].value, j, w * e[0].value[j].cos());
            }
        }
    }
}
