//! Statistical and numerical self-checks: estimator unbiasedness, loss bias
//! audits, gradient variance per mode and finite-difference gradient checks.

mod audit;
mod estimators;
mod gradcheck;

pub use audit::{bias_audit, gradient_variance, AuditConfig, AuditTarget, BiasAudit, GradientVariance};
pub use estimators::{laplacian_variance_comparison, verify_estimators, VarianceComparison};
pub use gradcheck::{finite_difference_error, gradcheck};

use std::fmt;

/// One pass/fail line of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub target: f64,
    /// Zero for deterministic checks.
    pub std_error: f64,
    pub passed: bool,
    /// Criterion in words, e.g. "within 4 SE".
    pub criterion: String,
}

impl Check {
    /// Passes when `|measured − target| ≤ z · std_error`.
    pub fn within(name: impl Into<String>, samples: &[f64], target: f64, z: f64) -> Self {
        let (m, se) = mean_se(samples);
        Self {
            name: name.into(),
            measured: m,
            target,
            std_error: se,
            passed: (m - target).abs() <= z * se,
            criterion: format!("within {z} SE"),
        }
    }

    /// Passes when `|measured − target| ≤ tol`.
    pub fn exact(name: impl Into<String>, measured: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            target,
            std_error: 0.0,
            passed: (measured - target).abs() <= tol,
            criterion: format!("|error| <= {tol:e}"),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<48} measured {:>13.6e}  target {:>13.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.target
        )?;
        if self.std_error > 0.0 {
            let z = (self.measured - self.target) / self.std_error;
            write!(f, "  se {:.3e}  z {z:+.2}", self.std_error)?;
        }
        write!(f, "  [{}]", self.criterion)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    /// Free-form lines printed after the checks.
    pub notes: Vec<String>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        for n in &self.notes {
            writeln!(f, "{n}")?;
        }
        Ok(())
    }
}

/// Sample mean and its standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Sample variance and an estimate of its standard error.
pub fn variance_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sq: Vec<f64> = v.iter().map(|x| (x - m).powi(2)).collect();
    let (mean_sq, se_sq) = mean_se(&sq);
    let c = n / (n - 1.0);
    (mean_sq * c, se_sq * c)
}
