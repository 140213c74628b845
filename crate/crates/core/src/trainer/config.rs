use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossMode, LossWeights, NonlinearityOrder};
use crate::nn::{Activation, AdamConfig};
use crate::pde::{PdeProblem, ProblemSpec};
use crate::smoothing::SmoothingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden layer widths; input and output widths follow from the problem.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            activation: Activation::Tanh,
        }
    }
}

impl ModelConfig {
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

/// Mode named in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Biased,
    Unbiased1,
    Unbiased2,
    Hybrid,
}

impl std::str::FromStr for ModeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("hybrid") {
            return Ok(ModeName::Hybrid);
        }
        Ok(match s.parse::<LossMode>()? {
            LossMode::Biased => ModeName::Biased,
            LossMode::Unbiased1 => ModeName::Unbiased1,
            LossMode::Unbiased2 => ModeName::Unbiased2,
        })
    }
}

/// Switch to the post-transition mode once the mean training loss of the
/// last `window` epochs improves on the window before by less than
/// `rel_tol`, relatively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub window: usize,
    pub rel_tol: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            window: 200,
            rel_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transition {
    AtEpoch(usize),
    Plateau(PlateauConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Fixed(LossMode),
    Hybrid { transition: Transition, post_mode: LossMode },
}

impl Mode {
    pub fn initial(&self) -> LossMode {
        match self {
            Mode::Fixed(m) => *m,
            Mode::Hybrid { .. } => LossMode::Biased,
        }
    }
}

fn default_eval_interval() -> usize {
    100
}

fn default_test_set_size() -> usize {
    20_000
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub epochs: usize,
    /// Residual points per epoch.
    pub batch_size: usize,
    /// Boundary points per epoch; only used without a hard constraint.
    #[serde(default)]
    pub boundary_batch_size: Option<usize>,
    pub mode: ModeName,
    #[serde(default)]
    pub transition_epoch: Option<usize>,
    #[serde(default)]
    pub post_mode: Option<LossMode>,
    /// Automatic hybrid transition; off unless given.
    #[serde(default)]
    pub plateau: Option<PlateauConfig>,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_test_set_size")]
    pub test_set_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Defaults to `λ_r = 1` and `λ_b` = 0 or 1 depending on the constraint.
    #[serde(default)]
    pub loss_weights: Option<LossWeights>,
}

impl ScheduleConfig {
    pub fn new(epochs: usize, batch_size: usize, mode: ModeName) -> Self {
        Self {
            epochs,
            batch_size,
            boundary_batch_size: None,
            mode,
            transition_epoch: None,
            post_mode: None,
            plateau: None,
            eval_interval: default_eval_interval(),
            test_set_size: default_test_set_size(),
            seeds: default_seeds(),
            loss_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub schedule: ScheduleConfig,
}

impl TrainConfig {
    /// Checks every section and the mode against the problem's nonlinearity;
    /// returns the built problem and the resolved mode.
    pub fn resolve(&self) -> Result<(PdeProblem, Mode)> {
        let problem = self.problem.build()?;
        self.smoothing.validate()?;
        self.optimizer.validate()?;
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        let s = &self.schedule;
        if s.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if s.boundary_batch_size == Some(0) {
            return Err(Error::Config("boundary_batch_size must be at least 1".into()));
        }
        if s.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be at least 1".into()));
        }
        if s.test_set_size == 0 {
            return Err(Error::Config("test_set_size must be at least 1".into()));
        }
        if let Some(w) = &s.loss_weights {
            w.validate()?;
        }
        let fixed = |m: LossMode| -> Result<Mode> {
            if s.transition_epoch.is_some() || s.post_mode.is_some() || s.plateau.is_some() {
                return Err(Error::Config(format!(
                    "transition_epoch, post_mode and plateau only apply to the hybrid mode, not {m}"
                )));
            }
            Ok(Mode::Fixed(m))
        };
        let mode = match s.mode {
            ModeName::Biased => fixed(LossMode::Biased)?,
            ModeName::Unbiased1 => fixed(LossMode::Unbiased1)?,
            ModeName::Unbiased2 => fixed(LossMode::Unbiased2)?,
            ModeName::Hybrid => {
                let transition = match (s.transition_epoch, s.plateau) {
                    (Some(e), None) => {
                        if e >= s.epochs {
                            return Err(Error::Config(format!(
                                "transition_epoch {e} must be below epochs {}",
                                s.epochs
                            )));
                        }
                        Transition::AtEpoch(e)
                    }
                    (None, Some(p)) => {
                        if p.window == 0 || !(p.rel_tol >= 0.0) {
                            return Err(Error::Config("plateau needs a positive window and rel_tol >= 0".into()));
                        }
                        Transition::Plateau(p)
                    }
                    (Some(_), Some(_)) => {
                        return Err(Error::Config("give either transition_epoch or plateau, not both".into()))
                    }
                    (None, None) => {
                        return Err(Error::Config("the hybrid mode needs transition_epoch or plateau".into()))
                    }
                };
                let post_mode = s.post_mode.unwrap_or(match problem.nonlinearity() {
                    NonlinearityOrder::Polynomial(p) if p > 1 => LossMode::Unbiased2,
                    _ => LossMode::Unbiased1,
                });
                Mode::Hybrid { transition, post_mode }
            }
        };
        for m in [mode.initial(), post_mode_of(&mode)] {
            problem.groups_for(m)?;
        }
        Ok((problem, mode))
    }
}

fn post_mode_of(mode: &Mode) -> LossMode {
    match mode {
        Mode::Fixed(m) => *m,
        Mode::Hybrid { post_mode, .. } => *post_mode,
    }
}
