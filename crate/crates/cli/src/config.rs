use std::path::{Path, PathBuf};

use serde::Deserialize;

use rspinn::loss::LossMode;
use rspinn::nn::AdamConfig;
use rspinn::pde::ProblemSpec;
use rspinn::smoothing::SmoothingConfig;
use rspinn::trainer::{ModeName, ModelConfig, ScheduleConfig, TrainConfig};

/// Configs shipped with the binary, addressable by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fp_iso_10d_desk", include_str!("../configs/fp_iso_10d_desk.toml")),
    ("fp_iso_10d_full", include_str!("../configs/fp_iso_10d_full.toml")),
    ("fp_aniso_10d_full", include_str!("../configs/fp_aniso_10d_full.toml")),
    ("hjb_quadratic_10d_desk", include_str!("../configs/hjb_quadratic_10d_desk.toml")),
    ("hjb_quadratic_10d_full", include_str!("../configs/hjb_quadratic_10d_full.toml")),
    ("hjb_rosenbrock_10d_full", include_str!("../configs/hjb_rosenbrock_10d_full.toml")),
    ("burgers_10d_full", include_str!("../configs/burgers_10d_full.toml")),
    ("allen_cahn_10d_full", include_str!("../configs/allen_cahn_10d_full.toml")),
    ("sine_gordon_10d_full", include_str!("../configs/sine_gordon_10d_full.toml")),
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportingConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Prefix of the output files; defaults to the config name.
    #[serde(default)]
    pub name: Option<String>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for ReportingConfig {
    fn default() -> Self {
        Self {
            out_dir: default_out_dir(),
            name: None,
        }
    }
}

/// A run config file: the training config plus where to write results.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub reporting: ReportingConfig,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads `source` as a path, or as the name of a bundled config when no
    /// such file exists. Returns the config and its name.
    pub fn load(source: &str) -> Result<(Self, String), String> {
        let path = Path::new(source);
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let name = path
                .file_stem()
                .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());
            return Self::parse(&text).map(|c| (c, name)).map_err(|e| format!("{}: {e}", path.display()));
        }
        match BUNDLED.iter().find(|(n, _)| *n == source) {
            Some((name, text)) => Self::parse(text)
                .map(|c| (c, name.to_string()))
                .map_err(|e| format!("bundled config {name}: {e}")),
            None => Err(format!("{source}: no such file or bundled config")),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            problem: self.problem.clone(),
            model: self.model.clone(),
            smoothing: self.smoothing,
            optimizer: self.optimizer,
            schedule: self.schedule.clone(),
        }
    }
}

/// Command-line replacements for config values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<ModeName>,
    pub dim: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// A fixed mode drops the hybrid-only keys of the file.
    pub fn apply(&self, file: &mut RunConfigFile) {
        if let Some(seed) = self.seed {
            file.schedule.seeds = vec![seed];
        }
        if let Some(mode) = self.mode {
            file.schedule.mode = mode;
            if mode != ModeName::Hybrid {
                file.schedule.transition_epoch = None;
                file.schedule.post_mode = None;
                file.schedule.plateau = None;
            }
        }
        if let Some(dim) = self.dim {
            file.problem.dim = dim;
        }
        if let Some(out) = &self.out {
            file.reporting.out_dir = out.clone();
        }
    }
}

pub fn parse_mode(s: &str) -> Result<ModeName, String> {
    s.parse::<ModeName>().map_err(|e| e.to_string())
}

pub fn parse_loss_mode(s: &str) -> Result<LossMode, String> {
    s.parse::<LossMode>().map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_validate() {
        for (name, text) in BUNDLED {
            let c = RunConfigFile::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            c.train_config().resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_keys_are_reported_with_their_line() {
        let text = "[problem]\nkind = \"fp_iso\"\ndim = 2\n\n[schedule]\nepochs = 1\nbatch_size = 2\nmode = \"biased\"\nbogus = 3\n";
        let err = RunConfigFile::parse(text).unwrap_err();
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("line 9"), "{err}");
    }

    #[test]
    fn overrides_replace_values() {
        let (mut c, name) = RunConfigFile::load("fp_iso_10d_desk").unwrap();
        assert_eq!(name, "fp_iso_10d_desk");
        Overrides {
            seed: Some(7),
            mode: Some(ModeName::Biased),
            dim: Some(3),
            out: Some("x".into()),
        }
        .apply(&mut c);
        assert_eq!(c.schedule.seeds, vec![7]);
        assert_eq!(c.problem.dim, 3);
        assert_eq!(c.schedule.transition_epoch, None);
        assert_eq!(c.reporting.out_dir, PathBuf::from("x"));
        assert!(c.train_config().resolve().is_ok());
    }
}
