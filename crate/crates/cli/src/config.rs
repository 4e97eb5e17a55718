use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use landmap::backend::TrainConfig;
use landmap::spectral::Mode;
use landmap::synth::SceneSpec;
use landmap::tiling::TileSpec;
use landmap::{Error, Result};

/// Which classifier `infer` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendChoice {
    /// A trained linear model file.
    Linear { model: Option<PathBuf> },
    /// Ground-truth lookup, for pipeline checks.
    Oracle { truth: Option<PathBuf> },
    /// A child process speaking the tile protocol.
    External {
        command: Vec<String>,
        #[serde(default = "one")]
        pool: usize,
        #[serde(default = "sixty")]
        timeout_s: f64,
    },
}

fn one() -> usize {
    1
}

fn sixty() -> f64 {
    60.0
}

/// Everything an experiment needs, archivable as one JSON file. Command
/// line flags override individual keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub scenes: usize,
    pub seed: u64,
    pub mode: Mode,
    pub tiling: TileSpec,
    pub train: TrainConfig,
    pub backend: BackendChoice,
    pub workers: usize,
    /// Seam band for boundary accuracy.
    pub band: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::desk_scale();
        ExperimentConfig {
            scene: SceneSpec::default(),
            scenes: 20,
            seed: 7,
            mode: Mode::Lu6,
            tiling: train.tile,
            train,
            backend: BackendChoice::Linear { model: None },
            workers: 1,
            band: 16,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Missing or unreadable config files are configuration errors, not
    /// I/O errors: the exit code should point at the invocation.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.validate()?;
        if self.scenes < 2 {
            return Err(Error::Config(format!(
                "scenes must be at least 2, got {}",
                self.scenes
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        if let BackendChoice::External {
            command,
            pool,
            timeout_s,
        } = &self.backend
        {
            if command.is_empty() || *pool == 0 || !(*timeout_s > 0.0) {
                return Err(Error::Config(
                    "external backend needs a command, pool >= 1, timeout > 0".into(),
                ));
            }
        }
        Ok(())
    }
}
