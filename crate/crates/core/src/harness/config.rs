use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{ControllerKind, HorizonConfig, PidGains};
use crate::dynsys::{DatasetConfig, MfeParams};
use crate::error::{Error, Result};
use crate::hyperopt::{Dimension, Method, SearchSpace};
use crate::reservoir::EsnParams;
use crate::reward::RewardConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Episode count at and above which a run counts as full scale.
pub const FULL_SCALE_EPISODES: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub n_series: usize,
    pub validation_series: usize,
    pub length_lt: f64,
    pub dataset: DatasetConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            n_series: 50,
            validation_series: 20,
            length_lt: 20.0,
            dataset: DatasetConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Replace `esn.input_scaling` by the inverse standard deviation of
    /// each component over the training data.
    pub auto_input_scaling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            auto_input_scaling: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuneTarget {
    #[serde(rename = "P_ESN")]
    PEsn,
    #[serde(rename = "PID")]
    Pid,
    #[serde(rename = "ESN")]
    Esn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub target: TuneTarget,
    pub method: Method,
    pub budget: usize,
    pub n_val_episodes: usize,
    pub length_lt: f64,
    /// Empty selects the default space of the target.
    pub space: Vec<Dimension>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            target: TuneTarget::PEsn,
            method: Method::Bayesian,
            budget: 12,
            n_val_episodes: 20,
            length_lt: 20.0,
            space: Vec::new(),
        }
    }
}

impl TuneConfig {
    pub fn search_space(&self) -> Result<SearchSpace> {
        let dims = if self.space.is_empty() {
            match self.target {
                TuneTarget::PEsn => vec![Dimension::linear("k_c", 0.02, 0.1)],
                TuneTarget::Pid => vec![
                    Dimension::linear("k_p", 0.0, 2.0),
                    Dimension::linear("k_d", 0.0, 50.0),
                    Dimension::linear("k_i", 0.0, 0.05),
                    Dimension::linear("tau_i", 1.0, 100.0),
                    Dimension::linear("k_c", 0.02, 0.1),
                ],
                TuneTarget::Esn => vec![
                    Dimension::log("sigma_in", 1e-2, 1e1),
                    Dimension::log("sigma_c", 1e-2, 1e1),
                ],
            }
        } else {
            self.space.clone()
        };
        SearchSpace::new(dims)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub n_episodes: usize,
    pub length_lt: f64,
    pub strategies: Vec<ControllerKind>,
    /// Fraction of failed episodes above which the run fails.
    pub max_failure_fraction: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            n_episodes: 200,
            length_lt: 20.0,
            strategies: ControllerKind::ALL.to_vec(),
            max_failure_fraction: 0.01,
        }
    }
}

impl EvaluateConfig {
    pub fn scale_label(&self) -> &'static str {
        if self.n_episodes >= FULL_SCALE_EPISODES {
            "full"
        } else {
            "desk"
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramConfig {
    pub bins: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig {
            bins: 100,
            lower: 0.0,
            upper: 0.3,
        }
    }
}

/// Everything a run depends on. Serialises to TOML; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mfe: MfeParams,
    pub generate: GenerateConfig,
    pub esn: EsnParams,
    pub train: TrainConfig,
    pub horizon: HorizonConfig,
    pub reward: RewardConfig,
    /// Gains of the direct PID controller.
    pub pid: PidGains,
    /// Gains of the predictive proportional controller.
    pub p_esn: PidGains,
    pub tune: TuneConfig,
    pub evaluate: EvaluateConfig,
    pub pdf: HistogramConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            out_dir: PathBuf::from("out"),
            mfe: MfeParams::default(),
            generate: GenerateConfig::default(),
            esn: EsnParams::default(),
            train: TrainConfig::default(),
            horizon: HorizonConfig::default(),
            reward: RewardConfig::default(),
            pid: PidGains::default(),
            p_esn: PidGains::default(),
            tune: TuneConfig::default(),
            evaluate: EvaluateConfig::default(),
            pdf: HistogramConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form. The output directory does not
    /// affect results and is left out.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(canonical.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let wrap = |e: Error| Error::Config(e.to_string());
        self.mfe.validate().map_err(wrap)?;
        self.generate.dataset.validate().map_err(wrap)?;
        self.esn.validate().map_err(wrap)?;
        self.horizon.validate().map_err(wrap)?;
        self.reward.validate().map_err(wrap)?;
        self.pid.validate().map_err(wrap)?;
        self.p_esn.validate().map_err(wrap)?;
        self.tune.search_space().map_err(wrap)?;
        if !(self.generate.length_lt > 0.0 && self.evaluate.length_lt > 0.0 && self.tune.length_lt > 0.0) {
            return Err(Error::Config("series and episode lengths must be > 0".into()));
        }
        if self.pdf.bins == 0 || !(self.pdf.lower < self.pdf.upper) {
            return Err(Error::Config("pdf needs bins >= 1 and lower < upper".into()));
        }
        Ok(())
    }
}
