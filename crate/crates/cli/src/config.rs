//! Resolved run configurations: defaults, then the config file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use nca_sense::grid::HARDWARE_PITCH_MM;
use nca_sense::world::ReadingMode;

use crate::CliError;

pub const OUT_ENV: &str = "NCA_SENSE_OUT";
const DEFAULT_OUT_ROOT: &str = "nca-sense-out";

/// Grid dimensions written `HxW`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
}

impl FromStr for GridDims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("grid must be HxW with positive integers, got '{s}'");
        let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let height: usize = h.trim().parse().map_err(|_| bad())?;
        let width: usize = w.trim().parse().map_err(|_| bad())?;
        if height == 0 || width == 0 {
            return Err(bad());
        }
        Ok(Self { height, width })
    }
}

impl TryFrom<String> for GridDims {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<GridDims> for String {
    fn from(g: GridDims) -> String {
        g.to_string()
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Common {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub grid: GridDims,
    pub pitch: f64,
    pub mode: ReadingMode,
    pub jobs: usize,
}

impl Default for Common {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            grid: GridDims { height: 8, width: 8 },
            pitch: HARDWARE_PITCH_MM,
            mode: ReadingMode::Binary,
            jobs: 1,
        }
    }
}

impl Common {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        if !(self.pitch.is_finite() && self.pitch > 0.0) {
            return Err(CliError::Usage(format!("--pitch must be positive, got {}", self.pitch)));
        }
        Ok(())
    }

    /// Output directory, falling back to the environment root.
    pub fn out_dir(&self, slug: &str) -> PathBuf {
        match &self.out {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os(OUT_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
                root.join(slug)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    #[serde(flatten)]
    pub common: Common,
    pub shapes: String,
    pub n: usize,
    pub split: f64,
    pub calibration: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            common: Common::default(),
            shapes: "default".into(),
            n: 100,
            split: 0.5,
            calibration: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCfg {
    #[serde(flatten)]
    pub common: Common,
    pub data: Option<PathBuf>,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub pool: usize,
    pub grad_clip: Option<f64>,
    pub early_stop: bool,
    pub hidden: usize,
    pub width: usize,
    pub steps_min: usize,
    pub steps_max: usize,
    pub fire_rate: f64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        let t = nca_sense::training::TrainConfig::default();
        Self {
            common: Common::default(),
            data: None,
            steps: t.total_steps,
            lr: t.adam.lr,
            batch: t.batch_size,
            pool: t.pool_size,
            grad_clip: t.grad_clip,
            early_stop: t.early_stop.is_some(),
            hidden: t.hidden_channels,
            width: t.processing_width,
            steps_min: t.rollout.steps_min,
            steps_max: t.rollout.steps_max,
            fire_rate: t.rollout.fire_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EvalCfg {
    #[serde(flatten)]
    pub common: Common,
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineCfg {
    #[serde(flatten)]
    pub common: Common,
    pub data: Option<PathBuf>,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for BaselineCfg {
    fn default() -> Self {
        let c = nca_sense::baseline::CnnTrainConfig::default();
        Self {
            common: Common::default(),
            data: None,
            steps: c.steps,
            lr: c.adam.lr,
            batch: c.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerfCfg {
    #[serde(flatten)]
    pub common: Common,
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub ckpt_b: Option<PathBuf>,
    pub data_b: Option<PathBuf>,
    pub label_a: String,
    pub label_b: String,
}

impl Default for PerfCfg {
    fn default() -> Self {
        Self {
            common: Common::default(),
            ckpt: None,
            data: None,
            ckpt_b: None,
            data_b: None,
            label_a: "calibrated".into(),
            label_b: "uncalibrated".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepCfg {
    #[serde(flatten)]
    pub common: Common,
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    /// Empty means the default levels of the sweep.
    pub levels: Vec<f64>,
    pub trials: usize,
}

impl Default for SweepCfg {
    fn default() -> Self {
        Self {
            common: Common::default(),
            ckpt: None,
            data: None,
            levels: Vec::new(),
            trials: nca_sense::experiments::DEFAULT_TRIALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleCfg {
    #[serde(flatten)]
    pub common: Common,
    pub ckpt: Option<PathBuf>,
    pub sizes: Vec<usize>,
    pub positions: usize,
    pub full: bool,
    pub scale_steps: bool,
    pub reference_size: usize,
}

impl Default for ScaleCfg {
    fn default() -> Self {
        let d = nca_sense::experiments::ScaleConfig::default();
        Self {
            common: Common::default(),
            ckpt: None,
            sizes: d.sizes,
            positions: d.positions_per_shape,
            full: false,
            scale_steps: false,
            reference_size: 8,
        }
    }
}

/// Reads a config file. A run manifest is accepted too, in which case its
/// recorded configuration is used.
pub fn load_config_file(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config file {} is not valid JSON: {e}", path.display())))?;
    let value = match value {
        Value::Object(mut m) if m.contains_key("command") && m.get("config").is_some_and(Value::is_object) => {
            m.remove("config").unwrap_or_default()
        }
        v => v,
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Usage(format!("config file {} must hold a JSON object", path.display()))),
    }
}

/// Overlays `layers` in order onto `base` and deserializes the result.
pub fn resolve<T: DeserializeOwned>(base: Map<String, Value>, layers: &[Value]) -> Result<T, CliError> {
    let mut merged = base;
    for layer in layers {
        if let Value::Object(m) = layer {
            for (k, v) in m {
                merged.insert(k.clone(), v.clone());
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}
