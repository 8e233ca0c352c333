//! Config files for `gen` and `train`: JSON with every field optional,
//! overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use svlf::training::TrainConfig;

use crate::{usage, Failure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraMode {
    Hemisphere,
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub views: usize,
    pub res: u32,
    pub primitives: Option<usize>,
    pub cameras: CameraMode,
    pub radius: f64,
    pub fov: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            out: None,
            seed: 0,
            views: 30,
            res: 64,
            primitives: None,
            cameras: CameraMode::Hemisphere,
            radius: 1.8,
            fov: 40.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return usage(format!("cannot read config {}: {e}", path.display())),
    };
    serde_json::from_str(&text).or_else(|e| usage(format!("invalid config {}: {e}", path.display())))
}

/// Writes `value` as pretty JSON to `dir/name`.
pub fn echo<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn parse_epochs(s: &str) -> Result<[usize; 3], Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || usage(format!("--epochs expects three comma-separated counts, got `{s}`"));
    if parts.len() != 3 {
        return bad();
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = match p.parse() {
            Ok(v) => v,
            Err(_) => return bad(),
        };
    }
    Ok(out)
}
