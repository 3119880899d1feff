//! Run configuration: one TOML file with a section per subcommand.
//!
//! Relative paths resolve against `data_root` when set, otherwise against
//! the `DUNCAN_DATA_ROOT` environment variable, otherwise against the
//! working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correction::Reassembly;
use crate::data::{Modality, Severity};
use crate::error::{Error, Result};
use crate::motion::SeverityProfile;
use crate::train::TrainConfig;

pub const DATA_ROOT_ENV: &str = "DUNCAN_DATA_ROOT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for every subcommand.
    pub seed: Option<u64>,
    pub data_root: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub dataset: Option<DatasetSection>,
    pub simulate: Option<SimulateConfig>,
    pub train: Option<TrainConfig>,
    pub correct: Option<CorrectConfig>,
    pub evaluate: Option<EvaluateConfig>,
    pub report: Option<ReportConfig>,
}

/// Clean phantoms synthesized in place of a clean manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSet {
    pub count: usize,
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_modality")]
    pub modality: Modality,
}

fn default_modality() -> Modality {
    Modality::T1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Manifest of artifact-free volumes to corrupt.
    pub manifest: Option<PathBuf>,
    pub phantoms: Option<PhantomSet>,
    #[serde(default = "default_severities")]
    pub severities: Vec<Severity>,
    /// Profiles replacing the presets, keyed by severity name.
    #[serde(default)]
    pub profiles: BTreeMap<String, SeverityProfile>,
    /// Output volume extension (`rvol`, `nii`, `nii.gz`); defaults to the
    /// input's.
    pub format: Option<String>,
    /// Share of volumes held out as paired test data.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_severities() -> Vec<Severity> {
    vec![Severity::Minor]
}

fn default_test_fraction() -> f64 {
    0.2
}

impl SimulateConfig {
    pub fn profile(&self, level: Severity) -> Result<SeverityProfile> {
        match self.profiles.get(&level.to_string()) {
            Some(p) if p.level == level => Ok(p.clone()),
            Some(p) => Err(Error::Config(format!(
                "profile under `{level}` declares level `{}`",
                p.level
            ))),
            None => SeverityProfile::preset(level),
        }
    }
}

/// Dataset used by training (train split) and, by default, correction
/// (test split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectConfig {
    pub checkpoint: Option<PathBuf>,
    /// Manifest whose corrupted test volumes are corrected; defaults to the
    /// dataset manifest.
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_suffix")]
    pub suffix: String,
    #[serde(default)]
    pub reassembly: Reassembly,
}

fn default_suffix() -> String {
    "_corrected".into()
}

/// One severity level's reference/test pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalGroup {
    pub severity: Severity,
    /// Directory or manifest of reference (clean) volumes.
    pub reference: PathBuf,
    /// Directory or manifest of test volumes, matched to references by file
    /// stem.
    pub test: PathBuf,
    /// Suffix stripped from test stems before matching.
    #[serde(default)]
    pub test_suffix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub groups: Vec<EvalGroup>,
    /// Threshold for the Dice segmentation check, in reference units.
    pub segmentation_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    pub corrupted: PathBuf,
    pub corrected: PathBuf,
    pub reference: PathBuf,
    /// Slice to show; the middle one by default.
    pub slice: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// `evaluation.json` written by the evaluate subcommand.
    pub evaluation: Option<PathBuf>,
    #[serde(default)]
    pub panels: Vec<PanelSpec>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Base for relative paths.
    pub fn data_root(&self) -> Option<PathBuf> {
        self.data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match self.data_root() {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T> {
        s.as_ref()
            .ok_or_else(|| Error::Config(format!("config has no [{name}] section")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_with_a_location() {
        let err = RunConfig::from_toml_str("seed = 1\n\n[train]\ntotal_steps = 3\nbatch_sise = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("batch_sise"), "{msg}");
        assert!(msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml_str(
            r#"
seed = 7
[simulate]
severities = ["minor", "heavy"]
[simulate.phantoms]
count = 4
slices = 5
rows = 32
cols = 32
[dataset]
manifest = "data/dataset.toml"
[train]
total_steps = 3
weight_preset = "in_silico"
[train.optimizer]
learning_rate = 1e-4
beta1 = 0.5
beta2 = 0.999
eps = 1e-8
"#,
        )
        .unwrap();
        let sim = cfg.simulate.unwrap();
        assert_eq!(sim.severities, [Severity::Minor, Severity::Heavy]);
        assert_eq!(sim.profile(Severity::Heavy).unwrap(), SeverityProfile::preset(Severity::Heavy).unwrap());
        let train = cfg.train.unwrap();
        assert_eq!(train.total_steps, 3);
        assert_eq!(train.weight_preset, crate::losses::WeightPreset::InSilico);
    }
}
