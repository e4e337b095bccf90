//! JSON config files, one document per subcommand. Relative paths inside a
//! config resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use aot_core::oracle::DEFAULT_SUPPORT_CAP;
use aot_core::Direction;
use aot_train::experiments::UpdateConfig;
use aot_train::{ExperimentSpec, LanguageConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{config, CliError, Result};

pub const SEED_ENV: &str = "AOT_LAB_SEED";

/// Flags shared by every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub paper_scale: bool,
    pub seed_override: Option<u64>,
}

impl Default for Options {
    fn default() -> Self {
        Self { out: None, jobs: 1, paper_scale: false, seed_override: None }
    }
}

/// Parses the value of `AOT_LAB_SEED`.
pub fn seed_from_env(value: Option<&str>) -> Result<Option<u64>> {
    match value {
        None => Ok(None),
        Some(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub language: LanguageConfig,
    /// Text matrix replacing the generated one of a linear language.
    #[serde(default)]
    pub matrix_file: Option<PathBuf>,
    /// Sentences to sample; finite languages default to their full support.
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub language: LanguageConfig,
    #[serde(default = "default_cap")]
    pub support_cap: usize,
    /// A sentence written in the language's symbols to decompose.
    #[serde(default)]
    pub sentence: Option<String>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_cap() -> usize {
    DEFAULT_SUPPORT_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub vocab_size: usize,
    /// Model context including BOS.
    pub context_n: usize,
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "forward")]
    pub direction: Direction,
    #[serde(default)]
    pub reverse_chars: bool,
    #[serde(default)]
    pub val_sentences: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn forward() -> Direction {
    Direction::Forward
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub spec: ExperimentSpec,
    /// Starting weights shared by every seed and direction.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseScanConfig {
    pub n: usize,
    pub k_values: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanFile {
    /// Training scan over nnz offsets of a linear language.
    #[serde(default)]
    pub spec: Option<ExperimentSpec>,
    #[serde(default)]
    pub offsets: Vec<usize>,
    /// Inverse-density scan of random sparse matrices.
    #[serde(default)]
    pub inverse: Option<InverseScanConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateFile {
    pub spec: ExperimentSpec,
    pub update: UpdateConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimesFile {
    pub spec: ExperimentSpec,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Reads and parses a config, mapping a missing file to exit code 3 and any
/// schema violation to exit code 2.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_input(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingInput(path.to_path_buf()),
        _ => CliError::Config(format!("cannot read {}: {e}", path.display())),
    })
}

/// Resolves `path` against the config directory unless it is absolute.
pub fn resolve(config_path: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    config_path.parent().map_or_else(|| path.to_path_buf(), |dir| dir.join(path))
}

/// Output directory: the flag wins over the config; the default is `aot-out`.
pub fn out_dir(opts: &Options, config_path: &Path, from_config: Option<&PathBuf>) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| from_config.map(|p| resolve(config_path, p)))
        .unwrap_or_else(|| PathBuf::from("aot-out"))
}

/// Applies `--paper-scale` and the seed override, then validates.
pub fn prepare_spec(mut spec: ExperimentSpec, opts: &Options) -> Result<ExperimentSpec> {
    if opts.paper_scale {
        spec = spec.to_paper_scale();
    }
    if let Some(seed) = opts.seed_override {
        spec.seeds = vec![seed];
    }
    spec.validate()?;
    Ok(spec)
}

pub fn reject_paper_scale(opts: &Options, command: &str) -> Result<()> {
    if opts.paper_scale {
        return config(format!("--paper-scale does not apply to {command}"));
    }
    Ok(())
}
