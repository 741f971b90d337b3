//! The job configuration file: one TOML document describing providers,
//! search tunables, the dataset, and where outputs go. Reproducing a run
//! requires exactly this file plus the dataset it points at.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lps_core::{DecodeMode, ProviderDescriptor, ProviderKind, SearchConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Prompt used for caption-style datasets when the config does not supply
/// its own. POPE items always use their question instead.
pub const DEFAULT_TASK_PROMPT: &str = "Describe this image in detail.";

/// Which metric a dataset is scored with; also determines which item fields
/// are required.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Pope,
    Chair,
    Multitrust,
    Captions,
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            DatasetKind::Pope => "pope",
            DatasetKind::Chair => "chair",
            DatasetKind::Multitrust => "multitrust",
            DatasetKind::Captions => "captions",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    /// Accepts the dataset kinds plus "bleu" as an alias for captions, so
    /// the report command can take the metric name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pope" => Ok(DatasetKind::Pope),
            "chair" => Ok(DatasetKind::Chair),
            "multitrust" => Ok(DatasetKind::Multitrust),
            "captions" | "bleu" => Ok(DatasetKind::Captions),
            other => Err(format!(
                "unknown dataset kind {other:?}; expected pope, chair, multitrust, captions, or bleu"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub providers: ProvidersConfig,
    #[serde(default)]
    pub search: SearchConfig,
    pub dataset: DatasetConfig,
    pub output: OutputConfig,
    /// Worker threads decoding items concurrently.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Decode mode applied to every item.
    #[serde(default)]
    pub mode: DecodeMode,
    /// Fraction of dataset items allowed to fail before the job exits
    /// nonzero.
    #[serde(default = "default_max_failure_fraction")]
    pub max_failure_fraction: f64,
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_parallelism() -> usize {
    1
}
fn default_max_failure_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersConfig {
    pub generator: ProviderDescriptor,
    pub embedder: ProviderDescriptor,
    pub scorer: ProviderDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// JSONL file, one item per line.
    pub path: PathBuf,
    /// Directory image ids resolve against; the dataset's own directory
    /// when unset.
    #[serde(default)]
    pub image_root: Option<PathBuf>,
    /// Prompt sent per item for caption-style kinds.
    #[serde(default)]
    pub task_prompt: Option<String>,
    /// Object vocabulary JSON; the built-in COCO set when unset.
    #[serde(default)]
    pub vocab_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Append-only JSONL decode trace.
    pub trace_path: PathBuf,
    /// Metric report as JSON, written after the run.
    #[serde(default)]
    pub report_path: Option<PathBuf>,
}

impl JobConfig {
    /// Reads, resolves, and validates a job file. Relative paths are
    /// interpreted against the config file's directory so a job directory
    /// can be moved wholesale.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: JobConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_relative(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.dataset.path);
        if let Some(root) = &mut self.dataset.image_root {
            resolve(root);
        }
        if let Some(vocab) = &mut self.dataset.vocab_path {
            resolve(vocab);
        }
        resolve(&mut self.output.trace_path);
        if let Some(report) = &mut self.output.report_path {
            resolve(report);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            bail!(
                "config schema_version {} is not supported (expected {})",
                self.schema_version,
                CONFIG_SCHEMA_VERSION
            );
        }
        check_slot(
            &self.providers.generator,
            ProviderKind::Generator,
            "generator",
        )?;
        check_slot(&self.providers.embedder, ProviderKind::Embedder, "embedder")?;
        check_slot(
            &self.providers.scorer,
            ProviderKind::ImageTextScorer,
            "scorer",
        )?;
        self.search.validate().context("invalid [search] section")?;
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if !(self.max_failure_fraction.is_finite()
            && (0.0..=1.0).contains(&self.max_failure_fraction))
        {
            bail!("max_failure_fraction must lie in [0, 1]");
        }
        if !self.dataset.path.is_file() {
            bail!(
                "dataset file {} does not exist",
                self.dataset.path.display()
            );
        }
        if let Some(root) = &self.dataset.image_root {
            if !root.is_dir() {
                bail!("image_root {} is not a directory", root.display());
            }
        }
        if let Some(vocab) = &self.dataset.vocab_path {
            if !vocab.is_file() {
                bail!("vocab file {} does not exist", vocab.display());
            }
        }
        Ok(())
    }
}

fn check_slot(desc: &ProviderDescriptor, slot: ProviderKind, name: &str) -> Result<()> {
    desc.validate()
        .with_context(|| format!("invalid {name} provider"))?;
    if let Some(kind) = desc.kind {
        if kind != slot {
            bail!("the {name} slot is filled by a descriptor declaring kind {kind:?}");
        }
    }
    Ok(())
}
