use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use atc_core::data::read_header;
use atc_core::{ColumnMapping, GenerationParams, GroundingSetting, IngestMode};
use clap::{Args, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// OpenAI-compatible chat-completions server.
    Http,
    /// Answers from gold labels; needs --gold.
    Oracle,
    /// Replays replies from a file, one per line; needs --script.
    #[value(alias = "adversarial")]
    #[serde(alias = "adversarial")]
    Scripted,
}

/// Flat TOML run configuration. Every key mirrors a long flag with `-`
/// replaced by `_`; flags win over the file. Relative paths are resolved
/// against the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub ontology: Option<PathBuf>,
    pub definitions: Option<PathBuf>,
    pub grounding: Option<GroundingSetting>,
    pub backend: Option<BackendKind>,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub token_env: Option<String>,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    pub retries: Option<u32>,
    pub auto_select: Option<bool>,
    pub concurrency: Option<usize>,
    pub max_tokens: Option<u32>,
    pub gold: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub mention_col: Option<String>,
    pub gold_col: Option<String>,
    pub generic_col: Option<String>,
    pub granularity_col: Option<String>,
    pub lenient: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.ontology, &mut cfg.definitions, &mut cfg.gold, &mut cfg.script]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat TOML file supplying defaults for any of the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ATC ontology TSV (code<TAB>name).
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Per-code definition TSV (code<TAB>definition).
    #[arg(long)]
    pub definitions: Option<PathBuf>,
    /// How each option line is rendered: code-only, with-name or with-umls.
    #[arg(long)]
    pub grounding: Option<GroundingSetting>,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API token.
    #[arg(long)]
    pub token_env: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Extra attempts per level after an unusable reply.
    #[arg(long)]
    pub retries: Option<u32>,
    /// Descend through single-child nodes without a model call (default).
    #[arg(long, overrides_with = "no_auto_select")]
    pub auto_select: bool,
    /// Prompt the model even when a level offers one option.
    #[arg(long, overrides_with = "auto_select")]
    pub no_auto_select: bool,
    /// Mentions coded at once (also bounds HTTP requests in flight).
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Labeled dataset for the oracle backend.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Reply file for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Header of the mention column [default: mention].
    #[arg(long)]
    pub mention_col: Option<String>,
    /// Header of the gold code column [default: gold].
    #[arg(long)]
    pub gold_col: Option<String>,
    /// Header of the generic name column [default: generic_name, if present].
    #[arg(long)]
    pub generic_col: Option<String>,
    /// Header of the granularity column [default: granularity, if present].
    #[arg(long)]
    pub granularity_col: Option<String>,
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

impl DatasetArgs {
    pub fn resolve(&self, file: &FileConfig, path: &Path) -> Result<(ColumnMapping, IngestMode)> {
        let header = read_header(path).with_context(|| format!("reading {}", path.display()))?;
        let present = |name: &str| header.iter().any(|h| h.eq_ignore_ascii_case(name));
        let optional = |flag: &Option<String>, from_file: &Option<String>, default: &str| {
            flag.clone()
                .or_else(|| from_file.clone())
                .or_else(|| present(default).then(|| default.to_owned()))
        };
        let mapping = ColumnMapping {
            mention: self.mention_col.clone().or_else(|| file.mention_col.clone()).unwrap_or_else(|| "mention".into()),
            gold: self.gold_col.clone().or_else(|| file.gold_col.clone()).unwrap_or_else(|| "gold".into()),
            generic_name: optional(&self.generic_col, &file.generic_col, "generic_name"),
            granularity: optional(&self.granularity_col, &file.granularity_col, "granularity"),
        };
        let mode = if self.lenient || file.lenient.unwrap_or(false) {
            IngestMode::Lenient
        } else {
            IngestMode::Strict
        };
        Ok((mapping, mode))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Http {
        base_url: String,
        token_env: Option<String>,
    },
    Oracle {
        gold: PathBuf,
    },
    Scripted {
        script: PathBuf,
    },
}

/// Fully resolved settings for a `code` run, validated before any backend
/// is constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub ontology: PathBuf,
    pub definitions: Option<PathBuf>,
    pub grounding: GroundingSetting,
    pub backend: BackendSpec,
    pub params: GenerationParams,
    pub retries: u32,
    pub auto_select: bool,
    pub concurrency: usize,
}

pub fn existing(label: &str, path: Option<PathBuf>) -> Result<Option<PathBuf>> {
    match path {
        Some(p) if !p.is_file() => bail!("{label} file {} does not exist", p.display()),
        other => Ok(other),
    }
}

pub fn required(label: &str, flag: &str, path: Option<PathBuf>) -> Result<PathBuf> {
    existing(label, path)?.with_context(|| format!("{flag} is required"))
}

/// Ontology, definitions and grounding, checked together.
pub fn knowledge_paths(common: &CommonArgs, file: &FileConfig) -> Result<(PathBuf, Option<PathBuf>, GroundingSetting)> {
    let ontology = required("ontology", "--ontology", common.ontology.clone().or_else(|| file.ontology.clone()))?;
    let definitions = existing("definitions", common.definitions.clone().or_else(|| file.definitions.clone()))?;
    let grounding = common.grounding.or(file.grounding).unwrap_or_default();
    if grounding == GroundingSetting::WithUmls && definitions.is_none() {
        bail!("--grounding with-umls requires --definitions");
    }
    Ok((ontology, definitions, grounding))
}

impl RunConfig {
    pub fn resolve(common: &CommonArgs, b: &BackendArgs, file: &FileConfig) -> Result<Self> {
        let (ontology, definitions, grounding) = knowledge_paths(common, file)?;

        let kind = b.backend.or(file.backend).unwrap_or(BackendKind::Http);
        let model = b.model.clone().or_else(|| file.model.clone());
        let backend = match kind {
            BackendKind::Http => {
                if model.as_deref().is_none_or(|m| m.trim().is_empty()) {
                    bail!("--model is required for the http backend");
                }
                BackendSpec::Http {
                    base_url: b
                        .base_url
                        .clone()
                        .or_else(|| file.base_url.clone())
                        .unwrap_or_else(|| atc_core::HttpChatConfig::default().base_url),
                    token_env: b.token_env.clone().or_else(|| file.token_env.clone()),
                }
            }
            BackendKind::Oracle => BackendSpec::Oracle {
                gold: required("gold", "--gold (oracle backend)", b.gold.clone().or_else(|| file.gold.clone()))?,
            },
            BackendKind::Scripted => BackendSpec::Scripted {
                script: required("script", "--script (scripted backend)", b.script.clone().or_else(|| file.script.clone()))?,
            },
        };

        let defaults = GenerationParams::default();
        let temperature = b.temperature.or(file.temperature).unwrap_or(defaults.temperature);
        if !(temperature.is_finite() && temperature >= 0.0) {
            bail!("--temperature must be a non-negative number, got {temperature}");
        }
        let concurrency = b.concurrency.or(file.concurrency).unwrap_or(4);
        if concurrency == 0 {
            bail!("--concurrency must be at least 1");
        }
        let auto_select = match (b.auto_select, b.no_auto_select) {
            (true, _) => true,
            (_, true) => false,
            _ => file.auto_select.unwrap_or(true),
        };
        Ok(Self {
            ontology,
            definitions,
            grounding,
            backend,
            params: GenerationParams {
                temperature,
                seed: b.seed.or(file.seed).unwrap_or(defaults.seed),
                max_output_tokens: b.max_tokens.or(file.max_tokens).unwrap_or(defaults.max_output_tokens),
                model_id: model.unwrap_or_default(),
            },
            retries: b.retries.or(file.retries).unwrap_or(2),
            auto_select,
            concurrency,
        })
    }
}
