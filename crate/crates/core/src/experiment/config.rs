//! Declarative experiment description (TOML or JSON).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::embedding::TextFormat;
use crate::ensemble::Strategy;
use crate::error::{Error, Result};
use crate::experiment::dataset::DataFormat;
use crate::train::TrainingConfig;
use crate::verbalizer::CoreWordForm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbalizerKind {
    Manual,
    Soft,
    /// Label words mined from the training half.
    Auto,
    Maven,
    /// Mined words with and without neighbor enrichment, reported side by side.
    AutoMaven,
}

impl FromStr for VerbalizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manual" => Ok(Self::Manual),
            "soft" => Ok(Self::Soft),
            "auto" => Ok(Self::Auto),
            "maven" => Ok(Self::Maven),
            "auto_maven" => Ok(Self::AutoMaven),
            other => Err(Error::argument(format!("unknown verbalizer kind {other:?}"))),
        }
    }
}

/// Where neighbor vectors come from: the model's input embeddings or a text file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    Lm,
    External { format: TextFormat, path: PathBuf },
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    /// `"lm"`, `"word2vec:<path>"` or `"glove:<path>"`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "lm" {
            return Ok(Self::Lm);
        }
        match s.split_once(':') {
            Some((fmt, path)) if !path.is_empty() => Ok(Self::External {
                format: fmt.parse()?,
                path: PathBuf::from(path),
            }),
            _ => Err(Error::argument(format!(
                "embedding source {s:?} is not \"lm\", \"word2vec:<path>\" or \"glove:<path>\""
            ))),
        }
    }
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Lm => f.write_str("lm"),
            Self::External { format, path } => {
                let name = match format {
                    TextFormat::Word2VecText => "word2vec",
                    TextFormat::GloveText => "glove",
                };
                write!(f, "{name}:{}", path.display())
            }
        }
    }
}

impl Serialize for EmbeddingSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EmbeddingSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Built-in id (`ag`, `dbpedia`, `yahoo`) or a free name for custom data.
    pub id: String,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: Option<DataFormat>,
    /// Custom datasets only.
    pub label_names: Option<Vec<String>>,
    /// Custom datasets only: text columns, each becoming a field.
    pub columns: Option<Vec<String>>,
    /// Evaluate on a seeded random subset of this size.
    pub test_limit: Option<usize>,
    pub test_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            id: "ag".into(),
            train: None,
            test: None,
            format: None,
            label_names: None,
            columns: None,
            test_limit: None,
            test_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerbalizerConfig {
    pub kind: VerbalizerKind,
    /// Neighbors per core word.
    pub k: usize,
    /// Mined words per label.
    pub k_auto: usize,
    pub embeddings: EmbeddingSource,
    /// Label-word file replacing the built-in manual table.
    pub file: Option<PathBuf>,
    pub core_form: CoreWordForm,
}

impl Default for VerbalizerConfig {
    fn default() -> Self {
        Self {
            kind: VerbalizerKind::Manual,
            k: 15,
            k_auto: 15,
            embeddings: EmbeddingSource::Lm,
            file: None,
            core_form: CoreWordForm::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Local directory, a name under `$VERBKIT_MODEL_DIR`, or a hub repository id.
    pub checkpoint: String,
    pub verbalizer: VerbalizerConfig,
    /// Template ids; empty means all.
    pub templates: Vec<u32>,
    /// Template file replacing the built-in templates.
    pub template_file: Option<PathBuf>,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub stratified: bool,
    pub ensemble: Strategy,
    pub training: TrainingConfig,
    /// Where to write the report.
    pub output: Option<PathBuf>,
    /// Directory for per-member logit exports.
    pub export_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            checkpoint: "roberta-large".into(),
            verbalizer: VerbalizerConfig::default(),
            templates: Vec::new(),
            template_file: None,
            n: 32,
            seeds: vec![0, 1, 2],
            stratified: true,
            ensemble: Strategy::default(),
            training: TrainingConfig::default(),
            output: None,
            export_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when `path` ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| {
                Error::parse(crate::error::Location::file(path.display().to_string()), e.to_string())
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::parse(crate::error::Location::file("<config>"), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::argument("at least one seed is required"));
        }
        if self.n == 0 && matches!(self.verbalizer.kind, VerbalizerKind::Auto | VerbalizerKind::AutoMaven) {
            return Err(Error::argument("mined verbalizers need labeled data (n > 0)"));
        }
        if matches!(self.verbalizer.kind, VerbalizerKind::Auto | VerbalizerKind::AutoMaven) && self.verbalizer.k_auto == 0 {
            return Err(Error::argument("k_auto must be positive"));
        }
        if self.dataset.test_limit == Some(0) {
            return Err(Error::argument("test_limit must be positive"));
        }
        self.training.validate()
    }

    /// Stable SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_vec(&serde_json::to_value(self)?)?;
        Ok(Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            n = 8
            seeds = [4]
            [dataset]
            id = "dbpedia"
            [verbalizer]
            kind = "maven"
            embeddings = "glove:/tmp/g.txt"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.training, TrainingConfig::default());
        assert_eq!(cfg.verbalizer.k, 15);
        assert_eq!(cfg.ensemble, Strategy::Logit);
        assert_eq!(
            cfg.verbalizer.embeddings,
            EmbeddingSource::External {
                format: TextFormat::GloveText,
                path: "/tmp/g.txt".into()
            }
        );
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml("n = 0\n[verbalizer]\nkind = \"auto\"").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[verbalizer]\nembeddings = \"fasttext:x\"").is_err());
    }

    #[test]
    fn json_roundtrip_and_hash() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        let mut other = cfg.clone();
        other.n = 64;
        assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());
    }
}
