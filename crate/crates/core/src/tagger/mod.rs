//! Entity model and the tagger backends that produce mentions.

mod external;
mod lexicon;
mod overlap;
mod vocabulary;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::ParagraphRef;
use crate::pubtator::PubTatorError;
use crate::text::char_slice_inclusive;

pub use external::{
    decode_document, map_offsets, package_paragraph, parse_pseudo_doc_id, pseudo_doc_id, run_external, ExternalConfig,
    ExternalTagger,
};
pub use lexicon::{tag_paragraph, LexiconTagger};
pub use overlap::resolve_overlaps;
pub use vocabulary::{fold_char, load_vocabulary, VocabEntry, Vocabulary, VocabularyError, CASE_INSENSITIVE_MIN_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    Chemical,
    Disease,
    Gene,
    Species,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [
        EntityType::Chemical,
        EntityType::Disease,
        EntityType::Gene,
        EntityType::Species,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Chemical => "Chemical",
            EntityType::Disease => "Disease",
            EntityType::Gene => "Gene",
            EntityType::Species => "Species",
        }
    }

    /// Id prefix used when an upstream tool reports a bare identifier.
    fn default_prefix(self) -> &'static str {
        match self {
            EntityType::Chemical | EntityType::Disease => "MESH:",
            EntityType::Gene => "GENE:",
            EntityType::Species => "TAXON:",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown entity type {s:?}"))
    }
}

/// Recognised vocabulary prefixes for entity ids.
pub const ID_PREFIXES: [&str; 4] = ["MESH:", "OMIM:", "GENE:", "TAXON:"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Entity {
    pub entity_id: String,
    pub entity_type: EntityType,
}

impl Entity {
    /// Builds an entity, requiring one of [`ID_PREFIXES`] followed by a
    /// non-empty local id.
    pub fn new(entity_id: impl Into<String>, entity_type: EntityType) -> Result<Self, String> {
        let entity_id = entity_id.into();
        let ok = ID_PREFIXES
            .iter()
            .any(|p| entity_id.strip_prefix(p).is_some_and(|rest| !rest.is_empty()));
        if !ok || entity_id.contains(['\t', '\n', '\r']) {
            return Err(format!("invalid entity id {entity_id:?}"));
        }
        Ok(Self { entity_id, entity_type })
    }
}

/// Paragraph-local position. `end` is the index of the last character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub paragraph: usize,
    pub start: usize,
    pub end: usize,
}

impl Location {
    /// Number of characters covered.
    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn overlaps(&self, other: &Location) -> bool {
        self.paragraph == other.paragraph && self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntityMention {
    pub paper_id: String,
    pub location: Location,
    pub entity_str: String,
    pub entity: Entity,
}

impl EntityMention {
    /// True when `entity_str` is exactly the inclusive slice of `paragraph_text`.
    pub fn spans_correctly(&self, paragraph_text: &str) -> bool {
        !self.entity_str.is_empty()
            && self.location.start <= self.location.end
            && char_slice_inclusive(paragraph_text, self.location.start, self.location.end)
                == Some(self.entity_str.as_str())
    }

    /// Export order: paper, paragraph, start, end, type, id.
    pub fn sort_key(&self) -> (&str, usize, usize, usize, EntityType, &str) {
        (
            &self.paper_id,
            self.location.paragraph,
            self.location.start,
            self.location.end,
            self.entity.entity_type,
            &self.entity.entity_id,
        )
    }
}

pub fn sort_mentions(mentions: &mut [EntityMention]) {
    mentions.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("external tagger exceeded its {0:?} timeout")]
    ProcessTimeout(Duration),
    #[error("external tagger exited with {code:?}: {stderr}")]
    NonZeroExit { code: Option<i32>, stderr: String },
    #[error("external tagger output unusable: {0}")]
    OutputUnparseable(String),
    #[error("annotation [{start}, {end}) in {doc_id:?} cannot be mapped to a paragraph")]
    OffsetUnmappable { doc_id: String, start: usize, end: usize },
    #[error("i/o error in {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    PubTator(#[from] PubTatorError),
    #[error(transparent)]
    Vocabulary(#[from] VocabularyError),
    #[error("{0}")]
    Backend(String),
}

/// A source of entity mentions. Implementations must be deterministic and
/// safe to call from several worker threads at once.
pub trait TaggerBackend: Send + Sync {
    fn name(&self) -> &str;

    fn entity_types(&self) -> &[EntityType];

    /// Identifies the configuration; completed work is only reused when the
    /// fingerprint matches.
    fn fingerprint(&self) -> String;

    /// Preferred number of documents per batch, if the backend has one.
    fn batch_size(&self) -> Option<usize> {
        None
    }

    fn tag_batch(&self, paragraphs: &[ParagraphRef]) -> Result<Vec<EntityMention>, TaggerError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendKind {
    BuiltinLexicon {
        vocabulary: PathBuf,
    },
    ExternalProcess {
        /// Shell command with `{input}` and `{output}` placeholders.
        command: String,
        /// Parent of the per-batch scratch directories.
        #[serde(default)]
        working_dir: Option<PathBuf>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        batch_size: Option<usize>,
    },
}

fn default_timeout() -> u64 {
    600
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggerBackendConfig {
    pub name: String,
    pub entity_types: Vec<EntityType>,
    #[serde(flatten)]
    pub kind: BackendKind,
}

impl TaggerBackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("backend name must not be empty".into());
        }
        if self.entity_types.is_empty() {
            return Err(format!("backend {:?} declares no entity types", self.name));
        }
        if let BackendKind::ExternalProcess {
            command,
            timeout_secs,
            batch_size,
            ..
        } = &self.kind
        {
            if *timeout_secs == 0 {
                return Err(format!("backend {:?}: timeout must be > 0", self.name));
            }
            if *batch_size == Some(0) {
                return Err(format!("backend {:?}: batch size must be >= 1", self.name));
            }
            if !command.contains("{input}") || !command.contains("{output}") {
                return Err(format!(
                    "backend {:?}: command must contain {{input}} and {{output}}",
                    self.name
                ));
            }
        }
        Ok(())
    }

    /// Instantiates the backend. Relative paths resolve against `base_dir`;
    /// `scratch_root` is used when no working directory is configured.
    pub fn build(&self, base_dir: &Path, scratch_root: Option<&Path>) -> Result<Box<dyn TaggerBackend>, TaggerError> {
        self.validate().map_err(TaggerError::Backend)?;
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        match &self.kind {
            BackendKind::BuiltinLexicon { vocabulary } => {
                let path = resolve(vocabulary);
                let text = std::fs::read_to_string(&path).map_err(|source| TaggerError::Io {
                    context: path.display().to_string(),
                    source,
                })?;
                let vocab = load_vocabulary(&text)?;
                Ok(Box::new(LexiconTagger::new(&self.name, vocab, &self.entity_types)))
            }
            BackendKind::ExternalProcess {
                command,
                working_dir,
                timeout_secs,
                batch_size,
            } => {
                let config = ExternalConfig {
                    command: command.clone(),
                    working_dir: working_dir
                        .as_deref()
                        .map(resolve)
                        .or_else(|| scratch_root.map(Path::to_path_buf)),
                    timeout: Duration::from_secs(*timeout_secs),
                    batch_size: *batch_size,
                    entity_types: self.entity_types.clone(),
                };
                Ok(Box::new(ExternalTagger::new(&self.name, config)))
            }
        }
    }
}

pub(crate) fn digest<I, S>(parts: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    for part in parts {
        let part = part.as_ref();
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entity_type_strings() {
        for t in EntityType::ALL {
            assert_eq!(t.as_str().parse::<EntityType>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{t}\""));
        }
        assert!("Protein".parse::<EntityType>().is_err());
    }

    #[test]
    fn entity_prefixes() {
        assert!(Entity::new("MESH:D019821", EntityType::Chemical).is_ok());
        assert!(Entity::new("OMIM:603903", EntityType::Disease).is_ok());
        assert!(Entity::new("D019821", EntityType::Chemical).is_err());
        assert!(Entity::new("MESH:", EntityType::Chemical).is_err());
    }

    #[test]
    fn span_check() {
        let m = EntityMention {
            paper_id: "p".into(),
            location: Location {
                paragraph: 1,
                start: 7,
                end: 11,
            },
            entity_str: "Covid".into(),
            entity: Entity::new("MESH:D000086382", EntityType::Disease).unwrap(),
        };
        assert!(m.spans_correctly("Severe Covid cases"));
        assert!(!m.spans_correctly("Severe covid cases"));
        assert!(!m.spans_correctly("Severe Cov"));
    }

    #[test]
    fn backend_config_from_toml() {
        let cfg: TaggerBackendConfig = toml::from_str(
            r#"
            name = "gnormplus"
            kind = "external-process"
            command = "run {input} {output}"
            timeout_secs = 5
            entity_types = ["Gene", "Species"]
            "#,
        )
        .unwrap();
        assert!(cfg.validate().is_ok());
        assert!(matches!(cfg.kind, BackendKind::ExternalProcess { timeout_secs: 5, .. }));

        let mut bad = cfg.clone();
        bad.kind = BackendKind::ExternalProcess {
            command: "run {input}".into(),
            working_dir: None,
            timeout_secs: 5,
            batch_size: None,
        };
        assert!(bad.validate().is_err());
    }
}
