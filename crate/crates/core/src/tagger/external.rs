//! Adapter for command-line taggers that read and write composed PubTator
//! files (TaggerOne, GNormPlus and compatible tools).
//!
//! Every paragraph is shipped as a pseudo-document whose id and title are both
//! `<paper_id>:<paragraph>` and whose abstract is the paragraph text, so
//! document-level offsets map back to paragraph-local ones by subtracting
//! `len(title) + 1`.

use std::collections::HashMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use crate::ingest::{ParagraphRef, ABSTRACT_PARAGRAPH, TITLE_PARAGRAPH};
use crate::pubtator::{parse_composed, serialize_composed, PubTatorDocument, RawAnnotation};
use crate::text::char_len;

use super::{
    digest, sort_mentions, Entity, EntityMention, EntityType, Location, TaggerBackend, TaggerError, ID_PREFIXES,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalConfig {
    /// Shell command; `{input}` and `{output}` are replaced by quoted paths.
    pub command: String,
    /// Parent directory for per-batch scratch directories. Defaults to the
    /// system temp directory.
    pub working_dir: Option<PathBuf>,
    pub timeout: Duration,
    pub batch_size: Option<usize>,
    pub entity_types: Vec<EntityType>,
}

pub fn pseudo_doc_id(paper_id: &str, paragraph: usize) -> String {
    format!("{paper_id}:{paragraph}")
}

/// Splits `<paper_id>:<paragraph>`; the paper id itself may contain colons.
pub fn parse_pseudo_doc_id(doc_id: &str) -> Option<(&str, usize)> {
    let (paper_id, index) = doc_id.rsplit_once(':')?;
    if paper_id.is_empty() || index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((paper_id, index.parse().ok()?))
}

pub fn package_paragraph(paragraph: &ParagraphRef) -> PubTatorDocument {
    let id = pseudo_doc_id(&paragraph.paper_id, paragraph.paragraph);
    PubTatorDocument::new(id.clone(), id, paragraph.text.clone())
}

/// Converts a document-level annotation on a pseudo-document back to a
/// paragraph-local location with an inclusive end.
pub fn map_offsets(
    origin: &PubTatorDocument,
    annotation: &RawAnnotation,
    paragraph_index: usize,
) -> Result<Location, TaggerError> {
    let offset = origin.abstract_offset();
    let unmappable = || TaggerError::OffsetUnmappable {
        doc_id: origin.doc_id.clone(),
        start: annotation.start,
        end: annotation.end,
    };
    if annotation.start < offset || annotation.end <= annotation.start {
        return Err(unmappable());
    }
    let end = annotation.end - offset - 1;
    if end >= char_len(&origin.abstract_text) {
        return Err(unmappable());
    }
    Ok(Location {
        paragraph: paragraph_index,
        start: annotation.start - offset,
        end,
    })
}

fn normalize_entity_id(raw: &str, entity_type: EntityType) -> Option<String> {
    let raw = raw.trim();
    if raw.is_empty() || raw == "-" {
        return None;
    }
    if ID_PREFIXES.iter().any(|p| raw.starts_with(p)) {
        return Some(raw.to_string());
    }
    let bare = ["Tax:", "tax:", "MeSH:", "Mesh:", "mesh:", "Gene:", "gene:"]
        .iter()
        .find_map(|p| raw.strip_prefix(p))
        .unwrap_or(raw);
    Some(format!("{}{}", entity_type.default_prefix(), bare))
}

fn to_mention(
    paper_id: &str,
    location: Location,
    annotation: &RawAnnotation,
    allowed: &[EntityType],
) -> Option<EntityMention> {
    let entity_type: EntityType = annotation.type_label.parse().ok()?;
    if !allowed.contains(&entity_type) {
        return None;
    }
    let entity_id = normalize_entity_id(&annotation.id_label, entity_type)?;
    match Entity::new(entity_id, entity_type) {
        Ok(entity) => Some(EntityMention {
            paper_id: paper_id.to_string(),
            location,
            entity_str: annotation.surface.clone(),
            entity,
        }),
        Err(e) => {
            log::warn!("dropping annotation in {paper_id}: {e}");
            None
        }
    }
}

/// A PubTator document turned back into paragraphs and located mentions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedDocument {
    pub paper_id: String,
    /// `(paragraph index, text)` pairs carried by the document.
    pub paragraphs: Vec<(usize, String)>,
    pub mentions: Vec<EntityMention>,
}

/// Decodes either a pseudo-document (one paragraph) or a regular document
/// (title as paragraph 0, abstract as paragraph 1). Annotations whose type is
/// not in `allowed` are dropped.
pub fn decode_document(doc: &PubTatorDocument, allowed: &[EntityType]) -> Result<DecodedDocument, TaggerError> {
    if let Some((paper_id, index)) = parse_pseudo_doc_id(&doc.doc_id).filter(|_| doc.title == doc.doc_id) {
        let mut mentions = Vec::new();
        for a in &doc.annotations {
            let location = map_offsets(doc, a, index)?;
            mentions.extend(to_mention(paper_id, location, a, allowed));
        }
        return Ok(DecodedDocument {
            paper_id: paper_id.to_string(),
            paragraphs: vec![(index, doc.abstract_text.clone())],
            mentions,
        });
    }

    let title_len = char_len(&doc.title);
    let offset = doc.abstract_offset();
    let mut mentions = Vec::new();
    for a in &doc.annotations {
        let location = if a.end <= title_len {
            Location {
                paragraph: TITLE_PARAGRAPH,
                start: a.start,
                end: a.end - 1,
            }
        } else if a.start >= offset {
            map_offsets(doc, a, ABSTRACT_PARAGRAPH)?
        } else {
            return Err(TaggerError::OffsetUnmappable {
                doc_id: doc.doc_id.clone(),
                start: a.start,
                end: a.end,
            });
        };
        mentions.extend(to_mention(&doc.doc_id, location, a, allowed));
    }
    Ok(DecodedDocument {
        paper_id: doc.doc_id.clone(),
        paragraphs: vec![
            (TITLE_PARAGRAPH, doc.title.clone()),
            (ABSTRACT_PARAGRAPH, doc.abstract_text.clone()),
        ],
        mentions,
    })
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> TaggerError {
    let context = context.into();
    move |source| TaggerError::Io { context, source }
}

#[cfg(unix)]
fn kill_tree(child: &mut std::process::Child) {
    // The child leads its own process group; take the whole group down so
    // grandchildren spawned by the shell do not linger.
    unsafe {
        libc::kill(-(child.id() as i32), libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_tree(child: &mut std::process::Child) {
    let _ = child.kill();
}

fn tail(path: &Path, max: usize) -> String {
    let text = fs::read_to_string(path).unwrap_or_default();
    let text = text.trim();
    match text.char_indices().rev().nth(max) {
        Some((i, _)) => format!("...{}", &text[i..]),
        None => text.to_string(),
    }
}

/// Runs the external command once over `batch` (pseudo-documents) and returns
/// the mentions it reports, with paragraph-local locations.
pub fn run_external(config: &ExternalConfig, batch: &[PubTatorDocument]) -> Result<Vec<EntityMention>, TaggerError> {
    let root = config.working_dir.clone().unwrap_or_else(std::env::temp_dir);
    fs::create_dir_all(&root).map_err(io_err(root.display().to_string()))?;
    let scratch = tempfile::Builder::new()
        .prefix("cordner-batch-")
        .tempdir_in(&root)
        .map_err(io_err("creating scratch directory"))?;
    let input = scratch.path().join("input.pubtator");
    let output = scratch.path().join("output.pubtator");
    let stderr_path = scratch.path().join("stderr.log");

    fs::write(&input, serialize_composed(batch)?).map_err(io_err(input.display().to_string()))?;

    let command = config
        .command
        .replace("{input}", &shell_quote(&input))
        .replace("{output}", &shell_quote(&output));
    let stderr = File::create(&stderr_path).map_err(io_err("creating stderr log"))?;
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&command)
        .current_dir(scratch.path())
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(stderr);
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let mut child = cmd.spawn().map_err(io_err(format!("spawning {command:?}")))?;

    let deadline = Instant::now() + config.timeout;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(io_err("waiting for tagger"))? {
            break status;
        }
        if Instant::now() >= deadline {
            kill_tree(&mut child);
            let _ = child.wait();
            return Err(TaggerError::ProcessTimeout(config.timeout));
        }
        thread::sleep(Duration::from_millis(2));
    };
    if !status.success() {
        return Err(TaggerError::NonZeroExit {
            code: status.code(),
            stderr: tail(&stderr_path, 2000),
        });
    }

    let text = fs::read_to_string(&output)
        .map_err(|e| TaggerError::OutputUnparseable(format!("cannot read output file: {e}")))?;
    let documents = parse_composed(&text).map_err(|e| TaggerError::OutputUnparseable(e.to_string()))?;

    let sent: HashMap<&str, &PubTatorDocument> = batch.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut mentions = Vec::new();
    for doc in &documents {
        let origin = sent
            .get(doc.doc_id.as_str())
            .ok_or_else(|| TaggerError::OutputUnparseable(format!("unexpected document {:?} in output", doc.doc_id)))?;
        if origin.title != doc.title || origin.abstract_text != doc.abstract_text {
            return Err(TaggerError::OutputUnparseable(format!(
                "text of document {:?} changed",
                doc.doc_id
            )));
        }
        mentions.extend(decode_document(doc, &config.entity_types)?.mentions);
    }
    sort_mentions(&mut mentions);
    mentions.dedup();
    Ok(mentions)
}

/// [`TaggerBackend`] wrapper around [`run_external`].
pub struct ExternalTagger {
    name: String,
    config: ExternalConfig,
}

impl ExternalTagger {
    pub fn new(name: &str, mut config: ExternalConfig) -> Self {
        config.entity_types.sort();
        config.entity_types.dedup();
        Self {
            name: name.to_string(),
            config,
        }
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }
}

impl TaggerBackend for ExternalTagger {
    fn name(&self) -> &str {
        &self.name
    }

    fn entity_types(&self) -> &[EntityType] {
        &self.config.entity_types
    }

    fn fingerprint(&self) -> String {
        let mut parts = vec![
            "external-process".to_string(),
            self.name.clone(),
            self.config.command.clone(),
        ];
        parts.extend(self.config.entity_types.iter().map(|t| t.to_string()));
        digest(parts)
    }

    fn batch_size(&self) -> Option<usize> {
        self.config.batch_size
    }

    fn tag_batch(&self, paragraphs: &[ParagraphRef]) -> Result<Vec<EntityMention>, TaggerError> {
        let texts: HashMap<(&str, usize), &str> = paragraphs
            .iter()
            .map(|p| ((p.paper_id.as_str(), p.paragraph), p.text.as_str()))
            .collect();
        let docs: Vec<PubTatorDocument> = paragraphs
            .iter()
            .filter(|p| !p.text.is_empty())
            .map(package_paragraph)
            .collect();
        if docs.is_empty() {
            return Ok(Vec::new());
        }
        let mentions = run_external(&self.config, &docs)?;
        for m in &mentions {
            let text = texts.get(&(m.paper_id.as_str(), m.location.paragraph)).copied();
            if !text.is_some_and(|t| m.spans_correctly(t)) {
                return Err(TaggerError::OutputUnparseable(format!(
                    "mention {:?} at {:?} does not match paragraph text",
                    m.entity_str, m.location
                )));
            }
        }
        Ok(mentions)
    }
}
