//! CORD-19 JSON parse ingestion.
//!
//! Paragraph index 0 is the title, 1 the abstract and 2.. the body texts in
//! source order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pubtator::PubTatorDocument;
use crate::store::{Store, StoreError};
use crate::tagger::{decode_document, EntityMention, EntityType, TaggerError};
use crate::text::flatten_line_breaks;

pub const TITLE_PARAGRAPH: usize = 0;
pub const ABSTRACT_PARAGRAPH: usize = 1;
pub const FIRST_BODY_PARAGRAPH: usize = 2;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed JSON: {0}")]
    JsonMalformed(#[from] serde_json::Error),
    #[error("missing or empty paper_id")]
    MissingPaperId,
    #[error("paper_id {0:?} contains a reserved character")]
    InvalidPaperId(String),
    #[error("document {0:?} has no body_text field")]
    MissingBodyText(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Which paragraphs a run or a dump covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Title and abstract only.
    Abstracts,
    /// Title, abstract and every body paragraph.
    Fulltext,
}

impl Scope {
    pub const ALL: [Scope; 2] = [Scope::Abstracts, Scope::Fulltext];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Abstracts => "abstracts",
            Scope::Fulltext => "fulltext",
        }
    }

    pub fn includes(self, paragraph: usize) -> bool {
        match self {
            Scope::Abstracts => paragraph <= ABSTRACT_PARAGRAPH,
            Scope::Fulltext => true,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "abstracts" => Ok(Scope::Abstracts),
            "fulltext" => Ok(Scope::Fulltext),
            other => Err(format!("unknown scope {other:?} (expected abstracts or fulltext)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub paper_id: String,
    pub title: String,
    pub abstract_paragraphs: Vec<String>,
    pub body_paragraphs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParagraphRef {
    pub paper_id: String,
    pub paragraph: usize,
    pub text: String,
}

impl Document {
    /// Abstract paragraphs joined with a single space.
    pub fn abstract_text(&self) -> String {
        self.abstract_paragraphs.join(" ")
    }

    pub fn paragraph_count(&self) -> usize {
        FIRST_BODY_PARAGRAPH + self.body_paragraphs.len()
    }

    /// Paragraph texts in index order, all of them.
    pub fn paragraph_texts(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.paragraph_count());
        out.push(self.title.clone());
        out.push(self.abstract_text());
        out.extend(self.body_paragraphs.iter().cloned());
        out
    }

    /// Rebuilds a document from stored paragraph texts (index order). The
    /// abstract comes back as a single paragraph.
    pub fn from_paragraph_texts(paper_id: String, mut texts: Vec<String>) -> Self {
        texts.resize(texts.len().max(FIRST_BODY_PARAGRAPH), String::new());
        let body = texts.split_off(FIRST_BODY_PARAGRAPH);
        let abstract_text = texts.pop().unwrap_or_default();
        let title = texts.pop().unwrap_or_default();
        Document {
            paper_id,
            title,
            abstract_paragraphs: if abstract_text.is_empty() {
                Vec::new()
            } else {
                vec![abstract_text]
            },
            body_paragraphs: body,
        }
    }
}

/// The paragraphs of `document` covered by `scope`, in index order.
pub fn paragraphs(document: &Document, scope: Scope) -> Vec<ParagraphRef> {
    document
        .paragraph_texts()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| scope.includes(*i))
        .map(|(paragraph, text)| ParagraphRef {
            paper_id: document.paper_id.clone(),
            paragraph,
            text,
        })
        .collect()
}

#[derive(Deserialize)]
struct RawParse {
    paper_id: Option<String>,
    #[serde(default)]
    metadata: RawMetadata,
    #[serde(rename = "abstract", default)]
    abstract_: Option<Vec<RawParagraph>>,
    body_text: Option<Vec<RawParagraph>>,
}

#[derive(Deserialize, Default)]
struct RawMetadata {
    #[serde(default)]
    title: Option<String>,
}

#[derive(Deserialize)]
struct RawParagraph {
    #[serde(default)]
    text: String,
}

/// Parses one CORD-19 JSON parse. Line breaks and tabs inside texts are
/// flattened to spaces so that every paragraph is a single line.
pub fn parse_cord19(text: &str) -> Result<Document, IngestError> {
    let raw: RawParse = serde_json::from_str(text)?;
    let paper_id = raw
        .paper_id
        .filter(|id| !id.trim().is_empty())
        .ok_or(IngestError::MissingPaperId)?;
    if paper_id.contains(['|', '\t', '\n', '\r']) {
        return Err(IngestError::InvalidPaperId(paper_id));
    }
    let body = raw
        .body_text
        .ok_or_else(|| IngestError::MissingBodyText(paper_id.clone()))?;
    let clean = |paragraphs: Vec<RawParagraph>| -> Vec<String> {
        paragraphs.into_iter().map(|p| flatten_line_breaks(&p.text)).collect()
    };
    Ok(Document {
        title: flatten_line_breaks(raw.metadata.title.as_deref().unwrap_or("")),
        abstract_paragraphs: clean(raw.abstract_.unwrap_or_default()),
        body_paragraphs: clean(body),
        paper_id,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub ingested: usize,
    /// Directory entries that are not `.json` files.
    pub skipped: usize,
    pub failed: usize,
    /// File name → error message.
    pub failures: BTreeMap<String, String>,
    /// paper_id → files that carried it, in processing order. The last one wins.
    pub duplicates: BTreeMap<String, Vec<String>>,
}

/// Upserts every `*.json` parse in `dir`, in lexicographic file order.
/// Files are parsed in parallel; store writes happen sequentially.
pub fn ingest_collection(dir: &Path, store: &Store) -> Result<IngestReport, IngestError> {
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut report = IngestReport::default();
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        } else {
            report.skipped += 1;
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let parsed: Vec<(String, Result<Document, IngestError>)> = files
        .par_iter()
        .map(|path| {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let doc = fs::read_to_string(path)
                .map_err(|source| IngestError::Io {
                    path: path.clone(),
                    source,
                })
                .and_then(|text| parse_cord19(&text));
            (name, doc)
        })
        .collect();

    let mut seen: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (name, doc) in parsed {
        match doc {
            Ok(doc) => {
                store.upsert_document(&doc)?;
                report.ingested += 1;
                seen.entry(doc.paper_id).or_default().push(name);
            }
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                report.failed += 1;
                report.failures.insert(name, e.to_string());
            }
        }
    }
    report.duplicates = seen.into_iter().filter(|(_, files)| files.len() > 1).collect();
    for (id, files) in &report.duplicates {
        log::info!("paper {id} appears in {files:?}; keeping the last");
    }
    Ok(report)
}

/// Turns PubTator documents back into corpus documents and their mentions.
///
/// Regular documents supply the title and abstract; pseudo-documents named
/// `<paper_id>:<n>` (as written by the PubTator export) supply body paragraph
/// `n`. Missing body paragraphs between supplied ones become empty strings.
pub fn documents_from_pubtator(docs: &[PubTatorDocument]) -> Result<Vec<(Document, Vec<EntityMention>)>, TaggerError> {
    let mut grouped: BTreeMap<String, (BTreeMap<usize, String>, Vec<EntityMention>)> = BTreeMap::new();
    for doc in docs {
        let decoded = decode_document(doc, &EntityType::ALL)?;
        let entry = grouped.entry(decoded.paper_id).or_default();
        entry.0.extend(decoded.paragraphs);
        entry.1.extend(decoded.mentions);
    }
    Ok(grouped
        .into_iter()
        .map(|(paper_id, (paragraphs, mentions))| {
            let count = paragraphs.keys().next_back().map_or(0, |&i| i + 1);
            let mut texts = vec![String::new(); count];
            for (i, text) in paragraphs {
                texts[i] = text;
            }
            (Document::from_paragraph_texts(paper_id, texts), mentions)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{"paper_id":"p1","metadata":{"title":"T"},"abstract":[{"text":"A"}],"body_text":[{"text":"B1"},{"text":"B2"}]}"#;

    #[test]
    fn maps_fields() {
        let doc = parse_cord19(SAMPLE).unwrap();
        assert_eq!(
            doc,
            Document {
                paper_id: "p1".into(),
                title: "T".into(),
                abstract_paragraphs: vec!["A".into()],
                body_paragraphs: vec!["B1".into(), "B2".into()],
            }
        );
    }

    #[test]
    fn missing_abstract_defaults_empty() {
        let doc = parse_cord19(r#"{"paper_id":"p1","metadata":{"title":"T"},"body_text":[]}"#).unwrap();
        assert!(doc.abstract_paragraphs.is_empty());
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_cord19("{}"), Err(IngestError::MissingPaperId)));
        assert!(matches!(parse_cord19("{"), Err(IngestError::JsonMalformed(_))));
        assert!(matches!(
            parse_cord19(r#"{"paper_id":"p1","metadata":{"title":"T"}}"#),
            Err(IngestError::MissingBodyText(_))
        ));
        assert!(matches!(
            parse_cord19(r#"{"paper_id":"a|b","body_text":[]}"#),
            Err(IngestError::InvalidPaperId(_))
        ));
    }

    #[test]
    fn line_breaks_flattened() {
        let doc =
            parse_cord19(r#"{"paper_id":"p","metadata":{"title":"a\r\nb"},"body_text":[{"text":"x\ny"}]}"#).unwrap();
        assert_eq!(doc.title, "a b");
        assert_eq!(doc.body_paragraphs, ["x y"]);
    }

    #[test]
    fn paragraph_indices() {
        let doc = parse_cord19(SAMPLE).unwrap();
        let full = paragraphs(&doc, Scope::Fulltext);
        let got: Vec<_> = full.iter().map(|p| (p.paragraph, p.text.as_str())).collect();
        assert_eq!(got, [(0, "T"), (1, "A"), (2, "B1"), (3, "B2")]);
        let abs = paragraphs(&doc, Scope::Abstracts);
        assert_eq!(abs.len(), 2);
        assert_eq!(abs[..], full[..2]);
    }

    #[test]
    fn multi_paragraph_abstract_joined() {
        let mut doc = parse_cord19(SAMPLE).unwrap();
        doc.abstract_paragraphs = vec!["A1".into(), "A2".into()];
        assert_eq!(paragraphs(&doc, Scope::Abstracts)[1].text, "A1 A2");
    }

    #[test]
    fn rebuild_from_texts() {
        let doc = parse_cord19(SAMPLE).unwrap();
        let back = Document::from_paragraph_texts("p1".into(), doc.paragraph_texts());
        assert_eq!(back, doc);
    }

    #[test]
    fn pubtator_documents_regroup() {
        let docs = crate::pubtator::parse_composed(
            "p1|t|Title\np1|a|Abstract\n\np1:3|t|p1:3\np1:3|a|Covid here\np1:3\t5\t10\tCovid\tDisease\tMESH:D1\n",
        )
        .unwrap();
        let out = documents_from_pubtator(&docs).unwrap();
        assert_eq!(out.len(), 1);
        let (doc, mentions) = &out[0];
        assert_eq!(doc.body_paragraphs, ["", "Covid here"]);
        assert_eq!(mentions[0].location.paragraph, 3);
        assert_eq!((mentions[0].location.start, mentions[0].location.end), (0, 4));
    }

    #[test]
    fn scope_parsing() {
        assert_eq!("abstracts".parse::<Scope>().unwrap(), Scope::Abstracts);
        assert!("both".parse::<Scope>().is_err());
    }
}
