//! PubTator exchange format.
//!
//! A document is a title line `<id>|t|<text>`, an abstract line
//! `<id>|a|<text>` and zero or more annotation lines
//! `<id>\t<start>\t<end>\t<surface>\t<type>\t<entity_id>`. Annotation offsets
//! are document-level: they index into `title + " " + abstract`, counted in
//! characters, with an exclusive end. A composed file holds several documents
//! separated by blank lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::text::{char_len, char_slice};

#[derive(Debug, Error)]
pub enum PubTatorError {
    #[error("line {line}: malformed PubTator line: {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("line {line}: document id {found:?} does not match {expected:?}")]
    IdMismatch {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("document {doc_id:?} has no {part} line")]
    MissingText { doc_id: String, part: &'static str },
    #[error("document {doc_id:?}: span [{start}, {end}) out of bounds for text of length {text_len}")]
    SpanOutOfBounds {
        doc_id: String,
        start: usize,
        end: usize,
        text_len: usize,
    },
    #[error("document {doc_id:?}: annotation [{start}, {end}) surface {surface:?} != text {actual:?}")]
    SurfaceMismatch {
        doc_id: String,
        start: usize,
        end: usize,
        surface: String,
        actual: String,
    },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("block {block}: {source}")]
    InBlock {
        block: usize,
        #[source]
        source: Box<PubTatorError>,
    },
    #[error("cannot read directory {path}: {source}")]
    DirectoryUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PubTatorError {
    /// Strips block context, returning the underlying error.
    pub fn root(&self) -> &PubTatorError {
        match self {
            PubTatorError::InBlock { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAnnotation {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub type_label: String,
    pub id_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PubTatorDocument {
    pub doc_id: String,
    pub title: String,
    pub abstract_text: String,
    pub annotations: Vec<RawAnnotation>,
}

impl PubTatorDocument {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
            annotations: Vec::new(),
        }
    }

    /// The text annotation offsets refer to: title, one space, abstract.
    pub fn full_text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }

    /// Character offset at which the abstract starts in [`full_text`](Self::full_text).
    pub fn abstract_offset(&self) -> usize {
        char_len(&self.title) + 1
    }

    /// Checks every document and annotation invariant.
    pub fn validate(&self) -> Result<(), PubTatorError> {
        let bad = |msg: String| Err(PubTatorError::InvariantViolation(msg));
        if self.doc_id.is_empty() {
            return bad("empty document id".into());
        }
        if self.doc_id.contains(['|', '\t', '\n', '\r']) {
            return bad(format!("document id {:?} contains a separator", self.doc_id));
        }
        if self.title.contains(['\n', '\r']) || self.abstract_text.contains(['\n', '\r']) {
            return bad(format!("document {:?}: text contains a line break", self.doc_id));
        }
        let text = self.full_text();
        for a in &self.annotations {
            for field in [&a.surface, &a.type_label, &a.id_label] {
                if field.contains(['\t', '\n', '\r']) {
                    return bad(format!(
                        "document {:?}: annotation field {:?} contains a tab or line break",
                        self.doc_id, field
                    ));
                }
            }
            check_span(&self.doc_id, &text, a)?;
        }
        Ok(())
    }
}

fn check_span(doc_id: &str, text: &str, a: &RawAnnotation) -> Result<(), PubTatorError> {
    let text_len = char_len(text);
    if a.start >= a.end || a.end > text_len {
        return Err(PubTatorError::SpanOutOfBounds {
            doc_id: doc_id.to_string(),
            start: a.start,
            end: a.end,
            text_len,
        });
    }
    let actual = char_slice(text, a.start, a.end).unwrap_or_default();
    if actual != a.surface {
        return Err(PubTatorError::SurfaceMismatch {
            doc_id: doc_id.to_string(),
            start: a.start,
            end: a.end,
            surface: a.surface.clone(),
            actual: actual.to_string(),
        });
    }
    Ok(())
}

enum Line<'a> {
    Title(&'a str, &'a str),
    Abstract(&'a str, &'a str),
    Annotation(Vec<&'a str>),
}

fn classify(line: &str) -> Option<Line<'_>> {
    if let Some((id, rest)) = line.split_once('|') {
        if !id.is_empty() && !id.contains('\t') {
            if let Some(text) = rest.strip_prefix("t|") {
                return Some(Line::Title(id, text));
            }
            if let Some(text) = rest.strip_prefix("a|") {
                return Some(Line::Abstract(id, text));
            }
        }
    }
    let fields: Vec<&str> = line.split('\t').collect();
    (fields.len() == 6).then_some(Line::Annotation(fields))
}

fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

/// Splits input into `(1-based line number, line)` pairs, tolerating `\r\n`.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

fn parse_block(lines: &[(usize, &str)]) -> Result<PubTatorDocument, PubTatorError> {
    let malformed = |line: usize, content: &str| PubTatorError::MalformedLine {
        line,
        content: content.to_string(),
    };
    let mut iter = lines.iter().filter(|(_, l)| !is_blank(l));

    let (title_no, title_line) = iter.next().ok_or_else(|| PubTatorError::MissingText {
        doc_id: String::new(),
        part: "title",
    })?;
    let (doc_id, title) = match classify(title_line) {
        Some(Line::Title(id, text)) => (id, text),
        Some(Line::Abstract(id, _)) => {
            return Err(PubTatorError::MissingText {
                doc_id: id.to_string(),
                part: "title",
            })
        }
        _ => return Err(malformed(*title_no, title_line)),
    };
    let abstract_text = match iter.next() {
        None => {
            return Err(PubTatorError::MissingText {
                doc_id: doc_id.to_string(),
                part: "abstract",
            })
        }
        Some((no, line)) => match classify(line) {
            Some(Line::Abstract(id, text)) if id == doc_id => text,
            Some(Line::Abstract(id, _)) => {
                return Err(PubTatorError::IdMismatch {
                    line: *no,
                    expected: doc_id.to_string(),
                    found: id.to_string(),
                })
            }
            Some(Line::Annotation(_)) => {
                return Err(PubTatorError::MissingText {
                    doc_id: doc_id.to_string(),
                    part: "abstract",
                })
            }
            _ => return Err(malformed(*no, line)),
        },
    };

    let mut doc = PubTatorDocument::new(doc_id, title, abstract_text);
    let text = doc.full_text();
    for (no, line) in iter {
        let fields = match classify(line) {
            Some(Line::Annotation(fields)) => fields,
            _ => return Err(malformed(*no, line)),
        };
        if fields[0] != doc_id {
            return Err(PubTatorError::IdMismatch {
                line: *no,
                expected: doc_id.to_string(),
                found: fields[0].to_string(),
            });
        }
        let start = fields[1].parse().map_err(|_| malformed(*no, line))?;
        let end = fields[2].parse().map_err(|_| malformed(*no, line))?;
        let annotation = RawAnnotation {
            start,
            end,
            surface: fields[3].to_string(),
            type_label: fields[4].to_string(),
            id_label: fields[5].to_string(),
        };
        check_span(doc_id, &text, &annotation)?;
        doc.annotations.push(annotation);
    }
    Ok(doc)
}

/// Parses exactly one PubTator document.
pub fn parse_single(text: &str) -> Result<PubTatorDocument, PubTatorError> {
    let lines: Vec<_> = numbered_lines(text).collect();
    parse_block(&lines)
}

/// Parses a composed file: any number of documents separated by runs of blank
/// lines. Errors carry the zero-based index of the offending block.
pub fn parse_composed(text: &str) -> Result<Vec<PubTatorDocument>, PubTatorError> {
    let mut docs = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let flush = |block: &mut Vec<(usize, &str)>, docs: &mut Vec<PubTatorDocument>| {
        if block.is_empty() {
            return Ok(());
        }
        let index = docs.len();
        let doc = parse_block(block).map_err(|e| PubTatorError::InBlock {
            block: index,
            source: Box::new(e),
        })?;
        docs.push(doc);
        block.clear();
        Ok(())
    };
    for (no, line) in numbered_lines(text) {
        if is_blank(line) {
            flush(&mut block, &mut docs)?;
        } else {
            block.push((no, line));
        }
    }
    flush(&mut block, &mut docs)?;
    Ok(docs)
}

/// Renders one document, including the trailing newline.
pub fn serialize(document: &PubTatorDocument) -> Result<String, PubTatorError> {
    document.validate().map_err(|e| match e {
        PubTatorError::InvariantViolation(_) => e,
        other => PubTatorError::InvariantViolation(other.to_string()),
    })?;
    let d = document;
    let mut out = String::new();
    // Writing into a String cannot fail.
    let _ = writeln!(out, "{}|t|{}", d.doc_id, d.title);
    let _ = writeln!(out, "{}|a|{}", d.doc_id, d.abstract_text);
    for a in &d.annotations {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            d.doc_id, a.start, a.end, a.surface, a.type_label, a.id_label
        );
    }
    Ok(out)
}

/// Renders several documents as one composed file, one blank line between
/// documents.
pub fn serialize_composed<'a, I>(documents: I) -> Result<String, PubTatorError>
where
    I: IntoIterator<Item = &'a PubTatorDocument>,
{
    let mut out = String::new();
    for (i, doc) in documents.into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&serialize(doc)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// File extensions (without the dot) that are picked up.
    pub extensions: Vec<String>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            extensions: vec!["txt".into(), "pubtator".into()],
        }
    }
}

#[derive(Debug)]
pub struct ScanEntry {
    pub file_name: String,
    pub result: Result<Vec<PubTatorDocument>, PubTatorError>,
}

/// Lazily parses the files of a directory in lexicographic file-name order.
pub struct DirectoryScan {
    files: std::vec::IntoIter<PathBuf>,
}

impl Iterator for DirectoryScan {
    type Item = ScanEntry;

    fn next(&mut self) -> Option<ScanEntry> {
        let path = self.files.next()?;
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let result = fs::read_to_string(&path)
            .map_err(|source| PubTatorError::FileUnreadable {
                path: path.clone(),
                source,
            })
            .and_then(|text| parse_composed(&text));
        Some(ScanEntry { file_name, result })
    }
}

pub fn scan_directory(path: &Path) -> Result<DirectoryScan, PubTatorError> {
    scan_directory_with(path, &ScanOptions::default())
}

pub fn scan_directory_with(path: &Path, options: &ScanOptions) -> Result<DirectoryScan, PubTatorError> {
    let unreadable = |source| PubTatorError::DirectoryUnreadable {
        path: path.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(path).map_err(unreadable)? {
        let entry = entry.map_err(unreadable)?;
        let p = entry.path();
        if !p.is_file() {
            continue;
        }
        let wanted = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| options.extensions.iter().any(|x| x == e));
        if wanted {
            files.push(p);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(DirectoryScan {
        files: files.into_iter(),
    })
}
