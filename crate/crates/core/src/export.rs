//! Mention dumps (JSON and PubTator), per-type statistics and dump
//! validation.
//!
//! JSON dumps map each paper id to its mention records:
//!
//! ```json
//! {
//!   "<paper_id>": [
//!     {
//!       "entity_id": "MESH:D000086382",
//!       "entity_str": "Covid",
//!       "entity_type": "Disease",
//!       "location": {
//!         "end": 11,
//!         "paragraph": 1,
//!         "start": 7
//!       }
//!     }
//!   ]
//! }
//! ```
//!
//! Paragraph 0 is the title, 1 the abstract, 2.. the body texts. `end` is the
//! index of the last character (inclusive), whereas PubTator output uses
//! exclusive ends: `exclusive = inclusive + 1`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Scope, ABSTRACT_PARAGRAPH, FIRST_BODY_PARAGRAPH, TITLE_PARAGRAPH};
use crate::pubtator::{serialize_composed, PubTatorDocument, PubTatorError, RawAnnotation};
use crate::store::{MentionFilter, Store, StoreError};
use crate::tagger::{pseudo_doc_id, EntityMention, EntityType};
use crate::text::{char_len, char_slice_inclusive};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot write {path}: {source}")]
    WriteFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    PubTator(#[from] PubTatorError),
    #[error("dump is not valid JSON: {0}")]
    DumpUnparseable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpLocation {
    pub end: usize,
    pub paragraph: usize,
    pub start: usize,
}

/// One mention record in a JSON dump. Fields are declared in sorted order
/// so serialization emits sorted keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpRecord {
    pub entity_id: String,
    pub entity_str: String,
    pub entity_type: EntityType,
    pub location: DumpLocation,
}

impl From<&EntityMention> for DumpRecord {
    fn from(m: &EntityMention) -> Self {
        DumpRecord {
            entity_id: m.entity.entity_id.clone(),
            entity_str: m.entity_str.clone(),
            entity_type: m.entity.entity_type,
            location: DumpLocation {
                end: m.location.end,
                paragraph: m.location.paragraph,
                start: m.location.start,
            },
        }
    }
}

pub type Dump = BTreeMap<String, Vec<DumpRecord>>;

/// Mentions of `scope` grouped by paper id, with an empty list for every
/// stored document that has none.
pub fn build_dump(store: &Store, scope: Scope) -> Result<Dump, ExportError> {
    let mut dump: Dump = store.document_ids()?.into_iter().map(|id| (id, Vec::new())).collect();
    for m in store.query_mentions(&MentionFilter::scope(scope))? {
        dump.entry(m.paper_id.clone()).or_default().push(DumpRecord::from(&m));
    }
    Ok(dump)
}

/// Writes the dump for `scope` to `writer`: two-space indentation, sorted
/// keys, trailing newline. Returns the number of records.
pub fn write_json<W: Write>(store: &Store, scope: Scope, writer: W) -> Result<usize, ExportError> {
    let dump = build_dump(store, scope)?;
    let count = dump.values().map(Vec::len).sum();
    let mut writer = writer;
    let io = |source| ExportError::WriteFailure {
        path: PathBuf::from("<writer>"),
        source,
    };
    serde_json::to_writer_pretty(&mut writer, &dump).map_err(|e| io(e.into()))?;
    writer.write_all(b"\n").map_err(io)?;
    writer.flush().map_err(io)?;
    Ok(count)
}

pub fn export_json(store: &Store, scope: Scope, destination: &Path) -> Result<usize, ExportError> {
    let fail = |source| ExportError::WriteFailure {
        path: destination.to_path_buf(),
        source,
    };
    let file = File::create(destination).map_err(fail)?;
    write_json(store, scope, BufWriter::new(file)).map_err(|e| match e {
        ExportError::WriteFailure { source, .. } => fail(source),
        other => other,
    })
}

fn exclusive(start: usize, end_inclusive: usize, offset: usize, m: &EntityMention) -> RawAnnotation {
    RawAnnotation {
        start: start + offset,
        end: end_inclusive + 1 + offset,
        surface: m.entity_str.clone(),
        type_label: m.entity.entity_type.to_string(),
        id_label: m.entity.entity_id.clone(),
    }
}

/// PubTator documents for a store: one regular document per paper (title and
/// abstract), followed, for the fulltext scope, by one pseudo-document per
/// body paragraph.
pub fn pubtator_documents(store: &Store, scope: Scope) -> Result<Vec<Vec<PubTatorDocument>>, ExportError> {
    let mut by_paragraph: HashMap<(String, usize), Vec<EntityMention>> = HashMap::new();
    for m in store.query_mentions(&MentionFilter::scope(scope))? {
        by_paragraph
            .entry((m.paper_id.clone(), m.location.paragraph))
            .or_default()
            .push(m);
    }
    let mut take = |id: &str, p: usize| by_paragraph.remove(&(id.to_string(), p)).unwrap_or_default();

    let mut out = Vec::new();
    for doc in store.load_documents()? {
        let texts = doc.paragraph_texts();
        let mut main = PubTatorDocument::new(
            doc.paper_id.clone(),
            texts[TITLE_PARAGRAPH].clone(),
            texts[ABSTRACT_PARAGRAPH].clone(),
        );
        let offset = main.abstract_offset();
        for m in take(&doc.paper_id, TITLE_PARAGRAPH) {
            main.annotations
                .push(exclusive(m.location.start, m.location.end, 0, &m));
        }
        for m in take(&doc.paper_id, ABSTRACT_PARAGRAPH) {
            main.annotations
                .push(exclusive(m.location.start, m.location.end, offset, &m));
        }
        let mut group = vec![main];
        if scope == Scope::Fulltext {
            for (idx, text) in texts.iter().enumerate().skip(FIRST_BODY_PARAGRAPH) {
                let id = pseudo_doc_id(&doc.paper_id, idx);
                let mut pseudo = PubTatorDocument::new(id.clone(), id, text.clone());
                let offset = pseudo.abstract_offset();
                for m in take(&doc.paper_id, idx) {
                    pseudo
                        .annotations
                        .push(exclusive(m.location.start, m.location.end, offset, &m));
                }
                group.push(pseudo);
            }
        }
        out.push(group);
    }
    Ok(out)
}

/// Writes composed PubTator files of `docs_per_file` papers each into
/// `directory` (`part-00000.pubtator`, ...). Returns the number of files.
pub fn export_pubtator(
    store: &Store,
    scope: Scope,
    directory: &Path,
    docs_per_file: usize,
) -> Result<usize, ExportError> {
    let fail = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExportError::WriteFailure { path, source }
    };
    let groups = pubtator_documents(store, scope)?;
    if groups.is_empty() {
        return Ok(0);
    }
    fs::create_dir_all(directory).map_err(fail(directory))?;
    let mut files = 0;
    for (i, chunk) in groups.chunks(docs_per_file.max(1)).enumerate() {
        let path = directory.join(format!("part-{i:05}.pubtator"));
        let text = serialize_composed(chunk.iter().flatten())?;
        fs::write(&path, text).map_err(fail(&path))?;
        files += 1;
    }
    Ok(files)
}

/// Mention counts per scope and entity type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsTable {
    pub counts: BTreeMap<Scope, BTreeMap<EntityType, u64>>,
}

impl StatsTable {
    pub fn get(&self, scope: Scope, entity_type: EntityType) -> u64 {
        self.counts
            .get(&scope)
            .and_then(|row| row.get(&entity_type))
            .copied()
            .unwrap_or(0)
    }

    /// Renders rows per scope and one column per entity type.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "Corpus");
        for t in EntityType::ALL {
            let _ = write!(out, " {:>10}", t.as_str());
        }
        out.push('\n');
        for scope in Scope::ALL {
            let label = match scope {
                Scope::Abstracts => "Abstracts",
                Scope::Fulltext => "Fulltexts",
            };
            let _ = write!(out, "{label:<10}");
            for t in EntityType::ALL {
                let _ = write!(out, " {:>10}", self.get(scope, t));
            }
            out.push('\n');
        }
        out
    }
}

pub fn compute_stats(store: &Store) -> Result<StatsTable, ExportError> {
    let mut counts = BTreeMap::new();
    for scope in Scope::ALL {
        counts.insert(scope, store.mention_counts(scope)?);
    }
    Ok(StatsTable { counts })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub documents: usize,
    pub records: usize,
    pub errors: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Checks a JSON dump against the record schema and against the paragraph
/// texts held in the store.
pub fn validate_dump(store: &Store, dump_text: &str) -> Result<ValidationReport, ExportError> {
    let value: serde_json::Value =
        serde_json::from_str(dump_text).map_err(|e| ExportError::DumpUnparseable(e.to_string()))?;
    let mut report = ValidationReport::default();
    let Some(object) = value.as_object() else {
        report.errors.push("top-level value is not an object".into());
        return Ok(report);
    };
    let mut texts: HashMap<(String, usize), Option<String>> = HashMap::new();
    for (paper_id, records) in object {
        report.documents += 1;
        let Some(records) = records.as_array() else {
            report.errors.push(format!("{paper_id}: value is not a list"));
            continue;
        };
        for (i, record) in records.iter().enumerate() {
            report.records += 1;
            let record: DumpRecord = match serde_json::from_value(record.clone()) {
                Ok(r) => r,
                Err(e) => {
                    report.errors.push(format!("{paper_id}[{i}]: schema violation: {e}"));
                    continue;
                }
            };
            let loc = record.location;
            let key = (paper_id.clone(), loc.paragraph);
            if !texts.contains_key(&key) {
                texts.insert(key.clone(), store.paragraph_text(paper_id, loc.paragraph)?);
            }
            let Some(text) = texts[&key].as_deref() else {
                report
                    .errors
                    .push(format!("{paper_id}[{i}]: paragraph {} not in store", loc.paragraph));
                continue;
            };
            if loc.start > loc.end || loc.end >= char_len(text) {
                report.errors.push(format!(
                    "{paper_id}[{i}]: span {}..={} out of bounds for paragraph {}",
                    loc.start, loc.end, loc.paragraph
                ));
                continue;
            }
            let actual = char_slice_inclusive(text, loc.start, loc.end).unwrap_or_default();
            if actual != record.entity_str {
                report.errors.push(format!(
                    "{paper_id}[{i}]: entity_str {:?} != paragraph text {:?}",
                    record.entity_str, actual
                ));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Document;
    use crate::tagger::{Entity, Location};

    fn store_with_fixture() -> Store {
        let store = Store::open_in_memory().unwrap();
        store
            .upsert_document(&Document {
                paper_id: "p1".into(),
                title: "Aspirin study".into(),
                abstract_paragraphs: vec!["Severe Covid with aspirin.".into()],
                body_paragraphs: vec!["Infected human cells.".into()],
            })
            .unwrap();
        store
            .upsert_document(&Document {
                paper_id: "p0".into(),
                title: "Nothing".into(),
                abstract_paragraphs: vec![],
                body_paragraphs: vec![],
            })
            .unwrap();
        let run = store.begin_run("t").unwrap();
        let m = |p, start, end, s: &str, ty, id: &str| EntityMention {
            paper_id: "p1".into(),
            location: Location {
                paragraph: p,
                start,
                end,
            },
            entity_str: s.into(),
            entity: Entity::new(id, ty).unwrap(),
        };
        store
            .insert_mentions(
                run,
                "lex",
                &[
                    m(0, 0, 6, "Aspirin", EntityType::Chemical, "MESH:D001241"),
                    m(1, 7, 11, "Covid", EntityType::Disease, "MESH:D000086382"),
                    m(1, 18, 24, "aspirin", EntityType::Chemical, "MESH:D001241"),
                    m(2, 9, 13, "human", EntityType::Species, "TAXON:9606"),
                ],
            )
            .unwrap();
        store
    }

    fn json(store: &Store, scope: Scope) -> String {
        let mut buf = Vec::new();
        write_json(store, scope, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_store_dump() {
        let store = Store::open_in_memory().unwrap();
        assert_eq!(json(&store, Scope::Fulltext), "{}\n");
    }

    #[test]
    fn record_layout() {
        let store = store_with_fixture();
        let text = json(&store, Scope::Abstracts);
        let expected = r#"{
  "p0": [],
  "p1": [
    {
      "entity_id": "MESH:D001241",
      "entity_str": "Aspirin",
      "entity_type": "Chemical",
      "location": {
        "end": 6,
        "paragraph": 0,
        "start": 0
      }
    },
    {
      "entity_id": "MESH:D000086382",
      "entity_str": "Covid",
      "entity_type": "Disease",
      "location": {
        "end": 11,
        "paragraph": 1,
        "start": 7
      }
    },
    {
      "entity_id": "MESH:D001241",
      "entity_str": "aspirin",
      "entity_type": "Chemical",
      "location": {
        "end": 24,
        "paragraph": 1,
        "start": 18
      }
    }
  ]
}
"#;
        assert_eq!(text, expected);
    }

    #[test]
    fn stats_grid() {
        let store = store_with_fixture();
        let stats = compute_stats(&store).unwrap();
        assert_eq!(stats.get(Scope::Abstracts, EntityType::Chemical), 2);
        assert_eq!(stats.get(Scope::Abstracts, EntityType::Species), 0);
        assert_eq!(stats.get(Scope::Fulltext, EntityType::Species), 1);
        assert_eq!(stats.get(Scope::Fulltext, EntityType::Disease), 1);
        let rendered = stats.render();
        assert!(rendered.lines().nth(1).unwrap().starts_with("Abstracts"));
        assert!(rendered
            .lines()
            .nth(2)
            .unwrap()
            .split_whitespace()
            .eq(["Fulltexts", "2", "1", "0", "1"]));

        let empty = compute_stats(&Store::open_in_memory().unwrap()).unwrap();
        assert!(empty.counts.values().flat_map(|r| r.values()).all(|&n| n == 0));
    }

    #[test]
    fn pubtator_conventions() {
        let store = store_with_fixture();
        let groups = pubtator_documents(&store, Scope::Fulltext).unwrap();
        let p1 = &groups[1];
        assert_eq!(p1.len(), 2);
        let first = &p1[0].annotations[0];
        assert_eq!((first.start, first.end), (0, 7));
        // abstract offset = len("Aspirin study") + 1 = 14
        let covid = &p1[0].annotations[1];
        assert_eq!((covid.start, covid.end), (21, 26));
        assert_eq!(p1[1].doc_id, "p1:2");
        assert_eq!(p1[1].annotations[0].start, "p1:2".len() + 1 + 9);

        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            export_pubtator(&Store::open_in_memory().unwrap(), Scope::Fulltext, dir.path(), 10).unwrap(),
            0
        );
        assert_eq!(export_pubtator(&store, Scope::Fulltext, dir.path(), 1).unwrap(), 2);
    }

    #[test]
    fn validation_flags_problems() {
        let store = store_with_fixture();
        let good = json(&store, Scope::Fulltext);
        let report = validate_dump(&store, &good).unwrap();
        assert!(report.is_valid(), "{:?}", report.errors);
        assert_eq!(report.records, 4);

        let shifted = good.replace("\"start\": 7", "\"start\": 8");
        assert!(!validate_dump(&store, &shifted).unwrap().is_valid());
        let bad_type = good.replace("\"Species\"", "\"Protein\"");
        assert!(!validate_dump(&store, &bad_type).unwrap().is_valid());
        assert!(!validate_dump(&store, "[]").unwrap().is_valid());
        assert!(validate_dump(&store, "{").is_err());
    }
}
