//! SQLite-backed persistence for documents, paragraphs, mentions and runs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use rusqlite::{params, params_from_iter, Connection, OptionalExtension, Transaction};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{Document, Scope, ABSTRACT_PARAGRAPH};
use crate::tagger::{Entity, EntityMention, EntityType, Location};

pub const SCHEMA_VERSION: i64 = 1;

const SCHEMA: &str = r#"
CREATE TABLE schema_version (version INTEGER NOT NULL);
CREATE TABLE documents (
    paper_id        TEXT PRIMARY KEY,
    title           TEXT NOT NULL,
    paragraph_count INTEGER NOT NULL
);
CREATE TABLE paragraphs (
    paper_id TEXT NOT NULL REFERENCES documents(paper_id) ON DELETE CASCADE,
    idx      INTEGER NOT NULL,
    text     TEXT NOT NULL,
    PRIMARY KEY (paper_id, idx)
);
CREATE TABLE runs (
    run_id      INTEGER PRIMARY KEY AUTOINCREMENT,
    fingerprint TEXT NOT NULL,
    started_at  TEXT NOT NULL DEFAULT (strftime('%Y-%m-%dT%H:%M:%fZ', 'now')),
    finished_at TEXT
);
CREATE TABLE mentions (
    paper_id    TEXT NOT NULL,
    paragraph   INTEGER NOT NULL,
    start       INTEGER NOT NULL,
    "end"       INTEGER NOT NULL,
    entity_str  TEXT NOT NULL,
    entity_type TEXT NOT NULL,
    entity_id   TEXT NOT NULL,
    backend     TEXT NOT NULL,
    run_id      INTEGER NOT NULL REFERENCES runs(run_id),
    UNIQUE (paper_id, paragraph, start, "end", entity_type, entity_id),
    FOREIGN KEY (paper_id, paragraph) REFERENCES paragraphs(paper_id, idx) ON DELETE CASCADE
);
CREATE TABLE completions (
    paper_id    TEXT NOT NULL REFERENCES documents(paper_id) ON DELETE CASCADE,
    backend     TEXT NOT NULL,
    fingerprint TEXT NOT NULL,
    run_id      INTEGER NOT NULL REFERENCES runs(run_id),
    PRIMARY KEY (paper_id, backend, fingerprint)
);
"#;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Storage(#[from] rusqlite::Error),
    #[error(
        "mention {entity_str:?} at {paper_id}/{paragraph}[{start}..={end}] does not match the stored paragraph text"
    )]
    SpanIntegrityViolation {
        paper_id: String,
        paragraph: usize,
        start: usize,
        end: usize,
        entity_str: String,
    },
    #[error("database schema version {found} is newer than supported version {supported}")]
    UnsupportedSchemaVersion { found: i64, supported: i64 },
    #[error("corrupt row: {0}")]
    CorruptRow(String),
}

pub type RunId = i64;

/// Selection for [`Store::query_mentions`]. `None` means no restriction.
#[derive(Debug, Clone)]
pub struct MentionFilter {
    pub paper_ids: Option<Vec<String>>,
    pub entity_types: Option<Vec<EntityType>>,
    pub scope: Scope,
}

impl MentionFilter {
    pub fn scope(scope: Scope) -> Self {
        Self {
            paper_ids: None,
            entity_types: None,
            scope,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RowCounts {
    pub documents: u64,
    pub paragraphs: u64,
    pub mentions: u64,
    pub completions: u64,
    pub runs: u64,
}

/// A stored mention together with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredMention {
    pub mention: EntityMention,
    pub backend: String,
    pub run_id: RunId,
}

/// Handle to the database. Cheap to share between threads; writes are
/// serialized through an internal lock and always run in a transaction.
pub struct Store {
    conn: Mutex<Connection>,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.busy_timeout(std::time::Duration::from_secs(30))?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        let has_version: bool = conn.query_row(
            "SELECT count(*) FROM sqlite_master WHERE type = 'table' AND name = 'schema_version'",
            [],
            |r| r.get::<_, i64>(0).map(|n| n > 0),
        )?;
        if has_version {
            let found: i64 = conn.query_row("SELECT max(version) FROM schema_version", [], |r| r.get(0))?;
            if found > SCHEMA_VERSION {
                return Err(StoreError::UnsupportedSchemaVersion {
                    found,
                    supported: SCHEMA_VERSION,
                });
            }
        } else {
            conn.execute_batch(&format!(
                "BEGIN; {SCHEMA} INSERT INTO schema_version (version) VALUES ({SCHEMA_VERSION}); COMMIT;"
            ))?;
        }
        Ok(Self { conn: Mutex::new(conn) })
    }

    fn lock(&self) -> MutexGuard<'_, Connection> {
        // A panic while holding the lock leaves no open transaction behind
        // (rusqlite rolls back on drop), so the connection is still usable.
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Inserts or replaces a document. Paragraphs whose text changed or that
    /// disappeared are replaced, which drops their mentions; completion marks
    /// for the document are cleared when anything changed.
    pub fn upsert_document(&self, document: &Document) -> Result<(), StoreError> {
        let mut conn = self.lock();
        let tx = conn.transaction()?;
        let texts = document.paragraph_texts();
        let old: HashMap<usize, String> = {
            let mut stmt = tx.prepare("SELECT idx, text FROM paragraphs WHERE paper_id = ?1")?;
            let rows = stmt.query_map([&document.paper_id], |r| Ok((r.get::<_, i64>(0)? as usize, r.get(1)?)))?;
            rows.collect::<Result<_, _>>()?
        };
        tx.execute(
            "INSERT INTO documents (paper_id, title, paragraph_count) VALUES (?1, ?2, ?3)
             ON CONFLICT(paper_id) DO UPDATE SET title = excluded.title, paragraph_count = excluded.paragraph_count",
            params![document.paper_id, document.title, texts.len() as i64],
        )?;
        let mut changed = false;
        for (&idx, old_text) in &old {
            if texts.get(idx) != Some(old_text) {
                tx.execute(
                    "DELETE FROM paragraphs WHERE paper_id = ?1 AND idx = ?2",
                    params![document.paper_id, idx as i64],
                )?;
                changed = true;
            }
        }
        for (idx, text) in texts.iter().enumerate() {
            if old.get(&idx) != Some(text) {
                tx.execute(
                    "INSERT INTO paragraphs (paper_id, idx, text) VALUES (?1, ?2, ?3)",
                    params![document.paper_id, idx as i64, text],
                )?;
                changed = true;
            }
        }
        if changed {
            tx.execute("DELETE FROM completions WHERE paper_id = ?1", [&document.paper_id])?;
        }
        tx.commit()?;
        Ok(())
    }

    pub fn begin_run(&self, fingerprint: &str) -> Result<RunId, StoreError> {
        let conn = self.lock();
        conn.execute("INSERT INTO runs (fingerprint) VALUES (?1)", [fingerprint])?;
        Ok(conn.last_insert_rowid())
    }

    pub fn finish_run(&self, run_id: RunId) -> Result<(), StoreError> {
        self.lock().execute(
            "UPDATE runs SET finished_at = strftime('%Y-%m-%dT%H:%M:%fZ', 'now') WHERE run_id = ?1",
            [run_id],
        )?;
        Ok(())
    }

    /// Inserts mentions in one transaction. Mentions already present under the
    /// uniqueness key are ignored. Returns the number of new rows.
    pub fn insert_mentions(
        &self,
        run_id: RunId,
        backend: &str,
        mentions: &[EntityMention],
    ) -> Result<usize, StoreError> {
        let mut conn = self.lock();
        let tx = conn.transaction()?;
        let inserted = insert_in_tx(&tx, run_id, backend, mentions)?;
        tx.commit()?;
        Ok(inserted.values().sum())
    }

    /// Writes one document's mentions for a backend and marks the document
    /// complete for `(backend, fingerprint)`, atomically.
    pub fn commit_document(
        &self,
        run_id: RunId,
        backend: &str,
        fingerprint: &str,
        paper_id: &str,
        mentions: &[EntityMention],
    ) -> Result<BTreeMap<EntityType, usize>, StoreError> {
        let mut conn = self.lock();
        let tx = conn.transaction()?;
        let inserted = insert_in_tx(&tx, run_id, backend, mentions)?;
        tx.execute(
            "INSERT OR IGNORE INTO completions (paper_id, backend, fingerprint, run_id) VALUES (?1, ?2, ?3, ?4)",
            params![paper_id, backend, fingerprint, run_id],
        )?;
        tx.commit()?;
        Ok(inserted)
    }

    /// Paper ids already completed for `(backend, fingerprint)`.
    pub fn completed(&self, backend: &str, fingerprint: &str) -> Result<HashSet<String>, StoreError> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT paper_id FROM completions WHERE backend = ?1 AND fingerprint = ?2")?;
        let rows = stmt.query_map([backend, fingerprint], |r| r.get(0))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn document_ids(&self) -> Result<Vec<String>, StoreError> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT paper_id FROM documents ORDER BY paper_id")?;
        let rows = stmt.query_map([], |r| r.get(0))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// All documents ordered by paper id, abstract collapsed to one paragraph.
    pub fn load_documents(&self) -> Result<Vec<Document>, StoreError> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT paper_id, idx, text FROM paragraphs ORDER BY paper_id, idx")?;
        let rows = stmt.query_map([], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)?, r.get::<_, String>(2)?))
        })?;
        let mut grouped: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for row in rows {
            let (paper_id, idx, text) = row?;
            let texts = grouped.entry(paper_id).or_default();
            if idx as usize != texts.len() {
                return Err(StoreError::CorruptRow(format!("paragraph gap before index {idx}")));
            }
            texts.push(text);
        }
        Ok(grouped
            .into_iter()
            .map(|(id, texts)| Document::from_paragraph_texts(id, texts))
            .collect())
    }

    pub fn paragraph_text(&self, paper_id: &str, paragraph: usize) -> Result<Option<String>, StoreError> {
        Ok(self
            .lock()
            .query_row(
                "SELECT text FROM paragraphs WHERE paper_id = ?1 AND idx = ?2",
                params![paper_id, paragraph as i64],
                |r| r.get(0),
            )
            .optional()?)
    }

    /// Mentions matching `filter`, sorted by paper, paragraph, start, end,
    /// type and id.
    pub fn query_mentions(&self, filter: &MentionFilter) -> Result<Vec<EntityMention>, StoreError> {
        Ok(self.query_stored(filter)?.into_iter().map(|s| s.mention).collect())
    }

    pub fn query_stored(&self, filter: &MentionFilter) -> Result<Vec<StoredMention>, StoreError> {
        let mut sql = String::from(
            r#"SELECT paper_id, paragraph, start, "end", entity_str, entity_type, entity_id, backend, run_id
               FROM mentions WHERE 1 = 1"#,
        );
        let mut args: Vec<String> = Vec::new();
        if filter.scope == Scope::Abstracts {
            sql.push_str(&format!(" AND paragraph <= {ABSTRACT_PARAGRAPH}"));
        }
        if let Some(ids) = &filter.paper_ids {
            sql.push_str(&format!(" AND paper_id IN ({})", vec!["?"; ids.len()].join(",")));
            args.extend(ids.iter().cloned());
        }
        if let Some(types) = &filter.entity_types {
            sql.push_str(&format!(" AND entity_type IN ({})", vec!["?"; types.len()].join(",")));
            args.extend(types.iter().map(|t| t.to_string()));
        }
        sql.push_str(r#" ORDER BY paper_id, paragraph, start, "end", entity_type, entity_id"#);

        let conn = self.lock();
        let mut stmt = conn.prepare(&sql)?;
        let rows = stmt.query_map(params_from_iter(args.iter()), |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, i64>(1)?,
                r.get::<_, i64>(2)?,
                r.get::<_, i64>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, String>(5)?,
                r.get::<_, String>(6)?,
                r.get::<_, String>(7)?,
                r.get::<_, i64>(8)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (paper_id, paragraph, start, end, entity_str, ty, id, backend, run_id) = row?;
            let entity_type: EntityType = ty.parse().map_err(StoreError::CorruptRow)?;
            let entity = Entity::new(id, entity_type).map_err(StoreError::CorruptRow)?;
            out.push(StoredMention {
                mention: EntityMention {
                    paper_id,
                    location: Location {
                        paragraph: paragraph as usize,
                        start: start as usize,
                        end: end as usize,
                    },
                    entity_str,
                    entity,
                },
                backend,
                run_id,
            });
        }
        Ok(out)
    }

    /// Mention counts per entity type for one scope.
    pub fn mention_counts(&self, scope: Scope) -> Result<BTreeMap<EntityType, u64>, StoreError> {
        let sql = match scope {
            Scope::Abstracts => format!(
                "SELECT entity_type, count(*) FROM mentions WHERE paragraph <= {ABSTRACT_PARAGRAPH} GROUP BY entity_type"
            ),
            Scope::Fulltext => "SELECT entity_type, count(*) FROM mentions GROUP BY entity_type".to_string(),
        };
        let conn = self.lock();
        let mut stmt = conn.prepare(&sql)?;
        let rows = stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)?)))?;
        let mut counts: BTreeMap<EntityType, u64> = EntityType::ALL.iter().map(|&t| (t, 0)).collect();
        for row in rows {
            let (ty, n) = row?;
            let ty: EntityType = ty.parse().map_err(StoreError::CorruptRow)?;
            counts.insert(ty, n as u64);
        }
        Ok(counts)
    }

    pub fn row_counts(&self) -> Result<RowCounts, StoreError> {
        let conn = self.lock();
        let count = |table: &str| -> Result<u64, rusqlite::Error> {
            conn.query_row(&format!("SELECT count(*) FROM {table}"), [], |r| r.get::<_, i64>(0))
                .map(|n| n as u64)
        };
        Ok(RowCounts {
            documents: count("documents")?,
            paragraphs: count("paragraphs")?,
            mentions: count("mentions")?,
            completions: count("completions")?,
            runs: count("runs")?,
        })
    }

    /// Hash over documents, paragraphs and mentions (without provenance),
    /// independent of insertion order.
    pub fn content_digest(&self) -> Result<String, StoreError> {
        let conn = self.lock();
        let mut hasher = Sha256::new();
        let queries = [
            "SELECT paper_id, title, paragraph_count FROM documents ORDER BY paper_id",
            "SELECT paper_id, idx, text FROM paragraphs ORDER BY paper_id, idx",
            r#"SELECT paper_id, paragraph, start, "end", entity_str, entity_type, entity_id FROM mentions
               ORDER BY paper_id, paragraph, start, "end", entity_type, entity_id"#,
        ];
        for sql in queries {
            let mut stmt = conn.prepare(sql)?;
            let columns = stmt.column_count();
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                for i in 0..columns {
                    let cell: rusqlite::types::Value = row.get(i)?;
                    let text = match cell {
                        rusqlite::types::Value::Integer(n) => n.to_string(),
                        rusqlite::types::Value::Text(s) => s,
                        other => format!("{other:?}"),
                    };
                    hasher.update((text.len() as u64).to_le_bytes());
                    hasher.update(text.as_bytes());
                }
            }
            hasher.update(b"\x00table\x00");
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

/// Returns newly inserted rows per entity type.
fn insert_in_tx(
    tx: &Transaction<'_>,
    run_id: RunId,
    backend: &str,
    mentions: &[EntityMention],
) -> Result<BTreeMap<EntityType, usize>, StoreError> {
    let mut texts: HashMap<(String, usize), Option<String>> = HashMap::new();
    let mut lookup = tx.prepare_cached("SELECT text FROM paragraphs WHERE paper_id = ?1 AND idx = ?2")?;
    let mut insert = tx.prepare_cached(
        r#"INSERT OR IGNORE INTO mentions
           (paper_id, paragraph, start, "end", entity_str, entity_type, entity_id, backend, run_id)
           VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)"#,
    )?;
    let mut inserted = BTreeMap::new();
    for m in mentions {
        let key = (m.paper_id.clone(), m.location.paragraph);
        let text = match texts.get(&key) {
            Some(t) => t.clone(),
            None => {
                let t: Option<String> = lookup
                    .query_row(params![m.paper_id, m.location.paragraph as i64], |r| r.get(0))
                    .optional()?;
                texts.insert(key, t.clone());
                t
            }
        };
        if !text.is_some_and(|t| m.spans_correctly(&t)) {
            return Err(StoreError::SpanIntegrityViolation {
                paper_id: m.paper_id.clone(),
                paragraph: m.location.paragraph,
                start: m.location.start,
                end: m.location.end,
                entity_str: m.entity_str.clone(),
            });
        }
        let n = insert.execute(params![
            m.paper_id,
            m.location.paragraph as i64,
            m.location.start as i64,
            m.location.end as i64,
            m.entity_str,
            m.entity.entity_type.as_str(),
            m.entity.entity_id,
            backend,
            run_id,
        ])?;
        *inserted.entry(m.entity.entity_type).or_insert(0) += n;
    }
    Ok(inserted)
}
