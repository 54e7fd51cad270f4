use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

use super::{Entity, EntityType};

/// Terms at least this many characters long match case-insensitively; shorter
/// ones (gene symbols and the like) must match exactly.
pub const CASE_INSENSITIVE_MIN_LEN: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabularyError {
    #[error("line {line}: unknown entity type {label:?}")]
    UnknownEntityType { line: usize, label: String },
    #[error("line {line}: empty term")]
    EmptyTerm { line: usize },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
}

/// Single-character case folding. Characters whose lowercase form expands to
/// several characters are left as they are, so folding never moves offsets.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

fn fold(s: &str) -> String {
    s.chars().map(fold_char).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VocabEntry {
    pub term: String,
    pub entity: Entity,
}

impl VocabEntry {
    pub fn is_case_insensitive(&self) -> bool {
        self.term.chars().count() >= CASE_INSENSITIVE_MIN_LEN
    }
}

/// Surface terms mapped to entities, indexed for lookup by exact or folded
/// form.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    exact: HashMap<String, Vec<usize>>,
    folded: HashMap<String, Vec<usize>>,
    lengths: BTreeSet<usize>,
}

impl Vocabulary {
    /// Builds a vocabulary; duplicate `(term, entity)` pairs collapse.
    pub fn new(entries: impl IntoIterator<Item = VocabEntry>) -> Self {
        let mut vocab = Vocabulary::default();
        let mut seen = HashSet::new();
        for entry in entries {
            if entry.term.is_empty() || !seen.insert(entry.clone()) {
                continue;
            }
            let index = vocab.entries.len();
            vocab.lengths.insert(entry.term.chars().count());
            if entry.is_case_insensitive() {
                vocab.folded.entry(fold(&entry.term)).or_default().push(index);
            } else {
                vocab.exact.entry(entry.term.clone()).or_default().push(index);
            }
            vocab.entries.push(entry);
        }
        vocab
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps only entries whose type is in `types`.
    pub fn restricted_to(&self, types: &[EntityType]) -> Vocabulary {
        Vocabulary::new(
            self.entries
                .iter()
                .filter(|e| types.contains(&e.entity.entity_type))
                .cloned(),
        )
    }

    /// Distinct term lengths in characters, ascending.
    pub(crate) fn term_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.lengths.iter().copied()
    }

    /// Entities whose term matches `candidate` under the matching policy.
    /// `folded_candidate` must be `candidate` run through [`fold_char`].
    pub(crate) fn lookup<'a>(
        &'a self,
        candidate: &str,
        folded_candidate: &str,
        char_len: usize,
    ) -> impl Iterator<Item = &'a Entity> + 'a {
        let hits = if char_len >= CASE_INSENSITIVE_MIN_LEN {
            self.folded.get(folded_candidate)
        } else {
            self.exact.get(candidate)
        };
        hits.into_iter().flatten().map(move |&i| &self.entries[i].entity)
    }
}

/// Reads the tab-separated vocabulary format: `entity_id`, `entity_type`,
/// pipe-joined terms. Blank lines and lines starting with `#` are skipped.
pub fn load_vocabulary(source: &str) -> Result<Vocabulary, VocabularyError> {
    let mut entries = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || row.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = row.split('\t').collect();
        if cols.len() != 3 {
            return Err(VocabularyError::MalformedRow {
                line,
                reason: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let entity_type: EntityType = cols[1].trim().parse().map_err(|_| VocabularyError::UnknownEntityType {
            line,
            label: cols[1].trim().to_string(),
        })?;
        let entity = Entity::new(cols[0].trim(), entity_type)
            .map_err(|reason| VocabularyError::MalformedRow { line, reason })?;
        for term in cols[2].split('|') {
            let term = term.trim();
            if term.is_empty() {
                return Err(VocabularyError::EmptyTerm { line });
            }
            entries.push(VocabEntry {
                term: term.to_string(),
                entity: entity.clone(),
            });
        }
    }
    Ok(Vocabulary::new(entries))
}
