use crate::ingest::ParagraphRef;

use super::vocabulary::fold_char;
use super::{digest, resolve_overlaps, EntityMention, EntityType, Location, TaggerBackend, TaggerError, Vocabulary};

fn is_word(c: char) -> bool {
    c.is_alphanumeric()
}

/// A match may start at `i` unless that would split a run of alphanumerics.
fn can_start(chars: &[char], i: usize) -> bool {
    i == 0 || !is_word(chars[i - 1]) || !is_word(chars[i])
}

/// A match may end before `i` unless that would split a run of alphanumerics.
fn can_end(chars: &[char], i: usize) -> bool {
    i == chars.len() || !is_word(chars[i]) || !is_word(chars[i - 1])
}

/// Finds every token-aligned vocabulary term in the paragraph and resolves
/// overlaps (longest match, then leftmost, then smallest id, per type).
/// Output is sorted by start, end, type and id.
pub fn tag_paragraph(vocabulary: &Vocabulary, paragraph: &ParagraphRef) -> Vec<EntityMention> {
    if vocabulary.is_empty() || paragraph.text.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = paragraph.text.chars().collect();
    let folded: Vec<char> = chars.iter().copied().map(fold_char).collect();
    let lengths: Vec<usize> = vocabulary.term_lengths().collect();

    let mut candidates = Vec::new();
    let mut surface = String::new();
    let mut surface_folded = String::new();
    for start in 0..chars.len() {
        if !can_start(&chars, start) {
            continue;
        }
        for &len in &lengths {
            let end = start + len;
            if end > chars.len() {
                break;
            }
            if !can_end(&chars, end) {
                continue;
            }
            surface.clear();
            surface.extend(&chars[start..end]);
            surface_folded.clear();
            surface_folded.extend(&folded[start..end]);
            for entity in vocabulary.lookup(&surface, &surface_folded, len) {
                candidates.push(EntityMention {
                    paper_id: paragraph.paper_id.clone(),
                    location: Location {
                        paragraph: paragraph.paragraph,
                        start,
                        end: end - 1,
                    },
                    entity_str: surface.clone(),
                    entity: entity.clone(),
                });
            }
        }
    }
    resolve_overlaps(candidates)
}

/// Reference backend backed by a [`Vocabulary`].
pub struct LexiconTagger {
    name: String,
    vocabulary: Vocabulary,
    entity_types: Vec<EntityType>,
    fingerprint: String,
}

impl LexiconTagger {
    pub fn new(name: &str, vocabulary: Vocabulary, entity_types: &[EntityType]) -> Self {
        let mut entity_types = entity_types.to_vec();
        entity_types.sort();
        entity_types.dedup();
        let vocabulary = vocabulary.restricted_to(&entity_types);

        let mut entries: Vec<_> = vocabulary.entries().iter().collect();
        entries.sort();
        let mut parts = vec!["builtin-lexicon".to_string(), name.to_string()];
        parts.extend(entity_types.iter().map(|t| t.to_string()));
        for e in entries {
            parts.push(format!("{}\t{}\t{}", e.term, e.entity.entity_type, e.entity.entity_id));
        }
        Self {
            name: name.to_string(),
            vocabulary,
            entity_types,
            fingerprint: digest(parts),
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }
}

impl TaggerBackend for LexiconTagger {
    fn name(&self) -> &str {
        &self.name
    }

    fn entity_types(&self) -> &[EntityType] {
        &self.entity_types
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn tag_batch(&self, paragraphs: &[ParagraphRef]) -> Result<Vec<EntityMention>, TaggerError> {
        Ok(paragraphs
            .iter()
            .flat_map(|p| tag_paragraph(&self.vocabulary, p))
            .collect())
    }
}
