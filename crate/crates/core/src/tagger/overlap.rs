use std::collections::{BTreeMap, HashMap};
use std::ops::Bound;

use super::{sort_mentions, EntityMention, EntityType};

/// Removes same-type overlaps within each paragraph.
///
/// Candidates are accepted greedily in priority order: longer span first,
/// then smaller start, then smaller entity id. A candidate is dropped when it
/// overlaps an already accepted mention of the same type. Mentions of
/// different types never suppress each other. The result is sorted in export
/// order.
pub fn resolve_overlaps(mut mentions: Vec<EntityMention>) -> Vec<EntityMention> {
    mentions.sort_by(|a, b| {
        b.location
            .width()
            .cmp(&a.location.width())
            .then(a.location.start.cmp(&b.location.start))
            .then(a.entity.entity_id.cmp(&b.entity.entity_id))
            .then(a.sort_key().cmp(&b.sort_key()))
    });

    // (paper, paragraph, type) -> accepted spans keyed by start
    let mut accepted: HashMap<(String, usize, EntityType), BTreeMap<usize, usize>> = HashMap::new();
    let mut kept = Vec::with_capacity(mentions.len());
    for m in mentions {
        let loc = m.location;
        let spans = accepted
            .entry((m.paper_id.clone(), loc.paragraph, m.entity.entity_type))
            .or_default();
        // Accepted spans are disjoint, so only the nearest neighbour on each
        // side can overlap.
        let before = spans.range(..=loc.start).next_back();
        let after = spans.range((Bound::Excluded(loc.start), Bound::Unbounded)).next();
        let clash =
            before.is_some_and(|(_, &end)| end >= loc.start) || after.is_some_and(|(&start, _)| start <= loc.end);
        if !clash {
            spans.insert(loc.start, loc.end);
            kept.push(m);
        }
    }
    sort_mentions(&mut kept);
    kept
}
