mod common;

use std::collections::BTreeSet;

use common::oracle_tag;
use cordner::ingest::ParagraphRef;
use cordner::pubtator::{PubTatorDocument, RawAnnotation};
use cordner::tagger::{map_offsets, package_paragraph, tag_paragraph, Entity, EntityType, VocabEntry, Vocabulary};
use proptest::prelude::*;

const TYPES: [EntityType; 4] = [
    EntityType::Chemical,
    EntityType::Disease,
    EntityType::Gene,
    EntityType::Species,
];

fn entry_strategy() -> impl Strategy<Value = (String, usize, usize)> {
    ("[abAB1 -]{1,7}", 0usize..4, 0usize..3).prop_filter("non-empty trimmed term", |(t, _, _)| {
        !t.trim().is_empty() && t.trim() == t
    })
}

fn text_strategy() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[abAB1 .,()é-]{0,40}").unwrap()
}

fn check(entries: &[(String, usize, usize)], text: &str) -> Result<(), TestCaseError> {
    let vocab = Vocabulary::new(entries.iter().map(|(term, ty, id)| VocabEntry {
        term: term.clone(),
        entity: Entity::new(format!("MESH:X{id}"), TYPES[*ty]).unwrap(),
    }));
    let paragraph = ParagraphRef {
        paper_id: "p".into(),
        paragraph: 3,
        text: text.into(),
    };
    let got: BTreeSet<_> = tag_paragraph(&vocab, &paragraph)
        .into_iter()
        .map(|m| {
            (
                m.location.start,
                m.location.end,
                m.entity.entity_type.to_string(),
                m.entity.entity_id,
            )
        })
        .collect();
    let oracle_terms: Vec<_> = entries
        .iter()
        .map(|(t, ty, id)| (t.clone(), TYPES[*ty].to_string(), format!("MESH:X{id}")))
        .collect();
    prop_assert_eq!(got, oracle_tag(&oracle_terms, text));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn lexicon_tagger_matches_brute_force(
        entries in proptest::collection::vec(entry_strategy(), 0..8),
        text in text_strategy(),
    ) {
        check(&entries, &text)?;
    }

    #[test]
    fn mentions_slice_their_paragraph(
        entries in proptest::collection::vec(entry_strategy(), 1..8),
        text in text_strategy(),
    ) {
        let vocab = Vocabulary::new(entries.iter().map(|(term, ty, id)| VocabEntry {
            term: term.clone(),
            entity: Entity::new(format!("GENE:{id}"), TYPES[*ty]).unwrap(),
        }));
        let paragraph = ParagraphRef { paper_id: "p".into(), paragraph: 0, text: text.clone() };
        let out = tag_paragraph(&vocab, &paragraph);
        for m in &out {
            prop_assert!(m.spans_correctly(&text));
        }
        // sorted, no same-type overlap
        for pair in out.windows(2) {
            prop_assert!((pair[0].location.start, pair[0].location.end) <= (pair[1].location.start, pair[1].location.end));
        }
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                prop_assert!(a.entity.entity_type != b.entity.entity_type || !a.location.overlaps(&b.location));
            }
        }
    }

    #[test]
    fn offset_mapping_recovers_surface(
        paper in "[a-z0-9]{1,10}",
        index in 0usize..40,
        text in "[a-zA-Zαβ ]{1,60}",
        span in (any::<prop::sample::Index>(), 1usize..10),
    ) {
        let paragraph = ParagraphRef { paper_id: paper, paragraph: index, text: text.clone() };
        let doc: PubTatorDocument = package_paragraph(&paragraph);
        let chars: Vec<char> = text.chars().collect();
        let start = span.0.index(chars.len());
        let end = (start + span.1).min(chars.len());
        let surface: String = chars[start..end].iter().collect();
        let annotation = RawAnnotation {
            start: start + doc.abstract_offset(),
            end: end + doc.abstract_offset(),
            surface: surface.clone(),
            type_label: "Gene".into(),
            id_label: "GENE:1".into(),
        };
        let loc = map_offsets(&doc, &annotation, index).unwrap();
        prop_assert_eq!(loc.paragraph, index);
        let back: String = chars[loc.start..=loc.end].iter().collect();
        prop_assert_eq!(back, surface);
    }
}

#[test]
fn realistic_vocabulary_matches_oracle() {
    let terms = common::synthetic_vocabulary(60, 7);
    let corpus = common::generate_corpus(20, 1, &terms, 11);
    let vocab = cordner::tagger::load_vocabulary(&common::vocabulary_tsv(&terms)).unwrap();
    let oracle_terms: Vec<_> = terms
        .iter()
        .map(|t| (t.term.clone(), t.entity_type.to_string(), t.entity_id.clone()))
        .collect();
    let mut total = 0;
    for doc in &corpus {
        for (i, text) in doc.paragraphs().iter().enumerate() {
            let p = ParagraphRef {
                paper_id: doc.paper_id.clone(),
                paragraph: i,
                text: text.clone(),
            };
            let got: BTreeSet<_> = tag_paragraph(&vocab, &p)
                .into_iter()
                .map(|m| {
                    (
                        m.location.start,
                        m.location.end,
                        m.entity.entity_type.to_string(),
                        m.entity.entity_id,
                    )
                })
                .collect();
            let expected = oracle_tag(&oracle_terms, text);
            total += expected.len();
            assert_eq!(got, expected, "paragraph {text:?}");
        }
    }
    assert!(total > 20, "fixture should produce matches, got {total}");
}
