//! Shared fixtures and test oracles.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::json;

pub const FILLER: &[&str] = &[
    "the",
    "of",
    "patients",
    "with",
    "and",
    "in",
    "infection",
    "cells",
    "were",
    "treated",
    "study",
    "results",
    "showed",
    "a",
    "significant",
    "increase",
    "naïve",
    "β-cells",
    "viral",
    "load",
    "after",
    "days",
    "is",
    "associated",
    "risk",
    "Über",
    "cohort",
    "at",
    "hospital",
];

const SYLLABLES: &[&str] = &[
    "zor", "vi", "mab", "ta", "lin", "ex", "cor", "qua", "nel", "dox", "ri", "fen", "tu", "sa",
];

/// One vocabulary row: (term, entity type, entity id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub term: String,
    pub entity_type: &'static str,
    pub entity_id: String,
}

pub fn type_for(i: usize) -> (&'static str, String) {
    match i % 4 {
        0 => ("Chemical", format!("MESH:C{i:06}")),
        1 => (
            "Disease",
            if i.is_multiple_of(3) {
                format!("OMIM:{}", 100000 + i)
            } else {
                format!("MESH:D{i:06}")
            },
        ),
        2 => ("Gene", format!("GENE:{}", 1000 + i)),
        _ => ("Species", format!("TAXON:{}", 9000 + i)),
    }
}

/// Deterministic synthetic vocabulary of `n` distinct terms.
pub fn synthetic_vocabulary(n: usize, seed: u64) -> Vec<Term> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < n {
        let (entity_type, entity_id) = type_for(i);
        let term = match rng.gen_range(0..4) {
            // short, case-sensitive symbol
            0 => {
                let a = (b'A' + rng.gen_range(0..26)) as char;
                let b = (b'A' + rng.gen_range(0..26)) as char;
                format!("{a}{b}{}", rng.gen_range(1..10))
            }
            // multi-word
            1 => {
                let w1: String = (0..2).map(|_| *SYLLABLES.choose(&mut rng).unwrap()).collect();
                let w2: String = (0..3).map(|_| *SYLLABLES.choose(&mut rng).unwrap()).collect();
                format!("{w1} {w2}")
            }
            // hyphenated
            2 => {
                let w: String = (0..2).map(|_| *SYLLABLES.choose(&mut rng).unwrap()).collect();
                format!("{w}-{}", rng.gen_range(1..40))
            }
            _ => (0..rng.gen_range(2..5))
                .map(|_| *SYLLABLES.choose(&mut rng).unwrap())
                .collect(),
        };
        if seen.insert(term.clone()) {
            out.push(Term {
                term,
                entity_type,
                entity_id,
            });
        }
        i += 1;
    }
    out
}

/// Tab-separated vocabulary file text, one row per term.
pub fn vocabulary_tsv(terms: &[Term]) -> String {
    let mut s = String::from("# id\ttype\tterms\n");
    for t in terms {
        s.push_str(&format!("{}\t{}\t{}\n", t.entity_id, t.entity_type, t.term));
    }
    s
}

fn vary_case(term: &str, rng: &mut StdRng) -> String {
    if term.chars().count() < 5 {
        return term.to_string();
    }
    match rng.gen_range(0..3) {
        0 => term.to_uppercase(),
        1 => {
            let mut c = term.chars();
            c.next()
                .map(|f| f.to_uppercase().chain(c).collect())
                .unwrap_or_default()
        }
        _ => term.to_string(),
    }
}

/// A sentence-like paragraph mixing filler words and vocabulary terms.
pub fn paragraph(rng: &mut StdRng, terms: &[Term], words: usize) -> String {
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push_str(if rng.gen_bool(0.08) { ", " } else { " " });
        }
        if !terms.is_empty() && rng.gen_bool(0.2) {
            let t = &terms[rng.gen_range(0..terms.len())];
            out.push_str(&vary_case(&t.term, rng));
        } else {
            out.push_str(FILLER.choose(rng).unwrap());
        }
    }
    out.push('.');
    out
}

#[derive(Debug, Clone)]
pub struct GeneratedDoc {
    pub paper_id: String,
    pub title: String,
    pub abstract_text: String,
    pub body: Vec<String>,
}

impl GeneratedDoc {
    /// Paragraph texts by index: title, abstract, body...
    pub fn paragraphs(&self) -> Vec<String> {
        let mut v = vec![self.title.clone(), self.abstract_text.clone()];
        v.extend(self.body.iter().cloned());
        v
    }

    pub fn to_cord19_json(&self) -> String {
        let body: Vec<_> = self
            .body
            .iter()
            .map(|t| json!({"text": t, "section": "Body"}))
            .collect();
        json!({
            "paper_id": self.paper_id,
            "metadata": {"title": self.title, "authors": []},
            "abstract": [{"text": self.abstract_text}],
            "body_text": body,
            "bib_entries": {},
        })
        .to_string()
    }
}

pub fn generate_corpus(docs: usize, body_paragraphs: usize, terms: &[Term], seed: u64) -> Vec<GeneratedDoc> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..docs)
        .map(|i| GeneratedDoc {
            paper_id: format!("doc{i:05}"),
            title: paragraph(&mut rng, terms, 6),
            abstract_text: paragraph(&mut rng, terms, 30),
            body: (0..body_paragraphs).map(|_| paragraph(&mut rng, terms, 25)).collect(),
        })
        .collect()
}

pub fn write_corpus(dir: &Path, docs: &[GeneratedDoc]) {
    fs::create_dir_all(dir).unwrap();
    for d in docs {
        fs::write(dir.join(format!("{}.json", d.paper_id)), d.to_cord19_json()).unwrap();
    }
}

/// Writes an executable shell script and returns its path.
pub fn write_script(dir: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Stub tagger: copies input to output and annotates the first `ACE2` in
/// every document's abstract as a Gene.
pub const ACE2_STUB: &str = r#"python3 - "$1" "$2" <<'PY'
import sys
src, dst = sys.argv[1], sys.argv[2]
blocks = [b for b in open(src, encoding="utf-8").read().split("\n\n") if b.strip()]
out = []
for b in blocks:
    lines = b.strip("\n").split("\n")
    doc_id, _, title = lines[0].split("|", 2)
    abstract = lines[1].split("|", 2)[2]
    pos = abstract.find("ACE2")
    if pos >= 0:
        start = len(title) + 1 + pos
        lines.append("\t".join([doc_id, str(start), str(start + 4), "ACE2", "Gene", "59272"]))
    out.append("\n".join(lines) + "\n")
open(dst, "w", encoding="utf-8").write("\n".join(out))
PY"#;

/// Stub tagger: sleeps 10 ms per distinct paper in the batch, then echoes.
pub const SLEEP_STUB: &str = r#"n=$(grep '|t|' "$1" | cut -d'|' -f1 | sed 's/:[0-9]*$//' | sort -u | wc -l)
sleep $(awk -v n="$n" 'BEGIN { printf "%.3f", n * 0.01 }')
cat "$1" > "$2""#;

/// Brute-force reference tagger: tests every substring against every term,
/// then applies the overlap policy by repeated best-candidate selection.
/// Returns (start, inclusive end, type, id).
pub fn oracle_tag(terms: &[(String, String, String)], text: &str) -> BTreeSet<(usize, usize, String, String)> {
    fn fold(c: char) -> char {
        let l: Vec<char> = c.to_lowercase().collect();
        if l.len() == 1 {
            l[0]
        } else {
            c
        }
    }
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let alnum = |i: usize| chars[i].is_alphanumeric();
    let mut candidates = Vec::new();
    for s in 0..n {
        for e in s + 1..=n {
            let left_ok = s == 0 || !(alnum(s - 1) && alnum(s));
            let right_ok = e == n || !(alnum(e - 1) && alnum(e));
            if !left_ok || !right_ok {
                continue;
            }
            let window = &chars[s..e];
            for (term, ty, id) in terms {
                let tc: Vec<char> = term.chars().collect();
                if tc.len() != window.len() {
                    continue;
                }
                let hit = if tc.len() >= 5 {
                    tc.iter().zip(window).all(|(a, b)| fold(*a) == fold(*b))
                } else {
                    tc[..] == *window
                };
                if hit {
                    candidates.push((s, e - 1, ty.clone(), id.clone()));
                }
            }
        }
    }
    let mut kept = BTreeSet::new();
    let mut remaining = candidates;
    while !remaining.is_empty() {
        let best = remaining
            .iter()
            .cloned()
            .min_by(|a, b| {
                (b.1 - b.0)
                    .cmp(&(a.1 - a.0))
                    .then(a.0.cmp(&b.0))
                    .then(a.3.cmp(&b.3))
                    .then(a.2.cmp(&b.2))
            })
            .unwrap();
        remaining.retain(|c| !(c.2 == best.2 && c.0 <= best.1 && best.0 <= c.1));
        kept.insert(best);
    }
    kept
}
