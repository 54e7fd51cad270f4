//! Biomedical entity mention annotation for CORD-19-style corpora.
//!
//! The pipeline ingests CORD-19 JSON parses ([`ingest`]), stores documents
//! paragraph by paragraph ([`store`]), runs tagger backends over them in
//! parallel batches ([`orchestrator`], [`tagger`]) and exports the mentions as
//! JSON dumps, PubTator files and per-type statistics ([`export`]).
//! [`pubtator`] implements the PubTator exchange format used both for input
//! and for talking to external taggers.

pub mod export;
pub mod ingest;
pub mod orchestrator;
pub mod pubtator;
pub mod store;
pub mod tagger;
pub mod text;

pub use export::{compute_stats, export_json, export_pubtator, validate_dump, DumpRecord, StatsTable};
pub use ingest::{ingest_collection, paragraphs, parse_cord19, Document, IngestReport, ParagraphRef, Scope};
pub use orchestrator::{plan_batches, run_pipeline, Pipeline, PipelineConfig, RunReport};
pub use pubtator::{parse_composed, parse_single, scan_directory, serialize, PubTatorDocument, RawAnnotation};
pub use store::{MentionFilter, Store};
pub use tagger::{
    load_vocabulary, resolve_overlaps, tag_paragraph, Entity, EntityMention, EntityType, Location, TaggerBackend,
    Vocabulary,
};
