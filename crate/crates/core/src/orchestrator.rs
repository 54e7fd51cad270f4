//! Batch planning and parallel execution of tagger backends over the store.
//!
//! Work is split into `(backend, batch)` tasks pulled by a fixed pool of
//! workers from a shared queue. Results are committed by a single thread in
//! task order (batches are cut from documents sorted by paper id), one
//! transaction per document, so the persisted state does not depend on the
//! number of workers or on completion order. Each committed document is
//! marked complete for its backend and configuration fingerprint; later runs
//! with the same fingerprint skip it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{paragraphs, Document, Scope};
use crate::store::{Store, StoreError};
use crate::tagger::{digest, EntityMention, EntityType, TaggerBackend, TaggerBackendConfig, TaggerError};

pub const ENV_WORKERS: &str = "CORDNER_WORKERS";
pub const ENV_SCRATCH_DIR: &str = "CORDNER_SCRATCH_DIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read configuration {path}: {source}")]
    ConfigUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("every batch failed ({} failures)", .0.failures.len())]
    AllBatchesFailed(Box<RunReport>),
}

fn default_workers() -> usize {
    1
}
fn default_batch_size() -> usize {
    50
}
fn default_retry_limit() -> usize {
    1
}

/// Pipeline configuration as read from a TOML file:
///
/// ```toml
/// scope = "fulltext"        # or "abstracts"
/// workers = 4
/// batch_size = 50
/// retry_limit = 1
/// scratch_dir = "/tmp/cordner"   # optional
///
/// [[backends]]
/// name = "lexicon"
/// kind = "builtin-lexicon"
/// vocabulary = "vocab.tsv"
/// entity_types = ["Chemical", "Disease"]
///
/// [[backends]]
/// name = "gnormplus"
/// kind = "external-process"
/// command = "run_gnormplus.sh {input} {output}"
/// timeout_secs = 600
/// batch_size = 20
/// entity_types = ["Gene", "Species"]
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scope: Scope,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: usize,
    #[serde(default)]
    pub scratch_dir: Option<PathBuf>,
    pub backends: Vec<TaggerBackendConfig>,
    /// Directory relative paths are resolved against. Set by [`load`](Self::load).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file and applies `CORDNER_WORKERS` and
    /// `CORDNER_SCRATCH_DIR` overrides.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::ConfigUnreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.apply_env()?;
        Ok(config)
    }

    pub fn apply_env(&mut self) -> Result<(), PipelineError> {
        if let Ok(value) = std::env::var(ENV_WORKERS) {
            self.workers = value
                .trim()
                .parse()
                .map_err(|_| PipelineError::Config(format!("{ENV_WORKERS}={value:?} is not a number")))?;
        }
        if let Ok(value) = std::env::var(ENV_SCRATCH_DIR) {
            self.scratch_dir = Some(PathBuf::from(value));
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.backends.is_empty() {
            return bad("at least one backend is required".into());
        }
        let mut owners: HashMap<EntityType, &str> = HashMap::new();
        let mut names = HashSet::new();
        for b in &self.backends {
            b.validate().map_err(PipelineError::Config)?;
            if !names.insert(b.name.as_str()) {
                return bad(format!("duplicate backend name {:?}", b.name));
            }
            for &t in &b.entity_types {
                if let Some(other) = owners.insert(t, &b.name) {
                    if other != b.name {
                        return bad(format!("entity type {t} is handled by both {other:?} and {:?}", b.name));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn build_pipeline(&self) -> Result<Pipeline, PipelineError> {
        self.validate()?;
        let backends = self
            .backends
            .iter()
            .map(|b| b.build(&self.base_dir, self.scratch_dir.as_deref()))
            .collect::<Result<Vec<_>, _>>()?;
        Pipeline::new(backends, self.scope, self.workers, self.batch_size, self.retry_limit)
    }
}

/// Splits `items` into consecutive batches of `batch_size` (the last may be
/// shorter). Panics if `batch_size` is zero.
pub fn plan_batches<T>(items: &[T], batch_size: usize) -> Vec<&[T]> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    items.chunks(batch_size).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchFailure {
    pub batch_id: String,
    pub backend: String,
    pub error: String,
    pub documents: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunReport {
    /// `None` when nothing was pending.
    pub run_id: Option<i64>,
    /// Documents with pending work in this run.
    pub scheduled: usize,
    pub processed: usize,
    pub failed: usize,
    /// Documents already complete for every backend.
    pub skipped: usize,
    /// Newly inserted mention rows per type.
    pub mentions: BTreeMap<EntityType, u64>,
    #[serde(serialize_with = "as_secs")]
    pub duration: Duration,
    pub failures: Vec<BatchFailure>,
}

fn as_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl RunReport {
    pub fn total_mentions(&self) -> u64 {
        self.mentions.values().sum()
    }
}

/// Instantiated backends plus execution parameters.
pub struct Pipeline {
    backends: Vec<Box<dyn TaggerBackend>>,
    scope: Scope,
    workers: usize,
    batch_size: usize,
    retry_limit: usize,
}

struct Task<'a> {
    backend: usize,
    batch_id: String,
    documents: Vec<&'a Document>,
}

struct TaskResult {
    seq: usize,
    outcome: Result<Vec<EntityMention>, TaggerError>,
}

impl Pipeline {
    pub fn new(
        backends: Vec<Box<dyn TaggerBackend>>,
        scope: Scope,
        workers: usize,
        batch_size: usize,
        retry_limit: usize,
    ) -> Result<Self, PipelineError> {
        if backends.is_empty() {
            return Err(PipelineError::Config("at least one backend is required".into()));
        }
        if workers == 0 || batch_size == 0 {
            return Err(PipelineError::Config("workers and batch size must be >= 1".into()));
        }
        let mut seen = HashSet::new();
        for b in &backends {
            for &t in b.entity_types() {
                if !seen.insert(t) {
                    return Err(PipelineError::Config(format!(
                        "entity type {t} is handled by two backends"
                    )));
                }
            }
        }
        Ok(Self {
            backends,
            scope,
            workers,
            batch_size,
            retry_limit,
        })
    }

    fn backend_fingerprint(&self, backend: &dyn TaggerBackend) -> String {
        digest([backend.fingerprint().as_str(), self.scope.as_str()])
    }

    fn run_task(&self, task: &Task<'_>) -> Result<Vec<EntityMention>, TaggerError> {
        let backend = &self.backends[task.backend];
        let input: Vec<_> = task.documents.iter().flat_map(|d| paragraphs(d, self.scope)).collect();
        let mut attempt = 0;
        loop {
            match backend.tag_batch(&input) {
                Ok(mentions) => return Ok(mentions),
                Err(e) if attempt < self.retry_limit => {
                    attempt += 1;
                    log::warn!(
                        "batch {} failed ({e}); retry {attempt}/{}",
                        task.batch_id,
                        self.retry_limit
                    );
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Tags every pending document of the store with every backend.
    pub fn run(&self, store: &Store) -> Result<RunReport, PipelineError> {
        let started = Instant::now();
        let documents = store.load_documents()?;
        let fingerprints: Vec<String> = self
            .backends
            .iter()
            .map(|b| self.backend_fingerprint(b.as_ref()))
            .collect();

        let mut per_backend: Vec<Vec<Vec<&Document>>> = Vec::new();
        let mut scheduled: BTreeSet<&str> = BTreeSet::new();
        for (b, backend) in self.backends.iter().enumerate() {
            let done = store.completed(backend.name(), &fingerprints[b])?;
            let pending: Vec<&Document> = documents.iter().filter(|d| !done.contains(&d.paper_id)).collect();
            scheduled.extend(pending.iter().map(|d| d.paper_id.as_str()));
            let size = backend.batch_size().unwrap_or(self.batch_size).max(1);
            per_backend.push(plan_batches(&pending, size).into_iter().map(<[_]>::to_vec).collect());
        }
        // Deterministic task order: batch index first, backend second.
        let mut tasks = Vec::new();
        let longest = per_backend.iter().map(Vec::len).max().unwrap_or(0);
        for i in 0..longest {
            for (b, batches) in per_backend.iter_mut().enumerate() {
                if let Some(batch) = batches.get_mut(i) {
                    tasks.push(Task {
                        backend: b,
                        batch_id: format!("{}#{i}", self.backends[b].name()),
                        documents: std::mem::take(batch),
                    });
                }
            }
        }

        if tasks.is_empty() {
            return Ok(RunReport {
                skipped: documents.len(),
                mentions: EntityType::ALL.iter().map(|&t| (t, 0)).collect(),
                duration: started.elapsed(),
                ..RunReport::default()
            });
        }
        // Nothing is recorded for a run with no pending work.
        let run_id = store.begin_run(&digest(&fingerprints))?;
        let mut report = RunReport {
            run_id: Some(run_id),
            scheduled: scheduled.len(),
            skipped: documents.len() - scheduled.len(),
            mentions: EntityType::ALL.iter().map(|&t| (t, 0)).collect(),
            ..RunReport::default()
        };
        let mut failed_docs: BTreeSet<String> = BTreeSet::new();
        let mut failed_tasks = 0;

        let (task_tx, task_rx) = crossbeam_channel::unbounded::<usize>();
        let (result_tx, result_rx) = crossbeam_channel::unbounded::<TaskResult>();
        for seq in 0..tasks.len() {
            let _ = task_tx.send(seq);
        }
        drop(task_tx);

        let commit_result = std::thread::scope(|scope| -> Result<(), PipelineError> {
            for _ in 0..self.workers.min(tasks.len()) {
                let task_rx = task_rx.clone();
                let result_tx = result_tx.clone();
                let tasks = &tasks;
                scope.spawn(move || {
                    for seq in task_rx.iter() {
                        let outcome = self.run_task(&tasks[seq]);
                        if result_tx.send(TaskResult { seq, outcome }).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(result_tx);

            let mut pending: BTreeMap<usize, Result<Vec<EntityMention>, TaggerError>> = BTreeMap::new();
            let mut next = 0;
            for result in result_rx.iter() {
                pending.insert(result.seq, result.outcome);
                while let Some(outcome) = pending.remove(&next) {
                    let task = &tasks[next];
                    let backend = self.backends[task.backend].as_ref();
                    match outcome {
                        Ok(mentions) => self.commit_task(
                            store,
                            run_id,
                            &fingerprints[task.backend],
                            backend,
                            task,
                            mentions,
                            &mut report,
                            &mut failed_docs,
                        )?,
                        Err(e) => {
                            log::error!("batch {} failed: {e}", task.batch_id);
                            failed_tasks += 1;
                            let ids: Vec<String> = task.documents.iter().map(|d| d.paper_id.clone()).collect();
                            failed_docs.extend(ids.iter().cloned());
                            report.failures.push(BatchFailure {
                                batch_id: task.batch_id.clone(),
                                backend: backend.name().to_string(),
                                error: e.to_string(),
                                documents: ids,
                            });
                        }
                    }
                    next += 1;
                }
            }
            Ok(())
        });
        // Dropping the receiver lets workers exit if the commit loop bailed out.
        drop(task_rx);
        commit_result?;

        store.finish_run(run_id)?;
        report.failed = failed_docs.len();
        report.processed = report.scheduled - report.failed;
        report.duration = started.elapsed();
        if failed_tasks == tasks.len() {
            return Err(PipelineError::AllBatchesFailed(Box::new(report)));
        }
        Ok(report)
    }

    #[allow(clippy::too_many_arguments)]
    fn commit_task(
        &self,
        store: &Store,
        run_id: i64,
        fingerprint: &str,
        backend: &dyn TaggerBackend,
        task: &Task<'_>,
        mentions: Vec<EntityMention>,
        report: &mut RunReport,
        failed_docs: &mut BTreeSet<String>,
    ) -> Result<(), PipelineError> {
        let mut by_doc: HashMap<String, Vec<EntityMention>> = HashMap::new();
        for m in mentions {
            if backend.entity_types().contains(&m.entity.entity_type) && self.scope.includes(m.location.paragraph) {
                by_doc.entry(m.paper_id.clone()).or_default().push(m);
            }
        }
        for doc in &task.documents {
            let mentions = by_doc.remove(&doc.paper_id).unwrap_or_default();
            match store.commit_document(run_id, backend.name(), fingerprint, &doc.paper_id, &mentions) {
                Ok(inserted) => {
                    for (ty, n) in inserted {
                        *report.mentions.entry(ty).or_insert(0) += n as u64;
                    }
                }
                Err(e @ StoreError::SpanIntegrityViolation { .. }) => {
                    log::error!("rejected mentions for {}: {e}", doc.paper_id);
                    failed_docs.insert(doc.paper_id.clone());
                    report.failures.push(BatchFailure {
                        batch_id: task.batch_id.clone(),
                        backend: backend.name().to_string(),
                        error: e.to_string(),
                        documents: vec![doc.paper_id.clone()],
                    });
                    continue;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if !by_doc.is_empty() {
            log::warn!(
                "batch {}: ignored mentions for documents outside the batch: {:?}",
                task.batch_id,
                by_doc.keys().collect::<Vec<_>>()
            );
        }
        Ok(())
    }
}

/// Builds the backends named in `config` and runs them over `store`.
pub fn run_pipeline(config: &PipelineConfig, store: &Store) -> Result<RunReport, PipelineError> {
    config.build_pipeline()?.run(store)
}
