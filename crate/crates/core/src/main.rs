use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cordner::export::{compute_stats, export_json, export_pubtator, validate_dump};
use cordner::ingest::{documents_from_pubtator, ingest_collection, Scope};
use cordner::orchestrator::{PipelineConfig, PipelineError};
use cordner::pubtator::{parse_composed, scan_directory};
use cordner::store::Store;

#[derive(Parser)]
#[command(
    name = "cordner",
    version,
    about = "Biomedical entity mention pipeline for CORD-19-style corpora"
)]
struct Cli {
    /// Database file.
    #[arg(long, global = true, env = "CORDNER_DB", default_value = "cordner.db")]
    db: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Abstracts,
    Fulltext,
}

impl From<ScopeArg> for Scope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Abstracts => Scope::Abstracts,
            ScopeArg::Fulltext => Scope::Fulltext,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Pubtator,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a directory of CORD-19 JSON parses.
    Ingest { dir: PathBuf },
    /// Import a PubTator file (single or composed) or a directory of them.
    ImportPubtator { path: PathBuf },
    /// Run the configured taggers over all stored documents.
    Tag {
        #[arg(long)]
        config: PathBuf,
        /// Print the run report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write a mention dump.
    Export {
        #[arg(long, value_enum)]
        scope: ScopeArg,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Output file (json) or directory (pubtator).
        #[arg(long)]
        out: PathBuf,
        /// Papers per PubTator file.
        #[arg(long, default_value_t = 1000)]
        docs_per_file: usize,
    },
    /// Print mention counts per scope and entity type.
    Stats {
        #[arg(long)]
        json: bool,
    },
    /// Check a JSON dump against the record schema and the stored texts.
    Validate { dump: PathBuf },
}

fn open_store(path: &Path) -> Result<Store> {
    Store::open(path).with_context(|| format!("opening database {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let store = open_store(&cli.db)?;
    match cli.command {
        Command::Ingest { dir } => {
            let report = ingest_collection(&dir, &store)?;
            println!(
                "ingested {} skipped {} failed {}",
                report.ingested, report.skipped, report.failed
            );
            for (file, err) in &report.failures {
                eprintln!("  {file}: {err}");
            }
            for (id, files) in &report.duplicates {
                eprintln!("  duplicate {id}: {} (last wins)", files.join(", "));
            }
        }
        Command::ImportPubtator { path } => {
            let mut docs = Vec::new();
            if path.is_dir() {
                for entry in scan_directory(&path)? {
                    match entry.result {
                        Ok(parsed) => docs.extend(parsed),
                        Err(e) => eprintln!("  {}: {e}", entry.file_name),
                    }
                }
            } else {
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                docs = parse_composed(&text)?;
            }
            let decoded = documents_from_pubtator(&docs)?;
            let run_id = store.begin_run("pubtator-import")?;
            let mut mentions = 0;
            for (doc, ms) in &decoded {
                store.upsert_document(doc)?;
                mentions += store.insert_mentions(run_id, "pubtator-import", ms)?;
            }
            store.finish_run(run_id)?;
            println!("imported {} documents, {} mentions", decoded.len(), mentions);
        }
        Command::Tag { config, json } => {
            let config = PipelineConfig::load(&config)?;
            let report = match config.build_pipeline()?.run(&store) {
                Ok(report) => report,
                Err(PipelineError::AllBatchesFailed(report)) => {
                    for f in &report.failures {
                        eprintln!("  {} ({}): {}", f.batch_id, f.backend, f.error);
                    }
                    bail!("every batch failed");
                }
                Err(e) => return Err(e.into()),
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                let run = report.run_id.map_or_else(|| "-".to_string(), |id| id.to_string());
                println!(
                    "run {run}: scheduled {} processed {} failed {} skipped {} in {:.2}s",
                    report.scheduled,
                    report.processed,
                    report.failed,
                    report.skipped,
                    report.duration.as_secs_f64()
                );
                for (ty, n) in &report.mentions {
                    println!("  {ty}: {n} new mentions");
                }
                for f in &report.failures {
                    eprintln!("  failed {} ({}): {}", f.batch_id, f.backend, f.error);
                }
            }
        }
        Command::Export {
            scope,
            format,
            out,
            docs_per_file,
        } => match format {
            Format::Json => {
                let n = export_json(&store, scope.into(), &out)?;
                println!("wrote {n} mentions to {}", out.display());
            }
            Format::Pubtator => {
                let n = export_pubtator(&store, scope.into(), &out, docs_per_file)?;
                println!("wrote {n} files to {}", out.display());
            }
        },
        Command::Stats { json } => {
            let stats = compute_stats(&store)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{}", stats.render());
            }
        }
        Command::Validate { dump } => {
            let text = std::fs::read_to_string(&dump).with_context(|| format!("reading {}", dump.display()))?;
            let report = validate_dump(&store, &text)?;
            for e in &report.errors {
                eprintln!("  {e}");
            }
            if !report.is_valid() {
                bail!("{} problems in {} records", report.errors.len(), report.records);
            }
            println!("ok: {} documents, {} records", report.documents, report.records);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
