//! Command-line surface. `run` is the whole program; the binary only maps
//! its return value to the process exit code.
//!
//! Exit codes: 0 success, 1 I/O error, 2 validation or configuration error,
//! 3 partial failure (some entries failed), 4 training diverged.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::clients::{LiveSpeechClient, SpeechToTextClient, StubSpeechClient, WordEmbeddingTable};
use crate::datamodel::{class_distribution, load_manifest, DatasetManifest, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::ingest::{ingest_manifest, IngestCache};
use crate::pipeline::{self, ExperimentConfig, FeatureClients, FeatureStore, FeaturizeOptions, RunManifest};
use crate::store;
use crate::synth::{self, SynthSpec};
use crate::textfeat::{Stopwords, TextKind};
use crate::visfeat::VisualKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "scenefuse", version, about = "Multi-modal video scene classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest and print its class distribution.
    Validate { manifest: PathBuf },
    /// Sample frames and transcribe audio for every entry into the cache.
    Ingest {
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// Use the offline speech stub (transcripts from `<stem>.transcripts.json`).
        #[arg(long)]
        stub_clients: bool,
        /// Transcript fixture for the stub, overriding the default location.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Compute feature kinds from the ingest cache.
    Featurize {
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// Comma-separated text kinds, or `all`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        text: Vec<String>,
        /// Comma-separated visual kinds, or `all`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        visual: Vec<String>,
        #[arg(long)]
        stub_clients: bool,
        /// Word-embedding table: one token per line followed by 100 floats.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Stopword list, one word per line (default: built-in English list).
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_FOLDS)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        fold_seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run a K-fold experiment described by a JSON config file.
    Train { config: PathBuf },
    /// Rebuild tables and heatmaps of a run from its stored predictions.
    Report { run_dir: PathBuf },
    /// Write a procedural corpus (videos, manifest, transcript fixture).
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        videos_per_class: usize,
        #[arg(long, default_value_t = 7)]
        train_per_class: usize,
        #[arg(long, default_value_t = 10)]
        min_seconds: u32,
        #[arg(long, default_value_t = 14)]
        max_seconds: u32,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Io { .. } => EXIT_IO,
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_INVALID,
    }
}

fn parse_kinds<K: std::str::FromStr<Err = Error> + Copy>(raw: &[String], all: &[K]) -> Result<Vec<K>> {
    let mut out = Vec::new();
    for s in raw.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        if s == "all" {
            out.extend_from_slice(all);
        } else {
            out.push(s.parse()?);
        }
    }
    Ok(out)
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn manifest_digest(path: &Path, provenance: &mut RunManifest) -> Result<()> {
    provenance.input_digests.insert("manifest".into(), store::digest_file(path)?);
    Ok(())
}

fn report_failures(out: &mut dyn Write, failed: &[(String, String)]) -> std::io::Result<()> {
    for (id, msg) in failed {
        writeln!(out, "failed {id}: {msg}")?;
    }
    Ok(())
}

fn cmd_validate(manifest: &Path, out: &mut dyn Write) -> Result<i32> {
    let m = load_manifest(manifest)?;
    let dist = class_distribution(&m);
    writeln!(out, "{}: {} classes, {} entries", m.name, m.vocabulary.size(), m.entries.len()).ok();
    write!(out, "{dist}").ok();
    Ok(EXIT_OK)
}

fn speech_client(manifest_path: &Path, stub: bool, transcripts: Option<&Path>) -> Result<Box<dyn SpeechToTextClient>> {
    if !stub {
        return Ok(Box::new(LiveSpeechClient::from_env()?));
    }
    let fixture = transcripts
        .map(Path::to_path_buf)
        .unwrap_or_else(|| synth::transcripts_path_for(manifest_path));
    if fixture.exists() {
        Ok(Box::new(StubSpeechClient::from_fixture_file(&fixture)?))
    } else {
        log::warn!(
            "no transcript fixture at {}; stub transcripts will be empty",
            fixture.display()
        );
        Ok(Box::new(StubSpeechClient::default()))
    }
}

fn per_class_progress(m: &DatasetManifest, failed: &[(String, String)], out: &mut dyn Write) {
    for (i, name) in m.vocabulary.names().iter().enumerate() {
        let total = m.entries.iter().filter(|e| m.label_index(e) == i).count();
        let bad = failed
            .iter()
            .filter(|(id, _)| m.entry(id).is_some_and(|e| m.label_index(e) == i))
            .count();
        writeln!(out, "  {name}: {}/{total}", total - bad).ok();
    }
}

fn cmd_ingest(
    manifest_path: &Path,
    cache: &Path,
    stub: bool,
    transcripts: Option<&Path>,
    workers: usize,
    out: &mut dyn Write,
) -> Result<i32> {
    let m = load_manifest(manifest_path)?;
    let stt = speech_client(manifest_path, stub, transcripts)?;
    let videos = cache.join("videos");
    store::ensure_dir(&videos)?;
    let mut provenance = RunManifest::new("ingest", store::digest_bytes(format!("stub={stub}").as_bytes()));
    manifest_digest(manifest_path, &mut provenance)?;
    let summary = ingest_manifest(&m, &base_dir(manifest_path), stt.as_ref(), &IngestCache::new(&videos), workers)?;
    per_class_progress(&m, &summary.failed, out);
    writeln!(
        out,
        "{} ingested, {} cached, {} failed",
        summary.ingested,
        summary.cached,
        summary.failed.len()
    )
    .ok();
    report_failures(out, &summary.failed).ok();
    provenance.artifacts = m
        .entries
        .iter()
        .filter(|e| !summary.failed.iter().any(|(id, _)| id == &e.id))
        .map(|e| e.id.clone())
        .collect();
    provenance.write(&videos)?;
    Ok(if summary.failed.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

#[allow(clippy::too_many_arguments)]
fn cmd_featurize(
    manifest_path: &Path,
    cache: &Path,
    text: &[String],
    visual: &[String],
    stub: bool,
    embeddings: Option<&Path>,
    stopwords: Option<&Path>,
    folds: usize,
    fold_seed: u64,
    workers: usize,
    out: &mut dyn Write,
) -> Result<i32> {
    let m = load_manifest(manifest_path)?;
    let text = parse_kinds(text, &TextKind::ALL)?;
    let visual = parse_kinds(visual, &VisualKind::ALL)?;
    if text.is_empty() && visual.is_empty() {
        return Err(Error::Config("nothing to do: pass --text and/or --visual".into()));
    }
    let mut clients = if stub { FeatureClients::stubs() } else { FeatureClients::default() };
    if let Some(p) = embeddings {
        clients.embeddings = Some(WordEmbeddingTable::load(p)?);
    }
    let stopwords = match stopwords {
        Some(p) => Stopwords::load(p)?,
        None => Stopwords::english(),
    };
    let options = FeaturizeOptions {
        text,
        visual,
        folds,
        fold_seed,
        workers,
        stopwords,
    };
    let features = FeatureStore::new(cache);
    store::ensure_dir(features.root())?;
    let mut provenance = RunManifest::new(
        "featurize",
        store::digest_bytes(format!("{:?}|{:?}|{folds}|{fold_seed}|stub={stub}", options.text, options.visual).as_bytes()),
    );
    manifest_digest(manifest_path, &mut provenance)?;
    if let Some(p) = embeddings {
        provenance.input_digests.insert("embeddings".into(), store::digest_file(p)?);
    }
    provenance.seeds.insert("folds".into(), fold_seed);
    let summary = pipeline::featurize(&m, &IngestCache::new(cache.join("videos")), &features, &options, &clients)?;
    for (kind, n) in &summary.written {
        writeln!(out, "  {kind}: {n} files").ok();
    }
    writeln!(out, "{} failed", summary.failed.len()).ok();
    report_failures(out, &summary.failed).ok();
    provenance.artifacts = summary.written.keys().cloned().collect();
    provenance.write(features.root())?;
    Ok(if summary.failed.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn cmd_train(config_path: &Path, out: &mut dyn Write) -> Result<i32> {
    let (cfg, base) = ExperimentConfig::load(config_path)?;
    let cfg = cfg.resolve(&base);
    let outcome = pipeline::run_experiment(&cfg, "train")?;
    for f in &outcome.result.folds {
        writeln!(
            out,
            "fold {}: best epoch {}/{}, train accuracy {:.2}, test accuracy {:.2}",
            f.fold, f.history.best_epoch, f.history.stopped_epoch, f.train_accuracy, f.report.accuracy
        )
        .ok();
    }
    writeln!(out, "{}", outcome.summary_line()).ok();
    writeln!(out, "run written to {}", outcome.run_dir.display()).ok();
    Ok(EXIT_OK)
}

fn cmd_report(run_dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let files = pipeline::regenerate_reports(run_dir)?;
    for f in files {
        writeln!(out, "wrote {}", f.display()).ok();
    }
    Ok(EXIT_OK)
}

fn cmd_synth(dir: &Path, spec: SynthSpec, out: &mut dyn Write) -> Result<i32> {
    let corpus = synth::generate(dir, &spec)?;
    writeln!(
        out,
        "wrote {} videos; manifest {}",
        corpus.manifest.entries.len(),
        corpus.manifest_path.display()
    )
    .ok();
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                write!(out, "{text}").ok();
            } else {
                write!(err, "{text}").ok();
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Validate { manifest } => cmd_validate(manifest, out),
        Command::Ingest {
            manifest,
            cache,
            stub_clients,
            transcripts,
            workers,
        } => cmd_ingest(manifest, cache, *stub_clients, transcripts.as_deref(), *workers, out),
        Command::Featurize {
            manifest,
            cache,
            text,
            visual,
            stub_clients,
            embeddings,
            stopwords,
            folds,
            fold_seed,
            workers,
        } => cmd_featurize(
            manifest,
            cache,
            text,
            visual,
            *stub_clients,
            embeddings.as_deref(),
            stopwords.as_deref(),
            *folds,
            *fold_seed,
            *workers,
            out,
        ),
        Command::Train { config } => cmd_train(config, out),
        Command::Report { run_dir } => cmd_report(run_dir, out),
        Command::Synth {
            out: dir,
            seed,
            videos_per_class,
            train_per_class,
            min_seconds,
            max_seconds,
        } => cmd_synth(
            dir,
            SynthSpec {
                seed: *seed,
                videos_per_class: *videos_per_class,
                train_per_class: *train_per_class,
                min_seconds: *min_seconds,
                max_seconds: *max_seconds,
                ..SynthSpec::default()
            },
            out,
        ),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn missing_manifest_is_io() {
        let (code, _, err) = run_capture(&["scenefuse", "validate", "/nonexistent/x.manifest"]);
        assert_eq!(code, EXIT_IO);
        assert!(err.contains("/nonexistent/x.manifest"));
    }

    #[test]
    fn unknown_kind_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.manifest");
        std::fs::write(
            &p,
            "{\"name\":\"t\",\"classes\":[\"a\"]}\n{\"id\":\"x\",\"uri\":\"x.svid\",\"label\":\"a\",\"split\":\"train\"}\n",
        )
        .unwrap();
        let cache = dir.path().join("c");
        let (code, _, err) = run_capture(&[
            "scenefuse",
            "featurize",
            p.to_str().unwrap(),
            "--cache",
            cache.to_str().unwrap(),
            "--text",
            "tfidf",
        ]);
        assert_eq!(code, EXIT_INVALID, "{err}");
    }

    #[test]
    fn exit_codes_look_through_entry_wrappers() {
        let e = Error::for_entry("v", Error::Divergence { epoch: 2, loss: f64::NAN });
        assert_eq!(exit_code(&e), EXIT_DIVERGED);
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), EXIT_INVALID);
    }

    #[test]
    fn bad_arguments_exit_two() {
        assert_eq!(run_capture(&["scenefuse", "frobnicate"]).0, EXIT_INVALID);
        assert_eq!(run_capture(&["scenefuse", "--help"]).0, EXIT_OK);
    }
}
