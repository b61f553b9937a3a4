//! On-disk stages: featurisation into a feature cache, and K-fold
//! experiments that write checkpoints, histories, predictions and reports.
//!
//! Cache layout under a cache root:
//!
//! ```text
//! videos/<id>/frames.{f32,json}, transcript.{txt,json}
//! features/<kind>/<id>.{f32,json}
//! features/count_vect/folds.json
//! features/count_vect/fold-<k>/vocab.json, <id>.{f32,json}
//! ```
//!
//! Run layout: `<runs>/<name>/fold-<k>/` plus run-level reports.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clients::{ImageBackboneClient, SentenceEncoderClient, Taxonomy, WordEmbeddingTable, EMBEDDING_DIM};
use crate::datamodel::{make_folds, DatasetManifest, FoldPlan};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix, MetricReport};
use crate::fusion::{save_checkpoint, FusionModelConfig};
use crate::ingest::IngestCache;
use crate::store::{self, TensorMeta};
use crate::textfeat::{
    build_count_vocab, embed_w2v_pad, embed_w2v_sum, encode_sentbert, tokenize_transcript, vectorize_count,
    CountVocab, Stopwords, TextFeature, TextKind, TokenizedDoc, VOCAB_CAP,
};
use crate::train::{run_kfold, FeatureSource, KFoldResult, Prediction, TrainConfig};
use crate::visfeat::{as_frames, sum_descriptors, VisualFeature, VisualKind};

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Provenance record written once into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub input_digests: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub started_at: u64,
    pub finished_at: u64,
    pub artifacts: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config_digest: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            config_digest: config_digest.into(),
            input_digests: BTreeMap::new(),
            seeds: BTreeMap::new(),
            started_at: unix_now(),
            finished_at: 0,
            artifacts: Vec::new(),
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_at = unix_now();
        self.artifacts.sort();
        store::write_json(&dir.join(RUN_MANIFEST), &self)
    }
}

/// Feature cache rooted at `<cache>/features`.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub k: usize,
    pub seed: u64,
}

impl FeatureStore {
    pub fn new(cache_root: &Path) -> Self {
        Self {
            root: cache_root.join("features"),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn text_dir(&self, kind: TextKind, fold: Option<usize>) -> PathBuf {
        let base = self.root.join(kind.name());
        match fold {
            Some(f) if kind == TextKind::CountVect => base.join(format!("fold-{f}")),
            _ => base,
        }
    }

    fn visual_dir(&self, kind: VisualKind) -> PathBuf {
        self.root.join(kind.name())
    }

    pub fn write_text(&self, f: &TextFeature, fold: Option<usize>) -> Result<()> {
        let mut meta = TensorMeta::new(&f.video_id, f.shape());
        meta.kind = Some(f.kind.name().into());
        meta.vocab_size = f.vocab_size;
        meta.fold = fold;
        store::write_tensor(&self.text_dir(f.kind, fold), &f.video_id, &f.data, &meta)
    }

    pub fn write_visual(&self, f: &VisualFeature) -> Result<()> {
        let mut meta = TensorMeta::new(&f.video_id, f.kind.shape());
        meta.kind = Some(f.kind.name().into());
        store::write_tensor(&self.visual_dir(f.kind), &f.video_id, &f.data, &meta)
    }

    pub fn fold_record(&self) -> Result<Option<FoldRecord>> {
        let path = self.root.join(TextKind::CountVect.name()).join("folds.json");
        if path.exists() {
            store::read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn vocab(&self, fold: usize) -> Result<CountVocab> {
        CountVocab::load(&self.text_dir(TextKind::CountVect, Some(fold)).join("vocab.json"))
    }

    fn missing(id: &str, kind: &str) -> Error {
        Error::MissingFeature {
            id: id.into(),
            kind: kind.into(),
        }
    }
}

impl FeatureSource for FeatureStore {
    fn text(&self, id: &str, kind: TextKind, fold: usize) -> Result<TextFeature> {
        let dir = self.text_dir(kind, Some(fold));
        if !store::tensor_exists(&dir, id) {
            return Err(Self::missing(id, kind.name()));
        }
        let (data, meta) = store::read_tensor(&dir, id)?;
        let mut f = TextFeature::new(kind, id, data)?;
        f.vocab_size = meta.vocab_size;
        Ok(f)
    }

    fn visual(&self, id: &str, kind: VisualKind) -> Result<VisualFeature> {
        let dir = self.visual_dir(kind);
        if !store::tensor_exists(&dir, id) {
            return Err(Self::missing(id, kind.name()));
        }
        let (data, _) = store::read_tensor(&dir, id)?;
        VisualFeature::new(kind, id, data)
    }
}

/// External resources used by featurisation. Missing entries are only an
/// error when a requested kind needs them.
#[derive(Default)]
pub struct FeatureClients {
    pub object_backbone: Option<Box<dyn ImageBackboneClient>>,
    pub place_backbone: Option<Box<dyn ImageBackboneClient>>,
    pub sentence_encoder: Option<Box<dyn SentenceEncoderClient>>,
    pub embeddings: Option<WordEmbeddingTable>,
    /// Builds a seeded hashed table over the corpus tokens when no table is given.
    pub hashed_embeddings: bool,
}

impl FeatureClients {
    /// Deterministic offline stand-ins for every resource.
    pub fn stubs() -> Self {
        use crate::clients::{StubBackbone, StubSentenceEncoder};
        Self {
            object_backbone: Some(Box::new(StubBackbone::new(Taxonomy::Object1000, 0))),
            place_backbone: Some(Box::new(StubBackbone::new(Taxonomy::Place365, 0))),
            sentence_encoder: Some(Box::new(StubSentenceEncoder::new(0))),
            embeddings: None,
            hashed_embeddings: true,
        }
    }

    fn backbone(&self, kind: VisualKind) -> Option<&dyn ImageBackboneClient> {
        match kind {
            VisualKind::ImgnFeat => self.object_backbone.as_deref(),
            VisualKind::PlcFeat => self.place_backbone.as_deref(),
            VisualKind::Frames => None,
        }
    }

    /// Fails before any work is done if a requested kind has no resource.
    pub fn check(&self, text: &[TextKind], visual: &[VisualKind]) -> Result<()> {
        for &k in visual {
            if k != VisualKind::Frames && self.backbone(k).is_none() {
                return Err(Error::Config(format!(
                    "{k} needs an image backbone and none is configured (use --stub-clients)"
                )));
            }
        }
        for &k in text {
            match k {
                TextKind::SentBert if self.sentence_encoder.is_none() => {
                    return Err(Error::Config(
                        "sent_bert needs a sentence encoder and none is configured (use --stub-clients)".into(),
                    ))
                }
                TextKind::W2vPad | TextKind::W2vSum if self.embeddings.is_none() && !self.hashed_embeddings => {
                    return Err(Error::Config(format!(
                        "{k} needs a word-embedding table (pass --embeddings or use --stub-clients)"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FeaturizeOptions {
    pub text: Vec<TextKind>,
    pub visual: Vec<VisualKind>,
    pub folds: usize,
    pub fold_seed: u64,
    pub workers: usize,
    pub stopwords: Stopwords,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FeaturizeSummary {
    /// Files written per kind name.
    pub written: BTreeMap<String, usize>,
    pub failed: Vec<(String, String)>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Computes the requested feature kinds for every ingested manifest entry.
/// The count vocabulary is rebuilt per fold from that fold's training
/// documents; entries missing from the ingest cache are reported as failed.
pub fn featurize(
    manifest: &DatasetManifest,
    ingest: &IngestCache,
    out: &FeatureStore,
    options: &FeaturizeOptions,
    clients: &FeatureClients,
) -> Result<FeaturizeSummary> {
    clients.check(&options.text, &options.visual)?;
    let pool = pool(options.workers)?;
    let mut summary = FeaturizeSummary::default();

    let mut loaded = Vec::new();
    for e in &manifest.entries {
        match ingest.load(&e.id) {
            Ok(pair) => loaded.push(pair),
            Err(err) => summary.failed.push((e.id.clone(), Error::for_entry(&e.id, err).to_string())),
        }
    }
    let docs: Vec<TokenizedDoc> = loaded
        .iter()
        .map(|(_, t)| tokenize_transcript(t, &options.stopwords))
        .collect();

    let needs_table = options.text.iter().any(|k| matches!(k, TextKind::W2vPad | TextKind::W2vSum));
    let hashed;
    let table = match (&clients.embeddings, needs_table) {
        (Some(t), _) => Some(t),
        (None, true) => {
            hashed = WordEmbeddingTable::hashed(
                docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)),
                EMBEDDING_DIM,
                0,
            );
            Some(&hashed)
        }
        (None, false) => None,
    };

    let results: Vec<Result<Vec<&'static str>>> = pool.install(|| {
        loaded
            .par_iter()
            .zip(docs.par_iter())
            .map(|((frames, transcript), doc)| -> Result<Vec<&'static str>> {
                let id = &frames.video_id;
                let wrap = |e| Error::for_entry(id, e);
                let mut done = Vec::new();
                for &k in &options.visual {
                    let f = match k {
                        VisualKind::Frames => as_frames(frames),
                        _ => sum_descriptors(frames, clients.backbone(k).unwrap()).map_err(wrap)?,
                    };
                    out.write_visual(&f).map_err(wrap)?;
                    done.push(k.name());
                }
                for &k in &options.text {
                    let f = match k {
                        TextKind::CountVect => continue,
                        TextKind::W2vPad => embed_w2v_pad(doc, table.unwrap()),
                        TextKind::W2vSum => embed_w2v_sum(doc, table.unwrap()),
                        TextKind::SentBert => encode_sentbert(transcript, clients.sentence_encoder.as_deref().unwrap()),
                    }
                    .map_err(wrap)?;
                    out.write_text(&f, None).map_err(wrap)?;
                    done.push(k.name());
                }
                Ok(done)
            })
            .collect()
    });
    for ((frames, _), r) in loaded.iter().zip(results) {
        match r {
            Ok(kinds) => {
                for k in kinds {
                    *summary.written.entry(k.to_string()).or_default() += 1;
                }
            }
            Err(e) => summary.failed.push((frames.video_id.clone(), e.to_string())),
        }
    }

    if options.text.contains(&TextKind::CountVect) {
        let plan = make_folds(manifest, options.folds, options.fold_seed)?;
        let written = write_count_features(out, &plan, &docs, &pool)?;
        summary.written.insert(TextKind::CountVect.name().into(), written);
    }
    summary.failed.sort();
    Ok(summary)
}

fn write_count_features(out: &FeatureStore, plan: &FoldPlan, docs: &[TokenizedDoc], pool: &rayon::ThreadPool) -> Result<usize> {
    let by_id: HashMap<&str, &TokenizedDoc> = docs.iter().map(|d| (d.video_id.as_str(), d)).collect();
    let base = out.root.join(TextKind::CountVect.name());
    store::ensure_dir(&base)?;
    store::write_json(&base.join("folds.json"), &FoldRecord { k: plan.k, seed: plan.seed })?;
    let mut written = 0;
    for (i, fold) in plan.folds.iter().enumerate() {
        let train_docs: Vec<TokenizedDoc> = fold
            .train_ids
            .iter()
            .filter_map(|id| by_id.get(id.as_str()).map(|d| (*d).clone()))
            .collect();
        let vocab = build_count_vocab(&train_docs, VOCAB_CAP)?;
        let dir = out.text_dir(TextKind::CountVect, Some(i));
        store::ensure_dir(&dir)?;
        vocab.write(&dir.join("vocab.json"))?;
        pool.install(|| {
            docs.par_iter()
                .try_for_each(|d| out.write_text(&vectorize_count(d, &vocab), Some(i)))
        })?;
        written += docs.len();
    }
    Ok(written)
}

fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_folds() -> usize {
    crate::datamodel::DEFAULT_FOLDS
}

/// JSON experiment description. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub manifest: PathBuf,
    pub cache_dir: PathBuf,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
    pub model: FusionModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub fold_seed: u64,
    /// When set, labels are shuffled with this seed before training: a chance-level control.
    #[serde(default)]
    pub label_permutation_seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let bytes = store::read_file(path)?;
        let cfg: Self = serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn resolve(&self, base: &Path) -> Self {
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        Self {
            manifest: abs(&self.manifest),
            cache_dir: abs(&self.cache_dir),
            runs_dir: abs(&self.runs_dir),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let name_ok = !self.name.is_empty()
            && self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !self.name.starts_with('.');
        if !name_ok {
            return Err(Error::Config(format!(
                "experiment name '{}' must be a plain directory name",
                self.name
            )));
        }
        self.model.validate()?;
        self.train.validate()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.name)
    }
}

/// Stored alongside a run so reports can be rebuilt from predictions alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub descriptors: String,
    pub classes: Vec<String>,
    pub folds: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub run_dir: PathBuf,
    pub result: KFoldResult,
    pub descriptors: String,
}

impl ExperimentOutcome {
    /// `joint/count_vect/imgn_feat  acc 0.70 ± 0.02  ...` in table order.
    pub fn summary_line(&self) -> String {
        let cells: Vec<String> = eval::METRIC_NAMES
            .iter()
            .zip(self.result.aggregate.summary())
            .map(|(n, m)| format!("{n} {m}"))
            .collect();
        format!("{}  {}", self.descriptors, cells.join("  "))
    }
}

/// Runs a whole K-fold experiment from cached features and writes the run
/// directory.
pub fn run_experiment(config: &ExperimentConfig, command: &str) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mut manifest = crate::datamodel::load_manifest(&config.manifest)?;
    if let Some(seed) = config.label_permutation_seed {
        manifest = manifest.with_permuted_labels(seed);
    }
    let plan = make_folds(&manifest, config.folds, config.fold_seed)?;
    let features = FeatureStore::new(&config.cache_dir);
    if config.model.text_kind == Some(TextKind::CountVect) {
        let want = FoldRecord {
            k: config.folds,
            seed: config.fold_seed,
        };
        match features.fold_record()? {
            Some(r) if r == want => {}
            other => {
                return Err(Error::Config(format!(
                    "count_vect features were built for folds {other:?}, experiment uses {want:?}; rerun featurize with matching --folds/--fold-seed"
                )))
            }
        }
    }
    let mut provenance = RunManifest::new(command, store::digest_bytes(&serde_json::to_vec(config)?));
    provenance
        .input_digests
        .insert("manifest".into(), store::digest_file(&config.manifest)?);
    provenance.seeds.insert("train".into(), config.train.seed);
    provenance.seeds.insert("folds".into(), config.fold_seed);
    if let Some(s) = config.label_permutation_seed {
        provenance.seeds.insert("label_permutation".into(), s);
    }

    let result = run_kfold(&manifest, &features, &config.model, &config.train, &plan)?;
    let run_dir = config.run_dir();
    store::ensure_dir(&run_dir)?;
    let classes = manifest.vocabulary.names().to_vec();
    let descriptors = config.model.descriptor_label();
    store::write_json(&run_dir.join("experiment.json"), config)?;
    store::write_json(
        &run_dir.join("run_info.json"),
        &RunInfo {
            descriptors: descriptors.clone(),
            classes: classes.clone(),
            folds: result.folds.len(),
        },
    )?;
    for f in &result.folds {
        let dir = run_dir.join(format!("fold-{}", f.fold));
        store::ensure_dir(&dir)?;
        let mut model = f.model.clone();
        save_checkpoint(&dir.join("model.ckpt"), &mut model, f.seed, &classes)?;
        store::write_json(&dir.join("history.json"), &f.history)?;
        store::write_json(&dir.join("predictions.json"), &f.predictions)?;
        store::write_json(
            &dir.join("train_summary.json"),
            &serde_json::json!({
                "seed": f.seed,
                "train_accuracy": f.train_accuracy,
                "best_epoch": f.history.best_epoch,
                "stopped_epoch": f.history.stopped_epoch,
            }),
        )?;
        provenance.seeds.insert(format!("fold-{}", f.fold), f.seed);
    }
    let artifacts = regenerate_reports(&run_dir)?;
    provenance.artifacts = artifacts
        .iter()
        .filter_map(|p| p.strip_prefix(&run_dir).ok().map(|p| p.display().to_string()))
        .collect();
    provenance.write(&run_dir)?;
    Ok(ExperimentOutcome {
        run_dir,
        result,
        descriptors,
    })
}

fn fold_dirs(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(run_dir)
        .map_err(|e| Error::io(run_dir, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("fold-"))
        })
        .collect();
    dirs.sort_by_key(|p| {
        p.file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.trim_start_matches("fold-").parse::<usize>().ok())
            .unwrap_or(usize::MAX)
    });
    Ok(dirs)
}

/// Rebuilds every fold's and the run's metric table, heatmap and counts
/// from the stored predictions. Returns the written paths.
pub fn regenerate_reports(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let info: RunInfo = store::read_json(&run_dir.join("run_info.json"))?;
    let dirs = fold_dirs(run_dir)?;
    if dirs.is_empty() {
        return Err(Error::io(
            run_dir.join("fold-0"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no fold directories with predictions"),
        ));
    }
    let k = info.classes.len();
    let mut reports: Vec<MetricReport> = Vec::new();
    let mut pooled = ConfusionMatrix::zeros(k);
    let mut written = Vec::new();
    for dir in &dirs {
        let preds: Vec<Prediction> = store::read_json(&dir.join("predictions.json"))?;
        let truth: Vec<usize> = preds.iter().map(|p| p.label).collect();
        let guess: Vec<usize> = preds.iter().map(|p| p.predicted).collect();
        let cm = eval::confusion(&truth, &guess, k)?;
        let report = eval::metrics(&cm)?;
        store::write_json(&dir.join("report.json"), &report)?;
        let files = eval::emit_report(std::slice::from_ref(&report), &cm, &info.classes, &info.descriptors, dir)?;
        written.extend([dir.join("report.json"), files.metrics_csv, files.heatmap, files.counts]);
        pooled = pooled.add(&cm);
        reports.push(report);
    }
    let agg = eval::aggregate(&reports)?;
    store::write_json(&run_dir.join("aggregate.json"), &agg)?;
    let files = eval::emit_report(&reports, &pooled, &info.classes, &info.descriptors, run_dir)?;
    written.extend([run_dir.join("aggregate.json"), files.metrics_csv, files.heatmap, files.counts]);
    Ok(written)
}
