//! A complete offline experiment at toy scale: synthesize, ingest, featurize,
//! then 3-fold training of a joint model on summed word embeddings plus
//! object descriptors. Prints one line per fold and the aggregate row.
//!
//!     cargo run --release --example train_joint

use scenefuse::clients::StubSpeechClient;
use scenefuse::fusion::{FusionMode, FusionModelConfig};
use scenefuse::ingest::{ingest_manifest, IngestCache};
use scenefuse::pipeline::{featurize, run_experiment, ExperimentConfig, FeatureClients, FeaturizeOptions};
use scenefuse::synth::{self, SynthSpec};
use scenefuse::textfeat::{Stopwords, TextKind};
use scenefuse::train::TrainConfig;
use scenefuse::visfeat::VisualKind;

fn main() -> scenefuse::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let corpus = synth::generate(&dir.path().join("corpus"), &SynthSpec::default())?;
    let cache = dir.path().join("cache");
    let ingest = IngestCache::new(cache.join("videos"));
    let stt = StubSpeechClient::from_fixture_file(&corpus.transcripts_path)?;
    ingest_manifest(&corpus.manifest, corpus.manifest_path.parent().unwrap(), &stt, &ingest, 1)?;

    let options = FeaturizeOptions {
        text: vec![TextKind::W2vSum],
        visual: vec![VisualKind::ImgnFeat],
        folds: 3,
        fold_seed: 0,
        workers: 1,
        stopwords: Stopwords::english(),
    };
    let store = scenefuse::pipeline::FeatureStore::new(&cache);
    featurize(&corpus.manifest, &ingest, &store, &options, &FeatureClients::stubs())?;

    let config = ExperimentConfig {
        name: "joint-w2v-imgn".into(),
        manifest: corpus.manifest_path.clone(),
        cache_dir: cache.clone(),
        runs_dir: dir.path().join("runs"),
        model: FusionModelConfig::new(FusionMode::Joint, Some(TextKind::W2vSum), Some(VisualKind::ImgnFeat)),
        train: TrainConfig::with_seed(1),
        folds: 3,
        fold_seed: 0,
        label_permutation_seed: None,
    };
    let outcome = run_experiment(&config, "example")?;
    for f in &outcome.result.folds {
        println!(
            "fold {}: stopped at epoch {} (best {}), test accuracy {:.2}",
            f.fold, f.history.stopped_epoch, f.history.best_epoch, f.report.accuracy
        );
    }
    println!("{}", outcome.summary_line());
    Ok(())
}
