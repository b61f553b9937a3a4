//! Generates a small procedural corpus and ingests it with the offline
//! speech stub: one frame per second (at most ten, 64×64) plus a transcript
//! per video, cached on disk. A second pass is served from the cache.
//!
//!     cargo run --example ingest_synthetic

use scenefuse::clients::StubSpeechClient;
use scenefuse::ingest::{ingest_manifest, IngestCache};
use scenefuse::synth::{self, SynthSpec};

fn main() -> scenefuse::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        videos_per_class: 3,
        train_per_class: 2,
        ..SynthSpec::default()
    };
    let corpus = synth::generate(dir.path(), &spec)?;
    let stt = StubSpeechClient::from_fixture_file(&corpus.transcripts_path)?;
    let cache = IngestCache::new(dir.path().join("cache/videos"));

    let first = ingest_manifest(&corpus.manifest, dir.path(), &stt, &cache, 2)?;
    println!("first pass: {} ingested, {} cached", first.ingested, first.cached);
    let second = ingest_manifest(&corpus.manifest, dir.path(), &stt, &cache, 2)?;
    println!("second pass: {} ingested, {} cached", second.ingested, second.cached);

    let id = &corpus.manifest.entries[0].id;
    let (frames, transcript) = cache.load(id)?;
    println!("{id}: {} real frames, shape {:?}", frames.real_count, frames.frames.shape());
    println!("transcript starts: {}", transcript.raw_text.chars().take(60).collect::<String>());
    Ok(())
}
