//! Procedural corpora for offline runs: colour-coded videos with audio and
//! class-keyword transcripts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{ClassVocabulary, DatasetManifest, Split, VideoEntry};
use crate::error::{Error, Result};
use crate::media::{RawAudio, RawVideo};
use crate::store;

pub const SYNTH_CLASSES: [&str; 9] = [
    "Cafe",
    "Bar",
    "Reading Room",
    "Stadium",
    "Arcade",
    "Library",
    "Closet",
    "Beauty Salon",
    "Aquarium",
];

const PALETTE: [[f32; 3]; 9] = [
    [0.55, 0.35, 0.20],
    [0.60, 0.10, 0.15],
    [0.85, 0.80, 0.55],
    [0.15, 0.65, 0.20],
    [0.75, 0.20, 0.80],
    [0.40, 0.25, 0.10],
    [0.90, 0.90, 0.95],
    [0.95, 0.55, 0.70],
    [0.10, 0.35, 0.85],
];

const KEYWORDS: [&[&str]; 9] = [
    &["espresso", "latte", "barista", "croissant", "mocha", "cappuccino"],
    &["cocktail", "whiskey", "bartender", "beer", "shots", "tonic"],
    &["silence", "desk", "lamp", "study", "notes", "quiet"],
    &["goal", "crowd", "match", "referee", "stands", "cheering"],
    &["joystick", "tokens", "pinball", "highscore", "claw", "retro"],
    &["books", "shelves", "librarian", "borrow", "catalog", "novel"],
    &["hangers", "shoes", "jackets", "wardrobe", "outfit", "drawers"],
    &["haircut", "manicure", "stylist", "salon", "blowdry", "nails"],
    &["fish", "shark", "tank", "coral", "jellyfish", "octopus"],
];

const FILLER: [&str; 12] = [
    "today", "look", "amazing", "place", "friends", "weekend", "really", "nice", "came", "visit", "love", "time",
];

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub name: String,
    pub videos_per_class: usize,
    pub train_per_class: usize,
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub min_seconds: u32,
    pub max_seconds: u32,
    pub audio_rate: u32,
    pub words_per_transcript: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            videos_per_class: 10,
            train_per_class: 7,
            width: 48,
            height: 36,
            fps: 2,
            min_seconds: 10,
            max_seconds: 14,
            audio_rate: 4000,
            words_per_transcript: 120,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub transcripts_path: PathBuf,
    pub transcripts: BTreeMap<String, String>,
}

/// Transcript fixture that sits next to a manifest: `<stem>.transcripts.json`.
pub fn transcripts_path_for(manifest_path: &Path) -> PathBuf {
    let stem = manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
    manifest_path.with_file_name(format!("{stem}.transcripts.json"))
}

fn slug(name: &str) -> String {
    name.to_lowercase().replace(' ', "-")
}

fn video(spec: &SynthSpec, class: usize, seconds: u32, rng: &mut ChaCha8Rng) -> RawVideo {
    let base = PALETTE[class];
    let jitter: Vec<f32> = (0..3).map(|_| rng.random_range(-0.05f32..0.05)).collect();
    let n = (seconds * spec.fps) as usize;
    let (w, h) = (spec.width as usize, spec.height as usize);
    let frames = (0..n)
        .map(|_| {
            let mut px = Vec::with_capacity(w * h * 3);
            for y in 0..h {
                for _x in 0..w {
                    // A darker lower band gives the frame some structure.
                    let band = if y >= h * 2 / 3 { 0.7 } else { 1.0 };
                    for c in 0..3 {
                        let v = (base[c] + jitter[c]) * band + rng.random_range(-0.08f32..0.08);
                        px.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            px
        })
        .collect();
    let samples = (seconds * spec.audio_rate) as usize;
    let freq = 220.0 + 40.0 * class as f32;
    let audio = RawAudio {
        sample_rate: spec.audio_rate,
        channels: 1,
        samples: (0..samples)
            .map(|i| {
                let t = i as f32 / spec.audio_rate as f32;
                ((2.0 * std::f32::consts::PI * freq * t).sin() * 8000.0) as i16
            })
            .collect(),
    };
    RawVideo {
        width: spec.width,
        height: spec.height,
        fps_num: spec.fps,
        fps_den: 1,
        frames,
        audio: Some(audio),
    }
}

fn transcript(spec: &SynthSpec, class: usize, rng: &mut ChaCha8Rng) -> String {
    (0..spec.words_per_transcript)
        .map(|_| {
            if rng.random_bool(0.6) {
                *KEYWORDS[class].choose(rng).unwrap()
            } else {
                *FILLER.choose(rng).unwrap()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes `<dir>/<name>.manifest`, its transcript fixture and one `.svid`
/// per video under `<dir>/videos/`.
pub fn generate(dir: &Path, spec: &SynthSpec) -> Result<SynthCorpus> {
    if spec.min_seconds == 0 || spec.min_seconds > spec.max_seconds || spec.train_per_class > spec.videos_per_class {
        return Err(Error::Validation(format!(
            "bad synthetic spec: {}..={} s, {} of {} videos per class in train",
            spec.min_seconds, spec.max_seconds, spec.train_per_class, spec.videos_per_class
        )));
    }
    store::ensure_dir(&dir.join("videos"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut entries = Vec::new();
    let mut transcripts = BTreeMap::new();
    for (class, name) in SYNTH_CLASSES.iter().enumerate() {
        for i in 0..spec.videos_per_class {
            let id = format!("synth-{}-{:02}", slug(name), i + 1);
            let seconds = rng.random_range(spec.min_seconds..=spec.max_seconds);
            let uri = format!("videos/{id}.svid");
            video(spec, class, seconds, &mut rng).write(&dir.join(&uri))?;
            transcripts.insert(id.clone(), transcript(spec, class, &mut rng));
            entries.push(VideoEntry {
                id,
                uri,
                label: name.to_string(),
                split: if i < spec.train_per_class { Split::Train } else { Split::Test },
            });
        }
    }
    let vocabulary = ClassVocabulary::new(SYNTH_CLASSES.iter().map(|s| s.to_string()).collect())?;
    let manifest = DatasetManifest::new(spec.name.clone(), vocabulary, entries)?;
    let manifest_path = dir.join(format!("{}.manifest", spec.name));
    manifest.write(&manifest_path)?;
    let transcripts_path = transcripts_path_for(&manifest_path);
    store::write_json(&transcripts_path, &transcripts)?;
    Ok(SynthCorpus {
        manifest,
        manifest_path,
        transcripts_path,
        transcripts,
    })
}
