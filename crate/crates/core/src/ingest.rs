//! Raw video → fixed-length frame sequence + transcript, with an on-disk cache.
//!
//! Cache layout, one directory per video id under the cache root:
//!
//! ```text
//! <root>/<id>/frames.f32       10×64×64×3 little-endian f32, (frame, row, column, channel)
//! <root>/<id>/frames.json      {"video_id", "shape", "real_count"}
//! <root>/<id>/transcript.txt   raw UTF-8 transcript
//! <root>/<id>/transcript.json  {"video_id", "language"}
//! ```
//!
//! An entry directory is assembled under a temporary name and renamed into
//! place, so a directory that exists is always complete.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clients::SpeechToTextClient;
use crate::datamodel::{DatasetManifest, VideoEntry};
use crate::error::{Error, Result};
use crate::imageops::{resize_bilinear, rgb24_to_unit};
use crate::media::{downmix_and_resample, AudioTrack, RawVideo, TARGET_SAMPLE_RATE};
use crate::store::{self, TensorMeta};

pub const FRAMES_PER_VIDEO: usize = 10;
pub const FRAME_SIZE: usize = 64;
pub const FRAME_SHAPE: [usize; 4] = [FRAMES_PER_VIDEO, FRAME_SIZE, FRAME_SIZE, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub video_id: String,
    pub real_count: usize,
    /// `10×64×64×3`, values in [0, 1]; frames past `real_count` are zero.
    pub frames: Array4<f32>,
}

impl FrameSequence {
    pub fn blank(video_id: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            real_count: 0,
            frames: Array4::zeros(FRAME_SHAPE),
        }
    }

    pub fn from_parts(video_id: impl Into<String>, real_count: usize, data: Vec<f32>) -> Result<Self> {
        let frames = Array4::from_shape_vec(FRAME_SHAPE, data)
            .map_err(|e| Error::ShapeMismatch(format!("frame tensor: {e}")))?;
        let seq = Self {
            video_id: video_id.into(),
            real_count,
            frames,
        };
        seq.check()?;
        Ok(seq)
    }

    pub fn check(&self) -> Result<()> {
        if self.frames.shape() != FRAME_SHAPE {
            return Err(Error::ShapeMismatch(format!(
                "frame sequence shape {:?}, expected {FRAME_SHAPE:?}",
                self.frames.shape()
            )));
        }
        if self.real_count > FRAMES_PER_VIDEO {
            return Err(Error::ShapeMismatch(format!("real_count {} > 10", self.real_count)));
        }
        if !self.frames.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Validation("frame values outside [0, 1]".into()));
        }
        if !self.frames.slice(s![self.real_count.., .., .., ..]).iter().all(|&v| v == 0.0) {
            return Err(Error::Validation("padding frames are not blank".into()));
        }
        Ok(())
    }

    /// Views the real (non-padding) frames.
    pub fn real_frames(&self) -> ndarray::ArrayView4<'_, f32> {
        self.frames.slice(s![..self.real_count, .., .., ..])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub video_id: String,
    pub raw_text: String,
    pub language: String,
}

/// Number of frames kept from a video of `frame_count` frames at `fps`.
pub fn frames_to_keep(frame_count: usize, fps_num: u32, fps_den: u32) -> usize {
    if frame_count == 0 {
        return 0;
    }
    // floor(duration) without floating point: frame_count * den / num.
    let whole_seconds = frame_count as u64 * fps_den as u64 / fps_num as u64;
    (whole_seconds as usize).clamp(1, FRAMES_PER_VIDEO)
}

/// One frame per second from t = 0, at most ten, resized to 64×64 and
/// blank-padded to exactly ten.
pub fn sample_frames(video: &RawVideo, video_id: &str) -> FrameSequence {
    let mut seq = FrameSequence::blank(video_id);
    let keep = frames_to_keep(video.frames.len(), video.fps_num, video.fps_den);
    if keep == 0 {
        log::warn!("video {video_id} has no frames; using a blank sequence");
        return seq;
    }
    let (w, h) = (video.width as usize, video.height as usize);
    for t in 0..keep {
        let idx = (t as u64 * video.fps_num as u64 / video.fps_den as u64) as usize;
        let idx = idx.min(video.frames.len() - 1);
        let frame = rgb24_to_unit(&video.frames[idx], w, h);
        let resized = resize_bilinear(frame.view(), FRAME_SIZE, FRAME_SIZE);
        seq.frames
            .slice_mut(s![t, .., .., ..])
            .assign(&resized.mapv(|v| v.clamp(0.0, 1.0)));
    }
    seq.real_count = keep;
    seq
}

pub fn sample_frames_from(path: &Path, video_id: &str) -> Result<FrameSequence> {
    Ok(sample_frames(&RawVideo::open(path)?, video_id))
}

/// Mono 16 kHz track; a video without an audio stream yields silence of the
/// video's duration.
pub fn extract_audio(video: &RawVideo) -> AudioTrack {
    match &video.audio {
        Some(a) => AudioTrack {
            sample_rate: TARGET_SAMPLE_RATE,
            samples: downmix_and_resample(a, TARGET_SAMPLE_RATE),
            source_id: None,
        },
        None => {
            log::warn!("video has no audio stream; using a silent track");
            AudioTrack::silent(video.duration_seconds(), TARGET_SAMPLE_RATE)
        }
    }
}

/// Resolves an entry locator against the manifest directory.
pub fn resolve_uri(base: &Path, uri: &str) -> Result<PathBuf> {
    if uri.contains("://") {
        return Err(Error::Decode {
            uri: uri.to_string(),
            message: "remote locators are not fetched; download the corpus first".into(),
        });
    }
    let p = Path::new(uri);
    Ok(if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TranscriptMeta {
    video_id: String,
    language: String,
}

#[derive(Debug, Clone)]
pub struct IngestCache {
    root: PathBuf,
}

impl IngestCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        let d = self.entry_dir(id);
        store::tensor_exists(&d, "frames") && d.join("transcript.json").is_file()
    }

    pub fn load_frames(&self, id: &str) -> Result<FrameSequence> {
        let (data, meta) = store::read_tensor(&self.entry_dir(id), "frames")?;
        if meta.video_id != id {
            return Err(Error::Validation(format!(
                "cache entry {id} holds frames of {}",
                meta.video_id
            )));
        }
        FrameSequence::from_parts(id, meta.real_count.unwrap_or(0), data)
    }

    pub fn load_transcript(&self, id: &str) -> Result<Transcript> {
        let d = self.entry_dir(id);
        let meta: TranscriptMeta = store::read_json(&d.join("transcript.json"))?;
        let raw = store::read_file(&d.join("transcript.txt"))?;
        Ok(Transcript {
            video_id: meta.video_id,
            raw_text: String::from_utf8(raw).map_err(|e| Error::Parse {
                line: 0,
                message: format!("transcript of {id} is not UTF-8: {e}"),
            })?,
            language: meta.language,
        })
    }

    pub fn load(&self, id: &str) -> Result<(FrameSequence, Transcript)> {
        Ok((self.load_frames(id)?, self.load_transcript(id)?))
    }

    pub fn store(&self, frames: &FrameSequence, transcript: &Transcript) -> Result<()> {
        let id = &frames.video_id;
        store::ensure_dir(&self.root)?;
        let final_dir = self.entry_dir(id);
        let tmp = store::temp_sibling(&final_dir);
        let result = (|| {
            store::ensure_dir(&tmp)?;
            let mut meta = TensorMeta::new(id.clone(), FRAME_SHAPE.to_vec());
            meta.real_count = Some(frames.real_count);
            let data = frames.frames.as_standard_layout();
            store::write_tensor(&tmp, "frames", data.as_slice().expect("standard layout"), &meta)?;
            store::atomic_write(&tmp.join("transcript.txt"), transcript.raw_text.as_bytes())?;
            store::write_json(
                &tmp.join("transcript.json"),
                &TranscriptMeta {
                    video_id: transcript.video_id.clone(),
                    language: transcript.language.clone(),
                },
            )?;
            match fs::rename(&tmp, &final_dir) {
                Ok(()) => Ok(()),
                // Another worker won the race with identical content.
                Err(_) if self.contains(id) => {
                    let _ = fs::remove_dir_all(&tmp);
                    Ok(())
                }
                Err(e) => Err(Error::io(&final_dir, e)),
            }
        })();
        if result.is_err() {
            let _ = fs::remove_dir_all(&tmp);
        }
        result
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub frames: FrameSequence,
    pub transcript: Transcript,
    pub cache_hit: bool,
}

pub fn ingest_entry(
    entry: &VideoEntry,
    base_dir: &Path,
    stt: &dyn SpeechToTextClient,
    cache: &IngestCache,
) -> Result<IngestOutcome> {
    let wrap = |e| Error::for_entry(&entry.id, e);
    if cache.contains(&entry.id) {
        let (frames, transcript) = cache.load(&entry.id).map_err(wrap)?;
        return Ok(IngestOutcome {
            frames,
            transcript,
            cache_hit: true,
        });
    }
    let path = resolve_uri(base_dir, &entry.uri).map_err(wrap)?;
    let video = RawVideo::open(&path).map_err(wrap)?;
    let frames = sample_frames(&video, &entry.id);
    let mut audio = extract_audio(&video);
    audio.source_id = Some(entry.id.clone());
    let raw_text = stt.transcribe(&audio).map_err(wrap)?;
    let transcript = Transcript {
        video_id: entry.id.clone(),
        raw_text,
        language: stt.language().to_string(),
    };
    cache.store(&frames, &transcript).map_err(wrap)?;
    Ok(IngestOutcome {
        frames,
        transcript,
        cache_hit: false,
    })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestSummary {
    pub ingested: usize,
    pub cached: usize,
    /// `(video id, error message)` for every failed entry, in manifest order.
    pub failed: Vec<(String, String)>,
}

/// Ingests every manifest entry on a pool of `workers` threads.
pub fn ingest_manifest(
    manifest: &DatasetManifest,
    base_dir: &Path,
    stt: &dyn SpeechToTextClient,
    cache: &IngestCache,
    workers: usize,
) -> Result<IngestSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| ingest_entry(e, base_dir, stt, cache).map(|o| o.cache_hit))
            .collect()
    });
    let mut summary = IngestSummary::default();
    for (entry, outcome) in manifest.entries.iter().zip(outcomes) {
        match outcome {
            Ok(true) => summary.cached += 1,
            Ok(false) => summary.ingested += 1,
            Err(e) => summary.failed.push((entry.id.clone(), e.to_string())),
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::StubSpeechClient;
    use crate::datamodel::Split;
    use crate::media::RawAudio;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn solid_video(seconds: u32, fps: u32, rgb: [u8; 3], audio: bool) -> RawVideo {
        let (w, h) = (20u32, 12u32);
        let frame: Vec<u8> = (0..w * h).flat_map(|_| rgb).collect();
        RawVideo {
            width: w,
            height: h,
            fps_num: fps,
            fps_den: 1,
            frames: vec![frame; (seconds * fps) as usize],
            audio: audio.then(|| RawAudio {
                sample_rate: 8000,
                channels: 2,
                samples: (0..seconds * 8000 * 2).map(|i| ((i % 200) as i16 - 100) * 50).collect(),
            }),
        }
    }

    /// Every frame's first pixel encodes its own index.
    fn indexed_video(seconds: u32, fps: u32) -> RawVideo {
        let mut v = solid_video(seconds, fps, [0, 0, 0], false);
        for (i, f) in v.frames.iter_mut().enumerate() {
            f.iter_mut().for_each(|b| *b = i as u8);
        }
        v
    }

    #[test]
    fn short_clip_is_padded() {
        let seq = sample_frames(&solid_video(4, 3, [200, 10, 10], false), "v");
        assert_eq!(seq.real_count, 4);
        assert!(seq.frames.slice(s![4.., .., .., ..]).iter().all(|&v| v == 0.0));
        assert!(seq.frames.slice(s![3, .., .., 0]).iter().all(|&v| v > 0.7));
        seq.check().unwrap();
    }

    #[test]
    fn long_clip_keeps_first_ten_seconds() {
        let seq = sample_frames(&indexed_video(25, 2), "v");
        assert_eq!(seq.real_count, 10);
        for t in 0..10 {
            let expected = (2 * t) as f32 / 255.0;
            assert!((seq.frames[[t, 5, 5, 0]] - expected).abs() < 1e-6, "frame {t}");
        }
    }

    #[test]
    fn mid_gray_stays_mid_gray() {
        let seq = sample_frames(&solid_video(6, 1, [128, 128, 128], false), "g");
        assert!(seq
            .real_frames()
            .iter()
            .all(|&v| (v - 0.5).abs() <= 1.0 / 255.0));
    }

    #[test]
    fn zero_frame_video_is_blank_not_error() {
        let mut v = solid_video(1, 1, [1, 2, 3], false);
        v.frames.clear();
        let seq = sample_frames(&v, "z");
        assert_eq!(seq.real_count, 0);
        seq.check().unwrap();
    }

    #[test]
    fn real_count_rule() {
        assert_eq!(frames_to_keep(0, 30, 1), 0);
        assert_eq!(frames_to_keep(1, 30, 1), 1); // 1/30 s still yields one frame
        assert_eq!(frames_to_keep(59, 30, 1), 1);
        assert_eq!(frames_to_keep(60, 30, 1), 2);
        assert_eq!(frames_to_keep(30_000, 30_000, 1001), 10);
        assert_eq!(frames_to_keep(700, 25, 1), 10);
    }

    #[test]
    fn audio_extraction() {
        let v = solid_video(30, 1, [0, 0, 0], true);
        let a = extract_audio(&v);
        assert_eq!(a.sample_rate, 16000);
        assert!((a.duration_seconds() - 30.0).abs() < 1e-3);
        let silent = extract_audio(&solid_video(3, 1, [0, 0, 0], false));
        assert!(silent.is_silent());
        assert!((silent.duration_seconds() - 3.0).abs() < 1e-9);
    }

    fn entry(id: &str, uri: &str) -> VideoEntry {
        VideoEntry {
            id: id.into(),
            uri: uri.into(),
            label: "a".into(),
            split: Split::Train,
        }
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn ingest_is_idempotent() {
        let tmp = tempfile::tempdir().unwrap();
        solid_video(5, 2, [10, 200, 30], true).write(&tmp.path().join("x.svid")).unwrap();
        let stt = StubSpeechClient::new(HashMap::from([("x".into(), "espresso machine".into())]));
        let cache = IngestCache::new(tmp.path().join("cache"));
        let first = ingest_entry(&entry("x", "x.svid"), tmp.path(), &stt, &cache).unwrap();
        assert!(!first.cache_hit);
        assert_eq!(first.transcript.raw_text, "espresso machine");
        let bytes1 = dir_bytes(&cache.entry_dir("x"));
        let second = ingest_entry(&entry("x", "x.svid"), tmp.path(), &stt, &cache).unwrap();
        assert!(second.cache_hit);
        assert_eq!(second.frames, first.frames);
        assert_eq!(second.transcript, first.transcript);
        assert_eq!(dir_bytes(&cache.entry_dir("x")), bytes1);
    }

    #[test]
    fn unreachable_uri_names_id_and_leaves_cache_untouched() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = IngestCache::new(tmp.path().join("cache"));
        let stt = StubSpeechClient::default();
        let err = ingest_entry(&entry("gone", "missing.svid"), tmp.path(), &stt, &cache).unwrap_err();
        assert!(err.to_string().contains("gone"), "{err}");
        assert!(!cache.root().exists() || fs::read_dir(cache.root()).unwrap().next().is_none());
    }

    #[test]
    fn remote_uri_is_rejected() {
        assert!(resolve_uri(Path::new("."), "https://example.com/v.mp4").is_err());
        assert_eq!(resolve_uri(Path::new("/a"), "b/c.svid").unwrap(), PathBuf::from("/a/b/c.svid"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sequence_invariants(frames in 0usize..40, fps in 1u32..4, seed in any::<u8>()) {
            let (w, h) = (9u32, 7u32);
            let v = RawVideo {
                width: w, height: h, fps_num: fps, fps_den: 1,
                frames: (0..frames).map(|i| (0..w * h * 3).map(|j| (j as u8).wrapping_mul(seed).wrapping_add(i as u8)).collect()).collect(),
                audio: None,
            };
            let seq = sample_frames(&v, "p");
            prop_assert!(seq.check().is_ok());
            let duration = frames as u32 / fps;
            let expected = if frames == 0 { 0 } else { (duration as usize).clamp(1, 10) };
            prop_assert_eq!(seq.real_count, expected);
        }
    }
}
