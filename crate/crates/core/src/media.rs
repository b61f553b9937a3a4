//! Raw video container and audio track types.
//!
//! Videos are read from the `.svid` container, an uncompressed format that
//! needs no external codec library:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SVID"
//! 4       1     version (1)
//! 5       1     video codec (0 = rgb24, row-major, top row first)
//! 6       1     audio codec (0 = pcm s16le interleaved, 255 = no audio stream)
//! 7       1     reserved (0)
//! 8       4     width            (u32 LE, as are all fields below)
//! 12      4     height
//! 16      4     fps numerator
//! 20      4     fps denominator
//! 24      4     frame count
//! 28      4     audio sample rate
//! 32      4     audio channels
//! 36      4     audio frames (samples per channel)
//! 40      ...   frame_count * height * width * 3 bytes of video
//! ...     ...   audio_frames * channels * 2 bytes of audio
//! ```
//!
//! Other containers should be transcoded to `.svid` before ingestion.

use std::path::Path;

use crate::error::{Error, Result};
use crate::store;

pub const MAGIC: &[u8; 4] = b"SVID";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 40;
const VIDEO_RGB24: u8 = 0;
const AUDIO_PCM_S16LE: u8 = 0;
const AUDIO_NONE: u8 = 255;

/// Sample rate every extracted track is resampled to.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAudio {
    pub sample_rate: u32,
    pub channels: u32,
    /// Interleaved samples, `frames * channels` long.
    pub samples: Vec<i16>,
}

impl RawAudio {
    pub fn frames(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.samples.len() / self.channels as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawVideo {
    pub width: u32,
    pub height: u32,
    pub fps_num: u32,
    pub fps_den: u32,
    /// One `height * width * 3` RGB buffer per frame.
    pub frames: Vec<Vec<u8>>,
    pub audio: Option<RawAudio>,
}

impl RawVideo {
    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames.len() as f64 / self.fps()
    }

    pub fn encode(&self) -> Vec<u8> {
        let frame_len = (self.width * self.height * 3) as usize;
        let audio_bytes = self.audio.as_ref().map_or(0, |a| a.samples.len() * 2);
        let mut out = Vec::with_capacity(HEADER_LEN + frame_len * self.frames.len() + audio_bytes);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(VIDEO_RGB24);
        out.push(if self.audio.is_some() { AUDIO_PCM_S16LE } else { AUDIO_NONE });
        out.push(0);
        let (rate, channels, afr) = match &self.audio {
            Some(a) => (a.sample_rate, a.channels, a.frames() as u32),
            None => (0, 0, 0),
        };
        for v in [
            self.width,
            self.height,
            self.fps_num,
            self.fps_den,
            self.frames.len() as u32,
            rate,
            channels,
            afr,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for f in &self.frames {
            debug_assert_eq!(f.len(), frame_len);
            out.extend_from_slice(f);
        }
        if let Some(a) = &self.audio {
            for s in &a.samples {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], uri: &str) -> Result<Self> {
        let bad = |message: String| Error::Decode {
            uri: uri.to_string(),
            message,
        };
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(bad("not an SVID container".into()));
        }
        if bytes[4] != VERSION {
            return Err(bad(format!("unsupported container version {}", bytes[4])));
        }
        if bytes[5] != VIDEO_RGB24 {
            return Err(Error::UnsupportedCodec(format!("video codec {} in {uri}", bytes[5])));
        }
        let audio_codec = bytes[6];
        if audio_codec != AUDIO_PCM_S16LE && audio_codec != AUDIO_NONE {
            return Err(Error::UnsupportedCodec(format!("audio codec {audio_codec} in {uri}")));
        }
        let word = |i: usize| {
            let o = 8 + 4 * i;
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
        };
        let (width, height, fps_num, fps_den, frame_count) = (word(0), word(1), word(2), word(3), word(4));
        let (rate, channels, audio_frames) = (word(5), word(6), word(7));
        if fps_num == 0 || fps_den == 0 {
            return Err(bad("frame rate must be positive".into()));
        }
        if frame_count > 0 && (width == 0 || height == 0) {
            return Err(bad("zero-sized frames".into()));
        }
        let frame_len = width as usize * height as usize * 3;
        let video_len = frame_len
            .checked_mul(frame_count as usize)
            .ok_or_else(|| bad("frame data size overflows".into()))?;
        let audio_len = if audio_codec == AUDIO_NONE {
            0
        } else {
            audio_frames as usize * channels as usize * 2
        };
        if bytes.len() != HEADER_LEN + video_len + audio_len {
            return Err(bad(format!(
                "expected {} bytes, found {}",
                HEADER_LEN + video_len + audio_len,
                bytes.len()
            )));
        }
        let body = &bytes[HEADER_LEN..];
        let frames = body[..video_len]
            .chunks_exact(frame_len.max(1))
            .take(frame_count as usize)
            .map(<[u8]>::to_vec)
            .collect();
        let audio = if audio_codec == AUDIO_NONE {
            None
        } else {
            if rate == 0 || channels == 0 {
                return Err(bad("audio stream with zero rate or channels".into()));
            }
            let samples = body[video_len..]
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect();
            Some(RawAudio {
                sample_rate: rate,
                channels,
                samples,
            })
        };
        Ok(Self {
            width,
            height,
            fps_num,
            fps_den,
            frames,
            audio,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        store::atomic_write(path, &self.encode())
    }

    pub fn open(path: &Path) -> Result<Self> {
        let uri = path.display().to_string();
        match path.extension().and_then(|e| e.to_str()) {
            Some("svid") => {}
            other => {
                return Err(Error::UnsupportedCodec(format!(
                    "container '{}' for {uri}; transcode to .svid",
                    other.unwrap_or("")
                )))
            }
        }
        Self::decode(&store::read_file(path)?, &uri)
    }
}

/// Mono floating-point audio in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
    /// Id of the video the track was extracted from, if known.
    pub source_id: Option<String>,
}

impl AudioTrack {
    pub fn silent(seconds: f64, sample_rate: u32) -> Self {
        let n = (seconds.max(0.0) * sample_rate as f64).round() as usize;
        Self {
            sample_rate,
            samples: vec![0.0; n],
            source_id: None,
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|s| s.abs() < 1e-4)
    }

    /// 16-bit PCM mono WAV encoding, for services that expect a file upload.
    pub fn to_wav(&self) -> Vec<u8> {
        let data_len = self.samples.len() as u32 * 2;
        let mut out = Vec::with_capacity(44 + data_len as usize);
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.sample_rate * 2).to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&data_len.to_le_bytes());
        for s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Averages channels and linearly resamples to `target_rate`.
pub fn downmix_and_resample(audio: &RawAudio, target_rate: u32) -> Vec<f32> {
    let ch = audio.channels as usize;
    let mono: Vec<f32> = audio
        .samples
        .chunks_exact(ch)
        .map(|frame| frame.iter().map(|&s| s as f32 / 32768.0).sum::<f32>() / ch as f32)
        .collect();
    if audio.sample_rate == target_rate || mono.is_empty() {
        return mono;
    }
    let ratio = audio.sample_rate as f64 / target_rate as f64;
    let out_len = (mono.len() as f64 / ratio).round() as usize;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = (pos - j as f64) as f32;
            let a = mono[j.min(mono.len() - 1)];
            let b = mono[(j + 1).min(mono.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(audio: Option<RawAudio>) -> RawVideo {
        RawVideo {
            width: 2,
            height: 1,
            fps_num: 3,
            fps_den: 1,
            frames: vec![vec![1, 2, 3, 4, 5, 6], vec![9, 8, 7, 6, 5, 4]],
            audio,
        }
    }

    #[test]
    fn container_round_trip() {
        let v = tiny(Some(RawAudio {
            sample_rate: 8000,
            channels: 2,
            samples: vec![1, -1, 300, -300],
        }));
        assert_eq!(RawVideo::decode(&v.encode(), "t").unwrap(), v);
        let silent = tiny(None);
        assert_eq!(RawVideo::decode(&silent.encode(), "t").unwrap(), silent);
    }

    #[test]
    fn truncated_or_foreign_bytes_fail() {
        let bytes = tiny(None).encode();
        assert!(matches!(
            RawVideo::decode(&bytes[..bytes.len() - 1], "t"),
            Err(Error::Decode { .. })
        ));
        assert!(matches!(RawVideo::decode(b"RIFF....", "t"), Err(Error::Decode { .. })));
    }

    #[test]
    fn unknown_audio_codec_is_unsupported() {
        let mut bytes = tiny(None).encode();
        bytes[6] = 7;
        assert!(matches!(RawVideo::decode(&bytes, "t"), Err(Error::UnsupportedCodec(_))));
    }

    #[test]
    fn stereo_is_averaged_to_mono() {
        let a = RawAudio {
            sample_rate: TARGET_SAMPLE_RATE,
            channels: 2,
            samples: vec![16384, 0, -16384, -16384],
        };
        let m = downmix_and_resample(&a, TARGET_SAMPLE_RATE);
        assert_eq!(m, vec![0.25, -0.5]);
    }

    #[test]
    fn resampling_preserves_duration() {
        let a = RawAudio {
            sample_rate: 8000,
            channels: 1,
            samples: vec![100; 8000 * 3],
        };
        let m = downmix_and_resample(&a, TARGET_SAMPLE_RATE);
        assert_eq!(m.len(), 16000 * 3);
    }

    #[test]
    fn wav_header_is_well_formed() {
        let t = AudioTrack::silent(0.5, 16000);
        let wav = t.to_wav();
        assert_eq!(&wav[..4], b"RIFF");
        assert_eq!(wav.len(), 44 + 8000 * 2);
    }
}
