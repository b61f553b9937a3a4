use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::media::AudioTrack;
use crate::store;

pub const DEFAULT_LANGUAGE: &str = "en";

pub trait SpeechToTextClient: Send + Sync {
    fn language(&self) -> &str;

    /// Raw transcript of `audio`. Silence yields an empty string.
    fn transcribe(&self, audio: &AudioTrack) -> Result<String>;
}

pub fn transcribe(client: &dyn SpeechToTextClient, audio: &AudioTrack) -> Result<String> {
    client.transcribe(audio)
}

/// Returns transcripts from a fixture keyed by the track's source video id.
#[derive(Debug, Clone, Default)]
pub struct StubSpeechClient {
    language: String,
    fixture: HashMap<String, String>,
}

impl StubSpeechClient {
    pub fn new(fixture: HashMap<String, String>) -> Self {
        Self {
            language: DEFAULT_LANGUAGE.to_string(),
            fixture,
        }
    }

    /// Loads a JSON object mapping video id to transcript text.
    pub fn from_fixture_file(path: &Path) -> Result<Self> {
        Ok(Self::new(store::read_json(path)?))
    }

    pub fn fixture(&self) -> &HashMap<String, String> {
        &self.fixture
    }
}

impl SpeechToTextClient for StubSpeechClient {
    fn language(&self) -> &str {
        &self.language
    }

    fn transcribe(&self, audio: &AudioTrack) -> Result<String> {
        if audio.is_silent() {
            return Ok(String::new());
        }
        Ok(audio
            .source_id
            .as_deref()
            .and_then(|id| self.fixture.get(id))
            .cloned()
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone)]
pub struct LiveSpeechConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub language: String,
    pub attempts: u32,
    pub timeout: Duration,
    /// Minimum spacing between consecutive requests.
    pub min_interval: Duration,
}

impl LiveSpeechConfig {
    /// Reads `SCENEFUSE_STT_ENDPOINT` (required), `SCENEFUSE_STT_TOKEN`,
    /// `SCENEFUSE_STT_LANGUAGE`, `SCENEFUSE_STT_ATTEMPTS` and
    /// `SCENEFUSE_STT_TIMEOUT_SECS`.
    pub fn from_env() -> Result<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let endpoint = var("SCENEFUSE_STT_ENDPOINT").ok_or_else(|| {
            Error::Config("SCENEFUSE_STT_ENDPOINT is not set; use stub clients or configure a speech service".into())
        })?;
        let parse = |k: &str, default: u64| -> Result<u64> {
            match var(k) {
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Config(format!("{k}={v} is not a non-negative integer"))),
                None => Ok(default),
            }
        };
        Ok(Self {
            endpoint,
            token: var("SCENEFUSE_STT_TOKEN"),
            language: var("SCENEFUSE_STT_LANGUAGE").unwrap_or_else(|| DEFAULT_LANGUAGE.into()),
            attempts: parse("SCENEFUSE_STT_ATTEMPTS", 3)?.max(1) as u32,
            timeout: Duration::from_secs(parse("SCENEFUSE_STT_TIMEOUT_SECS", 30)?),
            min_interval: Duration::from_millis(100),
        })
    }
}

/// HTTP speech service client.
///
/// The track is POSTed as a 16-bit mono WAV to `<endpoint>?language=<code>`;
/// the service answers with JSON `{"text": "..."}`. Transport failures, 429
/// and 5xx responses are retried with exponential backoff.
pub struct LiveSpeechClient {
    config: LiveSpeechConfig,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
}

#[derive(Deserialize)]
struct TranscriptResponse {
    text: String,
}

impl LiveSpeechClient {
    pub fn new(config: LiveSpeechConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self {
            config,
            agent,
            last_request: Mutex::new(None),
        }
    }

    pub fn from_env() -> Result<Self> {
        Ok(Self::new(LiveSpeechConfig::from_env()?))
    }

    fn throttle(&self) {
        let mut last = self.last_request.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < self.config.min_interval {
                std::thread::sleep(self.config.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    /// One request; `Err((message, retryable))` on failure.
    fn request(&self, wav: &[u8]) -> std::result::Result<String, (String, bool)> {
        self.throttle();
        let url = format!("{}?language={}", self.config.endpoint, self.config.language);
        let mut req = self.agent.post(&url).header("Content-Type", "audio/wav");
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        match req.send(wav) {
            Ok(mut resp) => {
                let body = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| (format!("reading response: {e}"), true))?;
                serde_json::from_str::<TranscriptResponse>(&body)
                    .map(|r| r.text)
                    .map_err(|e| (format!("malformed response: {e}"), false))
            }
            Err(ureq::Error::StatusCode(code)) => {
                let retryable = code == 429 || code >= 500;
                Err((format!("HTTP status {code}"), retryable))
            }
            Err(e) => Err((e.to_string(), true)),
        }
    }
}

impl SpeechToTextClient for LiveSpeechClient {
    fn language(&self) -> &str {
        &self.config.language
    }

    fn transcribe(&self, audio: &AudioTrack) -> Result<String> {
        if audio.is_silent() {
            return Ok(String::new());
        }
        let wav = audio.to_wav();
        let mut backoff = Duration::from_millis(200);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.request(&wav) {
                Ok(text) => return Ok(text),
                Err((message, retryable)) => {
                    if !retryable || attempt >= self.config.attempts {
                        return Err(Error::Remote {
                            message,
                            attempts: attempt,
                            retryable,
                        });
                    }
                    log::warn!("speech request failed ({message}); retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn voiced(id: &str) -> AudioTrack {
        AudioTrack {
            sample_rate: 16000,
            samples: (0..1600).map(|i| (i as f32 * 0.05).sin() * 0.3).collect(),
            source_id: Some(id.into()),
        }
    }

    #[test]
    fn silent_track_is_empty_text() {
        let stub = StubSpeechClient::new(HashMap::from([("v".into(), "hello".into())]));
        let mut t = AudioTrack::silent(5.0, 16000);
        t.source_id = Some("v".into());
        assert_eq!(transcribe(&stub, &t).unwrap(), "");
    }

    #[test]
    fn stub_returns_injected_mapping() {
        let stub = StubSpeechClient::new(HashMap::from([(
            "audio#17".to_string(),
            "espresso machine".to_string(),
        )]));
        assert_eq!(stub.transcribe(&voiced("audio#17")).unwrap(), "espresso machine");
        assert_eq!(stub.transcribe(&voiced("unknown")).unwrap(), "");
        assert_eq!(stub.language(), "en");
    }

    #[test]
    fn unreachable_service_is_retryable_after_all_attempts() {
        // Port 9 on localhost is closed in the sandbox; connections are refused.
        let client = LiveSpeechClient::new(LiveSpeechConfig {
            endpoint: "http://127.0.0.1:9/transcribe".into(),
            token: None,
            language: "en".into(),
            attempts: 2,
            timeout: Duration::from_secs(2),
            min_interval: Duration::ZERO,
        });
        let err = client.transcribe(&voiced("x")).unwrap_err();
        match &err {
            Error::Remote { attempts, retryable, .. } => {
                assert_eq!(*attempts, 2);
                assert!(*retryable);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(err.is_retryable());
    }

    #[test]
    fn live_client_skips_request_for_silence() {
        let client = LiveSpeechClient::new(LiveSpeechConfig {
            endpoint: "http://127.0.0.1:9/transcribe".into(),
            token: None,
            language: "en".into(),
            attempts: 1,
            timeout: Duration::from_secs(1),
            min_interval: Duration::ZERO,
        });
        assert_eq!(client.transcribe(&AudioTrack::silent(1.0, 16000)).unwrap(), "");
    }
}
