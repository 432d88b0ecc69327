//! Fixture replay and recording.
//!
//! A fixture directory holds one `<key>.txt` file per recorded reply plus an
//! `index.tsv` listing `key`, model name and a prompt preview for humans.
//! The key is the SHA-256 of the model name and both prompts, so identical
//! requests always map to the same reply. Temperature is not part of the key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{ChatBackend, CompletionRequest, GatewayError};

pub const INDEX_FILE: &str = "index.tsv";

/// Content hash identifying a request.
pub fn fixture_key(request: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.model_name.as_bytes());
    hasher.update([0x1f]);
    hasher.update(request.system_prompt.as_deref().unwrap_or("").as_bytes());
    hasher.update([0x1f]);
    hasher.update(request.user_prompt.as_bytes());
    hex::encode(hasher.finalize())
}

/// Replays recorded replies. Missing fixtures are errors.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    dir: PathBuf,
}

impl FixtureBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(GatewayError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("fixture directory {} does not exist", dir.display()),
            )));
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl ChatBackend for FixtureBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let key = fixture_key(request);
        let path = self.dir.join(format!("{key}.txt"));
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(GatewayError::FixtureMissing {
                key,
                dir: self.dir.display().to_string(),
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn backend_id(&self) -> String {
        "mock".into()
    }
}

/// Wraps another backend and stores every reply as a fixture.
pub struct RecordingBackend<B> {
    inner: B,
    dir: PathBuf,
    index: Mutex<BTreeMap<String, String>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut index = BTreeMap::new();
        if let Ok(existing) = fs::read_to_string(dir.join(INDEX_FILE)) {
            for line in existing.lines() {
                if let Some((key, rest)) = line.split_once('\t') {
                    index.insert(key.to_string(), rest.to_string());
                }
            }
        }
        Ok(Self {
            inner,
            dir,
            index: Mutex::new(index),
        })
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let reply = self.inner.complete(request)?;
        let key = fixture_key(request);
        fs::write(self.dir.join(format!("{key}.txt")), &reply)?;

        let mut index = self.index.lock().expect("fixture index poisoned");
        index.insert(
            key,
            format!("{}\t{}", request.model_name, preview(&request.user_prompt)),
        );
        let mut listing = String::new();
        for (key, rest) in index.iter() {
            listing.push_str(key);
            listing.push('\t');
            listing.push_str(rest);
            listing.push('\n');
        }
        fs::write(self.dir.join(INDEX_FILE), listing)?;
        Ok(reply)
    }

    fn backend_id(&self) -> String {
        format!("recording({})", self.inner.backend_id())
    }
}

// first and last line give enough to tell prompts apart
fn preview(prompt: &str) -> String {
    let first = prompt.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let last = prompt.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
    let clip = |s: &str| s.chars().take(60).collect::<String>().replace('\t', " ");
    format!("{} ... {}", clip(first), clip(last))
}
