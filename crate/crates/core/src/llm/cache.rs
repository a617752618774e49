use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatProvider, Completion, CompletionParams, LlmError, ProviderKind};
use crate::prompting::PromptMessages;

/// Hex SHA-256 over the system text, user text, model name, temperature and
/// output budget.
pub fn cache_key(messages: &PromptMessages, params: &CompletionParams) -> String {
    // A JSON array keeps field boundaries unambiguous.
    let material = serde_json::json!([
        messages.system,
        messages.user,
        params.model_name,
        params.temperature,
        params.max_output_tokens,
    ]);
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

/// One cached exchange: the request inputs that make up the digest and the
/// verbatim response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub digest: String,
    pub system: String,
    pub user: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub response: String,
}

/// Directory of `<digest>.json` files.
///
/// Writes go through a temporary file and an atomic rename, so concurrent
/// writers of distinct keys never interfere and rewriting an identical key
/// is harmless.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| LlmError::Cache(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Result<Option<CacheEntry>, LlmError> {
        let path = self.path_for(digest);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(LlmError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry = serde_json::from_str(&text)
            .map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
        if entry.digest != digest {
            return Err(LlmError::Cache(format!("{} holds digest {}", path.display(), entry.digest)));
        }
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), LlmError> {
        let err = |e: io::Error| LlmError::Cache(format!("writing {}: {e}", entry.digest));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(err)?;
        let body = serde_json::to_vec_pretty(entry).map_err(|e| LlmError::Cache(e.to_string()))?;
        tmp.write_all(&body).map_err(err)?;
        tmp.persist(self.path_for(&entry.digest)).map_err(|e| err(e.error))?;
        Ok(())
    }

    pub fn len(&self) -> Result<usize, LlmError> {
        let entries = fs::read_dir(&self.dir).map_err(|e| LlmError::Cache(e.to_string()))?;
        Ok(entries
            .filter_map(Result::ok)
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count())
    }

    pub fn is_empty(&self) -> Result<bool, LlmError> {
        Ok(self.len()? == 0)
    }
}

fn entry_for(digest: String, messages: &PromptMessages, params: &CompletionParams, response: &str) -> CacheEntry {
    CacheEntry {
        digest,
        system: messages.system.clone(),
        user: messages.user.clone(),
        model_name: params.model_name.clone(),
        temperature: params.temperature,
        max_output_tokens: params.max_output_tokens,
        response: response.to_string(),
    }
}

/// Serves from the cache when possible and records every fresh response.
pub struct CachedProvider<P> {
    inner: P,
    cache: ResponseCache,
}

impl<P: ChatProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: ResponseCache) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

impl<P: ChatProvider> ChatProvider for CachedProvider<P> {
    fn kind(&self) -> ProviderKind {
        self.inner.kind()
    }

    fn complete(&self, messages: &PromptMessages, params: &CompletionParams) -> Result<Completion, LlmError> {
        let digest = cache_key(messages, params);
        if let Some(entry) = self.cache.get(&digest)? {
            return Ok(Completion {
                text: entry.response,
                provider_kind: self.inner.kind(),
                cache_hit: true,
            });
        }
        let completion = self.inner.complete(messages, params)?;
        self.cache.put(&entry_for(digest, messages, params, &completion.text))?;
        Ok(Completion {
            cache_hit: false,
            ..completion
        })
    }
}

/// Answers only from the cache; a miss is an error naming the digest.
pub struct ReplayProvider {
    cache: ResponseCache,
}

impl ReplayProvider {
    pub fn new(cache: ResponseCache) -> Self {
        Self { cache }
    }
}

impl ChatProvider for ReplayProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Replay
    }

    fn complete(&self, messages: &PromptMessages, params: &CompletionParams) -> Result<Completion, LlmError> {
        let digest = cache_key(messages, params);
        match self.cache.get(&digest)? {
            Some(entry) => Ok(Completion {
                text: entry.response,
                provider_kind: ProviderKind::Replay,
                cache_hit: true,
            }),
            None => Err(LlmError::CacheMiss(digest)),
        }
    }
}
