use super::{CacheKey, ChatProvider, ChatRequest, ChatResponse, ProviderError};
use key_locks::KeyLocks;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

/// On-disk record: one file per key, named `<key>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub provider: String,
    pub request: ChatRequest,
    pub response: String,
}

/// Write-once response store. Readers run concurrently; a second, different
/// response for an existing key is rejected.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    entries: RwLock<HashMap<CacheKey, String>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a cache directory and loads every entry.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut entries = HashMap::new();
        let mut paths: Vec<_> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let raw = fs::read_to_string(&path)?;
            let entry: CacheEntry = serde_json::from_str(&raw).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            })?;
            entries.insert(entry.key, entry.response);
        }
        Ok(Self { dir: Some(dir), entries: RwLock::new(entries) })
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(
        &self,
        key: &CacheKey,
        provider: &str,
        request: &ChatRequest,
        response: &str,
    ) -> Result<(), ProviderError> {
        let mut entries = self.entries.write().expect("cache lock poisoned");
        if let Some(existing) = entries.get(key) {
            return if existing == response {
                Ok(())
            } else {
                Err(ProviderError::CacheConflict(key.clone()))
            };
        }
        if let Some(dir) = &self.dir {
            let entry = CacheEntry {
                key: key.clone(),
                provider: provider.to_string(),
                request: request.clone(),
                response: response.to_string(),
            };
            let body = serde_json::to_string_pretty(&entry).expect("cache entries serialize");
            let tmp = dir.join(format!("{key}.json.tmp"));
            fs::write(&tmp, body)?;
            fs::rename(&tmp, dir.join(format!("{key}.json")))?;
        }
        entries.insert(key.clone(), response.to_string());
        Ok(())
    }
}

/// Serves repeated requests from a [`ResponseCache`]; misses go to the inner
/// provider under a per-key lock so each key is fetched at most once.
pub struct CachedProvider<P> {
    inner: P,
    cache: Arc<ResponseCache>,
    locks: KeyLocks,
}

impl<P: ChatProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: Arc<ResponseCache>) -> Self {
        Self { inner, cache, locks: KeyLocks::default() }
    }

    pub fn cache(&self) -> &Arc<ResponseCache> {
        &self.cache
    }
}

impl<P: ChatProvider> ChatProvider for CachedProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let key = CacheKey::for_request(self.inner.id(), request);
        if let Some(text) = self.cache.get(&key) {
            return Ok(ChatResponse { text, cached: true, key });
        }
        let lock = self.locks.lock_for(&key);
        let _guard = lock.lock().expect("key lock poisoned");
        if let Some(text) = self.cache.get(&key) {
            return Ok(ChatResponse { text, cached: true, key });
        }
        let fresh = self.inner.chat(request)?;
        self.cache.put(&key, self.inner.id(), request, &fresh.text)?;
        Ok(ChatResponse { text: fresh.text, cached: false, key })
    }
}

mod key_locks {
    use super::CacheKey;
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex};

    #[derive(Default)]
    pub struct KeyLocks(Mutex<HashMap<CacheKey, Arc<Mutex<()>>>>);

    impl KeyLocks {
        pub fn lock_for(&self, key: &CacheKey) -> Arc<Mutex<()>> {
            self.0
                .lock()
                .expect("lock table poisoned")
                .entry(key.clone())
                .or_default()
                .clone()
        }
    }
}
