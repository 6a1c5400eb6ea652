//! Caching, deduplicating, concurrency-bounded front for any oracle.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use eagle_core::{GenerateRequest, Generation, OracleError, ProbOracle, ProbQuery, ProbResponse};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

type ProbResult = Result<ProbResponse, OracleError>;

pub type CacheKey = [u8; 32];

/// Content hash of everything that determines a response: masked-image
/// pixels, prompt, generated sequence, and targets.
pub fn cache_key(query: &ProbQuery<'_>) -> CacheKey {
    let mut h = Sha256::new();
    h.update(b"eagle-token-probs-v1");
    h.update((query.image.width() as u64).to_le_bytes());
    h.update((query.image.height() as u64).to_le_bytes());
    h.update(query.image.as_bytes());
    let t = query.targets;
    h.update((t.prompt.len() as u64).to_le_bytes());
    h.update(t.prompt.as_bytes());
    h.update((t.generated_ids.len() as u64).to_le_bytes());
    for id in &t.generated_ids {
        h.update(id.to_le_bytes());
    }
    h.update((t.targets.len() as u64).to_le_bytes());
    for target in &t.targets {
        h.update((target.position as u64).to_le_bytes());
        h.update(target.vocab_id.to_le_bytes());
    }
    h.finalize().into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayConfig {
    /// Upper bound on concurrent upstream calls.
    pub max_in_flight: usize,
    /// Cached responses kept before the oldest is evicted; 0 disables caching.
    pub cache_capacity: usize,
    /// Most queries sent in one upstream call.
    pub max_batch: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            cache_capacity: 200_000,
            max_batch: 16,
        }
    }
}

/// Counters since construction or the last [`Gateway::reset_stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    /// Queries received.
    pub queries: usize,
    pub cache_hits: usize,
    /// Distinct uncached queries forwarded upstream.
    pub upstream_forwards: usize,
    /// Upstream `score_batch` calls.
    pub upstream_calls: usize,
    pub generate_calls: usize,
    pub errors: usize,
}

impl GatewayStats {
    /// Counts accumulated after `earlier` was taken.
    pub fn since(self, earlier: Self) -> Self {
        Self {
            queries: self.queries.saturating_sub(earlier.queries),
            cache_hits: self.cache_hits.saturating_sub(earlier.cache_hits),
            upstream_forwards: self
                .upstream_forwards
                .saturating_sub(earlier.upstream_forwards),
            upstream_calls: self.upstream_calls.saturating_sub(earlier.upstream_calls),
            generate_calls: self.generate_calls.saturating_sub(earlier.generate_calls),
            errors: self.errors.saturating_sub(earlier.errors),
        }
    }
}

#[derive(Default)]
struct Counters {
    queries: AtomicUsize,
    cache_hits: AtomicUsize,
    upstream_forwards: AtomicUsize,
    upstream_calls: AtomicUsize,
    generate_calls: AtomicUsize,
    errors: AtomicUsize,
}

struct Cache {
    map: HashMap<CacheKey, ProbResponse>,
    order: VecDeque<CacheKey>,
    capacity: usize,
}

impl Cache {
    fn insert(&mut self, key: CacheKey, response: ProbResponse) {
        if self.capacity == 0 {
            return;
        }
        if let Entry::Vacant(slot) = self.map.entry(key) {
            slot.insert(response);
            self.order.push_back(key);
            while self.order.len() > self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.map.remove(&old);
                }
            }
        }
    }
}

pub struct Gateway<U> {
    upstream: U,
    config: GatewayConfig,
    cache: Mutex<Cache>,
    counters: Counters,
    model_id: Mutex<Option<String>>,
}

impl<U: ProbOracle + Sync> Gateway<U> {
    pub fn new(upstream: U, config: GatewayConfig) -> Self {
        let cache = Cache {
            map: HashMap::new(),
            order: VecDeque::new(),
            capacity: config.cache_capacity,
        };
        Self {
            upstream,
            config: GatewayConfig {
                max_in_flight: config.max_in_flight.max(1),
                max_batch: config.max_batch.max(1),
                ..config
            },
            cache: Mutex::new(cache),
            counters: Counters::default(),
            model_id: Mutex::new(None),
        }
    }

    pub fn upstream(&self) -> &U {
        &self.upstream
    }

    pub fn config(&self) -> GatewayConfig {
        self.config
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.counters;
        GatewayStats {
            queries: c.queries.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            upstream_forwards: c.upstream_forwards.load(Ordering::Relaxed),
            upstream_calls: c.upstream_calls.load(Ordering::Relaxed),
            generate_calls: c.generate_calls.load(Ordering::Relaxed),
            errors: c.errors.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        let c = &self.counters;
        for counter in [
            &c.queries,
            &c.cache_hits,
            &c.upstream_forwards,
            &c.upstream_calls,
            &c.generate_calls,
            &c.errors,
        ] {
            counter.store(0, Ordering::Relaxed);
        }
    }

    /// Model id reported by the most recent upstream response.
    pub fn model_id(&self) -> Option<String> {
        self.model_id.lock().expect("model id lock").clone()
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().expect("cache lock").map.len()
    }

    fn forward(&self, queries: &[ProbQuery<'_>]) -> Vec<Result<ProbResponse, OracleError>> {
        let chunk = queries
            .len()
            .div_ceil(self.config.max_in_flight)
            .clamp(1, self.config.max_batch);
        let chunks: Vec<&[ProbQuery<'_>]> = queries.chunks(chunk).collect();
        self.counters
            .upstream_calls
            .fetch_add(chunks.len(), Ordering::Relaxed);
        let call = |qs: &[ProbQuery<'_>]| {
            let mut out = self.upstream.score_batch(qs);
            if out.len() != qs.len() {
                let e = OracleError::Malformed(format!(
                    "{} responses for {} queries",
                    out.len(),
                    qs.len()
                ));
                out = vec![Err(e); qs.len()];
            }
            out
        };
        if chunks.len() == 1 {
            return call(chunks[0]);
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Vec<ProbResult>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..self.config.max_in_flight.min(chunks.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(qs) = chunks.get(i) else { break };
                    let result = call(qs);
                    *slots[i].lock().expect("slot lock") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .flat_map(|s| s.into_inner().expect("slot lock").expect("every chunk ran"))
            .collect()
    }
}

impl<U: ProbOracle + Sync> ProbOracle for Gateway<U> {
    fn score_batch(&self, queries: &[ProbQuery<'_>]) -> Vec<Result<ProbResponse, OracleError>> {
        self.counters
            .queries
            .fetch_add(queries.len(), Ordering::Relaxed);
        let keys: Vec<CacheKey> = queries.iter().map(cache_key).collect();
        let mut results: Vec<Option<Result<ProbResponse, OracleError>>> = vec![None; queries.len()];
        let mut pending: HashMap<CacheKey, Vec<usize>> = HashMap::new();
        let mut unique: Vec<usize> = Vec::new();
        {
            let cache = self.cache.lock().expect("cache lock");
            for (i, key) in keys.iter().enumerate() {
                if let Some(hit) = cache.map.get(key) {
                    results[i] = Some(Ok(hit.clone()));
                    self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                } else {
                    let waiting = pending.entry(*key).or_default();
                    if waiting.is_empty() {
                        unique.push(i);
                    }
                    waiting.push(i);
                }
            }
        }

        if !unique.is_empty() {
            let forwarded: Vec<ProbQuery<'_>> =
                unique.iter().map(|&i| queries[i].clone()).collect();
            self.counters
                .upstream_forwards
                .fetch_add(forwarded.len(), Ordering::Relaxed);
            let responses = self.forward(&forwarded);
            let mut cache = self.cache.lock().expect("cache lock");
            for (&i, response) in unique.iter().zip(responses) {
                let response = response.and_then(|r| {
                    r.validate(queries[i].targets.len())?;
                    Ok(r)
                });
                match &response {
                    Ok(r) => {
                        *self.model_id.lock().expect("model id lock") = Some(r.model_id.clone());
                        cache.insert(keys[i], r.clone());
                    }
                    Err(_) => {
                        self.counters.errors.fetch_add(1, Ordering::Relaxed);
                    }
                }
                for &j in &pending[&keys[i]] {
                    results[j] = Some(response.clone());
                }
            }
        }
        results
            .into_iter()
            .map(|r| r.expect("every position resolved"))
            .collect()
    }

    fn generate(&self, request: &GenerateRequest<'_>) -> Result<Generation, OracleError> {
        self.counters.generate_calls.fetch_add(1, Ordering::Relaxed);
        self.upstream.generate(request)
    }
}
