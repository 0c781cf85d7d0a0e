//! Simulated inference replica.
//!
//! Continuous batching over a token-budget KV memory. The memory holds the
//! radix prefix cache (prompt tokens, pinned while a request runs) plus an
//! output reservation for every running request. A request whose footprint
//! does not fit waits in a FIFO pending queue; only the head is considered.
//!
//! Timing is iteration based. One iteration costs the prefill of every newly
//! admitted request plus one decode step that is affine in batch size, and
//! every request in the batch emits one token at its end.

mod radix;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use radix::RadixCache;

use crate::error::{Error, Result};
use crate::types::{Ms, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplicaConfig {
    pub kv_budget_tokens: u64,
    pub prefill_ms_per_token: f64,
    pub decode_base_ms: f64,
    pub decode_ms_per_seq: f64,
}

impl Default for ReplicaConfig {
    fn default() -> Self {
        Self {
            kv_budget_tokens: 20_000,
            // 512 uncached prompt tokens take 300 ms.
            prefill_ms_per_token: 300.0 / 512.0,
            decode_base_ms: 20.0,
            decode_ms_per_seq: 1.0,
        }
    }
}

impl ReplicaConfig {
    pub fn prefill_ms(&self, uncached_tokens: usize) -> f64 {
        self.prefill_ms_per_token * uncached_tokens as f64
    }

    pub fn decode_ms(&self, batch: usize) -> f64 {
        self.decode_base_ms + self.decode_ms_per_seq * batch as f64
    }
}

/// Work handed to a replica. `key` is an opaque handle owned by the caller.
#[derive(Debug, Clone)]
pub struct ReplicaJob {
    pub key: u64,
    pub prompt: Arc<[Token]>,
    pub output_len: u32,
}

impl ReplicaJob {
    fn footprint(&self) -> u64 {
        self.prompt.len() as u64 + self.output_len as u64
    }
}

#[derive(Debug, Clone)]
struct Running {
    job: ReplicaJob,
    cached_len: usize,
    generated: u32,
    prefilled: bool,
    in_iteration: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmitOutcome {
    Running { cached_len: usize },
    Pending,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplicaEvent {
    Admitted {
        key: u64,
        at: Ms,
        cached_len: usize,
        prompt_len: usize,
    },
    FirstToken {
        key: u64,
        at: Ms,
        prefill_ms: f64,
    },
    Completed {
        key: u64,
        at: Ms,
        output_len: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaProbe {
    pub pending: u64,
    pub outstanding: u64,
}

#[derive(Debug, Clone)]
pub struct Replica {
    config: ReplicaConfig,
    running: Vec<Running>,
    pending: VecDeque<ReplicaJob>,
    cache: RadixCache,
    reserved_output: u64,
    busy_until: Option<Ms>,
    peak_running: usize,
}

impl Replica {
    pub fn new(config: ReplicaConfig) -> Self {
        Self {
            config,
            running: Vec::new(),
            pending: VecDeque::new(),
            cache: RadixCache::default(),
            reserved_output: 0,
            busy_until: None,
            peak_running: 0,
        }
    }

    pub fn config(&self) -> &ReplicaConfig {
        &self.config
    }

    /// Tokens in use: every resident cache token plus output reservations.
    pub fn memory_used(&self) -> u64 {
        self.cache.resident() + self.reserved_output
    }

    pub fn running_len(&self) -> usize {
        self.running.len()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn peak_running(&self) -> usize {
        self.peak_running
    }

    pub fn busy_until(&self) -> Option<Ms> {
        self.busy_until
    }

    pub fn is_idle(&self) -> bool {
        self.running.is_empty() && self.pending.is_empty()
    }

    pub fn probe(&self) -> ReplicaProbe {
        ReplicaProbe {
            pending: self.pending.len() as u64,
            outstanding: (self.running.len() + self.pending.len()) as u64,
        }
    }

    pub fn cache_lookup(&self, prompt: &[Token]) -> usize {
        self.cache.match_len(prompt)
    }

    pub fn cache(&self) -> &RadixCache {
        &self.cache
    }

    fn fits(&self, job: &ReplicaJob) -> bool {
        let cached = self.cache.match_len(&job.prompt) as u64;
        let needed = job.footprint() - cached;
        let free = self.config.kv_budget_tokens - self.memory_used();
        // Unpinned nodes on the request's own cached path get pinned, not evicted.
        let evictable = self.cache.evictable() - self.cache.unpinned_on_path(&job.prompt);
        needed <= free + evictable
    }

    fn start(&mut self, job: ReplicaJob) -> usize {
        let cached = self.cache.match_len(&job.prompt);
        let needed = job.footprint() - cached as u64;
        let free = self.config.kv_budget_tokens - self.memory_used();
        // Pin the cached prefix first so eviction cannot take it.
        self.cache.pin(&job.prompt[..cached]);
        if needed > free {
            self.cache.evict(needed - free);
        }
        let cached_len = self.cache.pin(&job.prompt);
        self.cache.unpin(&job.prompt[..cached], None);
        debug_assert_eq!(cached_len, cached);
        self.reserved_output += job.output_len as u64;
        self.running.push(Running {
            job,
            cached_len,
            generated: 0,
            prefilled: false,
            in_iteration: false,
        });
        self.peak_running = self.peak_running.max(self.running.len());
        cached_len
    }

    /// Hands a request to the replica.
    ///
    /// It starts running immediately when nothing is pending and its footprint
    /// fits; otherwise it joins the pending queue.
    pub fn admit(&mut self, job: ReplicaJob) -> Result<AdmitOutcome> {
        if job.prompt.is_empty() || job.output_len == 0 {
            return Err(Error::Domain("replica job needs a prompt and output".into()));
        }
        if job.footprint() > self.config.kv_budget_tokens {
            return Err(Error::Domain(format!(
                "request needs {} tokens, budget is {}",
                job.footprint(),
                self.config.kv_budget_tokens
            )));
        }
        if self.pending.is_empty() && self.fits(&job) {
            let cached_len = self.start(job);
            Ok(AdmitOutcome::Running { cached_len })
        } else {
            self.pending.push_back(job);
            Ok(AdmitOutcome::Pending)
        }
    }

    /// Starts the next iteration if the replica is idle and has work.
    /// Returns the iteration's end time.
    pub fn begin_iteration(&mut self, now: Ms) -> Option<Ms> {
        if self.busy_until.is_some() || self.running.is_empty() {
            return None;
        }
        let mut ms = self.config.decode_ms(self.running.len());
        for r in &mut self.running {
            r.in_iteration = true;
            if !r.prefilled {
                ms += self.config.prefill_ms(r.job.prompt.len() - r.cached_len);
            }
        }
        let end = now + (ms.round() as Ms).max(1);
        self.busy_until = Some(end);
        Some(end)
    }

    /// Completes the iteration in progress at `now`: emits first tokens and
    /// completions, releases finished requests into the cache, and promotes
    /// pending requests that now fit.
    pub fn finish_iteration(&mut self, now: Ms) -> Vec<ReplicaEvent> {
        self.busy_until = None;
        let mut events = Vec::new();
        let mut done = Vec::new();
        for (i, r) in self.running.iter_mut().enumerate() {
            if !r.in_iteration {
                continue;
            }
            r.in_iteration = false;
            if !r.prefilled {
                r.prefilled = true;
                events.push(ReplicaEvent::FirstToken {
                    key: r.job.key,
                    at: now,
                    prefill_ms: self.config.prefill_ms(r.job.prompt.len() - r.cached_len),
                });
            }
            r.generated += 1;
            if r.generated >= r.job.output_len {
                done.push(i);
            }
        }
        for &i in done.iter().rev() {
            let r = self.running.remove(i);
            self.cache.unpin(&r.job.prompt, Some(now));
            self.reserved_output -= r.job.output_len as u64;
            events.push(ReplicaEvent::Completed {
                key: r.job.key,
                at: now,
                output_len: r.job.output_len,
            });
        }
        // Completions were collected back to front; report them in batch order.
        let first_completion = events
            .iter()
            .position(|e| matches!(e, ReplicaEvent::Completed { .. }))
            .unwrap_or(events.len());
        events[first_completion..].reverse();
        events.extend(self.promote(now));
        events
    }

    fn promote(&mut self, now: Ms) -> Vec<ReplicaEvent> {
        let mut out = Vec::new();
        while let Some(head) = self.pending.front() {
            if !self.fits(head) {
                break;
            }
            let job = self.pending.pop_front().unwrap();
            let (key, prompt_len) = (job.key, job.prompt.len());
            let cached_len = self.start(job);
            out.push(ReplicaEvent::Admitted {
                key,
                at: now,
                cached_len,
                prompt_len,
            });
        }
        out
    }

    /// One full iteration starting at `now`: `(end time, events)`, or `None` when idle.
    pub fn step(&mut self, now: Ms) -> Option<(Ms, Vec<ReplicaEvent>)> {
        let end = self.begin_iteration(now)?;
        Some((end, self.finish_iteration(end)))
    }

    /// Budget conservation and the pending-implies-full rule.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.memory_used() > self.config.kv_budget_tokens {
            return Err(format!(
                "memory {} over budget {}",
                self.memory_used(),
                self.config.kv_budget_tokens
            ));
        }
        if let Some(head) = self.pending.front() {
            if self.fits(head) {
                return Err("pending head fits but was not admitted".into());
            }
        }
        Ok(())
    }
}
