//! Multi-turn conversations with per-user history reuse.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_tokens, run_instant, shared_prefix, ClientProgram, Issue, LengthDist};
use crate::error::{Error, Result};
use crate::types::{Ms, Request, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConversationSpec {
    pub turns_min: u32,
    pub turns_max: u32,
    /// New user tokens appended per turn.
    pub new_tokens: LengthDist,
    pub output: LengthDist,
    /// Tokens every user's prompt starts with.
    pub system_prefix_len: u32,
    /// A conversation restarts once prompt plus output would exceed this.
    pub max_context: u32,
    pub think_ms: Ms,
    /// Burst stressor: each turn issues between 1 and this many concurrent
    /// requests on the same history. 1 disables it.
    pub burst_max: u32,
}

impl Default for ConversationSpec {
    fn default() -> Self {
        Self {
            turns_min: 3,
            turns_max: 8,
            new_tokens: LengthDist::lognormal(60.0, 0.8, 8, 400),
            output: LengthDist::lognormal(120.0, 0.9, 4, 600),
            system_prefix_len: 32,
            max_context: 4096,
            think_ms: 500,
            burst_max: 1,
        }
    }
}

impl ConversationSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.turns_min == 0 || self.turns_min > self.turns_max {
            return Err(Error::validation(
                format!("{path}.turns_min"),
                "need 1 <= turns_min <= turns_max",
            ));
        }
        if self.burst_max == 0 {
            return Err(Error::validation(format!("{path}.burst_max"), "must be at least 1"));
        }
        self.new_tokens.validate(&format!("{path}.new_tokens"))?;
        self.output.validate(&format!("{path}.output"))?;
        if self.new_tokens.min == 0 && self.system_prefix_len == 0 {
            return Err(Error::validation(
                format!("{path}.new_tokens.min"),
                "prompts could be empty",
            ));
        }
        let first = self.system_prefix_len + self.new_tokens.max + self.output.max;
        if first > self.max_context {
            return Err(Error::validation(
                format!("{path}.max_context"),
                format!("a first turn may need {first} tokens"),
            ));
        }
        Ok(())
    }

    /// Largest prompt-plus-output footprint a request can have.
    pub fn max_footprint(&self) -> u32 {
        self.max_context
    }
}

struct Turn {
    prompt: Arc<[Token]>,
    response: Vec<Token>,
}

/// One user holding one conversation at a time.
pub struct ConversationClient {
    spec: ConversationSpec,
    rng: ChaCha8Rng,
    user: String,
    system: Arc<[Token]>,
    history: Vec<Token>,
    turns_left: u32,
    next_tag: u64,
    primary: Option<(u64, Turn)>,
    in_flight: u32,
}

impl ConversationClient {
    /// `shared_seed` fixes the system prefix shared by all users; `seed` is per user.
    pub fn new(spec: ConversationSpec, user: String, shared_seed: u64, seed: u64) -> Self {
        let system: Arc<[Token]> = shared_prefix(shared_seed, spec.system_prefix_len as usize).into();
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            user,
            history: system.to_vec(),
            system,
            turns_left: 0,
            next_tag: 0,
            primary: None,
            in_flight: 0,
        }
    }

    fn new_conversation(&mut self) {
        self.history = self.system.to_vec();
        self.turns_left = self.rng.random_range(self.spec.turns_min..=self.spec.turns_max);
    }

    fn issue_turn(&mut self, delay_ms: Ms) -> Vec<Issue> {
        if self.turns_left == 0 {
            self.new_conversation();
        }
        let k = if self.spec.burst_max > 1 {
            self.rng.random_range(1..=self.spec.burst_max)
        } else {
            1
        };
        let mut out = Vec::with_capacity(k as usize);
        for j in 0..k {
            let mut new_len = self.spec.new_tokens.sample(&mut self.rng) as usize;
            let output_len = self.spec.output.sample(&mut self.rng);
            if j == 0 && self.history.len() + new_len + output_len as usize > self.spec.max_context as usize {
                self.new_conversation();
            }
            // Burst siblings share the (possibly reset) history.
            let room = self.spec.max_context as usize - self.history.len() - output_len as usize;
            new_len = new_len.min(room);
            if self.history.is_empty() && new_len == 0 {
                new_len = 1;
            }
            let mut prompt = self.history.clone();
            prompt.extend(random_tokens(&mut self.rng, new_len));
            let prompt: Arc<[Token]> = prompt.into();
            let tag = self.next_tag;
            self.next_tag += 1;
            if j == 0 {
                let response = random_tokens(&mut self.rng, output_len as usize);
                self.primary = Some((
                    tag,
                    Turn {
                        prompt: prompt.clone(),
                        response,
                    },
                ));
            }
            out.push(Issue {
                tag,
                delay_ms,
                session_key: self.user.clone(),
                prompt,
                output_len,
            });
        }
        self.in_flight = k;
        out
    }
}

impl ClientProgram for ConversationClient {
    fn start(&mut self) -> Vec<Issue> {
        self.issue_turn(0)
    }

    fn on_complete(&mut self, _tag: u64) -> Vec<Issue> {
        self.in_flight = self.in_flight.saturating_sub(1);
        if self.in_flight > 0 {
            return Vec::new();
        }
        if let Some((_, turn)) = self.primary.take() {
            self.history = turn.prompt.to_vec();
            self.history.extend(turn.response);
        }
        self.turns_left = self.turns_left.saturating_sub(1);
        self.issue_turn(self.spec.think_ms)
    }
}

/// Static trace of `requests_per_user` turns for each of `users` users.
/// Arrival times are nominal (`think_ms` apart); real runs are closed-loop.
pub fn gen_conversations(
    spec: &ConversationSpec,
    users: usize,
    requests_per_user: usize,
    region: &str,
    seed: u64,
) -> Vec<Request> {
    let mut out = Vec::new();
    for u in 0..users {
        let user = format!("{region}-u{u}");
        let mut c = ConversationClient::new(spec.clone(), user.clone(), seed, seed.wrapping_add(1 + u as u64));
        for (n, (at, issue)) in run_instant(&mut c, requests_per_user, 0).into_iter().enumerate() {
            out.push(Request {
                id: format!("{user}-{n}"),
                session_key: issue.session_key,
                origin_region: region.to_string(),
                prompt: issue.prompt,
                output_len: issue.output_len,
                arrival_time: at,
            });
        }
    }
    out.sort_by_key(|r| r.arrival_time);
    out
}
