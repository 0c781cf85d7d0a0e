//! Workload generators and trace ingestion.
//!
//! Closed-loop generators are [`ClientProgram`]s: the engine calls
//! [`ClientProgram::start`] once and [`ClientProgram::on_complete`] whenever
//! one of the client's requests finishes, and issues whatever comes back.
//! The `gen_*` functions run the same programs with instant completions to
//! produce a static trace.

mod conversation;
mod diurnal;
mod trace;
mod tree;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub use conversation::{gen_conversations, ConversationClient, ConversationSpec};
pub use diurnal::{gen_diurnal, hourly_counts, peak_to_trough, Arrival, DiurnalRegion, DiurnalSpec, DiurnalWorkload};
pub use trace::{load_trace, parse_trace, write_trace};
pub use tree::{gen_tot, requests_per_tree, TreeClient, TreeSpec};

use crate::error::{Error, Result};
use crate::types::{Ms, Token};

/// Token ids are drawn from `1..VOCAB`.
pub const VOCAB: u32 = 32_000;

/// A request a client program wants issued.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    /// Program-local handle passed back in `on_complete`.
    pub tag: u64,
    /// Delay after the triggering completion (or after start).
    pub delay_ms: Ms,
    pub session_key: String,
    pub prompt: Arc<[Token]>,
    pub output_len: u32,
}

pub trait ClientProgram: Send {
    fn start(&mut self) -> Vec<Issue>;
    fn on_complete(&mut self, tag: u64) -> Vec<Issue>;
}

/// Clamped log-normal length distribution. `sigma = 0` gives a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthDist {
    pub median: f64,
    #[serde(default)]
    pub sigma: f64,
    pub min: u32,
    pub max: u32,
}

impl LengthDist {
    pub fn fixed(n: u32) -> Self {
        Self {
            median: n as f64,
            sigma: 0.0,
            min: n,
            max: n,
        }
    }

    pub fn lognormal(median: f64, sigma: f64, min: u32, max: u32) -> Self {
        Self {
            median,
            sigma,
            min,
            max,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.median.is_finite() && self.median > 0.0) {
            return Err(Error::validation(format!("{path}.median"), "must be positive"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::validation(format!("{path}.sigma"), "must be non-negative"));
        }
        if self.min > self.max {
            return Err(Error::validation(format!("{path}.min"), "exceeds max"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        let v = if self.sigma == 0.0 {
            self.median
        } else {
            LogNormal::new(self.median.ln(), self.sigma)
                .expect("validated parameters")
                .sample(rng)
        };
        (v.round() as u64).clamp(self.min as u64, self.max as u64) as u32
    }
}

pub fn random_tokens(rng: &mut ChaCha8Rng, n: usize) -> Vec<Token> {
    (0..n).map(|_| rng.random_range(1..VOCAB)).collect()
}

/// A token block shared by every client built from the same seed.
pub fn shared_prefix(seed: u64, len: usize) -> Vec<Token> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4e5f_5052_4546);
    random_tokens(&mut rng, len)
}

/// Runs `program` with every request completing instantly, `step_ms` apart
/// plus each issue's delay, until `limit` requests were issued.
pub(crate) fn run_instant(program: &mut dyn ClientProgram, limit: usize, step_ms: Ms) -> Vec<(Ms, Issue)> {
    use std::collections::VecDeque;
    let mut out = Vec::new();
    let mut queue: VecDeque<(Ms, Issue)> = program.start().into_iter().map(|i| (i.delay_ms, i)).collect();
    while let Some((at, issue)) = queue.pop_front() {
        if out.len() >= limit {
            break;
        }
        let tag = issue.tag;
        out.push((at, issue));
        for next in program.on_complete(tag) {
            queue.push_back((at + step_ms + next.delay_ms, next));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn length_dist_clamps_and_is_deterministic() {
        let d = LengthDist::lognormal(100.0, 1.5, 10, 400);
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = d.sample(&mut a);
            assert!((10..=400).contains(&x));
            assert_eq!(x, d.sample(&mut b));
        }
        assert_eq!(LengthDist::fixed(7).sample(&mut a), 7);
        assert!(LengthDist::lognormal(0.0, 1.0, 1, 2).validate("x").is_err());
        assert!(LengthDist::lognormal(5.0, 1.0, 3, 2).validate("x").is_err());
    }
}
