//! Tree-of-Thoughts programs: every node's children extend the node's prompt
//! with its output and a short branch instruction.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_tokens, run_instant, shared_prefix, ClientProgram, Issue, LengthDist};
use crate::error::{Error, Result};
use crate::types::{Ms, Request, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSpec {
    pub branching: u32,
    pub depth: u32,
    pub system_prefix_len: u32,
    /// Root question length.
    pub question: LengthDist,
    /// Output length of every node.
    pub output: LengthDist,
    /// Instruction tokens appended per child.
    pub branch_tokens: u32,
    /// 0 means unlimited.
    pub trees_per_client: u32,
    /// Pause between one tree finishing and the next starting.
    pub think_ms: Ms,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            branching: 2,
            depth: 4,
            system_prefix_len: 64,
            question: LengthDist::lognormal(200.0, 0.5, 32, 600),
            output: LengthDist::lognormal(120.0, 0.7, 8, 400),
            branch_tokens: 8,
            trees_per_client: 0,
            think_ms: 0,
        }
    }
}

/// Node count of a complete tree.
pub fn requests_per_tree(branching: u32, depth: u32) -> u64 {
    let b = branching as u64;
    if b == 1 {
        depth as u64
    } else {
        (b.pow(depth) - 1) / (b - 1)
    }
}

impl TreeSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.branching == 0 {
            return Err(Error::validation(format!("{path}.branching"), "must be at least 1"));
        }
        if self.depth == 0 {
            return Err(Error::validation(format!("{path}.depth"), "must be at least 1"));
        }
        if (self.branching as u64)
            .checked_pow(self.depth)
            .is_none_or(|n| n > 1 << 20)
        {
            return Err(Error::validation(format!("{path}.depth"), "tree too large"));
        }
        self.question.validate(&format!("{path}.question"))?;
        self.output.validate(&format!("{path}.output"))?;
        if self.system_prefix_len == 0 && self.question.min == 0 {
            return Err(Error::validation(
                format!("{path}.question.min"),
                "root prompts could be empty",
            ));
        }
        Ok(())
    }

    /// Largest prompt-plus-output footprint any node can have.
    pub fn max_footprint(&self) -> u64 {
        let levels = self.depth as u64 - 1;
        self.system_prefix_len as u64
            + self.question.max as u64
            + levels * (self.output.max as u64 + self.branch_tokens as u64)
            + self.output.max as u64
    }
}

struct Node {
    prompt: Arc<[Token]>,
    output: Vec<Token>,
    level: u32,
}

pub struct TreeClient {
    spec: TreeSpec,
    rng: ChaCha8Rng,
    client: String,
    system: Vec<Token>,
    trees_done: u32,
    tree_key: String,
    next_tag: u64,
    nodes: HashMap<u64, Node>,
}

impl TreeClient {
    pub fn new(spec: TreeSpec, client: String, shared_seed: u64, seed: u64) -> Self {
        let system = shared_prefix(shared_seed, spec.system_prefix_len as usize);
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            client,
            system,
            trees_done: 0,
            tree_key: String::new(),
            next_tag: 0,
            nodes: HashMap::new(),
        }
    }

    fn node(&mut self, prompt: Vec<Token>, level: u32, delay_ms: Ms) -> Issue {
        let output_len = self.spec.output.sample(&mut self.rng);
        let output = random_tokens(&mut self.rng, output_len as usize);
        let prompt: Arc<[Token]> = prompt.into();
        let tag = self.next_tag;
        self.next_tag += 1;
        self.nodes.insert(
            tag,
            Node {
                prompt: prompt.clone(),
                output,
                level,
            },
        );
        Issue {
            tag,
            delay_ms,
            session_key: self.tree_key.clone(),
            prompt,
            output_len,
        }
    }

    fn new_tree(&mut self, delay_ms: Ms) -> Vec<Issue> {
        if self.spec.trees_per_client > 0 && self.trees_done >= self.spec.trees_per_client {
            return Vec::new();
        }
        self.tree_key = format!("{}-t{}", self.client, self.trees_done);
        let mut prompt = self.system.clone();
        let q = self.spec.question.sample(&mut self.rng) as usize;
        prompt.extend(random_tokens(&mut self.rng, q.max(usize::from(prompt.is_empty()))));
        vec![self.node(prompt, 1, delay_ms)]
    }
}

impl ClientProgram for TreeClient {
    fn start(&mut self) -> Vec<Issue> {
        self.new_tree(0)
    }

    fn on_complete(&mut self, tag: u64) -> Vec<Issue> {
        let Some(node) = self.nodes.remove(&tag) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if node.level < self.spec.depth {
            for _ in 0..self.spec.branching {
                let mut p = node.prompt.to_vec();
                p.extend_from_slice(&node.output);
                p.extend(random_tokens(&mut self.rng, self.spec.branch_tokens as usize));
                out.push(self.node(p, node.level + 1, 0));
            }
        }
        if self.nodes.is_empty() {
            self.trees_done += 1;
            out.extend(self.new_tree(self.spec.think_ms));
        }
        out
    }
}

/// Static trace of `trees` complete trees for one client.
pub fn gen_tot(spec: &TreeSpec, trees: u32, client: &str, region: &str, seed: u64) -> Vec<Request> {
    let spec = TreeSpec {
        trees_per_client: trees,
        ..spec.clone()
    };
    let limit = (requests_per_tree(spec.branching, spec.depth) * trees as u64) as usize;
    let mut c = TreeClient::new(spec, client.to_string(), seed, seed.wrapping_add(1));
    run_instant(&mut c, limit, 1)
        .into_iter()
        .enumerate()
        .map(|(n, (at, i))| Request {
            id: format!("{client}-{n}"),
            session_key: i.session_key,
            origin_region: region.to_string(),
            prompt: i.prompt,
            output_len: i.output_len,
            arrival_time: at,
        })
        .collect()
}
