//! Token prefix trie annotated with routing targets.
//!
//! Every retained insertion `(path, target)` records `target` on each node of
//! its path, root included, so a child's target set is always a subset of its
//! parent's. Size is counted in token edges; when it exceeds the budget, whole
//! insertions are evicted oldest-first.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::types::{TargetId, Token};

pub const DEFAULT_MAX_SIZE: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetRecord {
    /// Number of retained insertions for this target passing through the node.
    pub count: u32,
    /// Largest insertion sequence number among them.
    pub last_seq: u64,
}

#[derive(Debug, Clone, Default)]
struct Node {
    parent: usize,
    token: Token,
    children: BTreeMap<Token, usize>,
    targets: BTreeMap<TargetId, TargetRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insertion {
    pub seq: u64,
    pub tokens: Arc<[Token]>,
    pub target: TargetId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub target: TargetId,
    pub matched_len: usize,
    pub hit_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct PrefixTrie {
    nodes: Vec<Node>,
    free: Vec<usize>,
    size: usize,
    max_size: usize,
    next_seq: u64,
    log: BTreeMap<u64, (Arc<[Token]>, TargetId)>,
    index: HashMap<(Arc<[Token]>, TargetId), u64>,
}

const ROOT: usize = 0;

impl Default for PrefixTrie {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_SIZE)
    }
}

impl PrefixTrie {
    pub fn new(max_size: usize) -> Self {
        Self {
            nodes: vec![Node::default()],
            free: Vec::new(),
            size: 0,
            max_size,
            next_seq: 0,
            log: BTreeMap::new(),
            index: HashMap::new(),
        }
    }

    /// Number of token edges.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    /// Retained insertions in sequence order (oldest first).
    pub fn retained(&self) -> impl Iterator<Item = Insertion> + '_ {
        self.log.iter().map(|(&seq, (tokens, target))| Insertion {
            seq,
            tokens: tokens.clone(),
            target: *target,
        })
    }

    fn alloc(&mut self, parent: usize, token: Token) -> usize {
        let node = Node {
            parent,
            token,
            ..Default::default()
        };
        if let Some(i) = self.free.pop() {
            self.nodes[i] = node;
            i
        } else {
            self.nodes.push(node);
            self.nodes.len() - 1
        }
    }

    /// Records `target` along the path of `tokens`.
    ///
    /// Re-inserting an already retained `(tokens, target)` pair refreshes its
    /// sequence number instead of adding a second record. Empty input is ignored.
    pub fn insert(&mut self, tokens: &[Token], target: TargetId) {
        if tokens.is_empty() {
            return;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let key: Arc<[Token]> = Arc::from(tokens);

        if let Some(old) = self.index.get(&(key.clone(), target)).copied() {
            self.log.remove(&old);
            self.log.insert(seq, (key.clone(), target));
            self.index.insert((key, target), seq);
            let mut node = ROOT;
            self.nodes[node].targets.get_mut(&target).unwrap().last_seq = seq;
            for t in tokens {
                node = self.nodes[node].children[t];
                self.nodes[node].targets.get_mut(&target).unwrap().last_seq = seq;
            }
            return;
        }

        let mut node = ROOT;
        bump(&mut self.nodes[node], target, seq);
        for &t in tokens {
            node = match self.nodes[node].children.get(&t) {
                Some(&c) => c,
                None => {
                    let c = self.alloc(node, t);
                    self.nodes[node].children.insert(t, c);
                    self.size += 1;
                    c
                }
            };
            bump(&mut self.nodes[node], target, seq);
        }
        self.log.insert(seq, (key.clone(), target));
        self.index.insert((key, target), seq);
        self.evict_to_limit();
    }

    /// Evicts the oldest retained insertions until `size <= max_size`.
    pub fn evict_to_limit(&mut self) {
        while self.size > self.max_size {
            let Some((_, (tokens, target))) = self.log.pop_first() else {
                break;
            };
            self.index.remove(&(tokens.clone(), target));
            self.remove_record(&tokens, target);
        }
    }

    fn remove_record(&mut self, tokens: &[Token], target: TargetId) {
        let mut path = Vec::with_capacity(tokens.len() + 1);
        let mut node = ROOT;
        path.push(node);
        for t in tokens {
            node = self.nodes[node].children[t];
            path.push(node);
        }
        for &n in &path {
            let recs = &mut self.nodes[n].targets;
            let r = recs.get_mut(&target).expect("record on retained path");
            r.count -= 1;
            if r.count == 0 {
                recs.remove(&target);
            }
        }
        // Emptied nodes form a suffix of the path; unlink them deepest first.
        for &n in path.iter().skip(1).rev() {
            if !self.nodes[n].targets.is_empty() {
                break;
            }
            debug_assert!(self.nodes[n].children.is_empty());
            let (parent, token) = (self.nodes[n].parent, self.nodes[n].token);
            self.nodes[parent].children.remove(&token);
            self.nodes[n] = Node::default();
            self.free.push(n);
            self.size -= 1;
        }
    }

    fn has_available(&self, node: usize, is_available: &impl Fn(TargetId) -> bool) -> bool {
        self.nodes[node].targets.keys().any(|&t| is_available(t))
    }

    fn pick(
        &self,
        node: usize,
        depth: usize,
        len: usize,
        is_available: &impl Fn(TargetId) -> bool,
        load: &impl Fn(TargetId) -> u64,
    ) -> Option<MatchResult> {
        let target = self.nodes[node]
            .targets
            .keys()
            .copied()
            .filter(|&t| is_available(t))
            .min_by_key(|&t| (load(t), t))?;
        Some(MatchResult {
            target,
            matched_len: depth,
            hit_ratio: depth as f64 / len as f64,
        })
    }

    /// Available target sharing the longest prefix with `tokens`.
    ///
    /// Descends token by token and stops at the first node with no available
    /// target. Ties at equal depth go to the lowest `load`, then lowest id.
    /// Returns `None` when no available target is recorded at all.
    pub fn max_prefix_match_by(
        &self,
        tokens: &[Token],
        is_available: impl Fn(TargetId) -> bool,
        load: impl Fn(TargetId) -> u64,
    ) -> Option<MatchResult> {
        if tokens.is_empty() || !self.has_available(ROOT, &is_available) {
            return None;
        }
        let mut node = ROOT;
        let mut depth = 0;
        for t in tokens {
            match self.nodes[node].children.get(t) {
                Some(&c) if self.has_available(c, &is_available) => {
                    node = c;
                    depth += 1;
                }
                _ => break,
            }
        }
        self.pick(node, depth, tokens.len(), &is_available, &load)
    }

    pub fn max_prefix_match(&self, tokens: &[Token], is_available: impl Fn(TargetId) -> bool) -> Option<MatchResult> {
        self.max_prefix_match_by(tokens, is_available, |_| 0)
    }

    /// Same result as [`Self::max_prefix_match_by`] but walks the whole stored
    /// path without early termination, remembering the deepest node that still
    /// has an available target.
    pub fn max_prefix_match_unpruned(
        &self,
        tokens: &[Token],
        is_available: impl Fn(TargetId) -> bool,
        load: impl Fn(TargetId) -> u64,
    ) -> Option<MatchResult> {
        if tokens.is_empty() {
            return None;
        }
        let mut best = self.has_available(ROOT, &is_available).then_some((ROOT, 0));
        let mut node = ROOT;
        for (i, t) in tokens.iter().enumerate() {
            let Some(&c) = self.nodes[node].children.get(t) else {
                break;
            };
            node = c;
            if self.has_available(c, &is_available) {
                best = Some((c, i + 1));
            }
        }
        let (node, depth) = best?;
        self.pick(node, depth, tokens.len(), &is_available, &load)
    }

    /// Depth-first listing, one line per node: `[path] -> {target:seq,...}`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut path = Vec::new();
        self.dump_node(ROOT, &mut path, &mut out);
        out
    }

    fn dump_node(&self, node: usize, path: &mut Vec<Token>, out: &mut String) {
        let recs: Vec<String> = self.nodes[node]
            .targets
            .iter()
            .map(|(t, r)| format!("{t}:{}", r.last_seq))
            .collect();
        let toks: Vec<String> = path.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(out, "[{}] -> {{{}}}", toks.join(","), recs.join(","));
        for (&tok, &child) in &self.nodes[node].children {
            path.push(tok);
            self.dump_node(child, path, out);
            path.pop();
        }
    }

    /// Full-tree audit of the structural invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut edges = 0usize;
        let mut stack = vec![ROOT];
        while let Some(n) = stack.pop() {
            for &c in self.nodes[n].children.values() {
                edges += 1;
                for t in self.nodes[c].targets.keys() {
                    if !self.nodes[n].targets.contains_key(t) {
                        return Err(format!("subset property broken at node {c} for target {t}"));
                    }
                }
                if self.nodes[c].targets.is_empty() {
                    return Err(format!("node {c} has no targets"));
                }
                stack.push(c);
            }
        }
        if edges != self.size {
            return Err(format!("size {} but {} edges", self.size, edges));
        }
        if self.size > self.max_size {
            return Err(format!("size {} over budget {}", self.size, self.max_size));
        }
        if self.index.len() != self.log.len() {
            return Err("index and log disagree".into());
        }
        Ok(())
    }
}

fn bump(node: &mut Node, target: TargetId, seq: u64) {
    let r = node.targets.entry(target).or_insert(TargetRecord {
        count: 0,
        last_seq: seq,
    });
    r.count += 1;
    r.last_seq = seq;
}
