//! Token-granular radix cache of resident KV prefixes.
//!
//! Nodes on the prompt path of a running request are pinned (reference
//! counted). Unpinned nodes stay resident until evicted, least recently
//! released leaf first.

use std::collections::{BTreeSet, HashMap};

use crate::types::{Ms, Token};

#[derive(Debug, Clone, Default)]
struct Node {
    parent: usize,
    token: Token,
    children: HashMap<Token, usize>,
    refs: u32,
    last_access: Ms,
    lru_key: Option<(Ms, usize)>,
}

#[derive(Debug, Clone)]
pub struct RadixCache {
    nodes: Vec<Node>,
    free: Vec<usize>,
    resident: u64,
    unpinned: u64,
    lru: BTreeSet<(Ms, usize)>,
}

const ROOT: usize = 0;

impl Default for RadixCache {
    fn default() -> Self {
        Self {
            nodes: vec![Node::default()],
            free: Vec::new(),
            resident: 0,
            unpinned: 0,
            lru: BTreeSet::new(),
        }
    }
}

impl RadixCache {
    /// Resident tokens, pinned or not.
    pub fn resident(&self) -> u64 {
        self.resident
    }

    /// Resident tokens that no running request pins.
    pub fn evictable(&self) -> u64 {
        self.unpinned
    }

    /// Longest resident prefix of `tokens`.
    pub fn match_len(&self, tokens: &[Token]) -> usize {
        self.walk(tokens).len()
    }

    /// Number of unpinned nodes along the resident prefix of `tokens`.
    pub fn unpinned_on_path(&self, tokens: &[Token]) -> u64 {
        self.walk(tokens)
            .into_iter()
            .filter(|&n| self.nodes[n].refs == 0)
            .count() as u64
    }

    fn walk(&self, tokens: &[Token]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut node = ROOT;
        for t in tokens {
            match self.nodes[node].children.get(t) {
                Some(&c) => {
                    out.push(c);
                    node = c;
                }
                None => break,
            }
        }
        out
    }

    fn refresh_lru(&mut self, n: usize) {
        if n == ROOT {
            return;
        }
        if let Some(k) = self.nodes[n].lru_key.take() {
            self.lru.remove(&k);
        }
        let node = &self.nodes[n];
        if node.refs == 0 && node.children.is_empty() {
            let k = (node.last_access, n);
            self.lru.insert(k);
            self.nodes[n].lru_key = Some(k);
        }
    }

    /// Pins the whole of `tokens`, creating missing nodes. Returns how many
    /// tokens were already resident. Caller must have made room beforehand.
    pub fn pin(&mut self, tokens: &[Token]) -> usize {
        let mut node = ROOT;
        let mut cached = 0;
        let mut matching = true;
        for &t in tokens {
            let next = match self.nodes[node].children.get(&t) {
                Some(&c) if matching => {
                    cached += 1;
                    c
                }
                _ => {
                    matching = false;
                    let c = self.alloc(node, t);
                    self.nodes[node].children.insert(t, c);
                    self.resident += 1;
                    self.unpinned += 1;
                    self.refresh_lru(node);
                    c
                }
            };
            if self.nodes[next].refs == 0 {
                self.unpinned -= 1;
            }
            self.nodes[next].refs += 1;
            self.refresh_lru(next);
            node = next;
        }
        cached
    }

    /// Releases one pin along `tokens`, stamping the path with `touch` if given.
    pub fn unpin(&mut self, tokens: &[Token], touch: Option<Ms>) {
        let path = self.walk(tokens);
        debug_assert_eq!(path.len(), tokens.len(), "pinned path must be resident");
        for n in path {
            let node = &mut self.nodes[n];
            node.refs -= 1;
            if let Some(now) = touch {
                node.last_access = now;
            }
            if node.refs == 0 {
                self.unpinned += 1;
            }
            self.refresh_lru(n);
        }
    }

    /// Evicts up to `count` unpinned tokens, oldest leaves first. Returns how many went.
    pub fn evict(&mut self, count: u64) -> u64 {
        let mut gone = 0;
        while gone < count {
            let Some((_, n)) = self.lru.pop_first() else {
                break;
            };
            let (parent, token) = (self.nodes[n].parent, self.nodes[n].token);
            self.nodes[parent].children.remove(&token);
            self.nodes[n] = Node::default();
            self.free.push(n);
            self.resident -= 1;
            self.unpinned -= 1;
            gone += 1;
            self.refresh_lru(parent);
        }
        gone
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

    /// Every resident root-to-leaf sequence. Test and audit helper.
    pub fn resident_sequences(&self) -> Vec<Vec<Token>> {
        let mut out = Vec::new();
        let mut stack = vec![(ROOT, Vec::new())];
        while let Some((n, path)) = stack.pop() {
            if n != ROOT && self.nodes[n].children.is_empty() {
                out.push(path.clone());
            }
            let mut kids: Vec<_> = self.nodes[n].children.iter().map(|(&t, &c)| (t, c)).collect();
            kids.sort_unstable();
            for (t, c) in kids {
                let mut p = path.clone();
                p.push(t);
                stack.push((c, p));
            }
        }
        out
    }
}
