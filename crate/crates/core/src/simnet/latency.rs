//! Symmetric one-way inter-region delays.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Ms, RegionId};

pub const DEFAULT_INTRA_MS: Ms = 1;

/// Built-in one-way delays for the three standard regions.
pub fn default_link(a: &str, b: &str) -> Option<Ms> {
    let mut pair = [a, b];
    pair.sort_unstable();
    match pair {
        ["eu", "us"] => Some(150),
        ["asia", "us"] => Some(180),
        ["asia", "eu"] => Some(200),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub a: String,
    pub b: String,
    pub ms: Ms,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySpec {
    #[serde(default = "intra")]
    pub intra_ms: Ms,
    /// Used for pairs with neither an explicit link nor a built-in default.
    #[serde(default)]
    pub default_inter_ms: Option<Ms>,
    #[serde(default)]
    pub links: Vec<Link>,
}

fn intra() -> Ms {
    DEFAULT_INTRA_MS
}

impl Default for LatencySpec {
    fn default() -> Self {
        Self {
            intra_ms: DEFAULT_INTRA_MS,
            default_inter_ms: None,
            links: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyMatrix {
    regions: Vec<String>,
    ms: Vec<Vec<Ms>>,
}

impl LatencyMatrix {
    /// Every pair set to `inter`, the diagonal to `intra`.
    pub fn uniform(regions: &[&str], intra: Ms, inter: Ms) -> Self {
        let n = regions.len();
        Self {
            regions: regions.iter().map(|s| s.to_string()).collect(),
            ms: (0..n)
                .map(|i| (0..n).map(|j| if i == j { intra } else { inter }).collect())
                .collect(),
        }
    }

    pub fn build(regions: &[String], spec: &LatencySpec) -> Result<Self> {
        let idx: BTreeMap<&str, usize> = regions.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
        let n = regions.len();
        let mut ms: Vec<Vec<Option<Ms>>> = vec![vec![None; n]; n];
        for (i, row) in ms.iter_mut().enumerate() {
            row[i] = Some(spec.intra_ms);
        }
        for (k, l) in spec.links.iter().enumerate() {
            let path = format!("latency.links[{k}]");
            let a = *idx
                .get(l.a.as_str())
                .ok_or_else(|| Error::validation(format!("{path}.a"), format!("unknown region `{}`", l.a)))?;
            let b = *idx
                .get(l.b.as_str())
                .ok_or_else(|| Error::validation(format!("{path}.b"), format!("unknown region `{}`", l.b)))?;
            if a == b {
                return Err(Error::validation(
                    path,
                    "a link needs two distinct regions; use intra_ms",
                ));
            }
            ms[a][b] = Some(l.ms);
            ms[b][a] = Some(l.ms);
        }
        let mut out = vec![vec![0; n]; n];
        for i in 0..n {
            for j in 0..n {
                out[i][j] = match ms[i][j]
                    .or_else(|| default_link(&regions[i], &regions[j]))
                    .or(spec.default_inter_ms)
                {
                    Some(v) => v,
                    None => {
                        return Err(Error::validation(
                            "latency.links",
                            format!("no latency for {} <-> {}", regions[i], regions[j]),
                        ))
                    }
                };
            }
        }
        Ok(Self {
            regions: regions.to_vec(),
            ms: out,
        })
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn get(&self, a: RegionId, b: RegionId) -> Ms {
        self.ms[a as usize][b as usize]
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.ms.len();
        (0..n).all(|i| (0..n).all(|j| self.ms[i][j] == self.ms[j][i]))
    }
}
