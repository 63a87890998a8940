//! Graph data model, the JSONL dataset format and the synthetic
//! spurious-motif benchmark generator.

mod generate;
mod jsonl;
mod shapes;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ndtensor::Tensor;
use crate::{Error, Result};

pub use generate::{generate, Dataset, DatasetSpec, FeatureMode, Shift};
pub use jsonl::{load_jsonl, save_jsonl};
pub use shapes::{compose, make_base, make_motif, Fragment};

/// Generation-time bookkeeping. Never used as a model input.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub base: String,
    pub motif: String,
    pub split: String,
    pub env: String,
}

/// Undirected graph with node features and a class label.
///
/// Each undirected edge is stored once; [`Graph::directed_edges`] expands
/// both directions for message passing.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub x: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub label: usize,
    pub meta: GraphMeta,
}

impl Graph {
    pub fn new(x: Tensor, edges: Vec<(usize, usize)>, label: usize, meta: GraphMeta) -> Result<Self> {
        let g = Self {
            x,
            edges,
            label,
            meta,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    /// Checks endpoint ranges, self-loops and duplicate undirected edges.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let mut seen = HashSet::with_capacity(self.edges.len());
        for &(s, d) in &self.edges {
            if s >= n || d >= n {
                return Err(Error::Graph(format!(
                    "edge ({s}, {d}) out of range for {n} nodes"
                )));
            }
            if s == d {
                return Err(Error::Graph(format!("self-loop on node {s}")));
            }
            if !seen.insert((s.min(d), s.max(d))) {
                return Err(Error::Graph(format!("duplicate edge ({s}, {d})")));
            }
        }
        Ok(())
    }

    /// Source and destination lists with every undirected edge in both
    /// directions, ordered `e0 s→d, e0 d→s, e1 s→d, ...`.
    pub fn directed_edges(&self) -> (Vec<usize>, Vec<usize>) {
        let mut src = Vec::with_capacity(2 * self.edges.len());
        let mut dst = Vec::with_capacity(2 * self.edges.len());
        for &(s, d) in &self.edges {
            src.push(s);
            dst.push(d);
            src.push(d);
            dst.push(s);
        }
        (src, dst)
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &(s, d) in &self.edges {
            deg[s] += 1;
            deg[d] += 1;
        }
        deg
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.num_nodes();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(Error::Graph("not a permutation of the node set".into()));
        }
        let f = self.feature_dim();
        let mut x = vec![0.0; n * f];
        for (old, &new) in perm.iter().enumerate() {
            x[new * f..(new + 1) * f].copy_from_slice(self.x.row(old));
        }
        let edges = self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        Graph::new(Tensor::new(n, f, x)?, edges, self.label, self.meta.clone())
    }

    pub fn is_connected(&self) -> bool {
        let n = self.num_nodes();
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for &(s, d) in &self.edges {
            adj[s].push(d);
            adj[d].push(s);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Number of classes implied by a collection of graphs (`max label + 1`).
pub fn num_classes<'a>(graphs: impl IntoIterator<Item = &'a Graph>) -> usize {
    graphs.into_iter().map(|g| g.label + 1).max().unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MotifKind {
    House,
    Cycle,
    Crane,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaseKind {
    Wheel,
    Tree,
    Ladder,
    Star,
    Path,
}

impl MotifKind {
    pub fn name(self) -> &'static str {
        match self {
            MotifKind::House => "house",
            MotifKind::Cycle => "cycle",
            MotifKind::Crane => "crane",
        }
    }
}

impl BaseKind {
    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Wheel => "wheel",
            BaseKind::Tree => "tree",
            BaseKind::Ladder => "ladder",
            BaseKind::Star => "star",
            BaseKind::Path => "path",
        }
    }
}

impl fmt::Display for MotifKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotifKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "house" => Ok(MotifKind::House),
            "cycle" => Ok(MotifKind::Cycle),
            "crane" => Ok(MotifKind::Crane),
            other => Err(Error::Invalid(format!("unknown motif kind `{other}`"))),
        }
    }
}

impl FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wheel" => Ok(BaseKind::Wheel),
            "tree" => Ok(BaseKind::Tree),
            "ladder" => Ok(BaseKind::Ladder),
            "star" => Ok(BaseKind::Star),
            "path" => Ok(BaseKind::Path),
            other => Err(Error::Invalid(format!("unknown base kind `{other}`"))),
        }
    }
}
