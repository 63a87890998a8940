use rand::Rng;

use super::{BaseKind, Graph, GraphMeta, MotifKind};
use crate::ndtensor::Tensor;
use crate::{Error, Result};

/// Bare structure: a node count and an undirected edge list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Fragment {
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(s, d) in &self.edges {
            deg[s] += 1;
            deg[d] += 1;
        }
        deg
    }
}

fn ring(n: usize, offset: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (offset + i, offset + (i + 1) % n)).collect()
}

/// The fixed 5-node motif shapes.
///
/// * house: square 0-1-2-3 with apex 4 joined to 2 and 3
/// * cycle: 5-ring
/// * crane: path 0-1-2-3 with node 4 joined to 1 and 2
pub fn make_motif(kind: MotifKind) -> Fragment {
    let edges = match kind {
        MotifKind::House => vec![(0, 1), (1, 2), (2, 3), (3, 0), (2, 4), (3, 4)],
        MotifKind::Cycle => ring(5, 0),
        MotifKind::Crane => vec![(0, 1), (1, 2), (2, 3), (1, 4), (2, 4)],
    };
    Fragment {
        num_nodes: 5,
        edges,
    }
}

/// Base graph of the requested size. `rng` is only consumed by `tree`.
///
/// A ladder has `size / 2` rungs, so odd sizes produce `size - 1` nodes.
pub fn make_base(kind: BaseKind, size: usize, rng: &mut impl Rng) -> Result<Fragment> {
    if size < 4 {
        return Err(Error::Invalid(format!(
            "base graph size {size} is too small (minimum 4)"
        )));
    }
    let frag = match kind {
        BaseKind::Wheel => {
            let mut edges = ring(size - 1, 0);
            let hub = size - 1;
            edges.extend((0..size - 1).map(|i| (i, hub)));
            Fragment {
                num_nodes: size,
                edges,
            }
        }
        BaseKind::Tree => {
            let mut children = vec![0u8; size];
            let mut edges = Vec::with_capacity(size - 1);
            for v in 1..size {
                let open: Vec<usize> = (0..v).filter(|&u| children[u] < 2).collect();
                let parent = open[rng.gen_range(0..open.len())];
                children[parent] += 1;
                edges.push((parent, v));
            }
            Fragment {
                num_nodes: size,
                edges,
            }
        }
        BaseKind::Ladder => {
            let rungs = size / 2;
            let mut edges = Vec::with_capacity(3 * rungs);
            for r in 0..rungs {
                edges.push((2 * r, 2 * r + 1));
                if r + 1 < rungs {
                    edges.push((2 * r, 2 * r + 2));
                    edges.push((2 * r + 1, 2 * r + 3));
                }
            }
            Fragment {
                num_nodes: 2 * rungs,
                edges,
            }
        }
        BaseKind::Star => Fragment {
            num_nodes: size,
            edges: (1..size).map(|i| (0, i)).collect(),
        },
        BaseKind::Path => Fragment {
            num_nodes: size,
            edges: (0..size - 1).map(|i| (i, i + 1)).collect(),
        },
    };
    Ok(frag)
}

/// Disjoint union of `base` and `motif` joined by one bridge edge between a
/// uniformly chosen base node and a uniformly chosen motif node. Node
/// features are the constant 1.0.
pub fn compose(base: &Fragment, motif: &Fragment, label: usize, rng: &mut impl Rng) -> Result<Graph> {
    if base.num_nodes == 0 || motif.num_nodes == 0 {
        return Err(Error::Graph("cannot compose an empty fragment".into()));
    }
    let shift = base.num_nodes;
    let mut edges = base.edges.clone();
    edges.extend(motif.edges.iter().map(|&(s, d)| (s + shift, d + shift)));
    let b = rng.gen_range(0..base.num_nodes);
    let m = rng.gen_range(0..motif.num_nodes);
    edges.push((b, m + shift));
    let n = base.num_nodes + motif.num_nodes;
    Graph::new(Tensor::ones(n, 1), edges, label, GraphMeta::default())
}
