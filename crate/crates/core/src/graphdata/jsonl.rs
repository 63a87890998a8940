use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, GraphMeta};
use crate::ndtensor::Tensor;
use crate::{Error, Result};

/// One line of a dataset file. Field order is the on-disk order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    n: usize,
    x: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
    y: usize,
    meta: GraphMeta,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        Self {
            n: g.num_nodes(),
            x: (0..g.num_nodes()).map(|r| g.x.row(r).to_vec()).collect(),
            edges: g.edges.iter().map(|&(s, d)| [s, d]).collect(),
            y: g.label,
            meta: g.meta.clone(),
        }
    }
}

impl GraphRecord {
    fn into_graph(self) -> Result<Graph> {
        if self.x.len() != self.n {
            return Err(Error::Graph(format!(
                "n = {} but x has {} rows",
                self.n,
                self.x.len()
            )));
        }
        let x = if self.n == 0 {
            Tensor::zeros(0, 0)
        } else {
            Tensor::from_rows(&self.x)?
        };
        let edges = self.edges.into_iter().map(|[s, d]| (s, d)).collect();
        Graph::new(x, edges, self.y, self.meta)
    }
}

/// Writes one JSON object per graph per line.
pub fn save_jsonl(path: &Path, graphs: &[Graph]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for g in graphs {
        let line = serde_json::to_string(&GraphRecord::from(g))
            .map_err(|e| Error::Invalid(format!("serializing graph: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset file; blank lines are skipped. Parse and validation
/// failures report the 1-based line number.
pub fn load_jsonl(path: &Path) -> Result<Vec<Graph>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut graphs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: GraphRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        graphs.push(record.into_graph().map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(graphs)
}
