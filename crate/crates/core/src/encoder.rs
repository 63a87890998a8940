//! Two GIN stacks and the gated readout.
//!
//! `GNN_E` produces node representations `H`, `GNN_S` produces per-channel
//! gates `S = sigmoid(GNN_S(G))`, and the graph representation is
//! `z_inv = READOUT(H ⊙ S)`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graphdata::Graph;
use crate::ndtensor::{Axis, Tape, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Mean,
    Sum,
}

/// Depth/width presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 4 layers × 128 hidden.
    Synthetic,
    /// 3 layers × 300 hidden.
    Molecular,
}

impl Preset {
    pub fn depth_width(self) -> (usize, usize) {
        match self {
            Preset::Synthetic => (4, 128),
            Preset::Molecular => (3, 300),
        }
    }
}

/// `h ← MLP((1 + eps)·h + Σ_{u∈N(v)} h_u)` with a two-layer ReLU MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct GinLayer {
    pub eps: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl GinLayer {
    /// `eps` starts at zero; weights use fan-in uniform initialization.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            eps: store.add(format!("{prefix}.eps"), Tensor::zeros(1, 1)),
            w1: store.add_uniform(format!("{prefix}.w1"), d_in, d_hidden, d_in, rng),
            b1: store.add_uniform(format!("{prefix}.b1"), 1, d_hidden, d_in, rng),
            w2: store.add_uniform(format!("{prefix}.w2"), d_hidden, d_out, d_hidden, rng),
            b2: store.add_uniform(format!("{prefix}.b2"), 1, d_out, d_hidden, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, h: Var, graph: &GraphInput) -> Result<Var> {
        let n = tape.value(h).rows();
        let msgs = tape.gather_rows(h, Arc::clone(&graph.src))?;
        let agg = tape.segment_sum(msgs, Arc::clone(&graph.dst), n)?;
        let eps_h = tape.scale_by(h, p.var(self.eps))?;
        let own = tape.add(h, eps_h)?;
        let pre = tape.add(own, agg)?;
        let z = tape.matmul(pre, p.var(self.w1))?;
        let z = tape.add_row_bias(z, p.var(self.b1))?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, p.var(self.w2))?;
        Ok(tape.add_row_bias(z, p.var(self.b2))?)
    }
}

/// GIN layers with ReLU between consecutive layers (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct GinStack {
    pub layers: Vec<GinLayer>,
}

impl GinStack {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let d_in = if l == 0 { in_dim } else { hidden };
                GinLayer::init(store, &format!("{prefix}.{l}"), d_in, hidden, hidden, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, graph: &GraphInput) -> Result<Var> {
        let mut h = tape.constant(Arc::clone(&graph.x));
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                h = tape.relu(h)?;
            }
            h = layer.forward(tape, p, h, graph)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub readout: Readout,
}

/// `GNN_E` and `GNN_S`: same architecture, separate weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub gnn_e: GinStack,
    pub gnn_s: GinStack,
    pub hidden: usize,
    pub readout: Readout,
}

impl EncoderParams {
    pub fn init(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let gnn_e = GinStack::init(store, "gnn_e", cfg.in_dim, cfg.hidden, cfg.depth, rng);
        let gnn_s = GinStack::init(store, "gnn_s", cfg.in_dim, cfg.hidden, cfg.depth, rng);
        Self {
            gnn_e,
            gnn_s,
            hidden: cfg.hidden,
            readout: cfg.readout,
        }
    }

    /// Records `H` and `S` for one graph.
    pub fn encode_on(&self, tape: &mut Tape, p: &Bound, graph: &GraphInput) -> Result<(Var, Var)> {
        if graph.num_nodes() == 0 {
            return Err(Error::Graph("cannot encode an empty graph".into()));
        }
        let h = self.gnn_e.forward(tape, p, graph)?;
        let s = self.gnn_s.forward(tape, p, graph)?;
        let s = tape.sigmoid(s)?;
        Ok((h, s))
    }

    /// Records `z_inv` (`1 x d`) for one graph.
    pub fn invariant_on(&self, tape: &mut Tape, p: &Bound, graph: &GraphInput) -> Result<Var> {
        let (h, s) = self.encode_on(tape, p, graph)?;
        gated_readout_on(tape, h, s, self.readout)
    }

    /// Evaluates `(H, S)` without recording gradients.
    pub fn encode(&self, store: &ParamStore, graph: &Graph) -> Result<(Tensor, Tensor)> {
        let input = GraphInput::from(graph);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let (h, s) = self.encode_on(&mut tape, &p, &input)?;
        Ok((tape.value(h).clone(), tape.value(s).clone()))
    }
}

/// `READOUT(H ⊙ S)` over the node axis.
pub fn gated_readout_on(tape: &mut Tape, h: Var, s: Var, readout: Readout) -> Result<Var> {
    let gated = tape.mul(h, s)?;
    let z = match readout {
        Readout::Mean => tape.mean(gated, Axis::Rows)?,
        Readout::Sum => tape.sum(gated, Axis::Rows)?,
    };
    Ok(z)
}

/// Mean (or sum) over nodes of `H ⊙ S`.
pub fn gated_readout(h: &Tensor, s: &Tensor, readout: Readout) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (hv, sv) = (tape.constant(h.clone()), tape.constant(s.clone()));
    let z = gated_readout_on(&mut tape, hv, sv, readout)?;
    Ok(tape.value(z).clone())
}

/// Applies one GIN layer to explicit node features without recording
/// gradients.
pub fn gin_layer_forward(
    store: &ParamStore,
    layer: &GinLayer,
    node_feats: &Tensor,
    graph: &Graph,
) -> Result<Tensor> {
    let mut input = GraphInput::from(graph);
    input.x = Arc::new(node_feats.clone());
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let h = tape.constant(Arc::clone(&input.x));
    let out = layer.forward(&mut tape, &p, h, &input)?;
    Ok(tape.value(out).clone())
}

/// Graph prepared for message passing: shared node features and both
/// directions of every edge.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub x: Arc<Tensor>,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
}

impl GraphInput {
    pub fn num_nodes(&self) -> usize {
        self.x.rows()
    }
}

impl From<&Graph> for GraphInput {
    fn from(g: &Graph) -> Self {
        let (src, dst) = g.directed_edges();
        Self {
            x: Arc::new(g.x.clone()),
            src: src.into(),
            dst: dst.into(),
        }
    }
}
