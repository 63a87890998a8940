//! Model assembly and the batched forward/backward used by training and
//! inference.
//!
//! Each graph is encoded on its own tape (in parallel when enabled). The
//! per-graph outputs are stacked into one trainable leaf of a "head" tape
//! that holds everything coupling the batch: attention weights, the EMA
//! update, class probabilities and the losses. After the head backward
//! pass, row `i` of the stacked gradient seeds the backward pass of graph
//! `i`'s tape, and the per-graph parameter gradients are summed in batch
//! order.

use rand::Rng;

use super::config::{TrainConfig, Variant};
use crate::encoder::{EncoderConfig, EncoderParams, GinStack, GraphInput, Readout};
use crate::hypersphere::ProjectorParams;
use crate::losses::{loss_cls_on, loss_ipm_on, loss_ps_on, total_loss_on};
use crate::ndtensor::{Axis, Tape, Tensor, Var};
use crate::params::{Bound, ParamGrads, ParamId, ParamStore};
use crate::protobank::{
    class_probabilities_on, ema_update_on, prune_on, AttentionParams, BankVars, PrototypeBank,
};
use crate::{par, Error, Result};

/// Step of a training batch, reported in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Encode,
    Project,
    AssignWeights,
    EmaUpdate,
    Probabilities,
    Loss,
    ParamUpdate,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Prototype {
        encoder: EncoderParams,
        projector: Option<ProjectorParams>,
        attention: AttentionParams,
    },
    Erm {
        gnn: GinStack,
        head_w: ParamId,
        head_b: ParamId,
    },
}

/// Trainable parameters, their layout and the prototype bank.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub in_dim: usize,
    pub num_classes: usize,
    pub store: ParamStore,
    pub network: Network,
    /// Absent for the ERM variant.
    pub bank: Option<PrototypeBank>,
}

/// Per-sample results of a frozen forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// `B x C` class probabilities.
    pub probs: Tensor,
    /// `B x d_p` embeddings fed to the classifier (`None` for ERM).
    pub embeddings: Option<Tensor>,
}

impl Predictions {
    /// Highest-probability class per sample (ties to the lower index).
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.probs.rows())
            .map(|r| {
                let row = self.probs.row(r);
                let mut best = 0;
                for (c, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// Summary of one training batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub cls: f64,
    pub ps: f64,
    pub ipm: f64,
    pub clamped: usize,
}

struct GraphPass {
    tape: Tape,
    bound: Bound,
    out: Var,
}

impl Model {
    /// Builds a freshly initialized model. Parameter creation order (and so
    /// the random stream consumed) depends only on the configuration.
    pub fn new(config: &TrainConfig, in_dim: usize, num_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least two classes, got {num_classes}")));
        }
        if in_dim == 0 {
            return Err(Error::Config("node features must have positive width".into()));
        }
        let mut store = ParamStore::new();
        let enc_cfg = EncoderConfig {
            in_dim,
            hidden: config.hidden(),
            depth: config.depth(),
            readout: config.readout,
        };
        let (network, bank) = if config.variant == Variant::Erm {
            let gnn = GinStack::init(&mut store, "gnn_e", in_dim, enc_cfg.hidden, enc_cfg.depth, rng);
            let head_w = store.add_uniform("head.w", enc_cfg.hidden, num_classes, enc_cfg.hidden, rng);
            let head_b = store.add_uniform("head.b", 1, num_classes, enc_cfg.hidden, rng);
            (Network::Erm { gnn, head_w, head_b }, None)
        } else {
            let encoder = EncoderParams::init(&mut store, &enc_cfg, rng);
            let projector = (config.variant != Variant::NoProjector)
                .then(|| ProjectorParams::init(&mut store, enc_cfg.hidden, config.embed_dim(), rng));
            let attention =
                AttentionParams::init(&mut store, config.embed_dim(), config.attention_dim(), rng);
            let bank = PrototypeBank::init(
                num_classes,
                config.prototypes_per_class(),
                config.embed_dim(),
                rng,
            )?;
            (
                Network::Prototype {
                    encoder,
                    projector,
                    attention,
                },
                Some(bank),
            )
        };
        Ok(Self {
            config: config.clone(),
            in_dim,
            num_classes,
            store,
            network,
            bank,
        })
    }

    fn check_inputs(&self, graphs: &[GraphInput]) -> Result<()> {
        if let Some(g) = graphs.iter().find(|g| g.x.cols() != self.in_dim) {
            return Err(Error::Invalid(format!(
                "graph has {} node features, model expects {}",
                g.x.cols(),
                self.in_dim
            )));
        }
        Ok(())
    }

    /// Records the per-graph output: the embedding `ẑ` (or raw `z_inv` for
    /// `no-projector`), or the class logits for ERM.
    fn graph_output(&self, tape: &mut Tape, p: &Bound, g: &GraphInput) -> Result<Var> {
        match &self.network {
            Network::Prototype {
                encoder, projector, ..
            } => {
                let z = encoder.invariant_on(tape, p, g)?;
                match projector {
                    Some(proj) => proj.project_on(tape, p, z),
                    None => Ok(z),
                }
            }
            Network::Erm { gnn, head_w, head_b } => {
                let h = gnn.forward(tape, p, g)?;
                let z = pool(tape, h, self.config.readout)?;
                let logits = tape.matmul(z, p.var(*head_w))?;
                Ok(tape.add_row_bias(logits, p.var(*head_b))?)
            }
        }
    }

    fn run_graphs(&self, graphs: &[GraphInput], trainable: bool) -> Result<Vec<GraphPass>> {
        self.check_inputs(graphs)?;
        par::map_slice(graphs, |g| {
            let mut tape = Tape::new();
            let bound = if trainable {
                self.store.bind(&mut tape)
            } else {
                self.store.bind_frozen(&mut tape)
            };
            let out = self.graph_output(&mut tape, &bound, g)?;
            Ok(GraphPass { tape, bound, out })
        })
        .into_iter()
        .collect()
    }

    fn stack_outputs(passes: &[GraphPass]) -> Result<Tensor> {
        let rows: Vec<&[f64]> = passes.iter().map(|p| p.tape.value(p.out).data()).collect();
        Ok(Tensor::from_rows(&rows)?)
    }

    /// Assignment weights per class for the stacked embeddings `z`,
    /// pruned according to the variant.
    fn weights_on(
        &self,
        tape: &mut Tape,
        p: &Bound,
        bank: &BankVars,
        z: Var,
    ) -> Result<Vec<Var>> {
        let Network::Prototype { attention, .. } = &self.network else {
            unreachable!("weights requested for the ERM network")
        };
        let batch = tape.value(z).rows();
        let k = self.config.prototypes_per_class();
        let mut out = Vec::with_capacity(bank.classes.len());
        for &mu in &bank.classes {
            let w = if self.config.variant == Variant::NoUpdate {
                tape.constant(Tensor::filled(batch, k, 1.0 / k as f64))
            } else {
                attention.weights_on(tape, p, z, mu)?
            };
            let w = match self.config.effective_prune() {
                Some(n) => prune_on(tape, w, n)?,
                None => w,
            };
            out.push(w);
        }
        Ok(out)
    }

    /// One optimization batch: forward, head losses, backward. Returns the
    /// summed parameter gradients; for the prototype network the bank is
    /// replaced by its EMA-updated values.
    pub fn batch_gradients(
        &mut self,
        graphs: &[GraphInput],
        labels: &[usize],
        mut on_stage: impl FnMut(Stage),
    ) -> Result<(ParamGrads, BatchLoss)> {
        if graphs.is_empty() || graphs.len() != labels.len() {
            return Err(Error::Invalid("batch needs one label per graph".into()));
        }
        let passes = self.run_graphs(graphs, true)?;
        on_stage(Stage::Encode);
        if matches!(self.network, Network::Prototype { projector: Some(_), .. }) {
            on_stage(Stage::Project);
        }
        let stacked = Self::stack_outputs(&passes)?;

        let mut head = Tape::new();
        let hp = self.store.bind(&mut head);
        let z = head.param(stacked);
        let (loss, summary, new_bank) = match &self.network {
            Network::Prototype { .. } => {
                let bank = self.bank.as_ref().expect("prototype network has a bank");
                let vars = bank.bind(&mut head);
                let weights = self.weights_on(&mut head, &hp, &vars, z)?;
                on_stage(Stage::AssignWeights);
                let updated = ema_update_on(&mut head, &vars, z, labels, &weights, self.config.alpha)?;
                on_stage(Stage::EmaUpdate);
                let probs = class_probabilities_on(&mut head, &updated, &weights, z, self.config.tau)?;
                on_stage(Stage::Probabilities);
                let (cls, clamped) = loss_cls_on(&mut head, probs, labels)?;
                let ps = loss_ps_on(&mut head, &updated, self.config.tau)?;
                let ipm = loss_ipm_on(&mut head, &updated, z, labels, self.config.tau)?;
                let zero = head.constant(Tensor::scalar(0.0));
                let (ps_term, beta) = match self.config.variant {
                    Variant::NoPs => (zero, self.config.beta),
                    Variant::NoIpm => (ps, 0.0),
                    _ => (ps, self.config.beta),
                };
                let total = total_loss_on(&mut head, cls, ps_term, ipm, beta)?;
                on_stage(Stage::Loss);
                let summary = BatchLoss {
                    total: head.value(total).item(),
                    cls: head.value(cls).item(),
                    ps: head.value(ps).item(),
                    ipm: head.value(ipm).item(),
                    clamped,
                };
                (total, summary, Some(updated))
            }
            Network::Erm { .. } => {
                let (total, clamped) = erm_loss_on(&mut head, z, labels)?;
                on_stage(Stage::Loss);
                let summary = BatchLoss {
                    total: head.value(total).item(),
                    cls: head.value(total).item(),
                    ps: 0.0,
                    ipm: 0.0,
                    clamped,
                };
                (total, summary, None)
            }
        };

        let mut head_grads = head.backward(loss)?;
        let dz = head_grads
            .take(z)
            .ok_or_else(|| Error::Invalid("loss does not depend on the graph outputs".into()))?;
        let mut grads = ParamGrads::collect(&mut head_grads, &hp);

        let per_graph: Vec<Result<ParamGrads>> = par::map_range(passes.len(), |i| {
            let pass = &passes[i];
            let seed = dz.slice_rows(i, i + 1);
            let mut g = pass.tape.backward_with_seed(pass.out, seed)?;
            Ok(ParamGrads::collect(&mut g, &pass.bound))
        });
        for g in per_graph {
            grads.accumulate(&g?);
        }

        if let (Some(bank), Some(updated)) = (self.bank.as_mut(), new_bank.as_ref()) {
            bank.store_from(&head, updated);
        }
        Ok((grads, summary))
    }

    /// Per-graph representations used for separability analysis and export:
    /// the classifier input for prototype networks, the pooled readout for
    /// ERM.
    pub fn embeddings(&self, graphs: &[GraphInput]) -> Result<Tensor> {
        self.check_inputs(graphs)?;
        if graphs.is_empty() {
            return Ok(Tensor::zeros(0, self.embedding_dim()));
        }
        let rows: Vec<Result<Vec<f64>>> = par::map_slice(graphs, |g| {
            let mut tape = Tape::new();
            let p = self.store.bind_frozen(&mut tape);
            let out = match &self.network {
                Network::Erm { gnn, .. } => {
                    let h = gnn.forward(&mut tape, &p, g)?;
                    pool(&mut tape, h, self.config.readout)?
                }
                Network::Prototype { .. } => self.graph_output(&mut tape, &p, g)?,
            };
            Ok(tape.value(out).data().to_vec())
        });
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Tensor::from_rows(&rows)?)
    }

    pub fn embedding_dim(&self) -> usize {
        match self.network {
            Network::Erm { .. } => self.config.hidden(),
            Network::Prototype { .. } => self.config.embed_dim(),
        }
    }

    /// Frozen forward pass: prototypes are not updated.
    pub fn predict(&self, graphs: &[GraphInput]) -> Result<Predictions> {
        if graphs.is_empty() {
            return Ok(Predictions {
                probs: Tensor::zeros(0, self.num_classes),
                embeddings: None,
            });
        }
        let passes = self.run_graphs(graphs, false)?;
        let stacked = Self::stack_outputs(&passes)?;
        let mut head = Tape::new();
        let hp = self.store.bind_frozen(&mut head);
        let z = head.constant(stacked.clone());
        match &self.network {
            Network::Prototype { .. } => {
                let bank = self.bank.as_ref().expect("prototype network has a bank");
                let vars = bank.bind(&mut head);
                let weights = self.weights_on(&mut head, &hp, &vars, z)?;
                let probs = class_probabilities_on(&mut head, &vars, &weights, z, self.config.tau)?;
                Ok(Predictions {
                    probs: head.value(probs).clone(),
                    embeddings: Some(stacked),
                })
            }
            Network::Erm { .. } => {
                let probs = head.softmax_rows(z)?;
                Ok(Predictions {
                    probs: head.value(probs).clone(),
                    embeddings: None,
                })
            }
        }
    }
}

fn pool(tape: &mut Tape, h: Var, readout: Readout) -> Result<Var> {
    Ok(match readout {
        Readout::Mean => tape.mean(h, Axis::Rows)?,
        Readout::Sum => tape.sum(h, Axis::Rows)?,
    })
}

/// Mean cross-entropy of softmax(logits).
fn erm_loss_on(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<(Var, usize)> {
    let probs = tape.softmax_rows(logits)?;
    let (scaled, clamped) = loss_cls_on(tape, probs, labels)?;
    // loss_cls_on divides by B·C; conventional cross-entropy divides by B
    let classes = tape.value(logits).cols() as f64;
    Ok((tape.scale(scaled, classes)?, clamped))
}
