//! Multi-prototype hyperspherical classifier.
//!
//! Each class owns `K` unit prototypes. Samples are matched to the
//! prototypes of a class by scaled dot-product attention, the weights are
//! pruned to the top `n` per sample, prototypes follow an EMA of the
//! weighted embeddings of their class, and the class score is the best
//! weighted `exp(μᵀẑ / τ)` over that class's prototypes.
//!
//! Prototypes are not trained by gradient descent. During a training step
//! the EMA update is recorded on the tape so that losses evaluated against
//! the fresh prototypes still backpropagate into the embeddings; the stored
//! bank keeps only the detached values.

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ndtensor::{Axis, Tape, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::{Error, Result};

/// Tolerance used when checking the unit-norm invariant.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// `C` classes × `K` unit prototypes of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    classes: Vec<Tensor>,
}

fn normalize_rows(t: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(t.clone());
    let n = tape.l2_normalize_rows(v)?;
    Ok(tape.value(n).clone())
}

impl PrototypeBank {
    /// Draws every prototype from `N(0, I)` and scales it to unit length.
    pub fn init(classes: usize, k: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if classes < 2 || k == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "prototype bank needs C >= 2, K >= 1, d >= 1 (got {classes}, {k}, {dim})"
            )));
        }
        let classes = (0..classes)
            .map(|_| {
                let data = (0..k * dim).map(|_| rng.sample(StandardNormal)).collect();
                normalize_rows(&Tensor::new(k, dim, data)?)
            })
            .collect::<Result<_>>()?;
        Ok(Self { classes })
    }

    /// Builds a bank from per-class `K x d` matrices whose rows are unit vectors.
    pub fn from_classes(classes: Vec<Tensor>) -> Result<Self> {
        let bank = Self { classes };
        if bank.classes.len() < 2 {
            return Err(Error::Config("prototype bank needs at least two classes".into()));
        }
        let shape = bank.classes[0].shape();
        if shape.0 == 0 || bank.classes.iter().any(|c| c.shape() != shape) {
            return Err(Error::Config("prototype classes must share a K x d shape".into()));
        }
        if let Some(norm) = bank.norms().into_iter().find(|n| (n - 1.0).abs() > UNIT_NORM_TOL) {
            return Err(Error::Config(format!("prototype with norm {norm} is not unit length")));
        }
        Ok(bank)
    }

    /// Builds a bank from the stacked `CK x d` layout of [`PrototypeBank::stacked`].
    pub fn from_stacked(stacked: &Tensor, classes: usize) -> Result<Self> {
        if classes == 0 || stacked.rows() % classes != 0 {
            return Err(Error::Config(format!(
                "{} prototype rows cannot be split into {classes} classes",
                stacked.rows()
            )));
        }
        let k = stacked.rows() / classes;
        Self::from_classes((0..classes).map(|c| stacked.slice_rows(c * k, (c + 1) * k)).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn per_class(&self) -> usize {
        self.classes[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].cols()
    }

    /// `K x d` prototypes of class `c`.
    pub fn class(&self, c: usize) -> &Tensor {
        &self.classes[c]
    }

    pub fn prototype(&self, c: usize, k: usize) -> &[f64] {
        self.classes[c].row(k)
    }

    /// All prototypes as a `CK x d` matrix, class-major.
    pub fn stacked(&self) -> Tensor {
        let data = self.classes.iter().flat_map(|c| c.data().iter().copied()).collect();
        Tensor::new(self.num_classes() * self.per_class(), self.dim(), data)
            .expect("finite prototypes")
    }

    pub fn norms(&self) -> Vec<f64> {
        self.classes
            .iter()
            .flat_map(|c| (0..c.rows()).map(move |k| c.row(k).iter().map(|v| v * v).sum::<f64>().sqrt()))
            .collect()
    }

    /// Records every class matrix as a constant.
    pub fn bind(&self, tape: &mut Tape) -> BankVars {
        BankVars {
            classes: self.classes.iter().map(|c| tape.constant(c.clone())).collect(),
        }
    }

    /// Replaces the bank by values computed on a tape (detached).
    pub fn store_from(&mut self, tape: &Tape, vars: &BankVars) {
        for (slot, v) in self.classes.iter_mut().zip(&vars.classes) {
            *slot = tape.value(*v).clone();
        }
    }

    /// EMA update for a batch:
    /// `μ_k^(c) ← Norm(α μ_k^(c) + (1 − α) Σ_i 1(y_i = c) W_ik^(c) ẑ_i)`.
    ///
    /// `pruned[c]` holds the `B x K` (pruned) assignment weights for class `c`.
    pub fn ema_update(
        &mut self,
        embeddings: &Tensor,
        labels: &[usize],
        pruned: &[Tensor],
        alpha: f64,
    ) -> Result<()> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let z = tape.constant(embeddings.clone());
        let w: Vec<Var> = pruned.iter().map(|p| tape.constant(p.clone())).collect();
        let updated = ema_update_on(&mut tape, &vars, z, labels, &w, alpha)?;
        self.store_from(&tape, &updated);
        Ok(())
    }

    /// For every prototype, the ids of the `m` embeddings with the highest
    /// similarity, best first (ties by lower id). Indexed `[class][k]`.
    pub fn nearest_samples(&self, embeddings: &Tensor, m: usize) -> Result<Vec<Vec<Vec<usize>>>> {
        if embeddings.rows() == 0 {
            return Err(Error::Invalid("nearest_samples on an empty dataset".into()));
        }
        if embeddings.cols() != self.dim() {
            return Err(Error::Invalid(format!(
                "embedding width {} does not match prototype width {}",
                embeddings.cols(),
                self.dim()
            )));
        }
        let take = m.min(embeddings.rows());
        let out = self
            .classes
            .iter()
            .map(|class| {
                (0..class.rows())
                    .map(|k| {
                        let mu = class.row(k);
                        let sims: Vec<f64> = (0..embeddings.rows())
                            .map(|i| dot(mu, embeddings.row(i)))
                            .collect();
                        top_indices(&sims, take)
                    })
                    .collect()
            })
            .collect();
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Indices of the `n` largest values, descending, ties by lower index.
fn top_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

/// Per-class prototype matrices recorded on a tape.
#[derive(Clone, Debug)]
pub struct BankVars {
    pub classes: Vec<Var>,
}

/// `W_Q`, `W_K`: `d_p x d'` projections used to match samples to prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub proj_dim: usize,
}

impl AttentionParams {
    pub fn init(store: &mut ParamStore, dim: usize, proj_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            wq: store.add_uniform("att.wq", dim, proj_dim, dim, rng),
            wk: store.add_uniform("att.wk", dim, proj_dim, dim, rng),
            proj_dim,
        }
    }

    /// Records `softmax((ẐW_Q)(M^(c)W_K)ᵀ / √d')`, a `B x K` matrix.
    pub fn weights_on(&self, tape: &mut Tape, p: &Bound, z: Var, protos: Var) -> Result<Var> {
        let q = tape.matmul(z, p.var(self.wq))?;
        let k = tape.matmul(protos, p.var(self.wk))?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scaled = tape.scale(scores, 1.0 / (self.proj_dim as f64).sqrt())?;
        Ok(tape.softmax_rows(scaled)?)
    }

    /// Assignment weights of every row of `z` over the prototypes of class `c`.
    pub fn assignment_weights(
        &self,
        store: &ParamStore,
        z: &Tensor,
        bank: &PrototypeBank,
        c: usize,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let zv = tape.constant(z.clone());
        let mv = tape.constant(bank.class(c).clone());
        let w = self.weights_on(&mut tape, &p, zv, mv)?;
        Ok(tape.value(w).clone())
    }
}

/// 0/1 mask keeping the `n` largest entries of every row (ties by lower index).
pub fn top_n_mask(weights: &Tensor, n: usize) -> Tensor {
    let (rows, cols) = weights.shape();
    let mut mask = vec![0.0; rows * cols];
    for r in 0..rows {
        for k in top_indices(weights.row(r), n) {
            mask[r * cols + k] = 1.0;
        }
    }
    Tensor::new(rows, cols, mask).expect("finite mask")
}

fn check_prune_count(n: usize, k: usize) -> Result<()> {
    if n == 0 || n > k {
        return Err(Error::Config(format!("pruning count {n} outside [1, {k}]")));
    }
    Ok(())
}

/// Records top-`n` pruning: the mask is fixed from current values and the
/// survivors are rescaled to sum to one. `n = K` is the identity.
pub fn prune_on(tape: &mut Tape, w: Var, n: usize) -> Result<Var> {
    let k = tape.value(w).cols();
    check_prune_count(n, k)?;
    if n == k {
        return Ok(w);
    }
    let mask = tape.constant(top_n_mask(tape.value(w), n));
    let kept = tape.mul(w, mask)?;
    Ok(tape.normalize_row_sums(kept)?)
}

/// Keeps the `n` largest weights per row and rescales them to sum to one.
pub fn prune_weights(weights: &Tensor, n: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = tape.constant(weights.clone());
    let out = prune_on(&mut tape, w, n)?;
    Ok(tape.value(out).clone())
}

/// Records the EMA prototype update. Classes without samples in the batch
/// keep their current variable; `alpha = 1` returns the bank unchanged.
pub fn ema_update_on(
    tape: &mut Tape,
    bank: &BankVars,
    z: Var,
    labels: &[usize],
    pruned: &[Var],
    alpha: f64,
) -> Result<BankVars> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("EMA rate {alpha} outside [0, 1]")));
    }
    let batch = tape.value(z).rows();
    if labels.len() != batch || pruned.len() != bank.classes.len() {
        return Err(Error::Invalid(format!(
            "EMA update got {} labels and {} weight matrices for {} samples and {} classes",
            labels.len(),
            pruned.len(),
            batch,
            bank.classes.len()
        )));
    }
    if alpha == 1.0 {
        return Ok(bank.clone());
    }
    let mut classes = Vec::with_capacity(bank.classes.len());
    for (c, (&mu, &w)) in bank.classes.iter().zip(pruned).enumerate() {
        if !labels.contains(&c) {
            classes.push(mu);
            continue;
        }
        let k = tape.value(w).cols();
        let mut ind = vec![0.0; batch * k];
        for (i, &y) in labels.iter().enumerate() {
            if y == c {
                ind[i * k..(i + 1) * k].fill(1.0);
            }
        }
        let ind = tape.constant(Tensor::new(batch, k, ind)?);
        let own = tape.mul(w, ind)?;
        let own_t = tape.transpose(own)?;
        let pull = tape.matmul(own_t, z)?;
        let keep = tape.scale(mu, alpha)?;
        let pull = tape.scale(pull, 1.0 - alpha)?;
        let mixed = tape.add(keep, pull)?;
        classes.push(tape.l2_normalize_rows(mixed)?);
    }
    Ok(BankVars { classes })
}

/// Records class probabilities (`B x C`):
/// `p_c ∝ max_k w_k^(c) exp(μ_k^(c)ᵀẑ / τ)`.
///
/// Similarities are shifted by their per-sample maximum (a constant) before
/// exponentiation; the shift cancels in the normalization.
pub fn class_probabilities_on(
    tape: &mut Tape,
    bank: &BankVars,
    weights: &[Var],
    z: Var,
    tau: f64,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    let mut sims = Vec::with_capacity(bank.classes.len());
    for &mu in &bank.classes {
        let mu_t = tape.transpose(mu)?;
        sims.push(tape.matmul(z, mu_t)?);
    }
    let shifts = row_max(tape, &sims);
    let mut best = Vec::with_capacity(sims.len());
    for (&s, &w) in sims.iter().zip(weights) {
        let shifted = subtract_row_constant(tape, s, &shifts)?;
        let scaled = tape.scale(shifted, 1.0 / tau)?;
        let e = tape.exp(scaled)?;
        let weighted = tape.mul(w, e)?;
        best.push(tape.max(weighted, Axis::Cols)?);
    }
    let scores = tape.concat_cols(&best)?;
    Ok(tape.normalize_row_sums(scores)?)
}

/// Per-row maximum over the values of several same-height matrices.
pub(crate) fn row_max(tape: &Tape, parts: &[Var]) -> Vec<f64> {
    let rows = tape.value(parts[0]).rows();
    (0..rows)
        .map(|r| {
            parts
                .iter()
                .flat_map(|p| tape.value(*p).row(r).iter().copied())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// `x - shift_r` on every row `r`, with the shift treated as a constant.
pub(crate) fn subtract_row_constant(tape: &mut Tape, x: Var, shifts: &[f64]) -> Result<Var> {
    let (rows, cols) = tape.value(x).shape();
    let data = (0..rows * cols).map(|i| shifts[i / cols]).collect();
    let c = tape.constant(Tensor::new(rows, cols, data)?);
    Ok(tape.sub(x, c)?)
}

/// Class probabilities for one embedding `ẑ` given `C x K` weights.
pub fn class_probabilities(
    bank: &PrototypeBank,
    weights: &Tensor,
    z: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    let (c, k) = (bank.num_classes(), bank.per_class());
    if weights.shape() != (c, k) || z.len() != bank.dim() {
        return Err(Error::Invalid(format!(
            "weights {:?} / embedding width {} do not match a bank of {c} x {k} x {}",
            weights.shape(),
            z.len(),
            bank.dim()
        )));
    }
    if let Some(class) = (0..c).find(|&r| weights.row(r).iter().all(|w| *w <= 0.0)) {
        return Err(Error::Invalid(format!(
            "class {class} has no positive assignment weight"
        )));
    }
    let mut tape = Tape::new();
    let vars = bank.bind(&mut tape);
    let zv = tape.constant(Tensor::new(1, z.len(), z.to_vec())?);
    let w: Vec<Var> = (0..c)
        .map(|r| tape.constant(weights.slice_rows(r, r + 1)))
        .collect();
    let p = class_probabilities_on(&mut tape, &vars, &w, zv, tau)?;
    Ok(tape.value(p).data().to_vec())
}
