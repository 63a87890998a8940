//! Objective terms: invariant prototype matching (`L_IPM`), prototype
//! separation (`L_PS`), classification (`L_C`) and their combination
//! `L = L_C + L_PS + β·L_IPM`.

use crate::ndtensor::{Axis, Tape, Tensor, Var};
use crate::protobank::{row_max, subtract_row_constant, BankVars, PrototypeBank};
use crate::{Error, Result};

/// Probabilities below this value are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of `L_IPM`.
    pub beta: f64,
    /// Temperature `τ` (inverse concentration).
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 0.1, tau: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta {} must be non-negative", self.beta)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau {tau} must be positive")));
    }
    Ok(())
}

/// Records `L_IPM`: for each sample, minus the log of the share of
/// `exp(ẑᵀμ/τ)` mass held by the prototypes of its own class, averaged over
/// the batch.
pub fn loss_ipm_on(
    tape: &mut Tape,
    bank: &BankVars,
    z: Var,
    labels: &[usize],
    tau: f64,
) -> Result<Var> {
    check_tau(tau)?;
    let batch = tape.value(z).rows();
    if batch == 0 || labels.len() != batch {
        return Err(Error::Invalid(format!(
            "L_IPM needs a nonempty batch with one label per sample ({} labels, {batch} rows)",
            labels.len()
        )));
    }
    let mut sims = Vec::with_capacity(bank.classes.len());
    for &mu in &bank.classes {
        let mu_t = tape.transpose(mu)?;
        sims.push(tape.matmul(z, mu_t)?);
    }
    let k = tape.value(sims[0]).cols();
    let shifts = row_max(tape, &sims);
    let all = tape.concat_cols(&sims)?;
    let total_cols = tape.value(all).cols();
    let shifted = subtract_row_constant(tape, all, &shifts)?;
    let scaled = tape.scale(shifted, 1.0 / tau)?;
    let e = tape.exp(scaled)?;

    let mut mask = vec![0.0; batch * total_cols];
    for (i, &y) in labels.iter().enumerate() {
        mask[i * total_cols + y * k..i * total_cols + (y + 1) * k].fill(1.0);
    }
    let mask = tape.constant(Tensor::new(batch, total_cols, mask)?);
    let own = tape.mul(e, mask)?;
    let numer = tape.sum(own, Axis::Cols)?;
    let denom = tape.sum(e, Axis::Cols)?;
    let log_n = tape.log(numer)?;
    let log_d = tape.log(denom)?;
    let ratio = tape.sub(log_n, log_d)?;
    let total = tape.sum(ratio, Axis::All)?;
    Ok(tape.scale(total, -1.0 / batch as f64)?)
}

/// Records `L_PS`: for every prototype, minus the log of the ratio between
/// the `exp(μᵀμ'/τ)` mass of its same-class siblings and that of all
/// prototypes of other classes, averaged over the `C·K` prototypes.
///
/// With `K = 1` the sibling sum is empty; the numerator falls back to the
/// self-similarity `exp(1/τ)`.
pub fn loss_ps_on(tape: &mut Tape, bank: &BankVars, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let classes = bank.classes.len();
    let k = tape.value(bank.classes[0]).rows();
    if k == 1 {
        log::warn!("L_PS with one prototype per class: using exp(1/tau) as the sibling term");
    }
    let n = classes * k;
    let all = tape.concat_rows(&bank.classes)?;
    let all_t = tape.transpose(all)?;
    let gram = tape.matmul(all, all_t)?;
    let shifts = row_max(tape, &[gram]);
    let shifted = subtract_row_constant(tape, gram, &shifts)?;
    let scaled = tape.scale(shifted, 1.0 / tau)?;
    let e = tape.exp(scaled)?;

    let mut cross = vec![0.0; n * n];
    let mut same = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            if a / k != b / k {
                cross[a * n + b] = 1.0;
            } else if a != b {
                same[a * n + b] = 1.0;
            }
        }
    }
    let cross = tape.constant(Tensor::new(n, n, cross)?);
    let across = tape.mul(e, cross)?;
    let denom = tape.sum(across, Axis::Cols)?;
    let log_d = tape.log(denom)?;
    let log_n = if k == 1 {
        let self_sim = shifts.iter().map(|m| (1.0 - m) / tau).collect();
        tape.constant(Tensor::new(n, 1, self_sim)?)
    } else {
        let same = tape.constant(Tensor::new(n, n, same)?);
        let within = tape.mul(e, same)?;
        let numer = tape.sum(within, Axis::Cols)?;
        tape.log(numer)?
    };
    let ratio = tape.sub(log_n, log_d)?;
    let total = tape.sum(ratio, Axis::All)?;
    Ok(tape.scale(total, -1.0 / n as f64)?)
}

/// Records `L_C = −(1/(B·C)) Σ_i log p_i[y_i]`. Returns the loss and the
/// number of probabilities that had to be clamped at [`PROB_FLOOR`].
pub fn loss_cls_on(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<(Var, usize)> {
    let (batch, classes) = tape.value(probs).shape();
    if batch == 0 || labels.len() != batch {
        return Err(Error::Invalid(format!(
            "L_C needs one label per probability row ({} labels, {batch} rows)",
            labels.len()
        )));
    }
    let mut onehot = vec![0.0; batch * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Invalid(format!("label {y} out of range for {classes} classes")));
        }
        onehot[i * classes + y] = 1.0;
    }
    let onehot = tape.constant(Tensor::new(batch, classes, onehot)?);
    let picked = tape.mul(probs, onehot)?;
    let p_true = tape.sum(picked, Axis::Cols)?;
    let clamped = tape.value(p_true).data().iter().filter(|p| **p <= PROB_FLOOR).count();
    if clamped > 0 {
        log::warn!("{clamped} true-class probabilities clamped at {PROB_FLOOR:e}");
    }
    let p_true = tape.clamp_min(p_true, PROB_FLOOR)?;
    let logp = tape.log(p_true)?;
    let total = tape.sum(logp, Axis::All)?;
    let loss = tape.scale(total, -1.0 / (batch * classes) as f64)?;
    Ok((loss, clamped))
}

/// Records `L_C + L_PS + β·L_IPM`.
pub fn total_loss_on(tape: &mut Tape, cls: Var, ps: Var, ipm: Var, beta: f64) -> Result<Var> {
    let weighted = tape.scale(ipm, beta)?;
    let sum = tape.add(cls, ps)?;
    Ok(tape.add(sum, weighted)?)
}

pub fn loss_ipm(bank: &PrototypeBank, z: &Tensor, labels: &[usize], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = bank.bind(&mut tape);
    let zv = tape.constant(z.clone());
    let l = loss_ipm_on(&mut tape, &vars, zv, labels, tau)?;
    Ok(tape.value(l).item())
}

pub fn loss_ps(bank: &PrototypeBank, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = bank.bind(&mut tape);
    let l = loss_ps_on(&mut tape, &vars, tau)?;
    Ok(tape.value(l).item())
}

/// Returns `L_C` and the clamp count.
pub fn loss_cls(probs: &Tensor, labels: &[usize]) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let (l, clamped) = loss_cls_on(&mut tape, p, labels)?;
    Ok((tape.value(l).item(), clamped))
}

pub fn total_loss(cls: f64, ps: f64, ipm: f64, beta: f64) -> f64 {
    cls + ps + beta * ipm
}
