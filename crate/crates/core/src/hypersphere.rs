//! Projector MLP followed by L2 normalization onto the unit sphere.

use rand::Rng;

use crate::ndtensor::{Tape, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::Result;

/// Two affine maps `d → ⌊d/2⌋ → d_p` with ReLU between.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub out_dim: usize,
}

/// Hidden width of the projector for encoder width `d`.
pub fn projector_hidden(d: usize) -> usize {
    (d / 2).max(1)
}

impl ProjectorParams {
    pub fn init(store: &mut ParamStore, d: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let hidden = projector_hidden(d);
        Self {
            w1: store.add_uniform("proj.w1", d, hidden, d, rng),
            b1: store.add_uniform("proj.b1", 1, hidden, d, rng),
            w2: store.add_uniform("proj.w2", hidden, out_dim, hidden, rng),
            b2: store.add_uniform("proj.b2", 1, out_dim, hidden, rng),
            out_dim,
        }
    }

    /// Records `z̃ = Proj(z)` (rows are samples).
    pub fn raw_on(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        let h = tape.matmul(z, p.var(self.w1))?;
        let h = tape.add_row_bias(h, p.var(self.b1))?;
        let h = tape.relu(h)?;
        let out = tape.matmul(h, p.var(self.w2))?;
        Ok(tape.add_row_bias(out, p.var(self.b2))?)
    }

    /// Records `ẑ = z̃ / ‖z̃‖₂`.
    pub fn project_on(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        let raw = self.raw_on(tape, p, z)?;
        Ok(tape.l2_normalize_rows(raw)?)
    }

    /// Projects each row of `z` onto the unit sphere.
    pub fn project(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let zv = tape.constant(z.clone());
        let out = self.project_on(&mut tape, &p, zv)?;
        Ok(tape.value(out).clone())
    }
}
