//! Dense 2-D tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is a plain value. Computation happens on a [`Tape`]: leaves
//! are recorded with [`Tape::param`] (trainable) or [`Tape::constant`], each
//! primitive appends a node, and [`Tape::backward`] returns the gradient of
//! a scalar with respect to every trainable leaf.
//!
//! Broadcasting is limited to [`Tape::add_row_bias`]; every other shape
//! mismatch is an error.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, max_relative_error};
pub use tape::{Axis, Gradients, Reduce, Tape, Unary, Var, EPS_NORM};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength { len: usize, rows: usize, cols: usize },
    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("log of non-positive entry {value} at ({row}, {col})")]
    Domain { row: usize, col: usize, value: f64 },
    #[error("row {row} is degenerate (norm {norm:e}) and cannot be normalized")]
    DegenerateRow { row: usize, norm: f64 },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("reduction over an empty axis")]
    EmptyAxis,
    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    /// Runs `f` on a fresh tape with `inputs` as trainable leaves and checks the
    /// analytic gradient of the scalar output against central differences.
    fn grad_check(
        inputs: &[Tensor],
        f: impl Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
    ) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        let grads = tape.backward(out).unwrap();
        let eval = |xs: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
            let out = f(&mut tape, &vars).unwrap();
            tape.value(out).item()
        };
        let numeric = central_difference(inputs, 1e-5, eval);
        vars.iter()
            .zip(&numeric)
            .map(|(v, n)| max_relative_error(grads.get(*v).unwrap(), n))
            .fold(0.0, f64::max)
    }

    #[test]
    fn rejects_non_finite_and_bad_length() {
        assert!(matches!(
            Tensor::new(1, 2, vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            Tensor::new(2, 2, vec![1.0]),
            Err(TensorError::DataLength { .. })
        ));
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.constant(Tensor::identity(2));
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let col = tape.constant(t(&[&[0.0], &[1.0]]));
        let z = tape.matmul(x, col).unwrap();
        assert_eq!(tape.value(z), &t(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(err, TensorError::Shape { op: "matmul", .. }));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 5, 4);
        let b = random(&mut rng, 4, 3);
        let err = grad_check(&[a, b], |tp, v| {
            let c = tp.matmul(v[0], v[1])?;
            tp.sum(c, Axis::All)
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn unary_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[0.0, -3.0, 3.0]]));
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(s).get(0, 0), 0.5);
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 3.0]);
        let n = tape.neg(x).unwrap();
        assert_eq!(tape.value(n).data(), &[-0.0, 3.0, -3.0]);
    }

    #[test]
    fn log_domain_error_names_index() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[1.0, 2.0], &[0.5, -1.0]]));
        let err = tape.log(x).unwrap_err();
        assert_eq!(
            err,
            TensorError::Domain {
                row: 1,
                col: 1,
                value: -1.0
            }
        );
    }

    #[test]
    fn exp_overflow_is_reported() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[1000.0]]));
        assert!(matches!(
            tape.exp(x),
            Err(TensorError::NonFinite { op: "exp", .. })
        ));
    }

    #[test]
    fn exp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 3, 3);
        let w = random(&mut rng, 3, 3);
        let err = grad_check(&[x, w], |tp, v| {
            let e = tp.exp(v[0])?;
            let m = tp.mul(e, v[1])?;
            tp.sum(m, Axis::All)
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn softmax_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[2.0, 2.0, 2.0]]));
        let y = tape.softmax_rows(x).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(t(&[&[0.0, 3f64.ln()]]));
        let y = tape.softmax_rows(x).unwrap();
        assert!((tape.value(y).get(0, 0) - 0.25).abs() < 1e-15);
        assert!((tape.value(y).get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_values_and_degenerate_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[3.0, 4.0]]));
        let y = tape.l2_normalize_rows(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.6, 0.8]);
        let yy = tape.l2_normalize_rows(y).unwrap();
        assert!(tape.value(yy).max_abs_diff(tape.value(y)) < 1e-12);

        let z = tape.constant(t(&[&[1.0, 0.0], &[0.0, 1e-13]]));
        assert!(matches!(
            tape.l2_normalize_rows(z),
            Err(TensorError::DegenerateRow { row: 1, .. })
        ));
    }

    #[test]
    fn l2_normalize_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 4, 6);
        let w = random(&mut rng, 4, 6);
        let err = grad_check(&[x, w], |tp, v| {
            let n = tp.l2_normalize_rows(v[0])?;
            let m = tp.mul(n, v[1])?;
            tp.sum(m, Axis::All)
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn segment_sum_values_and_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[1.0], &[2.0], &[3.0]]));
        let y = tape.segment_sum(x, Arc::from(vec![0, 1, 0]), 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 2.0]);

        let all = tape.segment_sum(x, Arc::from(vec![0, 0, 0]), 1).unwrap();
        assert_eq!(tape.value(all).data(), &[6.0]);

        let empty = tape.segment_sum(x, Arc::from(vec![0, 0, 0]), 3).unwrap();
        assert_eq!(tape.value(empty).data(), &[6.0, 0.0, 0.0]);

        assert!(matches!(
            tape.segment_sum(x, Arc::from(vec![0, 5, 0]), 2),
            Err(TensorError::IndexOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn segment_sum_matches_loop_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let e = rng.gen_range(1..30);
            let segs = rng.gen_range(1..8);
            let d = rng.gen_range(1..5);
            let x = random(&mut rng, e, d);
            let ids: Vec<usize> = (0..e).map(|_| rng.gen_range(0..segs)).collect();
            let mut oracle = vec![vec![0.0; d]; segs];
            for (r, &s) in ids.iter().enumerate() {
                for c in 0..d {
                    oracle[s][c] += x.get(r, c);
                }
            }
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let y = tape.segment_sum(xv, Arc::from(ids), segs).unwrap();
            assert_eq!(tape.value(y), &Tensor::from_rows(&oracle).unwrap());
        }
    }

    #[test]
    fn reductions_and_max_tie_rule() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[&[2.0, 4.0]]));
        let m = tape.mean(x, Axis::All).unwrap();
        assert_eq!(tape.value(m).item(), 3.0);

        let y = tape.param(t(&[&[1.0, 5.0, 5.0]]));
        let mx = tape.max(y, Axis::Cols).unwrap();
        assert_eq!(tape.value(mx).item(), 5.0);
        let g = tape.backward(mx).unwrap();
        assert_eq!(g.get(y).unwrap().data(), &[0.0, 1.0, 0.0]);

        let empty = tape.constant(Tensor::zeros(0, 3));
        assert_eq!(tape.sum(empty, Axis::Rows), Err(TensorError::EmptyAxis));
    }

    #[test]
    fn mean_gradient_is_one_over_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let m = tape.mean(v, Axis::All).unwrap();
        let g = tape.backward(m).unwrap();
        assert!(g.get(v).unwrap().data().iter().all(|d| *d == 1.0 / 12.0));
        let err = grad_check(&[x], |tp, v| tp.mean(v[0], Axis::All));
        assert!(err < 1e-6);
    }

    #[test]
    fn backward_closed_forms() {
        let x = t(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let s = tape.sum(v, Axis::All).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap(), &Tensor::ones(2, 2));

        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq, Axis::All).unwrap();
        let g = tape.backward(s).unwrap();
        let expect: Vec<f64> = x.data().iter().map(|a| 2.0 * a).collect();
        assert_eq!(g.get(v).unwrap().data(), expect.as_slice());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::zeros(2, 1));
        assert_eq!(
            tape.backward(v).unwrap_err(),
            TensorError::NonScalarLoss { rows: 2, cols: 1 }
        );
    }

    #[test]
    fn two_consumers_sum_their_paths() {
        // f = sum(3x) + sum(exp(x)); df/dx = 3 + exp(x)
        let x = t(&[&[0.1, -0.4, 0.7]]);
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let a = tape.scale(v, 3.0).unwrap();
        let b = tape.exp(v).unwrap();
        let c = tape.add(a, b).unwrap();
        let s = tape.sum(c, Axis::All).unwrap();
        let g = tape.backward(s).unwrap();
        for (gv, xv) in g.get(v).unwrap().data().iter().zip(x.data()) {
            assert!((gv - (3.0 + xv.exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::ones(1, 2));
        let p = tape.param(Tensor::ones(1, 2));
        let m = tape.mul(c, p).unwrap();
        let s = tape.sum(m, Axis::All).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(p).is_some());
    }
}
