//! Finite-difference oracles shared by the gradient tests and the
//! acceptance report.

use std::sync::Arc;

use mphil::encoder::GraphInput;
use mphil::losses::{loss_cls_on, loss_ipm_on, loss_ps_on, total_loss_on};
use mphil::ndtensor::{central_difference, max_relative_error, Axis, Tape, Tensor, Var};
use mphil::params::{Bound, ParamStore};
use mphil::protobank::{class_probabilities_on, ema_update_on, prune_on, AttentionParams, BankVars};
use mphil::trainer::{Model, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{random_graph, rng, uniform, unit_rows};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= TOLERANCE
    }
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Worst relative error of `d/dx sum(build(x) * r)` for a fixed random `r`.
fn compare(inputs: &[Tensor], weight_seed: u64, build: &Build) -> f64 {
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let (r, c) = tape.value(out).shape();
        uniform(&mut rng(weight_seed), r, c, -1.0, 1.0)
    };
    let scalar = |tape: &mut Tape, vars: &[Var]| {
        let out = build(tape, vars);
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod, Axis::All).unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = scalar(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let numeric = central_difference(inputs, STEP, |xs| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = scalar(&mut t, &vs);
        t.value(l).item()
    });
    vars.iter()
        .zip(&numeric)
        .map(|(v, n)| {
            let zero = Tensor::zeros(n.rows(), n.cols());
            max_relative_error(grads.get(*v).unwrap_or(&zero), n)
        })
        .fold(0.0, f64::max)
}

fn run(
    name: &'static str,
    instances: usize,
    seed: u64,
    gen: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Var + 'static,
) -> Check {
    let mut r = rng(seed);
    let worst = (0..instances)
        .map(|i| {
            let inputs = gen(&mut r);
            compare(&inputs, seed.wrapping_mul(1000) + i as u64, &build)
        })
        .fold(0.0, f64::max);
    Check {
        name,
        instances,
        worst,
    }
}

fn dims(r: &mut ChaCha8Rng) -> (usize, usize) {
    (r.gen_range(1..5), r.gen_range(1..5))
}

/// Values bounded away from zero, so kinks at 0 are never straddled.
fn away_from_zero(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v = r.gen_range(0.1..2.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Entries pairwise at least 0.05 apart (for max reductions).
fn distinct(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let n = rows * cols;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 0.05 * n as f64).collect();
    for i in (1..n).rev() {
        vals.swap(i, r.gen_range(0..=i));
    }
    Tensor::new(rows, cols, vals).unwrap()
}

/// Every differentiable tape operation.
pub fn op_checks(instances: usize, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    out.push(run("matmul", instances, seed, |r| {
        let (m, k) = dims(r);
        let n = r.gen_range(1..5);
        vec![uniform(r, m, k, -1.0, 1.0), uniform(r, k, n, -1.0, 1.0)]
    }, |t, v| t.matmul(v[0], v[1]).unwrap()));
    for (name, op) in [
        ("add", 0usize),
        ("sub", 1),
        ("mul", 2),
    ] {
        out.push(run(name, instances, seed + 1 + op as u64, |r| {
            let (m, n) = dims(r);
            vec![uniform(r, m, n, -2.0, 2.0), uniform(r, m, n, -2.0, 2.0)]
        }, move |t, v| match op {
            0 => t.add(v[0], v[1]).unwrap(),
            1 => t.sub(v[0], v[1]).unwrap(),
            _ => t.mul(v[0], v[1]).unwrap(),
        }));
    }
    out.push(run("add_row_bias", instances, seed + 4, |r| {
        let (m, n) = dims(r);
        vec![uniform(r, m, n, -1.0, 1.0), uniform(r, 1, n, -1.0, 1.0)]
    }, |t, v| t.add_row_bias(v[0], v[1]).unwrap()));
    out.push(run("scale", instances, seed + 5, |r| {
        let (m, n) = dims(r);
        vec![uniform(r, m, n, -1.0, 1.0)]
    }, |t, v| t.scale(v[0], -1.7).unwrap()));
    out.push(run("scale_by", instances, seed + 6, |r| {
        let (m, n) = dims(r);
        vec![uniform(r, m, n, -1.0, 1.0), uniform(r, 1, 1, -2.0, 2.0)]
    }, |t, v| t.scale_by(v[0], v[1]).unwrap()));
    out.push(run("sigmoid", instances, seed + 7, |r| {
        let (m, n) = dims(r);
        vec![uniform(r, m, n, -4.0, 4.0)]
    }, |t, v| t.sigmoid(v[0]).unwrap()));
    out.push(run("relu", instances, seed + 8, |r| {
        let (m, n) = dims(r);
        vec![away_from_zero(r, m, n)]
    }, |t, v| t.relu(v[0]).unwrap()));
    out.push(run("exp", instances, seed + 9, |r| {
        let (m, n) = dims(r);
        vec![uniform(r, m, n, -3.0, 3.0)]
    }, |t, v| t.exp(v[0]).unwrap()));
    out.push(run("log", instances, seed + 10, |r| {
        let (m, n) = dims(r);
        vec![uniform(r, m, n, 0.2, 5.0)]
    }, |t, v| t.log(v[0]).unwrap()));
    out.push(run("neg", instances, seed + 11, |r| {
        let (m, n) = dims(r);
        vec![uniform(r, m, n, -1.0, 1.0)]
    }, |t, v| t.neg(v[0]).unwrap()));
    out.push(run("softmax_rows", instances, seed + 12, |r| {
        let (m, n) = dims(r);
        vec![uniform(r, m, n, -3.0, 3.0)]
    }, |t, v| t.softmax_rows(v[0]).unwrap()));
    out.push(run("l2_normalize_rows", instances, seed + 13, |r| {
        let (m, n) = dims(r);
        vec![away_from_zero(r, m, n)]
    }, |t, v| t.l2_normalize_rows(v[0]).unwrap()));
    out.push(run("normalize_row_sums", instances, seed + 14, |r| {
        let (m, n) = dims(r);
        vec![uniform(r, m, n, 0.1, 2.0)]
    }, |t, v| t.normalize_row_sums(v[0]).unwrap()));
    out.push(run("segment_sum", instances, seed + 15, |r| {
        let rows = r.gen_range(1..7);
        let cols = r.gen_range(1..4);
        vec![uniform(r, rows, cols, -1.0, 1.0)]
    }, |t, v| {
        let rows = t.value(v[0]).rows();
        let ids: Arc<[usize]> = (0..rows).map(|i| (i * 7 + 3) % 3).collect();
        t.segment_sum(v[0], ids, 3).unwrap()
    }));
    out.push(run("gather_rows", instances, seed + 16, |r| {
        let rows = r.gen_range(1..5);
        let cols = r.gen_range(1..4);
        vec![uniform(r, rows, cols, -1.0, 1.0)]
    }, |t, v| {
        let rows = t.value(v[0]).rows();
        let idx: Arc<[usize]> = (0..6).map(|i| (i * 5 + 1) % rows).collect();
        t.gather_rows(v[0], idx).unwrap()
    }));
    for (name, axis, kind) in [
        ("sum_rows", Axis::Rows, 0usize),
        ("sum_cols", Axis::Cols, 0),
        ("sum_all", Axis::All, 0),
        ("mean_rows", Axis::Rows, 1),
        ("mean_cols", Axis::Cols, 1),
        ("mean_all", Axis::All, 1),
        ("max_rows", Axis::Rows, 2),
        ("max_cols", Axis::Cols, 2),
        ("max_all", Axis::All, 2),
    ] {
        out.push(run(name, instances, seed + 17, |r| {
            let (m, n) = dims(r);
            vec![distinct(r, m, n)]
        }, move |t, v| match kind {
            0 => t.sum(v[0], axis).unwrap(),
            1 => t.mean(v[0], axis).unwrap(),
            _ => t.max(v[0], axis).unwrap(),
        }));
    }
    out.push(run("transpose", instances, seed + 18, |r| {
        let (m, n) = dims(r);
        vec![uniform(r, m, n, -1.0, 1.0)]
    }, |t, v| t.transpose(v[0]).unwrap()));
    out.push(run("concat_rows", instances, seed + 19, |r| {
        let (n, a, b) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
        vec![uniform(r, a, n, -1.0, 1.0), uniform(r, b, n, -1.0, 1.0)]
    }, |t, v| t.concat_rows(v).unwrap()));
    out.push(run("concat_cols", instances, seed + 20, |r| {
        let (m, a, b) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
        vec![uniform(r, m, a, -1.0, 1.0), uniform(r, m, b, -1.0, 1.0)]
    }, |t, v| t.concat_cols(v).unwrap()));
    out.push(run("clamp_min", instances, seed + 21, |r| {
        let (m, n) = dims(r);
        vec![away_from_zero(r, m, n)]
    }, |t, v| t.clamp_min(v[0], 0.0).unwrap()));
    out
}

/// Random instance sizes for the loss checks: `(B, C, K, d)`.
fn loss_dims(r: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (r.gen_range(2..6), r.gen_range(2..4), r.gen_range(1..4), r.gen_range(2..6))
}

fn bank_vars(_: &mut Tape, v: &[Var]) -> BankVars {
    BankVars { classes: v.to_vec() }
}

fn labels_for(batch: usize, classes: usize) -> Vec<usize> {
    (0..batch).map(|i| (i * 5 + 1) % classes).collect()
}

/// The three losses, the classifier, the EMA update, attention and pruning.
pub fn loss_checks(instances: usize, seed: u64) -> Vec<Check> {
    let tau = 0.5;
    let mut out = Vec::new();
    let mut r = rng(seed);
    let mut ipm = Check { name: "loss_ipm", instances, worst: 0.0 };
    let mut ps = Check { name: "loss_ps", instances, worst: 0.0 };
    let mut cls = Check { name: "loss_cls", instances, worst: 0.0 };
    let mut probs = Check { name: "class_probabilities", instances, worst: 0.0 };
    let mut ema = Check { name: "ema_update", instances, worst: 0.0 };
    let mut att = Check { name: "attention_weights", instances, worst: 0.0 };
    let mut prune = Check { name: "prune", instances, worst: 0.0 };
    let mut total = Check { name: "total_loss", instances, worst: 0.0 };
    for i in 0..instances {
        let ws = seed * 7919 + i as u64;
        let (b, c, k, d) = loss_dims(&mut r);
        let labels = labels_for(b, c);
        let z = unit_rows(&mut r, b, d);
        let protos: Vec<Tensor> = (0..c).map(|_| unit_rows(&mut r, k, d)).collect();
        let weights: Vec<Tensor> = (0..c).map(|_| uniform(&mut r, b, k, 0.1, 1.0)).collect();

        let mut inputs = vec![z.clone()];
        inputs.extend(protos.iter().cloned());
        let l = labels.clone();
        ipm.worst = ipm.worst.max(compare(&inputs, ws, &move |t, v| {
            let bank = bank_vars(t, &v[1..]);
            loss_ipm_on(t, &bank, v[0], &l, tau).unwrap()
        }));
        let ks = k.max(2);
        let pk: Vec<Tensor> = (0..c).map(|_| unit_rows(&mut r, ks, d)).collect();
        ps.worst = ps.worst.max(compare(&pk, ws, &move |t, v| {
            let bank = bank_vars(t, v);
            loss_ps_on(t, &bank, tau).unwrap()
        }));
        let p = uniform(&mut r, b, c, 0.05, 1.0);
        let l = labels.clone();
        cls.worst = cls.worst.max(compare(&[p], ws, &move |t, v| loss_cls_on(t, v[0], &l).unwrap().0));

        let mut inputs = vec![z.clone()];
        inputs.extend(protos.iter().cloned());
        inputs.extend(weights.iter().cloned());
        probs.worst = probs.worst.max(compare(&inputs, ws, &move |t, v| {
            let bank = bank_vars(t, &v[1..=c]);
            class_probabilities_on(t, &bank, &v[c + 1..], v[0], tau).unwrap()
        }));
        let l = labels.clone();
        ema.worst = ema.worst.max(compare(&inputs, ws, &move |t, v| {
            let bank = bank_vars(t, &v[1..=c]);
            let updated = ema_update_on(t, &bank, v[0], &l, &v[c + 1..], 0.7).unwrap();
            t.concat_rows(&updated.classes).unwrap()
        }));

        // the store only fixes the parameter layout (wq, wk)
        let dp = (d / 2).max(1);
        let mut store = ParamStore::new();
        let params = AttentionParams::init(&mut store, d, dp, &mut r);
        let wq = store.get(params.wq).clone();
        let wk = store.get(params.wk).clone();
        let mu = protos[0].clone();
        att.worst = att.worst.max(compare(&[z.clone(), mu, wq, wk], ws, &move |t, v| {
            let bound = Bound::from_vars(vec![v[2], v[3]]);
            params.weights_on(t, &bound, v[0], v[1]).unwrap()
        }));

        let n = r.gen_range(1..=k);
        prune.worst = prune.worst.max(compare(&[distinct_positive(&mut r, b, k)], ws, &move |t, v| {
            prune_on(t, v[0], n).unwrap()
        }));

        let mut inputs = vec![z.clone()];
        inputs.extend(protos.iter().cloned());
        inputs.extend(weights.iter().cloned());
        let l = labels.clone();
        total.worst = total.worst.max(compare(&inputs, ws, &move |t, v| {
            let bank = bank_vars(t, &v[1..=c]);
            let w = &v[c + 1..];
            let updated = ema_update_on(t, &bank, v[0], &l, w, 0.9).unwrap();
            let p = class_probabilities_on(t, &updated, w, v[0], tau).unwrap();
            let (lc, _) = loss_cls_on(t, p, &l).unwrap();
            let lp = if k > 1 {
                loss_ps_on(t, &updated, tau).unwrap()
            } else {
                t.constant(Tensor::scalar(0.0))
            };
            let li = loss_ipm_on(t, &updated, v[0], &l, tau).unwrap();
            total_loss_on(t, lc, lp, li, 0.3).unwrap()
        }));
    }
    out.extend([ipm, ps, cls, probs, ema, att, prune, total]);
    out
}

fn distinct_positive(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let d = distinct(r, rows, cols);
    let min = d.data().iter().cloned().fold(f64::INFINITY, f64::min);
    Tensor::new(rows, cols, d.data().iter().map(|x| x - min + 0.2).collect()).unwrap()
}

/// The batch objective of a small model against finite differences over
/// every trainable parameter. Returns the worst relative error.
pub fn model_check(config: &TrainConfig, graphs: usize, nodes: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let in_dim = 3;
    let model = Model::new(config, in_dim, 2, &mut r).unwrap();
    let batch: Vec<GraphInput> = (0..graphs)
        .map(|i| GraphInput::from(&random_graph(&mut r, nodes, in_dim, i % 2)))
        .collect();
    let labels: Vec<usize> = (0..graphs).map(|i| i % 2).collect();

    let mut m = model.clone();
    let (grads, _) = m.batch_gradients(&batch, &labels, |_| {}).unwrap();
    let ids: Vec<_> = model.store.ids().collect();
    let inputs: Vec<Tensor> = ids.iter().map(|id| model.store.get(*id).clone()).collect();
    let numeric = central_difference(&inputs, STEP, |xs| {
        let mut m = model.clone();
        for (id, x) in ids.iter().zip(xs) {
            m.store.set(*id, x.clone()).unwrap();
        }
        m.batch_gradients(&batch, &labels, |_| {}).unwrap().1.total
    });
    ids.iter()
        .zip(&numeric)
        .map(|(id, n)| {
            let zero = Tensor::zeros(n.rows(), n.cols());
            max_relative_error(grads.get(*id).unwrap_or(&zero), n)
        })
        .fold(0.0, f64::max)
}
