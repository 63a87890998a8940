//! Independent reference computations for the classifier, the EMA update
//! and permutation invariance.

use mphil::encoder::{EncoderConfig, EncoderParams, GraphInput, Readout};
use mphil::ndtensor::Tensor;
use mphil::params::ParamStore;
use mphil::protobank::{class_probabilities, PrototypeBank};
use mphil::trainer::{Model, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{random_graph, rng, uniform, unit_rows};

/// `p_c ∝ max_k w_ck exp(μ_ckᵀz / τ)` evaluated directly, no shifting.
pub fn direct_probabilities(protos: &[Vec<Vec<f64>>], weights: &[Vec<f64>], z: &[f64], tau: f64) -> Vec<f64> {
    let scores: Vec<f64> = protos
        .iter()
        .zip(weights)
        .map(|(class, w)| {
            class
                .iter()
                .zip(w)
                .map(|(mu, wk)| {
                    let s: f64 = mu.iter().zip(z).map(|(a, b)| a * b).sum();
                    wk * (s / tau).exp()
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let total: f64 = scores.iter().sum();
    scores.iter().map(|s| s / total).collect()
}

/// Softmax over single-prototype similarities.
pub fn single_prototype_probabilities(protos: &[Vec<f64>], z: &[f64], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = protos
        .iter()
        .map(|mu| (mu.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / tau).exp())
        .collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Worst absolute deviation from the direct evaluation over random banks
/// (`C ≤ 4, K ≤ 3, d ≤ 8`), and separately for `K = 1`.
pub fn classifier_oracle(instances: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut worst_single = 0.0f64;
    for _ in 0..instances {
        let c = r.gen_range(2..=4);
        let k = r.gen_range(1..=3);
        let d = r.gen_range(2..=8);
        let tau = r.gen_range(0.1..1.0);
        let classes: Vec<Tensor> = (0..c).map(|_| unit_rows(&mut r, k, d)).collect();
        let bank = PrototypeBank::from_classes(classes.clone()).unwrap();
        // some weights pruned to zero, but never a whole class
        let mut w = uniform(&mut r, c, k, 0.05, 1.0);
        let mut wdata = w.data().to_vec();
        for row in wdata.chunks_mut(k) {
            if k > 1 && r.gen_bool(0.5) {
                row[r.gen_range(0..k)] = 0.0;
            }
        }
        w = Tensor::new(c, k, wdata).unwrap();
        let z = unit_rows(&mut r, 1, d);
        let got = class_probabilities(&bank, &w, z.row(0), tau).unwrap();
        let protos: Vec<Vec<Vec<f64>>> = classes.iter().map(rows).collect();
        let expect = direct_probabilities(&protos, &rows(&w), z.row(0), tau);
        for (a, b) in got.iter().zip(&expect) {
            worst = worst.max((a - b).abs());
        }

        let single: Vec<Tensor> = (0..c).map(|_| unit_rows(&mut r, 1, d)).collect();
        let bank1 = PrototypeBank::from_classes(single.clone()).unwrap();
        let got = class_probabilities(&bank1, &Tensor::ones(c, 1), z.row(0), tau).unwrap();
        let mus: Vec<Vec<f64>> = single.iter().map(|t| t.row(0).to_vec()).collect();
        let expect = single_prototype_probabilities(&mus, z.row(0), tau);
        for (a, b) in got.iter().zip(&expect) {
            worst_single = worst_single.max((a - b).abs());
        }
    }
    (worst, worst_single)
}

/// Scalar EMA update: `μ ← Norm(α μ + (1 − α) Σ_{i: y_i = c} w_ik z_i)`.
pub fn reference_ema(
    protos: &[Vec<Vec<f64>>],
    z: &[Vec<f64>],
    labels: &[usize],
    weights: &[Vec<Vec<f64>>],
    alpha: f64,
) -> Vec<Vec<Vec<f64>>> {
    let mut out = protos.to_vec();
    for (c, class) in out.iter_mut().enumerate() {
        if !labels.contains(&c) {
            continue;
        }
        for (k, mu) in class.iter_mut().enumerate() {
            let mut mixed = Vec::with_capacity(mu.len());
            for j in 0..mu.len() {
                let mut pull = 0.0;
                for (i, zi) in z.iter().enumerate() {
                    let w = if labels[i] == c { weights[c][i][k] } else { 0.0 };
                    pull += w * zi[j];
                }
                mixed.push(mu[j] * alpha + pull * (1.0 - alpha));
            }
            let norm = mixed.iter().map(|v| v * v).sum::<f64>().sqrt();
            *mu = mixed.iter().map(|v| v / norm).collect();
        }
    }
    out
}

pub struct EmaReport {
    /// Instances whose update matched the scalar reference bit for bit.
    pub exact: usize,
    pub instances: usize,
    /// Whether `α = 1` returned every bank unchanged bit for bit.
    pub identity: bool,
    /// Worst `|‖μ‖ − 1|` after an update.
    pub worst_norm_error: f64,
}

pub fn ema_oracle(instances: usize, seed: u64) -> EmaReport {
    let mut r = rng(seed);
    let mut exact = 0;
    let mut identity = true;
    let mut worst_norm_error = 0.0f64;
    for i in 0..instances {
        let c = r.gen_range(2..=4);
        let k = r.gen_range(1..=3);
        let d = r.gen_range(2..=8);
        let b = r.gen_range(1..=8);
        // the default rate on most instances, random otherwise
        let alpha = if i % 2 == 0 { 0.99 } else { r.gen_range(0.0..1.0) };
        let classes: Vec<Tensor> = (0..c).map(|_| unit_rows(&mut r, k, d)).collect();
        let z = unit_rows(&mut r, b, d);
        let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..c)).collect();
        let weights: Vec<Tensor> = (0..c).map(|_| uniform(&mut r, b, k, 0.0, 1.0)).collect();

        let mut bank = PrototypeBank::from_classes(classes.clone()).unwrap();
        bank.ema_update(&z, &labels, &weights, alpha).unwrap();
        let expect = reference_ema(
            &classes.iter().map(rows).collect::<Vec<_>>(),
            &rows(&z),
            &labels,
            &weights.iter().map(rows).collect::<Vec<_>>(),
            alpha,
        );
        let got: Vec<Vec<Vec<f64>>> = (0..c).map(|cc| rows(bank.class(cc))).collect();
        if got == expect {
            exact += 1;
        }
        for n in bank.norms() {
            worst_norm_error = worst_norm_error.max((n - 1.0).abs());
        }

        let mut same = PrototypeBank::from_classes(classes.clone()).unwrap();
        same.ema_update(&z, &labels, &weights, 1.0).unwrap();
        identity &= (0..c).all(|cc| same.class(cc) == &classes[cc]);
    }
    EmaReport {
        exact,
        instances,
        identity,
        worst_norm_error,
    }
}

/// Worst deviation of `z_inv` and of the class probabilities of an
/// untrained full model under random node relabelings.
pub fn permutation_oracle(graphs: usize, perms: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let in_dim = 3;
    let config = TrainConfig {
        hidden: Some(16),
        depth: Some(3),
        ..TrainConfig::default()
    };
    let model = Model::new(&config, in_dim, 2, &mut r).unwrap();
    let mut store = ParamStore::new();
    let encoder = EncoderParams::init(
        &mut store,
        &EncoderConfig {
            in_dim,
            hidden: 16,
            depth: 3,
            readout: Readout::Mean,
        },
        &mut r,
    );
    let mut worst_z = 0.0f64;
    let mut worst_p = 0.0f64;
    for gi in 0..graphs {
        let n = r.gen_range(4..=14);
        let g = random_graph(&mut r, n, in_dim, gi % 2);
        let z0 = invariant(&encoder, &store, &g);
        let p0 = model.predict(&[GraphInput::from(&g)]).unwrap().probs;
        for _ in 0..perms {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let h = g.permuted(&perm).unwrap();
            let z1 = invariant(&encoder, &store, &h);
            let p1 = model.predict(&[GraphInput::from(&h)]).unwrap().probs;
            worst_z = worst_z.max(z0.max_abs_diff(&z1));
            worst_p = worst_p.max(p0.max_abs_diff(&p1));
        }
    }
    (worst_z, worst_p)
}

fn invariant(encoder: &EncoderParams, store: &ParamStore, g: &mphil::graphdata::Graph) -> Tensor {
    let (h, s) = encoder.encode(store, g).unwrap();
    mphil::encoder::gated_readout(&h, &s, Readout::Mean).unwrap()
}
