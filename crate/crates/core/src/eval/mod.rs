//! Metrics and the separability analysis of embeddings.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::GraphInput;
use crate::graphdata::Graph;
use crate::ndtensor::Tensor;
use crate::trainer::Checkpoint;
use crate::{Error, Result};

/// Most pairs sampled per distance distribution.
pub const MAX_PAIRS: usize = 100_000;

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Invalid("accuracy of an empty prediction set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Rank-based (Mann-Whitney) ROC-AUC. Tied scores count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Invalid(format!("non-finite score {s}")));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid("ROC-AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks (1-based) over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// 1-D empirical W1 between two equally sized samples: the mean absolute
/// difference of their order statistics. Inputs need not be sorted.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("W1 of an empty sample".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "W1 needs equal sample counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.len() as f64)
}

/// W1 for samples of any size: the larger one is resampled uniformly with
/// replacement down to the size of the smaller.
pub fn wasserstein1_resampled(a: &[f64], b: &[f64], rng: &mut impl Rng) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("W1 of an empty sample".into()));
    }
    if a.len() == b.len() {
        return wasserstein1(a, b);
    }
    let (small, large) = if a.len() < b.len() { (a, b) } else { (b, a) };
    let drawn: Vec<f64> = (0..small.len())
        .map(|_| large[rng.gen_range(0..large.len())])
        .collect();
    wasserstein1(small, &drawn)
}

/// Intra- and inter-class cosine distance distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separability {
    /// Mean cosine distance over same-class pairs (0 when there are none).
    pub intra_mean: f64,
    /// Mean cosine distance over cross-class pairs.
    pub inter_mean: f64,
    /// W1 between the two distance distributions (0 without intra pairs).
    pub w1_between: f64,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
}

fn cosine_distance(e: &Tensor, i: usize, j: usize) -> f64 {
    let dot: f64 = e.row(i).iter().zip(e.row(j)).map(|(a, b)| a * b).sum();
    1.0 - dot
}

/// Decodes a flat pair index `t` in `0..n(n-1)/2` into `(i, j)` with `i < j`.
fn unrank_pair(t: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    let mut rest = t;
    while rest >= n - 1 - i {
        rest -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + rest)
}

/// Cosine distances of unit-norm `embeddings` over same-class and
/// cross-class pairs. When a group has more than [`MAX_PAIRS`] pairs, a
/// seeded uniform sample of that many pairs (with replacement) is used.
pub fn separability_report(embeddings: &Tensor, labels: &[usize], seed: u64) -> Result<Separability> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::Invalid(format!("{n} embeddings for {} labels", labels.len())));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Invalid(format!(
            "separability needs at least two classes, got {}",
            distinct.len()
        )));
    }
    let total = n * (n - 1) / 2;
    let same = (0..n)
        .map(|i| labels[i + 1..].iter().filter(|&&y| y == labels[i]).count())
        .sum::<usize>();
    let cross = total - same;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (intra, inter) = if same <= MAX_PAIRS && cross <= MAX_PAIRS {
        let mut intra = Vec::with_capacity(same);
        let mut inter = Vec::with_capacity(cross);
        for i in 0..n {
            for j in i + 1..n {
                let d = cosine_distance(embeddings, i, j);
                if labels[i] == labels[j] {
                    intra.push(d);
                } else {
                    inter.push(d);
                }
            }
        }
        (intra, inter)
    } else {
        // rejection sampling over all pairs, per group until each is full
        let want_same = same.min(MAX_PAIRS);
        let want_cross = cross.min(MAX_PAIRS);
        let mut intra = Vec::with_capacity(want_same);
        let mut inter = Vec::with_capacity(want_cross);
        if same <= MAX_PAIRS {
            for i in 0..n {
                for j in i + 1..n {
                    if labels[i] == labels[j] {
                        intra.push(cosine_distance(embeddings, i, j));
                    }
                }
            }
        }
        if cross <= MAX_PAIRS {
            for i in 0..n {
                for j in i + 1..n {
                    if labels[i] != labels[j] {
                        inter.push(cosine_distance(embeddings, i, j));
                    }
                }
            }
        }
        while intra.len() < want_same || inter.len() < want_cross {
            let (i, j) = unrank_pair(rng.gen_range(0..total), n);
            let d = cosine_distance(embeddings, i, j);
            if labels[i] == labels[j] {
                if intra.len() < want_same {
                    intra.push(d);
                }
            } else if inter.len() < want_cross {
                inter.push(d);
            }
        }
        (intra, inter)
    };

    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let w1_between = if intra.is_empty() {
        0.0
    } else {
        wasserstein1_resampled(&intra, &inter, &mut rng)?
    };
    Ok(Separability {
        intra_mean: mean(&intra),
        inter_mean: mean(&inter),
        w1_between,
        intra_pairs: intra.len(),
        inter_pairs: inter.len(),
    })
}

/// Summary of a model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub split: String,
    pub accuracy: f64,
    /// Present for binary tasks only.
    pub roc_auc: Option<f64>,
    /// Mean same-class cosine distance.
    #[serde(rename = "intra_class_W1")]
    pub intra_class_w1: f64,
    /// Mean cross-class cosine distance.
    #[serde(rename = "inter_class_W1")]
    pub inter_class_w1: f64,
    pub per_class_counts: BTreeMap<String, usize>,
}

/// Samples of each class label, keyed by the label as a string.
pub fn per_class_counts(labels: &[usize], classes: usize) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = (0..classes).map(|c| (c.to_string(), 0)).collect();
    for y in labels {
        *counts.entry(y.to_string()).or_default() += 1;
    }
    counts
}

/// Scales each row to unit length (rows of zeros are an error).
pub fn normalize_rows(x: &Tensor) -> Result<Tensor> {
    let mut tape = crate::ndtensor::Tape::new();
    let v = tape.constant(x.clone());
    let n = tape.l2_normalize_rows(v)?;
    Ok(tape.value(n).clone())
}

/// Accuracy, binary ROC-AUC and cosine separability of a checkpoint on
/// one split. `seed` drives pair subsampling only.
pub fn evaluate(ckpt: &Checkpoint, graphs: &[Graph], split: &str, seed: u64) -> Result<EvalReport> {
    if graphs.is_empty() {
        return Err(Error::Invalid(format!("split `{split}` is empty")));
    }
    let model = &ckpt.model;
    let inputs: Vec<GraphInput> = graphs.iter().map(GraphInput::from).collect();
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    if let Some(y) = labels.iter().find(|y| **y >= model.num_classes) {
        return Err(Error::Invalid(format!(
            "label {y} out of range for a {}-class model",
            model.num_classes
        )));
    }
    let preds = model.predict(&inputs)?;
    let acc = accuracy(&preds.argmax(), &labels)?;
    let roc = if model.num_classes == 2 && labels.contains(&0) && labels.contains(&1) {
        let scores: Vec<f64> = (0..preds.probs.rows()).map(|r| preds.probs.get(r, 1)).collect();
        let positive: Vec<bool> = labels.iter().map(|y| *y == 1).collect();
        Some(roc_auc(&scores, &positive)?)
    } else {
        None
    };
    let emb = normalize_rows(&model.embeddings(&inputs)?)?;
    let (intra, inter) = match separability_report(&emb, &labels, seed) {
        Ok(s) => (s.intra_mean, s.inter_mean),
        Err(e) => {
            log::warn!("separability skipped: {e}");
            (0.0, 0.0)
        }
    };
    Ok(EvalReport {
        split: split.to_string(),
        accuracy: acc,
        roc_auc: roc,
        intra_class_w1: intra,
        inter_class_w1: inter,
        per_class_counts: per_class_counts(&labels, model.num_classes),
    })
}
