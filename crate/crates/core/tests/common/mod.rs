#![allow(dead_code)]

pub mod grad;
pub mod oracle;

use mphil::graphdata::{Graph, GraphMeta};
use mphil::ndtensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn unit_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let v: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(v.iter().map(|x| x / n));
    }
    Tensor::new(rows, cols, data).unwrap()
}

/// Connected random graph: a random spanning tree plus extra edges.
pub fn random_graph(rng: &mut impl Rng, nodes: usize, feat: usize, label: usize) -> Graph {
    let mut edges = Vec::new();
    for v in 1..nodes {
        edges.push((rng.gen_range(0..v), v));
    }
    for _ in 0..nodes / 2 {
        let a = rng.gen_range(0..nodes);
        let b = rng.gen_range(0..nodes);
        if a != b && !edges.contains(&(a, b)) && !edges.contains(&(b, a)) {
            edges.push((a, b));
        }
    }
    let x = uniform(rng, nodes, feat, -1.0, 1.0);
    Graph::new(x, edges, label, GraphMeta::default()).unwrap()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Graphs whose mean node feature reveals the label: linearly separable.
pub fn toy_split(rng: &mut impl Rng, count: usize, classes: usize) -> Vec<Graph> {
    (0..count)
        .map(|i| {
            let y = i % classes;
            let n = rng.gen_range(4..=8);
            let mut g = random_graph(rng, n, classes, y);
            let data: Vec<f64> = (0..n * classes)
                .map(|j| if j % classes == y { 1.0 } else { 0.0 } + rng.gen_range(-0.3..0.3))
                .collect();
            g.x = Tensor::new(n, classes, data).unwrap();
            g
        })
        .collect()
}

pub fn toy_dataset(seed: u64, train: usize, classes: usize) -> mphil::graphdata::Dataset {
    let mut r = rng(seed);
    mphil::graphdata::Dataset {
        train: toy_split(&mut r, train, classes),
        val: toy_split(&mut r, train / 2, classes),
        test: toy_split(&mut r, train / 2, classes),
    }
}

/// Small, fast model settings for tests.
pub fn small_config() -> mphil::trainer::TrainConfig {
    mphil::trainer::TrainConfig {
        hidden: Some(8),
        depth: Some(2),
        epochs: 5,
        batch_size: 8,
        lr: 1e-2,
        ..mphil::trainer::TrainConfig::default()
    }
}
