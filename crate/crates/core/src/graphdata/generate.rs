use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::shapes::{compose, make_base, make_motif};
use super::{load_jsonl, save_jsonl, BaseKind, Graph, GraphMeta, MotifKind};
use crate::ndtensor::Tensor;
use crate::{Error, Result};

/// Degree one-hot features clip degrees at this value.
pub const MAX_DEGREE_FEATURE: usize = 9;
/// Width of [`FeatureMode::Random`] features.
pub const RANDOM_FEATURE_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureMode {
    /// One feature fixed at 1.0.
    Constant,
    /// One-hot of `min(degree, 9)`.
    DegreeOneHot,
    /// Four uniform features in `[0, 1)`.
    Random,
}

impl FeatureMode {
    pub fn dim(self) -> usize {
        match self {
            FeatureMode::Constant => 1,
            FeatureMode::DegreeOneHot => MAX_DEGREE_FEATURE + 1,
            FeatureMode::Random => RANDOM_FEATURE_DIM,
        }
    }
}

/// How the test split departs from training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shift {
    /// Test graphs use the held-out base kinds.
    Basis,
    /// Test graphs use the training base kinds at enlarged sizes.
    Size,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    /// Class `c` is carried by `motifs[c]`.
    pub motifs: Vec<MotifKind>,
    pub train_bases: Vec<BaseKind>,
    pub test_bases: Vec<BaseKind>,
    pub shift: Shift,
    /// Probability that a training graph carries its class's designated base.
    pub bias: f64,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    /// Inclusive base size range for train/val (and basis-shift test) graphs.
    pub base_size: (usize, usize),
    /// Inclusive base size range for size-shift test graphs.
    pub shifted_base_size: (usize, usize),
    pub features: FeatureMode,
    pub seed: u64,
}

impl DatasetSpec {
    /// Binary house-vs-cycle task with a basis shift: wheel/tree/ladder bases in
    /// training, star/path at test time.
    pub fn spmotif_binary(bias: f64, seed: u64) -> Self {
        Self {
            motifs: vec![MotifKind::House, MotifKind::Cycle],
            train_bases: vec![BaseKind::Wheel, BaseKind::Tree, BaseKind::Ladder],
            test_bases: vec![BaseKind::Star, BaseKind::Path],
            shift: Shift::Basis,
            bias,
            train_count: 2000,
            val_count: 500,
            test_count: 500,
            base_size: (8, 15),
            shifted_base_size: (16, 30),
            features: FeatureMode::Constant,
            seed,
        }
    }

    /// Three-class house/cycle/crane variant of [`DatasetSpec::spmotif_binary`].
    pub fn spmotif_ternary(bias: f64, seed: u64) -> Self {
        Self {
            motifs: vec![MotifKind::House, MotifKind::Cycle, MotifKind::Crane],
            ..Self::spmotif_binary(bias, seed)
        }
    }

    pub fn num_classes(&self) -> usize {
        self.motifs.len()
    }

    /// Base kind preferentially paired with class `c` in training.
    pub fn designated_base(&self, class: usize) -> BaseKind {
        self.train_bases[class % self.train_bases.len()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.motifs.len() < 2 {
            return Err(Error::Config("at least two motif classes are required".into()));
        }
        if self.train_bases.is_empty() {
            return Err(Error::Config("no training base kinds".into()));
        }
        if self.shift == Shift::Basis && self.test_bases.is_empty() {
            return Err(Error::Config("basis shift requires at least one test base kind".into()));
        }
        if !(0.0..=1.0).contains(&self.bias) {
            return Err(Error::Config(format!("bias {} outside [0, 1]", self.bias)));
        }
        for (lo, hi) in [self.base_size, self.shifted_base_size] {
            if lo < 4 || lo > hi {
                return Err(Error::Config(format!("invalid base size range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Train, validation (same distribution as train) and shifted test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub test: Vec<Graph>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[Graph]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Invalid(format!("unknown split `{other}`"))),
        }
    }

    pub fn num_classes(&self) -> usize {
        super::num_classes(self.train.iter().chain(&self.val).chain(&self.test))
    }

    /// Writes `train.jsonl`, `val.jsonl` and `test.jsonl` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_jsonl(&dir.join("train.jsonl"), &self.train)?;
        save_jsonl(&dir.join("val.jsonl"), &self.val)?;
        save_jsonl(&dir.join("test.jsonl"), &self.test)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(Self {
            train: load_jsonl(&dir.join("train.jsonl"))?,
            val: load_jsonl(&dir.join("val.jsonl"))?,
            test: load_jsonl(&dir.join("test.jsonl"))?,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

/// Generates all three splits. Each split draws from its own ChaCha stream
/// of `spec.seed`, so output is a pure function of the spec.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    Ok(Dataset {
        train: generate_split(spec, Split::Train)?,
        val: generate_split(spec, Split::Val)?,
        test: generate_split(spec, Split::Test)?,
    })
}

fn generate_split(spec: &DatasetSpec, split: Split) -> Result<Vec<Graph>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(split.stream());
    let count = match split {
        Split::Train => spec.train_count,
        Split::Val => spec.val_count,
        Split::Test => spec.test_count,
    };
    let classes = spec.num_classes();
    let mut graphs = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % classes;
        let (base_kind, (lo, hi)) = match (split, spec.shift) {
            (Split::Train | Split::Val, _) => (biased_base(spec, label, &mut rng), spec.base_size),
            (Split::Test, Shift::Basis) => (*spec.test_bases.choose(&mut rng).unwrap(), spec.base_size),
            (Split::Test, Shift::Size) => {
                (*spec.train_bases.choose(&mut rng).unwrap(), spec.shifted_base_size)
            }
        };
        let size = rng.gen_range(lo..=hi);
        let base = make_base(base_kind, size, &mut rng)?;
        let motif_kind = spec.motifs[label];
        let motif = make_motif(motif_kind);
        let mut g = compose(&base, &motif, label, &mut rng)?;
        g.x = node_features(&g, spec.features, &mut rng);
        g.meta = GraphMeta {
            base: base_kind.name().to_string(),
            motif: motif_kind.name().to_string(),
            split: split.name().to_string(),
            env: format!("{}-{}", base_kind.name(), base.num_nodes),
        };
        graphs.push(g);
    }
    Ok(graphs)
}

fn biased_base(spec: &DatasetSpec, label: usize, rng: &mut impl Rng) -> BaseKind {
    let designated = spec.designated_base(label);
    let others: Vec<BaseKind> = spec
        .train_bases
        .iter()
        .copied()
        .filter(|b| *b != designated)
        .collect();
    if others.is_empty() || rng.gen_bool(spec.bias) {
        designated
    } else {
        *others.choose(rng).unwrap()
    }
}

fn node_features(g: &Graph, mode: FeatureMode, rng: &mut impl Rng) -> Tensor {
    let n = g.num_nodes();
    match mode {
        FeatureMode::Constant => Tensor::ones(n, 1),
        FeatureMode::DegreeOneHot => {
            let dim = mode.dim();
            let mut data = vec![0.0; n * dim];
            for (v, d) in g.degrees().into_iter().enumerate() {
                data[v * dim + d.min(MAX_DEGREE_FEATURE)] = 1.0;
            }
            Tensor::new(n, dim, data).expect("finite one-hot features")
        }
        FeatureMode::Random => {
            let data = (0..n * RANDOM_FEATURE_DIM).map(|_| rng.gen::<f64>()).collect();
            Tensor::new(n, RANDOM_FEATURE_DIM, data).expect("finite random features")
        }
    }
}
