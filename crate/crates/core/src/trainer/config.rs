use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{Preset, Readout};
use crate::losses::LossConfig;
use crate::{Error, Result};

/// Model variant. Everything except `Erm` is the prototype model with one
/// component removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Drop `β·L_IPM` from the objective.
    NoIpm,
    /// Drop `L_PS` from the objective.
    NoPs,
    /// Feed `z_inv` to the prototype bank directly, without projection or
    /// normalization.
    NoProjector,
    /// One prototype per class.
    SingleProto,
    /// Uniform `1/K` assignment weights instead of attention (no pruning).
    NoUpdate,
    /// Keep every assignment weight.
    NoPrune,
    /// `GNN_E` + mean readout + affine softmax head trained with cross-entropy.
    Erm,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoIpm,
        Variant::NoPs,
        Variant::NoProjector,
        Variant::SingleProto,
        Variant::NoUpdate,
        Variant::NoPrune,
        Variant::Erm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoIpm => "no-ipm",
            Variant::NoPs => "no-ps",
            Variant::NoProjector => "no-projector",
            Variant::SingleProto => "single-proto",
            Variant::NoUpdate => "no-update",
            Variant::NoPrune => "no-prune",
            Variant::Erm => "erm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Metric used to pick the best epoch on the validation split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValMetric {
    #[default]
    Accuracy,
    /// Binary tasks only; scores are `p(class 1)`.
    RocAuc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Prototypes per class.
    pub k: usize,
    pub beta: f64,
    /// EMA rate.
    pub alpha: f64,
    pub tau: f64,
    /// Assignment weights kept per sample after pruning.
    pub prune_n: usize,
    pub seed: u64,
    pub preset: Preset,
    /// Overrides the preset width.
    pub hidden: Option<usize>,
    /// Overrides the preset depth.
    pub depth: Option<usize>,
    /// Projector output width; defaults to half the encoder width.
    pub proj_dim: Option<usize>,
    pub readout: Readout,
    pub variant: Variant,
    pub val_metric: ValMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            k: 3,
            beta: 0.1,
            alpha: 0.99,
            tau: 0.1,
            prune_n: 2,
            seed: 0,
            preset: Preset::Synthetic,
            hidden: None,
            depth: None,
            proj_dim: None,
            readout: Readout::Mean,
            variant: Variant::Full,
            val_metric: ValMetric::Accuracy,
        }
    }
}

impl TrainConfig {
    pub fn hidden(&self) -> usize {
        self.hidden.unwrap_or(self.preset.depth_width().1)
    }

    pub fn depth(&self) -> usize {
        self.depth.unwrap_or(self.preset.depth_width().0)
    }

    /// Width of the space the prototypes live in.
    pub fn embed_dim(&self) -> usize {
        if self.variant == Variant::NoProjector {
            self.hidden()
        } else {
            self.proj_dim.unwrap_or((self.hidden() / 2).max(1))
        }
    }

    /// Attention projection width `d'`.
    pub fn attention_dim(&self) -> usize {
        (self.embed_dim() / 2).max(1)
    }

    /// Prototypes per class after applying the variant.
    pub fn prototypes_per_class(&self) -> usize {
        if self.variant == Variant::SingleProto {
            1
        } else {
            self.k
        }
    }

    /// Pruning count after applying the variant (`None` = no pruning).
    pub fn effective_prune(&self) -> Option<usize> {
        match self.variant {
            Variant::NoPrune | Variant::NoUpdate => None,
            _ => Some(self.prune_n.min(self.prototypes_per_class())),
        }
    }

    pub fn losses(&self) -> LossConfig {
        LossConfig {
            beta: self.beta,
            tau: self.tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch", self.batch_size),
            ("k", self.k),
            ("prune-n", self.prune_n),
            ("hidden", self.hidden()),
            ("depth", self.depth()),
            ("proj_dim", self.embed_dim()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.prune_n > self.k {
            return Err(Error::Config(format!(
                "prune-n {} exceeds k {}",
                self.prune_n, self.k
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        self.losses().validate()
    }
}
