use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::fusion::FusionConfig;

/// Hidden width of the relevance head.
pub const RELEVANCE_HIDDEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Ssl,
    SslGa,
    Dsl,
    DslGa,
    DslD2,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::Baseline, Variant::Ssl, Variant::SslGa, Variant::Dsl, Variant::DslGa, Variant::DslD2];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Ssl => "ssl",
            Variant::SslGa => "ssl_ga",
            Variant::Dsl => "dsl",
            Variant::DslGa => "dsl_ga",
            Variant::DslD2 => "dsl_d2",
        }
    }

    /// Whether the model sees irrelevant evidence and predicts relevance.
    pub fn uses_red(self) -> bool {
        self != Variant::Baseline
    }

    pub fn is_dual_stage(self) -> bool {
        matches!(self, Variant::Dsl | Variant::DslGa | Variant::DslD2)
    }

    pub fn is_guided(self) -> bool {
        matches!(self, Variant::SslGa | Variant::DslGa)
    }

    pub fn has_relevance_head(self) -> bool {
        matches!(self, Variant::Ssl | Variant::Dsl | Variant::DslD2)
    }

    pub fn has_second_encoder(self) -> bool {
        self == Variant::DslD2
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.replace(['-', '+'], "_").to_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown variant '{}' (expected one of baseline, ssl, ssl_ga, dsl, dsl_ga, dsl_d2)", s)))
    }
}

fn default_dropout() -> f64 {
    0.1
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub dim: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub heads: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub m: usize,
    pub k: usize,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default = "default_threshold")]
    pub inference_mask_threshold: f64,
}

impl ModelConfig {
    pub fn new(variant: Variant, dim: usize) -> Self {
        ModelConfig {
            variant,
            dim,
            layers: 4,
            ff_width: 128,
            heads: 2,
            dropout: default_dropout(),
            m: 1,
            k: 1,
            fusion: FusionConfig::default(),
            inference_mask_threshold: default_threshold(),
        }
    }

    /// Number of evidence slots in a training bundle.
    pub fn evidence_slots(&self) -> usize {
        2 * (self.m + self.k)
    }

    /// Longest token sequence the positional table covers.
    pub fn max_len(&self) -> usize {
        1 + self.fusion.len() + self.evidence_slots()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 || self.ff_width == 0 || self.heads == 0 {
            bail!(Config, "dim, layers, ff_width and heads must all be positive");
        }
        if self.dim % self.heads != 0 {
            bail!(Config, "dim {} is not divisible by {} heads", self.dim, self.heads);
        }
        if self.dim < 2 {
            bail!(Config, "dim must be at least 2 for the dim/2 verdict head");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Config, "dropout must lie in [0, 1), got {}", self.dropout);
        }
        if self.variant.uses_red() && self.m + self.k == 0 {
            bail!(Config, "variant {} needs m + k >= 1", self.variant);
        }
        if !(self.inference_mask_threshold > 0.0 && self.inference_mask_threshold < 1.0) {
            bail!(Config, "inference mask threshold must lie in (0, 1)");
        }
        Ok(())
    }
}
