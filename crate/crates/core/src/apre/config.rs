use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    #[default]
    Full,
    WithoutExplicit,
    WithoutImplicit,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::WithoutExplicit, Variant::WithoutImplicit];

    pub fn has_explicit(self) -> bool {
        self != Variant::WithoutExplicit
    }

    pub fn has_implicit(self) -> bool {
        self != Variant::WithoutImplicit
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "FULL",
            Variant::WithoutExplicit => "WITHOUT_EXPLICIT",
            Variant::WithoutImplicit => "WITHOUT_IMPLICIT",
        }
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
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown model variant `{s}`")))
    }
}

/// Nonlinearity applied after the embedding adaptation layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
    LeakyRelu,
}

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of the incoming token embeddings.
    pub embed_dim: usize,
    /// Width of adapted token features.
    pub feature_dim: usize,
    /// Width of the per-aspect query embeddings.
    pub aspect_dim: usize,
    pub conv_channels: usize,
    pub kernel_size: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub clamp: (f64, f64),
    pub implicit_hidden: usize,
    pub explicit_hidden: usize,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 256,
            feature_dim: 200,
            aspect_dim: 200,
            conv_channels: 200,
            kernel_size: 4,
            dropout: 0.2,
            activation: Activation::Identity,
            clamp: (1.0, 5.0),
            implicit_hidden: 64,
            explicit_hidden: 64,
            init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    /// Width of one review's implicit representation.
    pub fn implicit_dim(&self) -> usize {
        3 * self.feature_dim + self.conv_channels
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("feature_dim", self.feature_dim),
            ("aspect_dim", self.aspect_dim),
            ("conv_channels", self.conv_channels),
            ("kernel_size", self.kernel_size),
            ("implicit_hidden", self.implicit_hidden),
            ("explicit_hidden", self.explicit_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Invalid(format!("model {name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.clamp.0 < self.clamp.1) {
            return Err(Error::Invalid(format!("clamp range {:?} is empty", self.clamp)));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::Invalid("init_scale must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.implicit_dim(), 800);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ModelConfig {
            feature_dim: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        c.feature_dim = 4;
        c.clamp = (5.0, 1.0);
        assert!(c.validate().is_err());
        c.clamp = (1.0, 5.0);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(serde_json::to_string(&Variant::WithoutImplicit).unwrap(), "\"WITHOUT_IMPLICIT\"");
        assert!("half".parse::<Variant>().is_err());
    }
}
