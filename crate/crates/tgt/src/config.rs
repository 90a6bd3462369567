use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Map applied to max-normalized amplitudes before they enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTransform {
    /// `h' = h / max(h)`.
    #[default]
    Linear,
    /// `clamp(1 + log10(h') / 8, 0, 1)`, which spreads the heavy-tailed
    /// gains over the unit interval.
    Log,
}

impl FeatureTransform {
    pub fn apply(self, normalized: f64) -> f64 {
        match self {
            Self::Linear => normalized,
            Self::Log => {
                if normalized <= 0.0 {
                    0.0
                } else {
                    (1.0 + normalized.log10() / 8.0).clamp(0.0, 1.0)
                }
            }
        }
    }
}

/// Divisor of the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `sqrt(d)`.
    #[default]
    Model,
    /// `sqrt(d / heads)`.
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TgtConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub leaky_slope: f64,
    pub share_qkv: bool,
    pub pmax: f64,
    pub features: FeatureTransform,
    pub attention_scale: AttentionScale,
}

impl Default for TgtConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 32,
            layers: 3,
            leaky_slope: 0.2,
            share_qkv: true,
            pmax: 1.0,
            features: FeatureTransform::Linear,
            attention_scale: AttentionScale::Model,
        }
    }
}

impl TgtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} must be a positive multiple of {} heads",
                self.d, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if !(self.pmax.is_finite() && self.pmax > 0.0) {
            return Err(Error::Config(format!("pmax must be positive, got {}", self.pmax)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky slope must be finite".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn logit_scale(&self) -> f64 {
        let denom = match self.attention_scale {
            AttentionScale::Model => self.d,
            AttentionScale::Head => self.head_dim(),
        };
        1.0 / (denom as f64).sqrt()
    }

    /// Number of distinct Q/K/V sets.
    pub fn qkv_sets(&self) -> usize {
        if self.share_qkv {
            1
        } else {
            self.layers
        }
    }

    /// Trainable parameter count.
    pub fn num_params(&self) -> usize {
        let d = self.d;
        let embed = 2 * (2 * d + d + 2 * d);
        let qkv = 3 * self.qkv_sets() * self.heads * self.head_dim() * self.head_dim();
        let norms = self.layers * 2 * d;
        embed + qkv + norms
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Trainable parameter count of `config`.
pub fn num_params(config: &TgtConfig) -> usize {
    config.num_params()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_count() {
        // embeddings 2 * (128 + 64 + 128), qkv 3 * 32 * 4, norms 3 * 128
        assert_eq!(TgtConfig::default().num_params(), 640 + 384 + 384);
    }

    #[test]
    fn unshared_triples_only_qkv() {
        let shared = TgtConfig::default();
        let unshared = TgtConfig { share_qkv: false, ..shared.clone() };
        assert_eq!(unshared.num_params() - shared.num_params(), 2 * 384);
    }

    #[test]
    fn validation() {
        assert!(TgtConfig { d: 10, heads: 4, ..TgtConfig::default() }.validate().is_err());
        assert!(TgtConfig { layers: 0, ..TgtConfig::default() }.validate().is_err());
        assert!(TgtConfig { pmax: 0.0, ..TgtConfig::default() }.validate().is_err());
        assert!(TgtConfig::default().validate().is_ok());
    }

    #[test]
    fn log_features_stay_in_unit_interval() {
        let f = FeatureTransform::Log;
        assert_eq!(f.apply(1.0), 1.0);
        assert_eq!(f.apply(0.0), 0.0);
        assert_eq!(f.apply(1e-12), 0.0);
        assert!((f.apply(1e-4) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hash_tracks_content() {
        let a = TgtConfig::default();
        let b = TgtConfig { d: 32, ..a.clone() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
