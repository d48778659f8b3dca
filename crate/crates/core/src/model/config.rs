use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelError, Result};
use crate::nn::ActivationKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Classifier built on the full network, upsampling branches included.
    #[serde(rename = "decusr")]
    Decusr,
    /// Lightweight network without upsampling branches.
    #[serde(rename = "decusr_l")]
    DecusrL,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Decusr, Variant::DecusrL];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Decusr => "decusr",
            Variant::DecusrL => "decusr_l",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "decusr" => Ok(Variant::Decusr),
            "decusr_l" => Ok(Variant::DecusrL),
            _ => Err(ModelError::InvalidConfig(format!("unknown model variant '{s}'"))),
        }
    }
}

/// Declarative architecture description.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Output channels of the four feature-extraction convolutions.
    pub feb_filters: Vec<usize>,
    pub rb_count: usize,
    pub rb_filters: usize,
    pub rb_depth: usize,
    pub kernel_size: usize,
    pub activation: ActivationKind,
    pub use_maxpool: bool,
    pub use_batchnorm: bool,
    pub input_size: usize,
    pub input_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DecusrL,
            feb_filters: vec![16, 8, 8, 8],
            rb_count: 3,
            rb_filters: 8,
            rb_depth: 2,
            kernel_size: 3,
            activation: ActivationKind::Relu,
            use_maxpool: true,
            use_batchnorm: false,
            input_size: 256,
            input_channels: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.feb_filters.len() != 4 {
            return bad(format!(
                "feb_filters needs exactly 4 entries, got {}",
                self.feb_filters.len()
            ));
        }
        if self.feb_filters.contains(&0) || self.rb_filters == 0 {
            return bad("filter counts must be >= 1".into());
        }
        if self.rb_count == 0 {
            return bad("rb_count must be >= 1".into());
        }
        if self.rb_depth == 0 {
            return bad("rb_depth must be >= 1".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.input_size == 0 || self.input_channels == 0 {
            return bad("input_size and input_channels must be >= 1".into());
        }
        Ok(())
    }

    /// Stable 64-bit hash of the canonical JSON form.
    pub fn fingerprint(&self) -> u64 {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ModelConfig::default();
        for broken in [
            ModelConfig {
                rb_count: 0,
                ..base.clone()
            },
            ModelConfig {
                rb_depth: 0,
                ..base.clone()
            },
            ModelConfig {
                kernel_size: 4,
                ..base.clone()
            },
            ModelConfig {
                feb_filters: vec![8, 8, 8],
                ..base.clone()
            },
            ModelConfig {
                feb_filters: vec![8, 0, 8, 8],
                ..base.clone()
            },
        ] {
            assert!(broken.validate().is_err(), "{broken:?}");
        }
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = ModelConfig::default();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        let b = ModelConfig {
            rb_filters: 9,
            ..a.clone()
        };
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn variant_names() {
        assert_eq!("decusr_l".parse::<Variant>().unwrap(), Variant::DecusrL);
        assert_eq!("DECUSR-L".parse::<Variant>().unwrap(), Variant::DecusrL);
        assert_eq!(Variant::Decusr.to_string(), "decusr");
        assert!("resnet".parse::<Variant>().is_err());
    }
}
