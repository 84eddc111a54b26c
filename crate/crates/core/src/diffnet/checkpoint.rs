//! Versioned agent checkpoint: policy, value heads and normalizer
//! statistics, serialized as JSON with a byte-stable round-trip.

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::normalizer::ObsNormalizer;
use super::policy::PolicySpec;
use super::value::ValueSpec;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub policy: PolicySpec,
    pub reward_value: ValueSpec,
    pub cost_value: ValueSpec,
    pub normalizer: ObsNormalizer,
}

impl Checkpoint {
    pub fn new(
        policy: PolicySpec,
        reward_value: ValueSpec,
        cost_value: ValueSpec,
        normalizer: ObsNormalizer,
    ) -> Self {
        Self { version: CHECKPOINT_VERSION, policy, reward_value, cost_value, normalizer }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = PolicySpec::new(6, 2, vec![8], -3.0, true, &mut rng);
        let rv = ValueSpec::new(6, vec![8], &mut rng);
        let cv = ValueSpec::new(6, vec![8], &mut rng);
        let mut norm = ObsNormalizer::new(6);
        norm.update(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        norm.update(&[-0.1, 0.0, 0.1, 0.2, 0.3, 0.4]);
        Checkpoint::new(policy, rv, cv, norm)
    }

    #[test]
    fn json_roundtrip_is_byte_stable() {
        let ckpt = sample_checkpoint();
        let first = ckpt.to_json().unwrap();
        let reloaded = Checkpoint::from_json(&first).unwrap();
        let second = reloaded.to_json().unwrap();
        assert_eq!(first, second);
        assert_eq!(ckpt, reloaded);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut ckpt = sample_checkpoint();
        ckpt.version = 999;
        let text = serde_json::to_string(&ckpt).unwrap();
        assert!(Checkpoint::from_json(&text).is_err());
    }
}
