use super::linear::{LinearMdpSpec, LinearParams, ThetaSet};
use super::tabular::{RewardMatrixSet, TabularParams};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    Tabular,
    Linear,
}

/// Self-contained instance document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub version: u32,
    pub kind: BundleKind,
    pub seed: u64,
    pub rank: usize,
    pub mdp: TabularMdp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tabular_params: Option<TabularParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<RewardMatrixSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_params: Option<LinearParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<LinearMdpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaSet>,
}

impl Bundle {
    pub fn tabular(params: TabularParams, mdp: TabularMdp, rewards: RewardMatrixSet) -> Self {
        Bundle {
            version: BUNDLE_VERSION,
            kind: BundleKind::Tabular,
            seed: params.seed,
            rank: params.rank,
            mdp,
            tabular_params: Some(params),
            rewards: Some(rewards),
            linear_params: None,
            spec: None,
            theta: None,
        }
    }

    pub fn linear(params: LinearParams, mdp: TabularMdp, spec: LinearMdpSpec, theta: ThetaSet) -> Self {
        Bundle {
            version: BUNDLE_VERSION,
            kind: BundleKind::Linear,
            seed: params.seed,
            rank: params.rank,
            mdp,
            tabular_params: None,
            rewards: None,
            linear_params: Some(params),
            spec: Some(spec),
            theta: Some(theta),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Bundle = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<()> {
        if self.version != BUNDLE_VERSION {
            return Err(Error::Schema(format!("unsupported bundle version {}", self.version)));
        }
        match self.kind {
            BundleKind::Tabular => {
                let r = self.rewards.as_ref().ok_or_else(|| Error::Schema("tabular bundle without rewards".into()))?;
                if r.num_pairs != self.mdp.num_pairs() || r.horizon() != self.mdp.horizon() {
                    return Err(Error::Schema("reward matrices do not match the MDP".into()));
                }
                if r.matrices.iter().any(|m| m.len() != r.num_users * r.num_pairs) {
                    return Err(Error::Schema("reward matrix has wrong size".into()));
                }
            }
            BundleKind::Linear => {
                let s = self.spec.as_ref().ok_or_else(|| Error::Schema("linear bundle without spec".into()))?;
                let t = self.theta.as_ref().ok_or_else(|| Error::Schema("linear bundle without theta".into()))?;
                if s.num_pairs() != self.mdp.num_pairs() || t.dim != s.dim || t.thetas.len() != self.mdp.horizon() {
                    return Err(Error::Schema("linear spec does not match the MDP".into()));
                }
                s.validate(&self.mdp).map_err(|e| Error::Schema(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Write the bundle and return the hex SHA-256 of the written bytes.
    pub fn save(&self, path: &Path) -> Result<String> {
        let text = self.to_json()?;
        std::fs::write(path, text.as_bytes())?;
        Ok(checksum(text.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Bundle::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn checksum(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
