use serde::{Deserialize, Serialize};

use super::mlp::{Head, Mlp};
use crate::error::NnError;

pub const NET_FORMAT_VERSION: u32 = 1;

/// Portable description of one network: topology, head and row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub format_version: u32,
    pub sizes: Vec<usize>,
    pub head: Head,
    pub params: Vec<f64>,
}

impl From<&Mlp> for NetRecord {
    fn from(net: &Mlp) -> Self {
        Self {
            format_version: NET_FORMAT_VERSION,
            sizes: net.sizes().to_vec(),
            head: net.head(),
            params: net.params().to_vec(),
        }
    }
}

impl NetRecord {
    pub fn into_mlp(self) -> Result<Mlp, NnError> {
        if self.format_version != NET_FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if let Some(i) = self.params.iter().position(|v| !v.is_finite()) {
            return Err(NnError::Checkpoint(format!("non-finite weight at {i}")));
        }
        Mlp::from_params(&self.sizes, self.head, self.params)
    }

    /// Loads and checks the record against an expected topology.
    pub fn into_mlp_expecting(self, sizes: &[usize], head: Head) -> Result<Mlp, NnError> {
        if self.sizes != sizes || self.head != head {
            return Err(NnError::Checkpoint(format!(
                "topology mismatch: record has {:?}/{:?}, expected {:?}/{:?}",
                self.sizes, self.head, sizes, head
            )));
        }
        self.into_mlp()
    }
}

pub fn save_weights(net: &Mlp) -> String {
    serde_json::to_string_pretty(&NetRecord::from(net)).expect("network record serializes")
}

pub fn load_weights(text: &str) -> Result<Mlp, NnError> {
    let record: NetRecord =
        serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    record.into_mlp()
}
