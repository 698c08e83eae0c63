//! Versioned JSON parameter files.
//!
//! Floats are written with 17 significant digits, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use nes_core::io::{read_json, write_json};
use nes_tensor::{BatchStats, Tensor};

use crate::config::NetworkConfig;
use crate::error::{NetError, Result};
use crate::network::{Network, NetworkParams};

pub const CHECKPOINT_FORMAT: &str = "nes-network";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// `{ "format", "version", "config", "parameters": [...], "batchnorm": [...] }`
/// with parameters in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: NetworkConfig,
    pub parameters: Vec<StoredTensor>,
    pub batchnorm: Vec<StoredStats>,
}

impl Checkpoint {
    pub fn from_network(net: &Network) -> Self {
        let p = net.params();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: net.config().clone(),
            parameters: p
                .names
                .iter()
                .zip(&p.tensors)
                .map(|(name, t)| StoredTensor {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            batchnorm: p
                .running
                .iter()
                .map(|s| StoredStats {
                    mean: s.mean.clone(),
                    var: s.var.clone(),
                })
                .collect(),
        }
    }

    pub fn into_network(self) -> Result<Network> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(NetError::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(NetError::Checkpoint(format!(
                "version {} (this build reads version {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut names = Vec::with_capacity(self.parameters.len());
        let mut tensors = Vec::with_capacity(self.parameters.len());
        for t in self.parameters {
            tensors.push(Tensor::new(t.shape, t.data)?);
            names.push(t.name);
        }
        let running = self
            .batchnorm
            .into_iter()
            .map(|s| BatchStats { mean: s.mean, var: s.var })
            .collect();
        Network::from_params(self.config, NetworkParams { names, tensors, running })
    }
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    Ok(write_json(path, &Checkpoint::from_network(net))?)
}

pub fn load_network(path: &Path) -> Result<Network> {
    read_json::<Checkpoint>(path)?.into_network()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nes_core::Concept;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoints_round_trip_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::new(NetworkConfig::desk(Concept::Ce, 2), &mut rng).unwrap();
        net.params_mut().running[0].mean[0] = 0.1 + 0.2;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_network(&path, &net).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.config(), net.config());
    }

    #[test]
    fn mismatched_checkpoints_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::new(NetworkConfig::desk(Concept::Cce, 2), &mut rng).unwrap();
        let mut ck = Checkpoint::from_network(&net);
        ck.version = 99;
        assert!(matches!(ck.into_network(), Err(NetError::Checkpoint(_))));
        let mut ck = Checkpoint::from_network(&net);
        ck.config.dual_layer_channels = vec![8];
        assert!(matches!(ck.into_network(), Err(NetError::Checkpoint(_))));
        let mut ck = Checkpoint::from_network(&net);
        ck.parameters[0].shape = vec![1, 1];
        assert!(ck.into_network().is_err());
    }
}
