//! A permutation-equivariant network that maps normal-form games and
//! selection targets to the dual variables of their selected (coarse)
//! correlated equilibrium, and the unsupervised loop that trains it on the
//! dual objective.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod input;
pub mod layers;
pub mod network;
pub mod symmetry;
pub mod trainer;

pub use checkpoint::{load_network, save_network, Checkpoint};
pub use config::{NetworkConfig, OuterOp, Phi, PoolingConfig};
pub use error::{NetError, Result};
pub use input::{assemble_input, Instance};
pub use network::{ForwardPass, Mode, Network, NetworkParams};
pub use trainer::{train, EvalMetrics, EvalSet, TrainConfig, TrainLog};
