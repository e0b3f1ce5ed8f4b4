//! JSON checkpoints: architecture descriptor, row-major weights per layer and
//! the hyperparameters that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::json::{read_json, write_json};
use crate::{Error, Result};

use super::dqn::Hyperparams;
use super::network::{Dense, QNetwork};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    /// `[outputs, inputs]`.
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub num_actions: usize,
    pub activation: String,
    pub layers: Vec<LayerShape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub name: String,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub layers: Vec<LayerWeights>,
    pub hyperparams: Hyperparams,
}

fn layer_names(net: &QNetwork) -> Vec<String> {
    (0..net.trunk.len())
        .map(|i| format!("trunk.{i}"))
        .chain(["value".to_string(), "advantage".to_string()])
        .collect()
}

impl Checkpoint {
    pub fn new(net: &QNetwork, hyperparams: &Hyperparams) -> Self {
        let names = layer_names(net);
        let layers = net
            .layers()
            .zip(&names)
            .map(|(l, name)| LayerWeights {
                name: name.clone(),
                weights: l.weights.clone(),
                bias: l.bias.clone(),
            })
            .collect();
        let shapes = net
            .layers()
            .zip(names)
            .map(|(l, name)| LayerShape {
                name,
                shape: [l.outputs, l.inputs],
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: Architecture {
                input_dim: net.input_dim,
                hidden_sizes: net.hidden_sizes(),
                num_actions: net.num_actions(),
                activation: "tanh".to_string(),
                layers: shapes,
            },
            layers,
            hyperparams: hyperparams.clone(),
        }
    }

    /// Rebuilds the network, checking every layer against the descriptor.
    pub fn network(&self) -> Result<QNetwork> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::contract(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        let arch = &self.architecture;
        if arch.activation != "tanh" {
            return Err(Error::contract(format!(
                "unsupported activation {}",
                arch.activation
            )));
        }
        let mut net = QNetwork::new(arch.input_dim, &arch.hidden_sizes, arch.num_actions, 0)?;
        let expected: Vec<(String, [usize; 2])> = layer_names(&net)
            .into_iter()
            .zip(net.layers().map(|l| [l.outputs, l.inputs]))
            .collect();
        let described: Vec<(String, [usize; 2])> = arch
            .layers
            .iter()
            .map(|l| (l.name.clone(), l.shape))
            .collect();
        if described != expected || self.layers.len() != expected.len() {
            return Err(Error::contract(
                "checkpoint layer list does not match its architecture",
            ));
        }
        for (dense, stored) in net.layers_mut().zip(&self.layers) {
            if stored.weights.len() != dense.weights.len() || stored.bias.len() != dense.bias.len()
            {
                return Err(Error::contract(format!(
                    "layer {} has the wrong size",
                    stored.name
                )));
            }
            *dense = Dense {
                inputs: dense.inputs,
                outputs: dense.outputs,
                weights: stored.weights.clone(),
                bias: stored.bias.clone(),
            };
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}
