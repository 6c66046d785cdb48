use serde::{Deserialize, Serialize};

use super::{dense_input, scaled_uniform, seeded_rng, BoundParams, Input, ParamRegistry};
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{PinsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
    /// Set from the run seed; not part of the serialized config.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 2,
            hidden_dims: vec![16, 16],
            num_classes: 2,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_dims,
            num_classes,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden_dims.contains(&0) {
            return Err(PinsError::Config(format!(
                "mlp dimensions must be >= 1: input {}, hidden {:?}, classes {}",
                self.input_dim, self.hidden_dims, self.num_classes
            )));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden_dims);
        w.push(self.num_classes);
        w
    }
}

pub(super) fn init(cfg: &MlpConfig) -> Result<ParamRegistry> {
    let mut rng = seeded_rng(cfg.seed);
    let mut reg = ParamRegistry::new();
    for (i, pair) in cfg.widths().windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = scaled_uniform(&mut rng, &[fan_in, fan_out], fan_in);
        reg.insert(format!("layer{i}.weight"), w, true, i)?;
        reg.insert(format!("layer{i}.bias"), Tensor::zeros(&[fan_out]), false, i)?;
    }
    Ok(reg)
}

pub(super) fn forward(
    cfg: &MlpConfig,
    params: &BoundParams,
    tape: &mut Tape,
    input: &Input,
) -> Result<Var> {
    let x = dense_input("mlp forward", input, cfg.input_dim)?;
    let mut h = tape.constant(x);
    let layers = cfg.hidden_dims.len() + 1;
    for i in 0..layers {
        let w = params.get(&format!("layer{i}.weight"))?;
        let b = params.get(&format!("layer{i}.bias"))?;
        let z = tape.matmul(h, w)?;
        h = tape.add(z, b)?;
        if i + 1 < layers {
            h = match cfg.activation {
                Activation::Relu => tape.relu(h),
                Activation::Gelu => tape.gelu(h),
            };
        }
    }
    Ok(h)
}
