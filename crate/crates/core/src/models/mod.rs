//! Model zoo: an MLP classifier and a tiny transformer encoder classifier,
//! both exposing their weights through a [`ParamRegistry`].

pub mod container;
mod mlp;
mod registry;
mod transformer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{PinsError, Result};

pub use mlp::{Activation, MlpConfig};
pub use registry::{BoundParams, ParamEntry, ParamRegistry};
pub use transformer::TransformerConfig;

/// A batch of model inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    /// `(n, d)` real features.
    Dense(Tensor),
    /// `n` token sequences of length `seq_len`, flattened row-major.
    Tokens { seq_len: usize, ids: Vec<usize> },
}

impl Input {
    pub fn rows(&self) -> usize {
        match self {
            Input::Dense(t) => t.dims2().map_or(0, |(r, _)| r),
            Input::Tokens { seq_len, ids } => ids.len() / seq_len.max(&1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Mlp(MlpConfig),
    Transformer(TransformerConfig),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Mlp(MlpConfig::default())
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Mlp(c) => c.validate(),
            ModelConfig::Transformer(c) => c.validate(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::Mlp(c) => c.num_classes,
            ModelConfig::Transformer(c) => c.num_classes,
        }
    }

    pub fn with_seed(&self, seed: u64) -> ModelConfig {
        let mut c = self.clone();
        match &mut c {
            ModelConfig::Mlp(m) => m.seed = seed,
            ModelConfig::Transformer(t) => t.seed = seed,
        }
        c
    }

    pub fn init_registry(&self) -> Result<ParamRegistry> {
        match self {
            ModelConfig::Mlp(c) => mlp::init(c),
            ModelConfig::Transformer(c) => transformer::init(c),
        }
    }

    /// Records the forward pass of this architecture, reading weights from
    /// `reg`. Returns the `(n, num_classes)` logits and the bound parameters.
    pub fn forward(
        &self,
        reg: &ParamRegistry,
        tape: &mut Tape,
        input: &Input,
        trainable: bool,
    ) -> Result<(Var, BoundParams)> {
        let bound = reg.bind(tape, trainable);
        let logits = match self {
            ModelConfig::Mlp(c) => mlp::forward(c, &bound, tape, input)?,
            ModelConfig::Transformer(c) => transformer::forward(c, &bound, tape, input)?,
        };
        Ok((logits, bound))
    }

    /// Logits without gradient bookkeeping.
    pub fn logits(&self, reg: &ParamRegistry, input: &Input) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (logits, _) = self.forward(reg, &mut tape, input, false)?;
        Ok(tape.value(logits))
    }
}

/// A model architecture together with its current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    registry: ParamRegistry,
}

impl Model {
    pub fn build(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let registry = config.init_registry()?;
        Ok(Model { config, registry })
    }

    pub fn from_parts(config: ModelConfig, registry: ParamRegistry) -> Model {
        Model { config, registry }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn registry(&self) -> &ParamRegistry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut ParamRegistry {
        &mut self.registry
    }

    pub fn into_registry(self) -> ParamRegistry {
        self.registry
    }

    pub fn forward(&self, tape: &mut Tape, input: &Input) -> Result<(Var, BoundParams)> {
        self.config.forward(&self.registry, tape, input, true)
    }

    pub fn logits(&self, input: &Input) -> Result<Tensor> {
        self.config.logits(&self.registry, input)
    }
}

pub fn build_mlp(cfg: MlpConfig) -> Result<Model> {
    Model::build(ModelConfig::Mlp(cfg))
}

pub fn build_tiny_transformer(cfg: TransformerConfig) -> Result<Model> {
    Model::build(ModelConfig::Transformer(cfg))
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
pub(crate) fn scaled_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape is positive")
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn dense_input<'a>(op: &'static str, input: &'a Input, dim: usize) -> Result<&'a Tensor> {
    match input {
        Input::Dense(t) => match t.shape() {
            [_, d] if *d == dim => Ok(t),
            s => Err(PinsError::shape(op, s, &[0, dim])),
        },
        Input::Tokens { .. } => Err(PinsError::rejected(op, "expected dense features, got tokens")),
    }
}
