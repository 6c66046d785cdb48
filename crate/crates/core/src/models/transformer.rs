use serde::{Deserialize, Serialize};

use super::{scaled_uniform, seeded_rng, BoundParams, Input, ParamRegistry};
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{PinsError, Result};

/// Added to attention scores across sequence boundaries; `exp` of it is 0.
const CROSS_SEQUENCE_BIAS: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ff_dim: usize,
    pub max_seq_len: usize,
    pub num_classes: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            vocab_size: 2,
            embed_dim: 32,
            num_heads: 2,
            num_layers: 2,
            ff_dim: 64,
            max_seq_len: 16,
            num_classes: 2,
            seed: 0,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.embed_dim,
            self.num_heads,
            self.num_layers,
            self.ff_dim,
            self.max_seq_len,
            self.num_classes,
        ];
        if dims.contains(&0) {
            return Err(PinsError::Config("transformer dimensions must be >= 1".into()));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(PinsError::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

const PROJECTIONS: [&str; 4] = ["query", "key", "value", "out"];

pub(super) fn init(cfg: &TransformerConfig) -> Result<ParamRegistry> {
    let mut rng = seeded_rng(cfg.seed);
    let mut reg = ParamRegistry::new();
    let e = cfg.embed_dim;
    reg.insert(
        "embed.token",
        scaled_uniform(&mut rng, &[cfg.vocab_size, e], e),
        false,
        0,
    )?;
    reg.insert(
        "embed.position",
        scaled_uniform(&mut rng, &[cfg.max_seq_len, e], e),
        false,
        0,
    )?;
    for l in 0..cfg.num_layers {
        let li = l + 1;
        for p in PROJECTIONS {
            reg.insert(
                format!("block{l}.attn.{p}.weight"),
                scaled_uniform(&mut rng, &[e, e], e),
                true,
                li,
            )?;
            reg.insert(format!("block{l}.attn.{p}.bias"), Tensor::zeros(&[e]), false, li)?;
        }
        reg.insert(format!("block{l}.ln1.gain"), Tensor::filled(&[e], 1.0), false, li)?;
        reg.insert(format!("block{l}.ln1.bias"), Tensor::zeros(&[e]), false, li)?;
        reg.insert(
            format!("block{l}.ff1.weight"),
            scaled_uniform(&mut rng, &[e, cfg.ff_dim], e),
            true,
            li,
        )?;
        reg.insert(format!("block{l}.ff1.bias"), Tensor::zeros(&[cfg.ff_dim]), false, li)?;
        reg.insert(
            format!("block{l}.ff2.weight"),
            scaled_uniform(&mut rng, &[cfg.ff_dim, e], cfg.ff_dim),
            true,
            li,
        )?;
        reg.insert(format!("block{l}.ff2.bias"), Tensor::zeros(&[e]), false, li)?;
        reg.insert(format!("block{l}.ln2.gain"), Tensor::filled(&[e], 1.0), false, li)?;
        reg.insert(format!("block{l}.ln2.bias"), Tensor::zeros(&[e]), false, li)?;
    }
    let head_layer = cfg.num_layers + 1;
    reg.insert(
        "head.weight",
        scaled_uniform(&mut rng, &[e, cfg.num_classes], e),
        true,
        head_layer,
    )?;
    reg.insert("head.bias", Tensor::zeros(&[cfg.num_classes]), false, head_layer)?;
    Ok(reg)
}

fn linear(tape: &mut Tape, p: &BoundParams, x: Var, prefix: &str) -> Result<Var> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let z = tape.matmul(x, w)?;
    tape.add(z, b)
}

fn layer_norm(tape: &mut Tape, p: &BoundParams, x: Var, prefix: &str) -> Result<Var> {
    let n = tape.layer_norm_rows(x)?;
    let g = tape.mul(n, p.get(&format!("{prefix}.gain"))?)?;
    tape.add(g, p.get(&format!("{prefix}.bias"))?)
}

/// Post-norm encoder blocks, mean pooling over positions, linear head.
/// Attention for all sequences in the batch is computed in one
/// `(n*L) x (n*L)` score matrix with cross-sequence entries masked out.
pub(super) fn forward(
    cfg: &TransformerConfig,
    p: &BoundParams,
    tape: &mut Tape,
    input: &Input,
) -> Result<Var> {
    let Input::Tokens { seq_len, ids } = input else {
        return Err(PinsError::rejected(
            "transformer forward",
            "expected token input, got dense features",
        ));
    };
    let seq_len = *seq_len;
    if seq_len == 0 || seq_len > cfg.max_seq_len || ids.is_empty() || ids.len() % seq_len != 0 {
        return Err(PinsError::rejected(
            "transformer forward",
            format!(
                "{} ids do not form sequences of length {seq_len} (max {})",
                ids.len(),
                cfg.max_seq_len
            ),
        ));
    }
    let n = ids.len() / seq_len;
    let rows = n * seq_len;
    let e = cfg.embed_dim;
    let dh = e / cfg.num_heads;

    let tok = tape.embedding(p.get("embed.token")?, ids)?;
    let positions: Vec<usize> = (0..rows).map(|r| r % seq_len).collect();
    let pos = tape.embedding(p.get("embed.position")?, &positions)?;
    let mut x = tape.add(tok, pos)?;

    let mut block_bias = vec![CROSS_SEQUENCE_BIAS; rows * rows];
    for s in 0..n {
        for i in 0..seq_len {
            let r = s * seq_len + i;
            for j in 0..seq_len {
                block_bias[r * rows + s * seq_len + j] = 0.0;
            }
        }
    }
    let block_bias = tape.constant_f64(vec![rows, rows], block_bias)?;
    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();

    for l in 0..cfg.num_layers {
        let q = linear(tape, p, x, &format!("block{l}.attn.query"))?;
        let k = linear(tape, p, x, &format!("block{l}.attn.key"))?;
        let v = linear(tape, p, x, &format!("block{l}.attn.value"))?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, inv_sqrt_dh);
            let scores = tape.add(scores, block_bias)?;
            let attn = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_cols(&heads)?;
        let o = linear(tape, p, merged, &format!("block{l}.attn.out"))?;
        let res = tape.add(x, o)?;
        x = layer_norm(tape, p, res, &format!("block{l}.ln1"))?;

        let f = linear(tape, p, x, &format!("block{l}.ff1"))?;
        let f = tape.gelu(f);
        let f = linear(tape, p, f, &format!("block{l}.ff2"))?;
        let res = tape.add(x, f)?;
        x = layer_norm(tape, p, res, &format!("block{l}.ln2"))?;
    }

    let mut pool = vec![0.0; n * rows];
    let w = 1.0 / seq_len as f64;
    for s in 0..n {
        for i in 0..seq_len {
            pool[s * rows + s * seq_len + i] = w;
        }
    }
    let pool = tape.constant_f64(vec![n, rows], pool)?;
    let pooled = tape.matmul(pool, x)?;
    linear(tape, p, pooled, "head")
}
