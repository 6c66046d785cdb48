#![allow(dead_code)]

use pinsprune::autograd::{grad_check, Tape, Tensor, Var};
use pinsprune::models::{
    Activation, Input, MlpConfig, ModelConfig, ParamRegistry, TransformerConfig,
};
use pinsprune::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so a ReLU kink is never straddled.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05f32..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts `v` against fixed random weights so every output coordinate
/// influences the scalar.
fn project(tape: &mut Tape, v: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights);
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=5)
}

/// Finite-difference error of every differentiable tape operation on one
/// random instance.
pub fn primitive_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let (n, k, m) = (dim(&mut r), dim(&mut r), dim(&mut r));
    let mut out = Vec::new();

    let a = random_tensor(&mut r, &[n, k], -1.0, 1.0);
    let b = random_tensor(&mut r, &[k, m], -1.0, 1.0);
    let w_nm = random_tensor(&mut r, &[n, m], -1.0, 1.0);
    out.push((
        "matmul",
        grad_check(
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                project(t, y, &w_nm)
            },
            &[a.clone(), b],
        )
        .unwrap(),
    ));

    let x = random_tensor(&mut r, &[n, k], -1.0, 1.0);
    let y = random_tensor(&mut r, &[n, k], -1.0, 1.0);
    let bias = random_tensor(&mut r, &[k], -1.0, 1.0);
    let w_nk = random_tensor(&mut r, &[n, k], -1.0, 1.0);
    out.push((
        "add",
        grad_check(
            |t, v| {
                let s = t.add(v[0], v[1])?;
                project(t, s, &w_nk)
            },
            &[x.clone(), y.clone()],
        )
        .unwrap(),
    ));
    out.push((
        "add_broadcast",
        grad_check(
            |t, v| {
                let s = t.add(v[0], v[1])?;
                project(t, s, &w_nk)
            },
            &[x.clone(), bias.clone()],
        )
        .unwrap(),
    ));
    out.push((
        "mul",
        grad_check(
            |t, v| {
                let s = t.mul(v[0], v[1])?;
                project(t, s, &w_nk)
            },
            &[x.clone(), y.clone()],
        )
        .unwrap(),
    ));
    out.push((
        "mul_broadcast",
        grad_check(
            |t, v| {
                let s = t.mul(v[0], v[1])?;
                project(t, s, &w_nk)
            },
            &[x.clone(), bias],
        )
        .unwrap(),
    ));

    let xr = away_from_zero(&mut r, &[n, k]);
    out.push((
        "relu",
        grad_check(
            |t, v| {
                let s = t.relu(v[0]);
                project(t, s, &w_nk)
            },
            &[xr],
        )
        .unwrap(),
    ));
    out.push((
        "gelu",
        grad_check(
            |t, v| {
                let s = t.gelu(v[0]);
                project(t, s, &w_nk)
            },
            &[random_tensor(&mut r, &[n, k], -3.0, 3.0)],
        )
        .unwrap(),
    ));
    out.push((
        "softmax_rows",
        grad_check(
            |t, v| {
                let s = t.softmax_rows(v[0])?;
                project(t, s, &w_nk)
            },
            &[random_tensor(&mut r, &[n, k], -2.0, 2.0)],
        )
        .unwrap(),
    ));
    let kk = k + 1;
    let w_nkk = random_tensor(&mut r, &[n, kk], -1.0, 1.0);
    out.push((
        "layer_norm_rows",
        grad_check(
            |t, v| {
                let s = t.layer_norm_rows(v[0])?;
                project(t, s, &w_nkk)
            },
            &[random_tensor(&mut r, &[n, kk], -2.0, 2.0)],
        )
        .unwrap(),
    ));

    let vocab = dim(&mut r) + 1;
    let ids: Vec<usize> = (0..n + 2).map(|_| r.random_range(0..vocab)).collect();
    let w_emb = random_tensor(&mut r, &[ids.len(), k], -1.0, 1.0);
    out.push((
        "embedding",
        grad_check(
            |t, v| {
                let s = t.embedding(v[0], &ids)?;
                project(t, s, &w_emb)
            },
            &[random_tensor(&mut r, &[vocab, k], -1.0, 1.0)],
        )
        .unwrap(),
    ));

    let w_kn = random_tensor(&mut r, &[k, n], -1.0, 1.0);
    out.push((
        "scale_transpose",
        grad_check(
            |t, v| {
                let s = t.scale(v[0], -1.7);
                let s = t.transpose(s)?;
                project(t, s, &w_kn)
            },
            &[x.clone()],
        )
        .unwrap(),
    ));
    let wide = random_tensor(&mut r, &[n, k + 2], -1.0, 1.0);
    let w_n2 = random_tensor(&mut r, &[n, k + 1], -1.0, 1.0);
    out.push((
        "slice_concat",
        grad_check(
            |t, v| {
                let a = t.slice_cols(v[0], 0, 1)?;
                let b = t.slice_cols(v[0], 2, k + 2)?;
                let s = t.concat_cols(&[b, a])?;
                project(t, s, &w_n2)
            },
            &[wide],
        )
        .unwrap(),
    ));

    let classes = dim(&mut r) + 1;
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    out.push((
        "cross_entropy",
        grad_check(
            |t, v| t.cross_entropy(v[0], &labels),
            &[random_tensor(&mut r, &[n, classes], -2.0, 2.0)],
        )
        .unwrap(),
    ));
    let p = random_tensor(&mut r, &[n, classes], -2.0, 2.0);
    let q = random_tensor(&mut r, &[n, classes], -2.0, 2.0);
    out.push((
        "kl_divergence",
        grad_check(
            |t, v| {
                // the first argument is a fixed target
                let target = t.constant(&p);
                t.kl_divergence(target, v[0])
            },
            &[q.clone()],
        )
        .unwrap(),
    ));
    out.push((
        "kl_divergence_both",
        grad_check(|t, v| t.kl_divergence_both(v[0], v[1]), &[p, q]).unwrap(),
    ));
    out
}

/// Smallest absolute hidden pre-activation of an MLP on `input`.
fn relu_margin(cfg: &MlpConfig, reg: &ParamRegistry, input: &Input) -> f64 {
    let Input::Dense(x) = input else {
        return f64::INFINITY;
    };
    let mut tape = Tape::new();
    let mut h = tape.constant(x);
    let mut margin = f64::INFINITY;
    for i in 0..cfg.hidden_dims.len() {
        let w = tape.constant(&reg.get(&format!("layer{i}.weight")).unwrap().tensor);
        let b = tape.constant(&reg.get(&format!("layer{i}.bias")).unwrap().tensor);
        let z = tape.matmul(h, w).unwrap();
        let z = tape.add(z, b).unwrap();
        margin = tape.value_f64(z).iter().fold(margin, |m, v| m.min(v.abs()));
        h = tape.relu(z);
    }
    margin
}

/// Initial parameters with biases redrawn away from zero; zero biases put
/// ReLU pre-activations exactly on the kink whenever a row is inactive.
fn check_registry(arch: &ModelConfig, seed: u64) -> ParamRegistry {
    let mut reg = arch.init_registry().unwrap();
    let mut r = rng(seed ^ 0xb1a5);
    for (name, e) in reg.iter_mut() {
        if name.ends_with(".bias") {
            let shape = e.tensor.shape().to_vec();
            e.tensor = away_from_zero(&mut r, &shape);
        }
    }
    reg
}

pub struct ModelCase {
    pub arch: ModelConfig,
    pub reg: ParamRegistry,
    pub input: Input,
    pub labels: Vec<usize>,
}

/// A random small MLP instance. ReLU instances are redrawn until no hidden
/// pre-activation lies within 0.02 of the kink.
pub fn random_mlp(seed: u64, activation: Activation) -> ModelCase {
    for attempt in 0u64.. {
        let s = seed.wrapping_mul(1000).wrapping_add(attempt);
        let mut r = rng(s);
        let input_dim = r.random_range(1..=4);
        let hidden: Vec<usize> =
            (0..r.random_range(1..=2)).map(|_| r.random_range(2..=5)).collect();
        let classes = r.random_range(2..=4);
        let mut cfg = MlpConfig::new(input_dim, hidden, classes);
        cfg.activation = activation;
        cfg.seed = s;
        let n = r.random_range(1..=6);
        let input = Input::Dense(random_tensor(&mut r, &[n, input_dim], -2.0, 2.0));
        let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
        let arch = ModelConfig::Mlp(cfg.clone());
        let reg = check_registry(&arch, s);
        if activation == Activation::Gelu || relu_margin(&cfg, &reg, &input) >= 0.02 {
            return ModelCase {
                arch,
                reg,
                input,
                labels,
            };
        }
    }
    unreachable!()
}

pub fn random_transformer(seed: u64) -> ModelCase {
    let mut r = rng(seed);
    let heads = r.random_range(1..=2);
    // layer norm over fewer than three features is nearly a sign function
    let head_dim = if heads == 1 { r.random_range(3..=4) } else { r.random_range(2..=3) };
    let cfg = TransformerConfig {
        vocab_size: r.random_range(2..=4),
        embed_dim: heads * head_dim,
        num_heads: heads,
        num_layers: r.random_range(1..=2),
        ff_dim: r.random_range(2..=6),
        max_seq_len: 4,
        num_classes: r.random_range(2..=3),
        seed,
    };
    let seq_len = r.random_range(1..=4);
    let n = r.random_range(1..=3);
    let ids = (0..n * seq_len).map(|_| r.random_range(0..cfg.vocab_size)).collect();
    let labels = (0..n).map(|_| r.random_range(0..cfg.num_classes)).collect();
    let arch = ModelConfig::Transformer(cfg);
    ModelCase {
        reg: check_registry(&arch, seed),
        arch,
        input: Input::Tokens { seq_len, ids },
        labels,
    }
}

fn model_loss(arch: &ModelConfig, reg: &ParamRegistry, input: &Input, labels: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let (logits, _) = arch.forward(reg, &mut tape, input, false).unwrap();
    let loss = tape.cross_entropy(logits, labels).unwrap();
    tape.scalar(loss)
}

fn central(arch: &ModelConfig, work: &mut ParamRegistry, case: &ModelCase, name: &str, i: usize, h: f32) -> f64 {
    let orig = case.reg.get(name).unwrap().tensor.data()[i];
    let (plus, minus) = (orig + h, orig - h);
    work.get_mut(name).unwrap().tensor.data_mut()[i] = plus;
    let fp = model_loss(arch, work, &case.input, &case.labels);
    work.get_mut(name).unwrap().tensor.data_mut()[i] = minus;
    let fm = model_loss(arch, work, &case.input, &case.labels);
    work.get_mut(name).unwrap().tensor.data_mut()[i] = orig;
    (fp - fm) / (plus as f64 - minus as f64)
}

/// Largest relative error between the model's backward pass and finite
/// differences of its cross-entropy loss over every parameter coordinate.
/// Returns the error against plain central differences with the default
/// step and against their Richardson extrapolation from steps `h` and `h/2`,
/// which removes the `O(h^2)` truncation term that dominates on coordinates
/// with very small gradients.
pub fn model_grad_error(case: &ModelCase) -> (f64, f64) {
    let arch = &case.arch;
    let mut tape = Tape::new();
    let (logits, bound) = arch.forward(&case.reg, &mut tape, &case.input, true).unwrap();
    let loss = tape.cross_entropy(logits, &case.labels).unwrap();
    let grads = tape.backward(loss).unwrap();

    let h = pinsprune::autograd::FD_STEP;
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
    let (mut plain, mut extrapolated) = (0.0f64, 0.0f64);
    let mut work = case.reg.clone();
    for (name, var) in bound.iter() {
        let n = case.reg.get(name).unwrap().tensor.numel();
        let analytic = grads.get(var).map(<[f64]>::to_vec).unwrap_or(vec![0.0; n]);
        for (i, &a) in analytic.iter().enumerate() {
            let d1 = central(arch, &mut work, case, name, i, h);
            let d2 = central(arch, &mut work, case, name, i, h / 2.0);
            plain = plain.max(rel(a, d1));
            extrapolated = extrapolated.max(rel(a, (4.0 * d2 - d1) / 3.0));
        }
    }
    (plain, extrapolated)
}
