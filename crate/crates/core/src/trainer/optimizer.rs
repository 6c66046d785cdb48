use indexmap::IndexMap;

use super::config::{OptimizerConfig, OptimizerKind};
use crate::error::{PinsError, Result};
use crate::models::ParamRegistry;
use crate::pruning::ScoreMap;

/// Per-parameter optimizer state (AdamW moments; empty for SGD).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub moments: IndexMap<String, (Vec<f32>, Vec<f32>)>,
}

/// A computed but uncommitted update.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub deltas: ScoreMap,
    next: OptimizerState,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Optimizer {
            cfg,
            state: OptimizerState {
                step: 0,
                moments: IndexMap::new(),
            },
        }
    }

    pub fn lr(&self) -> f32 {
        self.cfg.lr()
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Update every parameter would receive this step, computed from the
    /// stored gradients. Optimizer state is left untouched.
    pub fn propose(&self, reg: &ParamRegistry) -> Result<Proposal> {
        let lr = self.cfg.lr();
        let mut deltas = ScoreMap::new();
        let mut next = self.state.clone();
        next.step += 1;
        for (name, e) in reg.iter() {
            let g = e
                .tensor
                .grad()
                .ok_or_else(|| PinsError::State(format!("no gradient for {name}")))?;
            let delta: Vec<f32> = match self.cfg.kind {
                OptimizerKind::Sgd => g.iter().map(|&g| -lr * g).collect(),
                OptimizerKind::Adamw => {
                    let (b1, b2) = (self.cfg.beta1 as f64, self.cfg.beta2 as f64);
                    let (eps, wd) = (self.cfg.eps as f64, self.cfg.weight_decay as f64);
                    let t = next.step as i32;
                    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                    let (m, v) = next
                        .moments
                        .entry(name.clone())
                        .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
                    let mut out = Vec::with_capacity(g.len());
                    for i in 0..g.len() {
                        let gi = g[i] as f64;
                        let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                        let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                        m[i] = mi as f32;
                        v[i] = vi as f32;
                        let step = (mi / c1) / ((vi / c2).sqrt() + eps)
                            + wd * e.tensor.data()[i] as f64;
                        out.push((-(lr as f64) * step) as f32);
                    }
                    out
                }
            };
            deltas.insert(name.clone(), delta);
        }
        Ok(Proposal { deltas, next })
    }

    /// Applies `theta <- theta + delta` and advances the optimizer state.
    pub fn commit(&mut self, reg: &mut ParamRegistry, proposal: Proposal) -> Result<()> {
        for (name, e) in reg.iter_mut() {
            let d = proposal
                .deltas
                .get(name)
                .ok_or_else(|| PinsError::State(format!("proposal has no update for {name}")))?;
            for (v, &dv) in e.tensor.data_mut().iter_mut().zip(d) {
                *v += dv;
            }
        }
        self.state = proposal.next;
        Ok(())
    }
}

/// Proposed update of `reg` under the optimizer without committing it.
pub fn optimizer_step_proposal(opt: &Optimizer, reg: &ParamRegistry) -> Result<ScoreMap> {
    Ok(opt.propose(reg)?.deltas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn reg(theta: f32, g: f32) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        let mut t = Tensor::new(vec![1], vec![theta]).unwrap();
        t.set_grad(vec![g]).unwrap();
        r.insert("w", t, true, 0).unwrap();
        r
    }

    #[test]
    fn sgd_proposal() {
        let opt = Optimizer::new(OptimizerConfig::sgd(0.1));
        let d = optimizer_step_proposal(&opt, &reg(1.0, 2.0)).unwrap();
        assert!((d["w"][0] + 0.2).abs() < 1e-7);
    }

    #[test]
    fn adamw_first_step_is_unit_scaled() {
        let opt = Optimizer::new(OptimizerConfig {
            lr: Some(0.01),
            ..Default::default()
        });
        let d = optimizer_step_proposal(&opt, &reg(3.0, 1.0)).unwrap();
        assert!((d["w"][0] + 0.01).abs() < 1e-9, "{}", d["w"][0]);
        assert_eq!(opt.state().step, 0);
    }

    #[test]
    fn zero_gradient_gives_zero_update() {
        let opt = Optimizer::new(OptimizerConfig::default());
        let d = optimizer_step_proposal(&opt, &reg(3.0, 0.0)).unwrap();
        assert_eq!(d["w"][0], 0.0);
    }

    #[test]
    fn commit_advances_state() {
        let mut opt = Optimizer::new(OptimizerConfig::default());
        let mut r = reg(1.0, 1.0);
        let p = opt.propose(&r).unwrap();
        opt.commit(&mut r, p).unwrap();
        assert_eq!(opt.state().step, 1);
        assert!(r.get("w").unwrap().tensor.data()[0] < 1.0);
    }

    #[test]
    fn missing_grads() {
        let mut r = ParamRegistry::new();
        r.insert("w", Tensor::zeros(&[1]), true, 0).unwrap();
        let opt = Optimizer::new(OptimizerConfig::default());
        assert!(matches!(opt.propose(&r), Err(PinsError::State(_))));
    }
}
