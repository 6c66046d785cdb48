use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{PinsError, Result};
use crate::models::ParamRegistry;

/// Per-parameter values keyed by parameter name, in registry order.
pub type ScoreMap = IndexMap<String, Vec<f32>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Magnitude,
    Sensitivity,
    Pins,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Magnitude, Criterion::Sensitivity, Criterion::Pins];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Magnitude => "magnitude",
            Criterion::Sensitivity => "sensitivity",
            Criterion::Pins => "pins",
        }
    }
}

/// `|theta|`.
pub fn score_magnitude(reg: &ParamRegistry) -> ScoreMap {
    reg.prunable()
        .map(|(name, e)| (name.clone(), e.tensor.data().iter().map(|v| v.abs()).collect()))
        .collect()
}

fn grads_of<'a>(reg: &'a ParamRegistry, name: &str) -> Result<&'a [f32]> {
    reg.get(name)
        .and_then(|e| e.tensor.grad())
        .ok_or_else(|| PinsError::State(format!("no gradient for {name}")))
}

/// `|g * theta|`: first-order loss change from zeroing each coordinate.
pub fn score_sensitivity(reg: &ParamRegistry) -> Result<ScoreMap> {
    reg.prunable()
        .map(|(name, e)| {
            let g = grads_of(reg, name)?;
            let s = e
                .tensor
                .data()
                .iter()
                .zip(g)
                .map(|(&t, &g)| (g as f64 * t as f64).abs() as f32)
                .collect();
            Ok((name.clone(), s))
        })
        .collect()
}

/// Knapsack item value `-g * update - g * theta`, where `update` is the
/// step the optimizer proposes for this iteration. Keeping the top-r values
/// minimizes the linearized loss change under a cardinality-r constraint.
pub fn score_pins(reg: &ParamRegistry, proposal: &ScoreMap) -> Result<ScoreMap> {
    reg.prunable()
        .map(|(name, e)| {
            let g = grads_of(reg, name)?;
            let upd = proposal
                .get(name)
                .ok_or_else(|| PinsError::State(format!("no proposed update for {name}")))?;
            if upd.len() != g.len() {
                return Err(PinsError::State(format!("proposed update for {name} has wrong length")));
            }
            let s = e
                .tensor
                .data()
                .iter()
                .zip(g)
                .zip(upd)
                .map(|((&t, &g), &u)| {
                    let (t, g, u) = (t as f64, g as f64, u as f64);
                    (-g * u - g * t) as f32
                })
                .collect();
            Ok((name.clone(), s))
        })
        .collect()
}

pub fn score(criterion: Criterion, reg: &ParamRegistry, proposal: &ScoreMap) -> Result<ScoreMap> {
    match criterion {
        Criterion::Magnitude => Ok(score_magnitude(reg)),
        Criterion::Sensitivity => score_sensitivity(reg),
        Criterion::Pins => score_pins(reg, proposal),
    }
}

/// Raw scores and their exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceState {
    pub raw: ScoreMap,
    pub ema: ScoreMap,
    beta: f32,
    initialized: IndexMap<String, bool>,
}

impl ImportanceState {
    pub fn new(beta: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(PinsError::Config(format!("ema beta {beta} not in [0, 1)")));
        }
        Ok(ImportanceState {
            raw: ScoreMap::new(),
            ema: ScoreMap::new(),
            beta,
            initialized: IndexMap::new(),
        })
    }

    pub fn beta(&self) -> f32 {
        self.beta
    }

    pub fn is_initialized(&self, name: &str) -> bool {
        self.initialized.get(name).copied().unwrap_or(false)
    }

    /// `ema <- beta * ema + (1 - beta) * raw`; the first update of an entry
    /// copies `raw`.
    pub fn update(&mut self, raw: ScoreMap) -> Result<()> {
        if !self.raw.is_empty() {
            let same_keys = raw.len() == self.raw.len()
                && raw
                    .iter()
                    .zip(&self.raw)
                    .all(|((a, va), (b, vb))| a == b && va.len() == vb.len());
            if !same_keys {
                return Err(PinsError::State(
                    "score map does not match the tracked parameters".into(),
                ));
            }
        }
        for (name, r) in &raw {
            let first = !self.is_initialized(name);
            if first || self.beta == 0.0 {
                self.ema.insert(name.clone(), r.clone());
            } else {
                let keep = 1.0 - self.beta as f64;
                let ema = self.ema.get_mut(name).expect("initialized entry has ema");
                for (e, &x) in ema.iter_mut().zip(r) {
                    *e = (*e as f64 + keep * (x as f64 - *e as f64)) as f32;
                }
            }
            self.initialized.insert(name.clone(), true);
        }
        self.raw = raw;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over all score values.
pub fn score_histogram(scores: &ScoreMap, bins: usize) -> ScoreHistogram {
    let bins = bins.max(1);
    let all: Vec<f64> = scores.values().flatten().map(|&v| v as f64).collect();
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if all.is_empty() {
        return ScoreHistogram {
            edges: vec![0.0; bins + 1],
            counts: vec![0; bins],
        };
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for v in all {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    ScoreHistogram { edges, counts }
}

impl ScoreHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn reg(theta: &[f32], grad: &[f32]) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        let mut t = Tensor::new(vec![theta.len()], theta.to_vec()).unwrap();
        t.set_grad(grad.to_vec()).unwrap();
        r.insert("w", t, true, 0).unwrap();
        r
    }

    fn one(m: &ScoreMap) -> &[f32] {
        &m["w"]
    }

    #[test]
    fn magnitude_examples() {
        let r = reg(&[-3.0, 0.0, 0.5, -2.0, 1.0], &[0.0; 5]);
        assert_eq!(one(&score_magnitude(&r)), &[3.0, 0.0, 0.5, 2.0, 1.0]);
    }

    #[test]
    fn sensitivity_examples() {
        let r = reg(&[2.0, 5.0, 0.0], &[0.5, 0.0, 3.0]);
        assert_eq!(one(&score_sensitivity(&r).unwrap()), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sensitivity_requires_grads() {
        let mut r = ParamRegistry::new();
        r.insert("w", Tensor::zeros(&[2]), true, 0).unwrap();
        assert!(matches!(score_sensitivity(&r), Err(PinsError::State(_))));
    }

    #[test]
    fn pins_examples_with_sgd_proposal() {
        let lr = 0.1f32;
        let theta = [2.0, 1.0, 0.0];
        let g = [0.5, 0.0, 1.0];
        let r = reg(&theta, &g);
        let mut prop = ScoreMap::new();
        prop.insert("w".into(), g.iter().map(|&g| -lr * g).collect());
        let s = score_pins(&r, &prop).unwrap();
        assert!((s["w"][0] - (-0.975)).abs() < 1e-7);
        assert_eq!(s["w"][1], 0.0);
        assert!((s["w"][2] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn pins_requires_proposal() {
        let r = reg(&[1.0], &[1.0]);
        assert!(matches!(score_pins(&r, &ScoreMap::new()), Err(PinsError::State(_))));
    }

    fn map(v: &[f32]) -> ScoreMap {
        let mut m = ScoreMap::new();
        m.insert("w".into(), v.to_vec());
        m
    }

    #[test]
    fn ema_examples() {
        let mut st = ImportanceState::new(0.0).unwrap();
        st.update(map(&[1.0, 2.0])).unwrap();
        st.update(map(&[-4.0, 0.25])).unwrap();
        assert_eq!(st.ema, st.raw);

        let mut st = ImportanceState::new(0.85).unwrap();
        for _ in 0..10 {
            st.update(map(&[0.3, -7.1])).unwrap();
        }
        assert_eq!(one(&st.ema), &[0.3, -7.1]);

        let mut st = ImportanceState::new(0.5).unwrap();
        st.update(map(&[0.0])).unwrap();
        st.update(map(&[1.0])).unwrap();
        assert_eq!(one(&st.ema), &[0.5]);
    }

    #[test]
    fn ema_shape_mismatch() {
        let mut st = ImportanceState::new(0.5).unwrap();
        st.update(map(&[0.0, 1.0])).unwrap();
        assert!(matches!(st.update(map(&[1.0])), Err(PinsError::State(_))));
        assert!(ImportanceState::new(1.0).is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = score_histogram(&map(&[0.0, 0.1, 0.5, 1.0, 1.0]), 4);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        assert_eq!(h.counts, vec![2, 0, 1, 2]);
        assert!(h.to_csv().starts_with("bin_lo,bin_hi,count\n"));
    }
}
