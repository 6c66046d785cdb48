use std::cmp::Ordering;

use indexmap::IndexMap;

use super::criteria::ScoreMap;
use crate::autograd::Tensor;
use crate::error::{PinsError, Result};
use crate::models::{ParamEntry, ParamRegistry};

/// Binary keep-masks for every prunable parameter at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningDecision {
    pub masks: IndexMap<String, Vec<bool>>,
    pub kept_count: usize,
    pub step: usize,
}

impl PruningDecision {
    /// Registry holding each mask as a 0/1 tensor shaped like its parameter,
    /// suitable for the model container.
    pub fn snapshot(&self, reg: &ParamRegistry) -> Result<ParamRegistry> {
        let mut out = ParamRegistry::new();
        for (name, mask) in &self.masks {
            let e = reg
                .get(name)
                .ok_or_else(|| PinsError::State(format!("unknown parameter {name}")))?;
            let values = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            out.insert_entry(
                name.clone(),
                ParamEntry {
                    tensor: Tensor::new(e.tensor.shape().to_vec(), values)?,
                    prunable: true,
                    layer_index: e.layer_index,
                    mask: mask.clone(),
                },
            )?;
        }
        Ok(out)
    }
}

/// Keeps the `r` highest scores across all parameters. Ties go to the
/// lexicographically smaller parameter name, then the lower row-major index.
pub fn build_mask(scores: &ScoreMap, r: usize, step: usize) -> Result<PruningDecision> {
    let d: usize = scores.values().map(Vec::len).sum();
    if r > d {
        return Err(PinsError::rejected(
            "build_mask",
            format!("cannot keep {r} of {d} coordinates"),
        ));
    }
    let mut by_name: Vec<(usize, &String)> = scores.keys().enumerate().collect();
    by_name.sort_by(|a, b| a.1.cmp(b.1));
    let mut name_rank = vec![0usize; scores.len()];
    for (rank, (idx, _)) in by_name.iter().enumerate() {
        name_rank[*idx] = rank;
    }

    // (score, name rank, coordinate, entry index)
    let mut items: Vec<(f32, usize, usize, usize)> = Vec::with_capacity(d);
    for (ei, vals) in scores.values().enumerate() {
        items.extend(vals.iter().enumerate().map(|(ci, &s)| (s, name_rank[ei], ci, ei)));
    }
    let order = |a: &(f32, usize, usize, usize), b: &(f32, usize, usize, usize)| -> Ordering {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    };

    let mut masks: IndexMap<String, Vec<bool>> = scores
        .iter()
        .map(|(n, v)| (n.clone(), vec![false; v.len()]))
        .collect();
    if r > 0 {
        if r < d {
            items.select_nth_unstable_by(r - 1, order);
        }
        for &(_, _, ci, ei) in &items[..r] {
            masks[ei][ci] = true;
        }
    }
    Ok(PruningDecision {
        masks,
        kept_count: r,
        step,
    })
}

/// `theta <- theta * M` for every prunable parameter; stores the masks.
pub fn apply_mask(reg: &mut ParamRegistry, decision: &PruningDecision) -> Result<()> {
    for name in decision.masks.keys() {
        match reg.get(name) {
            Some(e) if e.prunable => {}
            _ => {
                return Err(PinsError::State(format!(
                    "decision names {name}, which is not a prunable parameter"
                )))
            }
        }
    }
    for (name, e) in reg.iter_mut().filter(|(_, e)| e.prunable) {
        let mask = decision
            .masks
            .get(name)
            .ok_or_else(|| PinsError::State(format!("decision has no mask for {name}")))?;
        if mask.len() != e.tensor.numel() {
            return Err(PinsError::State(format!(
                "mask for {name} has {} entries, parameter has {}",
                mask.len(),
                e.tensor.numel()
            )));
        }
    }
    for (name, e) in reg.iter_mut().filter(|(_, e)| e.prunable) {
        let mask = &decision.masks[name.as_str()];
        for (v, &m) in e.tensor.data_mut().iter_mut().zip(mask) {
            if !m {
                *v = 0.0;
            }
        }
        e.mask.clone_from(mask);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: &[f32]) -> ScoreMap {
        let mut m = ScoreMap::new();
        m.insert("w".into(), v.to_vec());
        m
    }

    #[test]
    fn top_r_examples() {
        let d = build_mask(&single(&[3.0, -1.0, 2.0, 0.0]), 2, 0).unwrap();
        assert_eq!(d.masks["w"], vec![true, false, true, false]);
        let d = build_mask(&single(&[3.0, -1.0, 2.0, 0.0]), 4, 0).unwrap();
        assert!(d.masks["w"].iter().all(|&m| m));
        let d = build_mask(&single(&[1.0, 1.0, 0.0]), 1, 0).unwrap();
        assert_eq!(d.masks["w"], vec![true, false, false]);
        assert!(build_mask(&single(&[1.0]), 2, 0).is_err());
    }

    #[test]
    fn ties_prefer_smaller_name() {
        let mut m = ScoreMap::new();
        m.insert("b".into(), vec![1.0]);
        m.insert("a".into(), vec![1.0]);
        let d = build_mask(&m, 1, 0).unwrap();
        assert_eq!(d.masks["a"], vec![true]);
        assert_eq!(d.masks["b"], vec![false]);
    }

    fn registry() -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        reg.insert("w", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap(), true, 0)
            .unwrap();
        reg.insert("b", Tensor::new(vec![2], vec![5.0, 6.0]).unwrap(), false, 0)
            .unwrap();
        reg
    }

    fn decision(mask: Vec<bool>) -> PruningDecision {
        let kept_count = mask.iter().filter(|&&m| m).count();
        let mut masks = IndexMap::new();
        masks.insert("w".to_string(), mask);
        PruningDecision {
            masks,
            kept_count,
            step: 0,
        }
    }

    #[test]
    fn apply_examples() {
        let mut reg = registry();
        apply_mask(&mut reg, &decision(vec![true; 4])).unwrap();
        assert_eq!(reg, registry());

        apply_mask(&mut reg, &decision(vec![false; 4])).unwrap();
        assert!(reg.get("w").unwrap().tensor.data().iter().all(|&v| v == 0.0));
        assert_eq!(reg.get("b").unwrap().tensor.data(), &[5.0, 6.0]);

        let mut once = registry();
        let dec = decision(vec![true, false, false, true]);
        apply_mask(&mut once, &dec).unwrap();
        let mut twice = once.clone();
        apply_mask(&mut twice, &dec).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn apply_shape_mismatch() {
        let mut reg = registry();
        assert!(matches!(
            apply_mask(&mut reg, &decision(vec![true; 3])),
            Err(PinsError::State(_))
        ));
    }
}
