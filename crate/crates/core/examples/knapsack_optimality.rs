//! Keeping the top-r PINS scores solves the cardinality-constrained
//! keep/prune problem exactly. Checks that against brute force on random
//! instances and compares the linearized loss change of each criterion.

use pinsprune::autograd::Tensor;
use pinsprune::models::ParamRegistry;
use pinsprune::pruning::{
    build_mask, knapsack_oracle, linearized_delta_loss, score_magnitude, score_pins,
    score_sensitivity, ScoreMap,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pinsprune::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let lr = 0.1f32;
    let (d, r) = (10, 4);
    let theta: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut t = Tensor::new(vec![d], theta.clone())?;
    t.set_grad(grads.clone())?;
    let mut reg = ParamRegistry::new();
    reg.insert("w", t, true, 0)?;
    let update: ScoreMap = [("w".to_string(), grads.iter().map(|g| -lr * g).collect())]
        .into_iter()
        .collect();

    println!("{:>3} {:>8} {:>8} {:>9}", "i", "theta", "grad", "pins");
    let pins = score_pins(&reg, &update)?;
    for i in 0..d {
        println!("{i:>3} {:>8.3} {:>8.3} {:>9.4}", theta[i], grads[i], pins["w"][i]);
    }

    let oracle = knapsack_oracle(&theta, &grads, lr, r)?;
    println!("\nkeep {r} of {d}; exhaustive minimizer keeps {:?}", oracle.kept);
    for (name, scores) in [
        ("magnitude", score_magnitude(&reg)),
        ("sensitivity", score_sensitivity(&reg)?),
        ("pins", pins),
    ] {
        let mask = &build_mask(&scores, r, 0)?.masks["w"];
        let kept: Vec<usize> = (0..d).filter(|&i| mask[i]).collect();
        let dl = linearized_delta_loss(&theta, &grads, lr, mask);
        println!("{name:>12}: keeps {kept:?}  linearized loss change {dl:+.5}");
    }

    let mut agree = 0;
    for _ in 0..500 {
        let d = rng.random_range(4..=12);
        let r = rng.random_range(1..d);
        let theta: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut t = Tensor::new(vec![d], theta.clone())?;
        t.set_grad(grads.clone())?;
        let mut reg = ParamRegistry::new();
        reg.insert("w", t, true, 0)?;
        let update: ScoreMap = [("w".to_string(), grads.iter().map(|g| -lr * g).collect())]
            .into_iter()
            .collect();
        let mask = &build_mask(&score_pins(&reg, &update)?, r, 0)?.masks["w"];
        let kept: Vec<usize> = (0..d).filter(|&i| mask[i]).collect();
        agree += usize::from(kept == knapsack_oracle(&theta, &grads, lr, r)?.kept);
    }
    println!("\ntop-r agrees with brute force on {agree}/500 random instances");
    Ok(())
}
