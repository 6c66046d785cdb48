//! The tape's analytic gradients against central finite differences.

use pinsprune::autograd::{grad_check, Tape, Tensor};

fn main() -> pinsprune::Result<()> {
    let x = Tensor::from_rows(&[vec![0.2, -0.4, 1.1], vec![0.9, 0.3, -0.6]])?;
    let w = Tensor::from_rows(&[vec![0.5, -0.1], vec![0.3, 0.8], vec![-0.7, 0.2]])?;
    let b = Tensor::new(vec![2], vec![0.05, -0.02])?;

    let err = grad_check(
        |t: &mut Tape, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add(h, v[2])?;
            let h = t.layer_norm_rows(h)?;
            let h = t.gelu(h);
            t.cross_entropy(h, &[1, 0])
        },
        &[x.clone(), w.clone(), b.clone()],
    )?;
    println!("matmul + bias + layer norm + gelu + cross entropy: max rel error {err:.2e}");

    let err = grad_check(
        |t: &mut Tape, v| {
            let p = t.matmul(v[0], v[1])?;
            let q = t.softmax_rows(p)?;
            let q = t.scale(q, 3.0);
            t.kl_divergence_both(p, q)
        },
        &[x, w],
    )?;
    println!("softmax + kl divergence: max rel error {err:.2e}");
    Ok(())
}
