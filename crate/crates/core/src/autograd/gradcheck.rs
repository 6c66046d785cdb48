use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Default finite-difference step.
pub const FD_STEP: f32 = 1e-3;

/// Compares analytic gradients of a scalar function against central finite
/// differences and returns the largest relative error
/// `|a - n| / max(1e-8, |a| + |n|)` over all coordinates of all `params`.
///
/// `f` must rebuild its graph from the given leaves and return the scalar
/// output. Perturbed values are rounded to `f32`; the realized step is used
/// as the divisor.
pub fn grad_check<F>(f: F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_with_step(f, params, FD_STEP)
}

pub fn grad_check_with_step<F>(f: F, params: &[Tensor], step: f32) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            grads
                .get(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for pi in 0..params.len() {
        for ci in 0..params[pi].numel() {
            let orig = params[pi].data()[ci];
            let plus = orig + step;
            let minus = orig - step;
            work[pi].data_mut()[ci] = plus;
            let fp = eval(&work)?;
            work[pi].data_mut()[ci] = minus;
            let fm = eval(&work)?;
            work[pi].data_mut()[ci] = orig;

            let numeric = (fp - fm) / (plus as f64 - minus as f64);
            let a = analytic[pi][ci];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
