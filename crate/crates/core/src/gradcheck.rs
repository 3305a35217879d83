//! Central finite-difference checking of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Worst-case disagreement between analytic and numeric gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// Max over inputs of `‖g_a − g_n‖ / max(‖g_a‖, ‖g_n‖)`; zero when both vanish.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences of step `h`. Every input is treated as trainable.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_grad(true)).collect();
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.param(t)).collect();
        let out = f(&tape, &vars)?;
        if out.shape().iter().product::<usize>() != 1 {
            return Err(Error::Contract("gradient check needs a scalar function".into()));
        }
        Ok(out.item())
    };

    let tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t)).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheck { max_rel_error: 0.0, max_abs_error: 0.0 };
    let mut probe = leaves.clone();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.leaf(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; leaves[i].len()]);
        let mut numeric = vec![0.0; leaves[i].len()];
        for k in 0..leaves[i].len() {
            let x = leaves[i].data()[k];
            probe[i].data_mut()[k] = x + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[k] = x - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[k] = x;
            numeric[k] = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel = if scale > 0.0 { norm(&diff) / scale } else { 0.0 };
        let abs = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        report.max_rel_error = report.max_rel_error.max(rel);
        report.max_abs_error = report.max_abs_error.max(abs);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_matches() {
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = check(&[x], 1e-5, |_, v| Ok(v[0].square().mul(&v[0])?.sum())).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn wrong_rule_is_caught() {
        // relu has zero slope at negative inputs; exp does not.
        let x = Tensor::new(&[2], vec![-1.0, -2.0]).unwrap();
        let r = check(&[x], 1e-5, |_, v| Ok(v[0].relu().sum().add(&v[0].mul_scalar(0.0).exp().sum())?)).unwrap();
        assert!(r.max_rel_error < 1e-9);
        let bad = check(&[Tensor::scalar(1.0)], 1e-5, |t, v| {
            // Constant built from the input value: the tape sees no dependence.
            let c = t.constant(Tensor::scalar(v[0].item() * 3.0));
            Ok(c.add(&v[0].mul_scalar(0.0))?)
        })
        .unwrap();
        assert!(bad.max_rel_error > 0.5);
    }
}
