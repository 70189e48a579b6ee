//! Finite-difference verification of analytic gradients.
//!
//! Checks run in f64 ("shadow mode"): the caller casts its tensors up,
//! evaluates the op through the same generic code paths, and compares the
//! analytic backward against central differences of a scalar projection of
//! the output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative error with a small absolute floor so near-zero gradients are
/// compared absolutely.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0, |acc, (&x, &y)| acc + x * y)
}

/// Verify `backward` against central finite differences of `forward`.
///
/// `forward` maps the inputs to the op output; `backward` maps
/// (inputs, upstream gradient) to one gradient per input, in order. The
/// output is projected onto a random direction to get a scalar loss, so a
/// single backward call checks every input element. Every element is
/// perturbed unless `max_per_input` limits the sample.
pub fn grad_check<F, B>(
    forward: F,
    backward: B,
    inputs: &[Tensor<f64>],
    eps: f64,
    tolerance: f64,
    max_per_input: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
{
    if inputs.is_empty() {
        return Err(Error::arg("grad_check", "no inputs"));
    }
    if eps <= 0.0 || tolerance <= 0.0 {
        return Err(Error::arg("grad_check", "eps and tolerance must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out0 = forward(inputs)?;
    out0.check_finite("grad_check", "forward output")?;
    let proj = {
        let mut p = Tensor::<f64>::zeros(out0.shape());
        for v in p.data_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
        }
        p
    };

    let analytic = backward(inputs, &proj)?;
    if analytic.len() != inputs.len() {
        return Err(Error::arg(
            "grad_check",
            format!("backward returned {} grads for {} inputs", analytic.len(), inputs.len()),
        ));
    }
    for (g, x) in analytic.iter().zip(inputs) {
        if g.shape() != x.shape() {
            return Err(Error::shape(
                "grad_check",
                format!("grad shape {:?} vs input {:?}", g.shape(), x.shape()),
            ));
        }
        g.check_finite("grad_check", "analytic gradient")?;
    }

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for j in 0..inputs.len() {
        let len = inputs[j].len();
        let indices: Vec<usize> = match max_per_input {
            Some(maxn) if len > maxn => {
                rand::seq::index::sample(&mut rng, len, maxn).into_vec()
            }
            _ => (0..len).collect(),
        };
        for i in indices {
            let x0 = work[j].data()[i];
            work[j].data_mut()[i] = x0 + eps;
            let lp = dot(&forward(&work)?, &proj);
            work[j].data_mut()[i] = x0 - eps;
            let lm = dot(&forward(&work)?, &proj);
            work[j].data_mut()[i] = x0;
            if !lp.is_finite() || !lm.is_finite() {
                return Err(Error::NonFinite {
                    op: "grad_check",
                    context: format!("perturbed loss at input {j} element {i}"),
                });
            }
            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic[j].data()[i];
            max_rel = max_rel.max(rel_err(a, numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        checked,
        tolerance,
        pass: max_rel < tolerance,
    })
}

/// Uniformly random tensor in [lo, hi], seeded; test helper used widely.
pub fn random_tensor<T: Scalar>(
    shape: super::Shape,
    lo: f64,
    hi: f64,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64(lo + (hi - lo) * rng.gen::<f64>());
    }
    t
}
