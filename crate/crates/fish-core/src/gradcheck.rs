//! Central-difference gradient verification.
//!
//! The oracle rebuilds the forward pass from scratch for every perturbed
//! coordinate, so it shares no state with the tape's backward path. Run it
//! in f64: at the production width the difference quotient itself drowns in
//! rounding.

use alloc::vec::Vec;

use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Result of a gradient check: the largest relative error over all
/// coordinates of all parameters.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Compare tape gradients of `f` against central finite differences.
///
/// `f` receives a fresh tape plus leaf ids for `params` (in order) and must
/// return a scalar loss id. Must be deterministic.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> GradCheck
where
    F: Fn(&mut Tape<f64>, &[ValueId]) -> ValueId,
{
    let run = |values: &[Tensor<f64>]| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &ids);
        let loss_val = tape.value(loss).data()[0];
        let grads = tape.backward(loss).expect("scalar loss");
        let g = ids
            .iter()
            .map(|&id| grads.get(id).map(|s| s.to_vec()).unwrap_or_default())
            .collect();
        (loss_val, g)
    };

    let (_, analytic) = run(params);

    let mut max_rel = 0.0f64;
    let mut coords = 0;
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.numel() {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[ci] += eps;
            let mut minus = params.to_vec();
            minus[pi].data_mut()[ci] -= eps;
            let lp = eval_loss(&f, &plus);
            let lm = eval_loss(&f, &minus);
            let numeric = (lp - lm) / (2.0 * eps);
            let a = if analytic[pi].is_empty() {
                0.0
            } else {
                analytic[pi][ci]
            };
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
            coords += 1;
        }
    }
    GradCheck {
        max_rel_err: max_rel,
        coords,
    }
}

fn eval_loss<F>(f: &F, values: &[Tensor<f64>]) -> f64
where
    F: Fn(&mut Tape<f64>, &[ValueId]) -> ValueId,
{
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = values.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &ids);
    tape.value(loss).data()[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn quadratic_has_exact_gradient() {
        // f(x) = x^2 at x = 3: analytic 6 vs numeric 6.
        let x = Tensor::from_vec(&[1], alloc::vec![3.0]).unwrap();
        let check = grad_check(
            |tape, ids| {
                let sq = tape.mul(ids[0], ids[0]).unwrap();
                tape.sum_all(sq)
            },
            &[x],
            1e-3,
        );
        assert!(check.max_rel_err < 1e-6, "{check:?}");
    }

    #[test]
    fn rmsnorm_then_sum_checks_out() {
        let mut rng = stream(21, Stream::Test(0));
        let x = Tensor::<f64>::randn(&[3, 6], 1.0, &mut rng);
        let g = Tensor::<f64>::randn(&[6], 0.5, &mut rng);
        let check = grad_check(
            |tape, ids| {
                let y = tape.rmsnorm(ids[0], ids[1], 1e-6).unwrap();
                tape.sum_all(y)
            },
            &[x, g],
            1e-4,
        );
        assert!(check.max_rel_err < 1e-3, "{check:?}");
    }

    #[test]
    fn matmul_3x4_times_4x2_matches_finite_differences() {
        let mut rng = stream(22, Stream::Test(1));
        let a = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[4, 2], 1.0, &mut rng);
        let check = grad_check(
            |tape, ids| {
                let c = tape.matmul(ids[0], ids[1]).unwrap();
                // Square so the loss is not linear in the inputs.
                let sq = tape.mul(c, c).unwrap();
                tape.sum_all(sq)
            },
            &[a, b],
            1e-4,
        );
        assert!(check.max_rel_err < 1e-3, "{check:?}");
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let mut rng = stream(23, Stream::Test(2));
        let x = Tensor::<f64>::randn(&[2, 16], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[3, 2, 3], 0.5, &mut rng);
        let b = Tensor::<f64>::randn(&[3], 0.1, &mut rng);
        let check = grad_check(
            |tape, ids| {
                let y = tape.conv1d(ids[0], ids[1], Some(ids[2]), 2, 1, 0).unwrap();
                let sq = tape.mul(y, y).unwrap();
                tape.sum_all(sq)
            },
            &[x, w, b],
            1e-4,
        );
        assert!(check.max_rel_err < 1e-3, "{check:?}");
    }
}
