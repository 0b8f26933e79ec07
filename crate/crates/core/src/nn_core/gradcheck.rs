//! Central finite-difference gradient checking.
//!
//! Only forward values are used to build the numerical gradient, so the
//! check is independent of the adjoint rules it validates.

use super::{NnError, Tape, Tensor, Var};

/// Worst per-tensor relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
}

/// Checks the gradient of the scalar built by `f` with respect to every
/// input, using central differences with the given step.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck, NnError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NnError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).get(0, 0))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = GradCheck {
        max_relative_error: 0.0,
        max_abs_error: 0.0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input);
        let mut numeric = Tensor::zeros(input.rows(), input.cols());
        for i in 0..input.len() {
            let original = input.data()[i];
            work[k].data_mut()[i] = original + step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = original - step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = original;
            numeric.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        let diff = analytic.max_abs_diff(&numeric);
        let scale = analytic.norm().max(numeric.norm());
        let diff_norm = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let relative = if scale > 0.0 { diff_norm / scale } else { 0.0 };
        worst.max_relative_error = worst.max_relative_error.max(relative);
        worst.max_abs_error = worst.max_abs_error.max(diff);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn assert_passes(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var, NnError>) {
        let check = check_gradients(inputs, 1e-5, f).unwrap();
        assert!(check.max_relative_error < 1e-4, "{check:?}");
    }

    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let a = random(&mut rng, 4, 3);
            let b = random(&mut rng, 3, 2);
            let row = random(&mut rng, 1, 3);
            let col = random(&mut rng, 4, 1);
            let w = random(&mut rng, 4, 2);
            assert_passes(&[a.clone(), b.clone(), w.clone()], |t, v| {
                let y = t.matmul(v[0], v[1])?;
                let z = t.mul(y, v[2])?;
                Ok(t.sum(z))
            });
            assert_passes(&[a.clone(), row.clone(), col.clone()], |t, v| {
                let y = t.add(v[0], v[1])?;
                let z = t.mul(y, v[2])?;
                let e = t.exp(z);
                Ok(t.sum(e))
            });
            let positive = a.map(|x| x.abs() + 0.5);
            assert_passes(&[positive], |t, v| {
                let l = t.log(v[0]);
                let s = t.scale(l, 1.7);
                let r = t.leaky_relu(s, 0.2);
                let q = t.relu(r);
                let m = t.mul(q, q)?;
                Ok(t.sum(m))
            });
            let seg: Arc<[usize]> = Arc::from(vec![0, 2, 0, 1]);
            assert_passes(&[a.clone(), w.clone()], |t, v| {
                let g = t.gather(v[0], Arc::from(vec![3, 1, 1, 0, 2]))?;
                let s = t.segment_sum(g, Arc::from(vec![0, 1, 1, 2, 0]), 3)?;
                let m = t.segment_mean(v[1], seg.clone(), 3)?;
                let c = t.concat(&[s, m])?;
                let sq = t.mul(c, c)?;
                Ok(t.sum(sq))
            });
            let logits = random(&mut rng, 5, 2);
            let weights = random(&mut rng, 5, 2);
            assert_passes(&[logits, weights], |t, v| {
                let a = t.neighbor_softmax(v[0], Arc::from(vec![0, 1, 0, 0, 1]), 2)?;
                let y = t.mul(a, v[1])?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum(y2))
            });
            let target = random(&mut rng, 4, 3);
            assert_passes(&[a.clone(), target], |t, v| {
                t.mse_loss(v[0], v[1], Arc::from(vec![true, false, true, true]))
            });
        }
    }
}
