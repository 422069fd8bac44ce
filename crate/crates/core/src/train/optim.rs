//! Momentum SGD with coupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

/// Velocity buffers, created on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Vec<f32>>,
}

/// `v ← momentum·v + (g + weight_decay·p)`, then `p ← p − lr·v`.
///
/// Every gradient is checked before anything is updated, so a non-finite
/// gradient leaves parameters and state untouched.
pub fn sgd_step(params: &mut [Tensor], grads: &[&[f32]], state: &mut SgdState, hp: SgdParams) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::shape(format!(
                "gradient {i} has {} values for {} parameters",
                g.len(),
                p.len()
            )));
        }
        let bad = g.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(Error::Numerical(format!(
                "gradient of parameter {i} (shape {:?}) has {bad} non-finite values",
                p.shape()
            )));
        }
    }
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = hp.momentum * *vi + (gi + hp.weight_decay * *w);
            *w -= hp.lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(lr: f32, momentum: f32, weight_decay: f32) -> SgdParams {
        SgdParams {
            lr,
            momentum,
            weight_decay,
        }
    }

    #[test]
    fn plain_gradient_descent_without_momentum_or_decay() {
        let mut p = vec![Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let mut s = SgdState::default();
        sgd_step(&mut p, &[&[0.5, 1.0, -1.0]], &mut s, hp(0.1, 0.0, 0.0)).unwrap();
        assert_eq!(p[0].data(), &[1.0 - 0.05, -2.0 - 0.1, 0.5 + 0.1]);
    }

    #[test]
    fn zero_gradient_without_decay_changes_nothing() {
        let mut p = vec![Tensor::new(&[2], vec![3.0, 4.0]).unwrap()];
        let mut s = SgdState::default();
        for _ in 0..5 {
            sgd_step(&mut p, &[&[0.0, 0.0]], &mut s, hp(0.1, 0.9, 0.0)).unwrap();
        }
        assert_eq!(p[0].data(), &[3.0, 4.0]);
    }

    #[test]
    fn decay_is_added_to_the_gradient() {
        let mut p = vec![Tensor::new(&[1], vec![2.0]).unwrap()];
        let mut s = SgdState::default();
        sgd_step(&mut p, &[&[0.0]], &mut s, hp(0.5, 0.9, 0.1)).unwrap();
        assert_eq!(p[0].data(), &[2.0 - 0.5 * 0.2]);
        assert_eq!(s.velocity[0], vec![0.2]);
    }

    #[test]
    fn quadratic_bowl_matches_the_linear_recurrence() {
        // f(x) = ½‖x‖²: per coordinate (x, v) evolves by
        // v' = m·v + x, x' = x − lr·v'. With lr = 0.1, m = 0.9 the
        // recurrence has complex eigenvalues of modulus √m, so the iterates
        // spiral in with envelope m^(k/2) rather than shrinking monotonically.
        let (lr, m) = (0.1f32, 0.9f32);
        let x0 = [1.0f32, -0.5, 2.0];
        let norm0 = x0.iter().map(|v| v * v).sum::<f32>().sqrt();
        let mut p = vec![Tensor::new(&[3], x0.to_vec()).unwrap()];
        let mut s = SgdState::default();
        let (mut ox, mut ov) = (x0.map(f64::from), [0.0f64; 3]);
        let mut norms = Vec::new();
        for _ in 0..200 {
            let g = p[0].data().to_vec();
            sgd_step(&mut p, &[&g], &mut s, hp(lr, m, 0.0)).unwrap();
            for i in 0..3 {
                ov[i] = m as f64 * ov[i] + ox[i];
                ox[i] -= lr as f64 * ov[i];
                assert!((p[0].data()[i] as f64 - ox[i]).abs() < 1e-5);
            }
            norms.push(p[0].data().iter().map(|v| v * v).sum::<f32>().sqrt());
        }
        for (k, &n) in norms.iter().enumerate() {
            assert!(n <= 2.0 * norm0 * m.powf((k + 1) as f32 / 2.0), "step {}: {n}", k + 1);
        }
        assert!((norms[99] - 8.566e-3).abs() < 1e-5, "after 100 steps: {}", norms[99]);
        assert!(norms[199] < 1e-3);
    }

    #[test]
    fn non_finite_gradient_aborts_without_updating() {
        let mut p = vec![Tensor::new(&[2], vec![1.0, 1.0]).unwrap()];
        let mut s = SgdState::default();
        let err = sgd_step(&mut p, &[&[f32::NAN, 0.0]], &mut s, hp(0.1, 0.9, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert_eq!(err.exit_code(), 4);
        assert_eq!(p[0].data(), &[1.0, 1.0]);
        assert!(s.velocity.is_empty());
    }

    #[test]
    fn mismatched_gradients_are_shape_errors() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut s = SgdState::default();
        assert!(sgd_step(&mut p, &[&[0.0]], &mut s, hp(0.1, 0.0, 0.0)).is_err());
        assert!(sgd_step(&mut p, &[], &mut s, hp(0.1, 0.0, 0.0)).is_err());
    }
}
