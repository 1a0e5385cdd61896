use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes `grad_out` through where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape(input.shape(), "relu_backward")?;
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

#[derive(Clone, Debug)]
pub struct DropoutOutput {
    pub output: Tensor,
    /// Per-element multiplier applied in the forward pass (`0` or
    /// `1 / (1 - rate)`); `None` when dropout acted as the identity.
    pub mask: Option<Vec<f64>>,
}

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; inference is the
/// identity.
pub fn dropout(input: &Tensor, rate: f64, train_mode: bool, rng: &mut RngState) -> Result<DropoutOutput> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Param(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !train_mode || rate == 0.0 {
        return Ok(DropoutOutput {
            output: input.clone(),
            mask: None,
        });
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    let mut output = input.clone();
    for (v, m) in output.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok(DropoutOutput {
        output,
        mask: Some(mask),
    })
}

pub fn dropout_backward(mask: Option<&[f64]>, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        for (v, m) in g.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_basic() {
        let neg = Tensor::filled([1, 1, 2, 2], -0.5);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_vec([1, 1, 1, 3], vec![0.1, 2.0, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        let eps = 1e-5;
        for &x0 in &[-1.0, 1.0] {
            let x = Tensor::filled([1, 1, 1, 1], x0);
            let g = relu_backward(&x, &Tensor::filled([1, 1, 1, 1], 1.0)).unwrap();
            let f = |v: f64| relu(&Tensor::filled([1, 1, 1, 1], v)).data()[0];
            let fd = (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps);
            assert!((g.data()[0] - fd).abs() < 1e-9, "x={x0}: {} vs {fd}", g.data()[0]);
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = RngState::new(0);
        let x = Tensor::from_fn([1, 2, 3, 3], |_, c, y, x| (c + y * 3 + x) as f64);
        for train in [false, true] {
            assert_eq!(dropout(&x, 0.0, train, &mut rng).unwrap().output, x);
        }
        assert_eq!(dropout(&x, 0.9, false, &mut rng).unwrap().output, x);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = RngState::new(0);
        let x = Tensor::zeros([1, 1, 1, 1]);
        assert!(matches!(dropout(&x, 1.0, true, &mut rng), Err(Error::Param(_))));
        assert!(dropout(&x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_survivor_fraction() {
        let mut rng = RngState::new(42);
        let x = Tensor::filled([1, 1, 1, 100_000], 1.0);
        let d = dropout(&x, 0.5, true, &mut rng).unwrap();
        let survivors: Vec<f64> = d.output.data().iter().copied().filter(|&v| v != 0.0).collect();
        let frac = survivors.len() as f64 / 100_000.0;
        assert!((frac - 0.5).abs() <= 0.01, "survivor fraction {frac}");
        assert!(survivors.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn dropout_deterministic_per_seed() {
        let x = Tensor::filled([1, 1, 8, 8], 1.0);
        let a = dropout(&x, 0.5, true, &mut RngState::new(9)).unwrap();
        let b = dropout(&x, 0.5, true, &mut RngState::new(9)).unwrap();
        assert_eq!(a.output, b.output);
        let g = dropout_backward(a.mask.as_deref(), &x);
        assert_eq!(g, a.output);
    }
}
