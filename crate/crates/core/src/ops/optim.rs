/// Plain SGD with L2 decay: `w <- w - lr * (g + weight_decay * w)`.
///
/// The decay term is the gradient of `weight_decay * 0.5 * |w|^2`; callers
/// pass `weight_decay = 0` for bias vectors.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
    assert_eq!(params.len(), grads.len(), "sgd_step: length mismatch");
    if lr == 0.0 {
        return;
    }
    for (w, g) in params.iter_mut().zip(grads) {
        *w -= lr * (g + weight_decay * *w);
    }
}
