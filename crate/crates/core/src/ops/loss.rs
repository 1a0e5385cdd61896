//! Two-class per-pixel softmax and summed negative log-likelihood.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Binary label per pixel, laid out `(batch, height, width)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelPlane {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl LabelPlane {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n * h * w {
            return shape_err(format!(
                "label plane of {}x{}x{} needs {} values, got {}",
                n,
                h,
                w,
                n * h * w,
                data.len()
            ));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Label(format!("label {bad} outside {{0, 1}}")));
        }
        Ok(Self { n, h, w, data })
    }

    pub fn from_bits(h: usize, w: usize, bits: &[bool]) -> Result<Self> {
        Self::new(1, h, w, bits.iter().map(|&b| b as u8).collect())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

#[derive(Clone, Debug)]
pub struct XentOutput {
    pub loss: f64,
    pub grad: Tensor,
    pub probs: Tensor,
}

/// Channel-wise softmax over a 2-channel score tensor, with max subtraction.
pub fn softmax2(logits: &Tensor) -> Result<Tensor> {
    if logits.c() != 2 {
        return shape_err(format!("softmax2 expects 2 channels, got {}", logits.c()));
    }
    let mut probs = Tensor::zeros(logits.shape());
    let hw = logits.h() * logits.w();
    for n in 0..logits.n() {
        let (l0, l1) = (logits.plane(n, 0), logits.plane(n, 1));
        let mut p0 = vec![0.0; hw];
        let mut p1 = vec![0.0; hw];
        for i in 0..hw {
            let m = l0[i].max(l1[i]);
            let e0 = (l0[i] - m).exp();
            let e1 = (l1[i] - m).exp();
            let z = e0 + e1;
            p0[i] = e0 / z;
            p1[i] = e1 / z;
        }
        probs.plane_mut(n, 0).copy_from_slice(&p0);
        probs.plane_mut(n, 1).copy_from_slice(&p1);
    }
    Ok(probs)
}

/// `loss = -sum_x log softmax(logits)[label(x)]`; the gradient per pixel is
/// `softmax - onehot(label)`.
pub fn softmax_xent(logits: &Tensor, labels: &LabelPlane) -> Result<XentOutput> {
    let (n, h, w) = labels.shape();
    if logits.c() != 2 {
        return shape_err(format!("softmax_xent expects 2 channels, got {}", logits.c()));
    }
    if [logits.n(), logits.h(), logits.w()] != [n, h, w] {
        return shape_err(format!(
            "logits {:?} do not match labels {}x{}x{}",
            logits.shape(),
            n,
            h,
            w
        ));
    }
    let hw = h * w;
    let mut grad = Tensor::zeros(logits.shape());
    let mut probs = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for b in 0..n {
        let l0 = logits.plane(b, 0);
        let l1 = logits.plane(b, 1);
        let lab = &labels.data[b * hw..(b + 1) * hw];
        for i in 0..hw {
            let m = l0[i].max(l1[i]);
            let e0 = (l0[i] - m).exp();
            let e1 = (l1[i] - m).exp();
            let z = e0 + e1;
            let log_z = z.ln() + m;
            let (p0, p1) = (e0 / z, e1 / z);
            let y = lab[i];
            loss += log_z - if y == 1 { l1[i] } else { l0[i] };
            let gi0 = grad.index(b, 0, i / w, i % w);
            let gi1 = grad.index(b, 1, i / w, i % w);
            grad.data_mut()[gi0] = p0 - if y == 0 { 1.0 } else { 0.0 };
            grad.data_mut()[gi1] = p1 - if y == 1 { 1.0 } else { 0.0 };
            probs.data_mut()[gi0] = p0;
            probs.data_mut()[gi1] = p1;
        }
    }
    Ok(XentOutput { loss, grad, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn labels(n: usize, h: usize, w: usize, rng: &mut RngState) -> LabelPlane {
        LabelPlane::new(n, h, w, (0..n * h * w).map(|_| rng.below(2) as u8).collect()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln2_per_pixel() {
        let mut rng = RngState::new(1);
        let lab = labels(1, 3, 4, &mut rng);
        let out = softmax_xent(&Tensor::filled([1, 2, 3, 4], 0.3), &lab).unwrap();
        assert!((out.loss - 12.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_is_near_zero() {
        let mut rng = RngState::new(2);
        let lab = labels(1, 4, 4, &mut rng);
        let logits = Tensor::from_fn([1, 2, 4, 4], |_, c, y, x| {
            if lab.data()[y * 4 + x] as usize == c {
                50.0
            } else {
                0.0
            }
        });
        assert!(softmax_xent(&logits, &lab).unwrap().loss < 1e-6);
    }

    #[test]
    fn rejects_bad_labels_and_shapes() {
        assert!(matches!(LabelPlane::new(1, 1, 2, vec![0, 2]), Err(Error::Label(_))));
        let lab = LabelPlane::new(1, 2, 2, vec![0; 4]).unwrap();
        assert!(softmax_xent(&Tensor::zeros([1, 2, 3, 2]), &lab).is_err());
        assert!(softmax_xent(&Tensor::zeros([1, 3, 2, 2]), &lab).is_err());
    }

    #[test]
    fn probabilities_normalized() {
        let mut rng = RngState::new(3);
        let logits = Tensor::from_fn([2, 2, 5, 5], |_, _, _, _| rng.uniform_range(-30.0, 30.0));
        let p = softmax2(&logits).unwrap();
        for n in 0..2 {
            for (a, b) in p.plane(n, 0).iter().zip(p.plane(n, 1)) {
                assert!(*a >= 0.0 && *b >= 0.0);
                assert!((a + b - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngState::new(4);
        let lab = labels(1, 3, 3, &mut rng);
        let logits = Tensor::from_fn([1, 2, 3, 3], |_, _, _, _| rng.uniform_range(-2.0, 2.0));
        let out = softmax_xent(&logits, &lab).unwrap();
        let eps = 1e-5;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += eps;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= eps;
            let fd = (softmax_xent(&plus, &lab).unwrap().loss - softmax_xent(&minus, &lab).unwrap().loss)
                / (2.0 * eps);
            let a = out.grad.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            assert!(rel < 1e-6, "index {i}: analytic {a} vs fd {fd}");
        }
    }
}
