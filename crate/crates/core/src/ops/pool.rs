use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Forward result of max pooling: the pooled tensor plus, for every output
/// element, the flat index into the input that produced it.
#[derive(Clone, Debug)]
pub struct MaxPoolOutput {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Max pooling without padding. Ties resolve to the smallest flat index.
pub fn maxpool_forward(input: &Tensor, window: usize, stride: usize) -> Result<MaxPoolOutput> {
    if window == 0 || stride == 0 {
        return shape_err("max-pool window and stride must be positive");
    }
    let [n, c, h, w] = input.shape();
    if window > h || window > w {
        return shape_err(format!("max-pool window {window} exceeds input {h}x{w}"));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut output = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let src = input.data();
    let out = output.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + oy * stride * w + ox * stride;
                let mut best = src[best_i];
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        let v = src[row + kx];
                        if v > best {
                            best = v;
                            best_i = row + kx;
                        }
                    }
                }
                out[o] = best;
                argmax.push(best_i);
                o += 1;
            }
        }
    }
    Ok(MaxPoolOutput { output, argmax })
}

/// Routes each output gradient to the input position recorded in `argmax`.
pub fn maxpool_backward(
    input_shape: [usize; 4],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return shape_err(format!(
            "max-pool backward: {} argmax entries for {} gradients",
            argmax.len(),
            grad_out.len()
        ));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        if i >= g.len() {
            return shape_err("max-pool backward: argmax index out of range");
        }
        g[i] += v;
    }
    Ok(grad)
}
