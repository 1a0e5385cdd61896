//! 2-D cross-correlation and its transpose ("deconvolution"), lowered to
//! matrix products through `im2col` / `col2im`.

use super::gemm::gemm;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Kernel, bias and geometry of a convolution layer.
///
/// For [`conv2d_forward`] the kernel is `(out_c, in_c, kh, kw)` and `bias` has
/// `out_c` entries. [`deconv2d_forward`] reuses the same layout read from the
/// other side: it consumes `kernel.n()` channels and produces `kernel.c()`
/// channels, so its bias has `kernel.c()` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub kernel: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.oh * self.ow
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

impl ConvSpec {
    pub fn new(kernel: Tensor, bias: Vec<f64>, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            bias,
            stride,
            padding,
        }
    }

    /// Output spatial size of the forward convolution for an `h x w` input.
    pub fn conv_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return shape_err("stride must be positive");
        }
        let [_, _, kh, kw] = self.kernel.shape();
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if kh > ph || kw > pw {
            return shape_err(format!(
                "kernel {kh}x{kw} exceeds padded input {ph}x{pw}"
            ));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    /// Output spatial size of the transposed convolution:
    /// `(h - 1) * stride + k - 2 * padding`.
    pub fn deconv_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return shape_err("stride must be positive");
        }
        let [_, _, kh, kw] = self.kernel.shape();
        let size = |n: usize, k: usize| -> Result<usize> {
            let full = (n as isize - 1) * self.stride as isize + k as isize;
            let out = full - 2 * self.padding as isize;
            if n == 0 || out <= 0 {
                return shape_err(format!(
                    "transposed convolution output size {out} is not positive"
                ));
            }
            Ok(out as usize)
        };
        Ok((size(h, kh)?, size(w, kw)?))
    }

    fn conv_geometry(&self, input: &Tensor) -> Result<Geometry> {
        let [out_c, in_c, kh, kw] = self.kernel.shape();
        if input.c() != in_c {
            return shape_err(format!(
                "conv2d: input has {} channels, kernel expects {}",
                input.c(),
                in_c
            ));
        }
        if self.bias.len() != out_c {
            return shape_err(format!(
                "conv2d: bias has {} entries, kernel has {} output channels",
                self.bias.len(),
                out_c
            ));
        }
        let (oh, ow) = self.conv_output_size(input.h(), input.w())?;
        Ok(Geometry {
            channels: in_c,
            h: input.h(),
            w: input.w(),
            kh,
            kw,
            stride: self.stride,
            padding: self.padding,
            oh,
            ow,
        })
    }

    /// Geometry of the equivalent forward convolution whose *input* is the
    /// deconvolution output.
    fn deconv_geometry(&self, input: &Tensor) -> Result<Geometry> {
        let [in_c, out_c, kh, kw] = self.kernel.shape();
        if input.c() != in_c {
            return shape_err(format!(
                "deconv2d: input has {} channels, kernel expects {}",
                input.c(),
                in_c
            ));
        }
        if self.bias.len() != out_c {
            return shape_err(format!(
                "deconv2d: bias has {} entries, kernel has {} output channels",
                self.bias.len(),
                out_c
            ));
        }
        let (h, w) = self.deconv_output_size(input.h(), input.w())?;
        Ok(Geometry {
            channels: out_c,
            h,
            w,
            kh,
            kw,
            stride: self.stride,
            padding: self.padding,
            oh: input.h(),
            ow: input.w(),
        })
    }
}

fn im2col(src: &[f64], g: &Geometry, cols: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, dst: &mut [f64]) {
    dst.fill(0.0);
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with symmetric zero padding plus per-channel bias.
pub fn conv2d_forward(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let g = spec.conv_geometry(input)?;
    let out_c = spec.kernel.n();
    let mut out = Tensor::zeros([input.n(), out_c, g.oh, g.ow]);
    let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { g.rows() * g.cols() }];
    let in_stride = g.channels * g.h * g.w;
    let out_stride = out_c * g.cols();
    for n in 0..input.n() {
        let src = &input.data()[n * in_stride..(n + 1) * in_stride];
        let lowered: &[f64] = if g.is_pointwise() {
            src
        } else {
            im2col(src, &g, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[n * out_stride..(n + 1) * out_stride];
        for (c, chunk) in dst.chunks_mut(g.cols()).enumerate() {
            chunk.fill(spec.bias[c]);
        }
        gemm(out_c, g.rows(), g.cols(), spec.kernel.data(), false, lowered, false, 1.0, dst);
    }
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] with respect to input, kernel and
/// bias, given the cotangent `grad_out`.
pub fn conv2d_backward(input: &Tensor, spec: &ConvSpec, grad_out: &Tensor) -> Result<ConvGrads> {
    conv2d_backward_impl(input, spec, grad_out, true)
}

/// As [`conv2d_backward`] but skips the input gradient (first layer).
pub(crate) fn conv2d_backward_params(
    input: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    conv2d_backward_impl(input, spec, grad_out, false)
}

fn conv2d_backward_impl(
    input: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let g = spec.conv_geometry(input)?;
    let out_c = spec.kernel.n();
    grad_out.expect_shape([input.n(), out_c, g.oh, g.ow], "conv2d_backward grad_out")?;

    let mut grad_kernel = Tensor::zeros(spec.kernel.shape());
    let mut grad_bias = vec![0.0; out_c];
    let mut grad_input = Tensor::zeros(if need_input { input.shape() } else { [0, 0, 0, 0] });
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let in_stride = g.channels * g.h * g.w;
    let out_stride = out_c * g.cols();

    for n in 0..input.n() {
        let src = &input.data()[n * in_stride..(n + 1) * in_stride];
        let go = &grad_out.data()[n * out_stride..(n + 1) * out_stride];
        for (c, chunk) in go.chunks(g.cols()).enumerate() {
            grad_bias[c] += chunk.iter().sum::<f64>();
        }
        // dK += dY * cols^T
        if g.is_pointwise() {
            gemm(out_c, g.cols(), g.rows(), go, false, src, true, 1.0, grad_kernel.data_mut());
        } else {
            im2col(src, &g, &mut cols);
            gemm(out_c, g.cols(), g.rows(), go, false, &cols, true, 1.0, grad_kernel.data_mut());
        }
        if need_input {
            let dst = &mut grad_input.data_mut()[n * in_stride..(n + 1) * in_stride];
            if g.is_pointwise() {
                gemm(g.rows(), out_c, g.cols(), spec.kernel.data(), true, go, false, 0.0, dst);
            } else {
                // dcols = K^T * dY, then scatter back.
                gemm(g.rows(), out_c, g.cols(), spec.kernel.data(), true, go, false, 0.0, &mut cols);
                col2im(&cols, &g, dst);
            }
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}

/// Transposed convolution: the adjoint of [`conv2d_forward`] (without bias)
/// under the same kernel, stride and padding, plus a bias on the output.
pub fn deconv2d_forward(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let g = spec.deconv_geometry(input)?;
    let in_c = spec.kernel.n();
    let out_c = g.channels;
    let mut out = Tensor::zeros([input.n(), out_c, g.h, g.w]);
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let in_stride = in_c * g.cols();
    let out_stride = out_c * g.h * g.w;
    for n in 0..input.n() {
        let src = &input.data()[n * in_stride..(n + 1) * in_stride];
        gemm(g.rows(), in_c, g.cols(), spec.kernel.data(), true, src, false, 0.0, &mut cols);
        let dst = &mut out.data_mut()[n * out_stride..(n + 1) * out_stride];
        col2im(&cols, &g, dst);
        for (c, chunk) in dst.chunks_mut(g.h * g.w).enumerate() {
            let b = spec.bias[c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

pub fn deconv2d_backward(input: &Tensor, spec: &ConvSpec, grad_out: &Tensor) -> Result<ConvGrads> {
    let g = spec.deconv_geometry(input)?;
    let in_c = spec.kernel.n();
    let out_c = g.channels;
    grad_out.expect_shape([input.n(), out_c, g.h, g.w], "deconv2d_backward grad_out")?;

    let mut grad_kernel = Tensor::zeros(spec.kernel.shape());
    let mut grad_bias = vec![0.0; out_c];
    let mut grad_input = Tensor::zeros(input.shape());
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let in_stride = in_c * g.cols();
    let out_stride = out_c * g.h * g.w;
    for n in 0..input.n() {
        let src = &input.data()[n * in_stride..(n + 1) * in_stride];
        let go = &grad_out.data()[n * out_stride..(n + 1) * out_stride];
        for (c, chunk) in go.chunks(g.h * g.w).enumerate() {
            grad_bias[c] += chunk.iter().sum::<f64>();
        }
        im2col(go, &g, &mut cols);
        // out_cols = K^T x  =>  dx = K dcols,  dK = x dcols^T
        let dst = &mut grad_input.data_mut()[n * in_stride..(n + 1) * in_stride];
        gemm(in_c, g.rows(), g.cols(), spec.kernel.data(), false, &cols, false, 0.0, dst);
        gemm(in_c, g.cols(), g.rows(), src, false, &cols, true, 1.0, grad_kernel.data_mut());
    }
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn random(shape: [usize; 4], rng: &mut RngState) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.uniform_range(-1.0, 1.0))
    }

    /// Direct nested-loop convolution used as an independent reference.
    fn conv_direct(x: &Tensor, spec: &ConvSpec) -> Tensor {
        let [oc, ic, kh, kw] = spec.kernel.shape();
        let (oh, ow) = spec.conv_output_size(x.h(), x.w()).unwrap();
        Tensor::from_fn([x.n(), oc, oh, ow], |n, o, y, xx| {
            let mut acc = spec.bias[o];
            for c in 0..ic {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (y * spec.stride + ky) as isize - spec.padding as isize;
                        let ix = (xx * spec.stride + kx) as isize - spec.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < x.h() && (ix as usize) < x.w() {
                            acc += spec.kernel.at(o, c, ky, kx) * x.at(n, c, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_kernel() {
        let mut rng = RngState::new(1);
        let x = random([2, 1, 5, 4], &mut rng);
        let spec = ConvSpec::new(Tensor::filled([1, 1, 1, 1], 1.0), vec![0.0], 1, 0);
        assert_eq!(conv2d_forward(&x, &spec).unwrap(), x);
    }

    #[test]
    fn zero_kernel_annihilates() {
        let mut rng = RngState::new(2);
        let x = random([1, 3, 6, 6], &mut rng);
        let spec = ConvSpec::new(Tensor::zeros([4, 3, 3, 3]), vec![0.0; 4], 1, 1);
        let y = conv2d_forward(&x, &spec).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_kernel_center_sum() {
        let x = Tensor::from_vec([1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let spec = ConvSpec::new(Tensor::filled([1, 1, 3, 3], 1.0), vec![0.0], 1, 1);
        let y = conv2d_forward(&x, &spec).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert_eq!(y.at(0, 0, 1, 1), 45.0);
        // corner window covers {1,2,4,5}
        assert_eq!(y.at(0, 0, 0, 0), 12.0);
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = RngState::new(3);
        for &(stride, padding, k) in &[(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 2), (3, 2, 5), (1, 0, 1)] {
            let x = random([2, 3, 9, 8], &mut rng);
            let spec = ConvSpec::new(random([4, 3, k, k], &mut rng), vec![0.3, -0.1, 0.0, 1.0], stride, padding);
            let a = conv2d_forward(&x, &spec).unwrap();
            let b = conv_direct(&x, &spec);
            assert_eq!(a.shape(), b.shape());
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        let wrong_c = ConvSpec::new(Tensor::zeros([1, 3, 3, 3]), vec![0.0], 1, 1);
        assert!(matches!(conv2d_forward(&x, &wrong_c), Err(crate::Error::Shape(_))));
        let too_big = ConvSpec::new(Tensor::zeros([1, 2, 7, 7]), vec![0.0], 1, 1);
        assert!(conv2d_forward(&x, &too_big).is_err());
        let bad_bias = ConvSpec::new(Tensor::zeros([1, 2, 3, 3]), vec![0.0, 0.0], 1, 1);
        assert!(conv2d_forward(&x, &bad_bias).is_err());
        let spec = ConvSpec::new(Tensor::zeros([1, 2, 3, 3]), vec![0.0], 1, 1);
        assert!(conv2d_backward(&x, &spec, &Tensor::zeros([1, 1, 3, 3])).is_err());
    }

    #[test]
    fn zero_cotangent_zero_grads() {
        let mut rng = RngState::new(4);
        let x = random([1, 2, 5, 5], &mut rng);
        let spec = ConvSpec::new(random([3, 2, 3, 3], &mut rng), vec![0.1; 3], 1, 1);
        let g = conv2d_backward(&x, &spec, &Tensor::zeros([1, 3, 5, 5])).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_is_channel_sum() {
        let mut rng = RngState::new(5);
        let x = random([2, 2, 5, 5], &mut rng);
        let spec = ConvSpec::new(random([3, 2, 3, 3], &mut rng), vec![0.0; 3], 2, 1);
        let go = random([2, 3, 3, 3], &mut rng);
        let g = conv2d_backward(&x, &spec, &go).unwrap();
        for c in 0..3 {
            let s: f64 = (0..2).map(|n| go.plane(n, c).iter().sum::<f64>()).sum();
            assert!((g.bias[c] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn deconv_identity_and_broadcast() {
        let mut rng = RngState::new(6);
        let x = random([1, 1, 4, 3], &mut rng);
        let id = ConvSpec::new(Tensor::filled([1, 1, 1, 1], 1.0), vec![0.0], 1, 0);
        assert_eq!(deconv2d_forward(&x, &id).unwrap(), x);

        let v = 0.7;
        let x = Tensor::filled([1, 1, 1, 1], v);
        let spec = ConvSpec::new(Tensor::filled([1, 1, 2, 2], 1.0), vec![0.0], 2, 0);
        let y = deconv2d_forward(&x, &spec).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert!(y.data().iter().all(|&u| u == v));
    }

    #[test]
    fn deconv_output_size_rule() {
        let spec = ConvSpec::new(Tensor::zeros([2, 3, 8, 8]), vec![0.0; 3], 4, 2);
        assert_eq!(spec.deconv_output_size(16, 5).unwrap(), (64, 20));
        let bad = ConvSpec::new(Tensor::zeros([1, 1, 1, 1]), vec![0.0], 1, 1);
        assert!(deconv2d_forward(&Tensor::zeros([1, 1, 1, 1]), &bad).is_err());
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        let mut rng = RngState::new(7);
        for &(stride, padding, k) in &[(1, 0, 3), (1, 1, 3), (2, 1, 4), (2, 0, 2), (4, 2, 8)] {
            let x = random([1, 3, 5 * stride, 5 * stride], &mut rng);
            let spec = ConvSpec::new(random([2, 3, k, k], &mut rng), vec![0.0; 2], stride, padding);
            let y = conv2d_forward(&x, &spec).unwrap();
            let g = random(y.shape(), &mut rng);
            let dspec = ConvSpec::new(spec.kernel.clone(), vec![0.0; 3], stride, padding);
            let back = deconv2d_forward(&g, &dspec).unwrap();
            // Size may differ from x by the floor in the conv size formula.
            let lhs = y.dot(&g).unwrap();
            let mut rhs = 0.0;
            for c in 0..3 {
                for yy in 0..x.h().min(back.h()) {
                    for xx in 0..x.w().min(back.w()) {
                        rhs += x.at(0, c, yy, xx) * back.at(0, c, yy, xx);
                    }
                }
            }
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }
}
