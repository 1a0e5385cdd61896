//! Central finite-difference checks of every backward pass and of the full
//! training loss.
//!
//! Each op check contracts the op output with a random cotangent `r`, so the
//! scalar `<op(x), r>` has gradient `backward(r)`. Relative error is
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)`; the floor keeps
//! near-zero gradients from amplifying rounding noise.
//!
//! Ops that are linear in the perturbed argument (convolutions, pooling and
//! ReLU away from ties and kinks, dropout with a fixed mask) use a large step,
//! where central differences are exact up to rounding. The full loss sums
//! hundreds of pixel terms, so its rounding noise is near `1e-8` absolute and
//! its floor sits well above that.

use crate::error::Result;
use crate::net::{DcanConfig, DcanGrads, DcanModel, LabelPair, LossTerms};
use crate::ops::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, dropout, dropout_backward,
    maxpool_backward, maxpool_forward, relu, relu_backward, softmax_xent, ConvSpec, LabelPlane,
};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const KERNEL_TOLERANCE: f64 = 1e-6;
pub const LOSS_TOLERANCE: f64 = 1e-4;
const LINEAR_STEP: f64 = 1e-2;
const XENT_STEP: f64 = 1e-5;
const LOSS_STEP: f64 = 1e-5;
const KERNEL_FLOOR: f64 = 1e-6;
const LOSS_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub samples: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn random_tensor(shape: [usize; 4], rng: &mut RngState) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.uniform_range(-1.0, 1.0))
}

/// Compares `grad` with central differences of `f` at `samples` random
/// coordinates of `x` (all coordinates when there are fewer).
fn check_input_grad(
    x: &Tensor,
    grad: &[f64],
    samples: usize,
    step: f64,
    rng: &mut RngState,
    f: impl Fn(&Tensor) -> f64,
) -> (usize, f64) {
    let idx: Vec<usize> = if x.len() <= samples {
        (0..x.len()).collect()
    } else {
        (0..samples).map(|_| rng.below(x.len())).collect()
    };
    let mut worst = 0.0f64;
    for &i in &idx {
        let mut xp = x.clone();
        xp.data_mut()[i] += step;
        let mut xm = x.clone();
        xm.data_mut()[i] -= step;
        let numeric = (f(&xp) - f(&xm)) / (2.0 * step);
        worst = worst.max(rel_error(grad[i], numeric, KERNEL_FLOOR));
    }
    (idx.len(), worst)
}

fn record(out: &mut Vec<GradCheck>, name: &str, seed: u64, (samples, err): (usize, f64)) {
    out.push(GradCheck {
        name: name.to_string(),
        seed,
        samples,
        max_rel_error: err,
        tolerance: KERNEL_TOLERANCE,
    });
}

fn contract(out: &Tensor, r: &Tensor) -> f64 {
    out.dot(r).expect("cotangent matches output")
}

fn check_conv(out: &mut Vec<GradCheck>, seed: u64, samples: usize, rng: &mut RngState) -> Result<()> {
    let x = random_tensor([2, 3, 6, 5], rng);
    let spec = ConvSpec {
        kernel: random_tensor([24, 3, 3, 3], rng),
        bias: (0..24).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        stride: 2,
        padding: 1,
    };
    let r = random_tensor(conv2d_forward(&x, &spec)?.shape(), rng);
    let g = conv2d_backward(&x, &spec, &r)?;
    let f_x = |xv: &Tensor| contract(&conv2d_forward(xv, &spec).expect("valid"), &r);
    record(out, "conv2d.input", seed, check_input_grad(&x, g.input.data(), samples, LINEAR_STEP, rng, f_x));
    let f_k = |k: &Tensor| {
        let s = ConvSpec { kernel: k.clone(), ..spec.clone() };
        contract(&conv2d_forward(&x, &s).expect("valid"), &r)
    };
    record(out, "conv2d.kernel", seed, check_input_grad(&spec.kernel, g.kernel.data(), samples, LINEAR_STEP, rng, f_k));
    let bias = Tensor::from_vec([1, 24, 1, 1], spec.bias.clone())?;
    let f_b = |b: &Tensor| {
        let s = ConvSpec { bias: b.data().to_vec(), ..spec.clone() };
        contract(&conv2d_forward(&x, &s).expect("valid"), &r)
    };
    record(out, "conv2d.bias", seed, check_input_grad(&bias, &g.bias, samples, LINEAR_STEP, rng, f_b));
    Ok(())
}

fn check_deconv(out: &mut Vec<GradCheck>, seed: u64, samples: usize, rng: &mut RngState) -> Result<()> {
    let x = random_tensor([1, 3, 3, 4], rng);
    let spec = ConvSpec {
        kernel: random_tensor([3, 24, 4, 4], rng),
        bias: (0..24).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        stride: 2,
        padding: 1,
    };
    let r = random_tensor(deconv2d_forward(&x, &spec)?.shape(), rng);
    let g = deconv2d_backward(&x, &spec, &r)?;
    let f_x = |xv: &Tensor| contract(&deconv2d_forward(xv, &spec).expect("valid"), &r);
    record(out, "deconv2d.input", seed, check_input_grad(&x, g.input.data(), samples, LINEAR_STEP, rng, f_x));
    let f_k = |k: &Tensor| {
        let s = ConvSpec { kernel: k.clone(), ..spec.clone() };
        contract(&deconv2d_forward(&x, &s).expect("valid"), &r)
    };
    record(out, "deconv2d.kernel", seed, check_input_grad(&spec.kernel, g.kernel.data(), samples, LINEAR_STEP, rng, f_k));
    let bias = Tensor::from_vec([1, 24, 1, 1], spec.bias.clone())?;
    let f_b = |b: &Tensor| {
        let s = ConvSpec { bias: b.data().to_vec(), ..spec.clone() };
        contract(&deconv2d_forward(&x, &s).expect("valid"), &r)
    };
    record(out, "deconv2d.bias", seed, check_input_grad(&bias, &g.bias, samples, LINEAR_STEP, rng, f_b));
    Ok(())
}

/// Values bounded away from zero so a step never crosses the ReLU kink.
fn away_from_zero(shape: [usize; 4], rng: &mut RngState) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.uniform_range(0.1, 1.0);
        if rng.bernoulli(0.5) {
            m
        } else {
            -m
        }
    })
}

fn check_pointwise(out: &mut Vec<GradCheck>, seed: u64, samples: usize, rng: &mut RngState) -> Result<()> {
    let x = away_from_zero([1, 2, 5, 5], rng);
    let r = random_tensor(x.shape(), rng);
    let g = relu_backward(&x, &r)?;
    record(out, "relu", seed, check_input_grad(&x, g.data(), samples, LINEAR_STEP, rng, |xv| contract(&relu(xv), &r)));

    // distinct values, so no window has a tie a step could flip
    let mut x = Tensor::from_fn([1, 2, 6, 6], |_, c, y, xx| (c * 36 + y * 6 + xx) as f64 * 0.1);
    for i in (1..x.len()).rev() {
        x.data_mut().swap(i, rng.below(i + 1));
    }
    let pooled = maxpool_forward(&x, 2, 2)?;
    let r = random_tensor(pooled.output.shape(), rng);
    let g = maxpool_backward(x.shape(), &pooled.argmax, &r)?;
    let f = |xv: &Tensor| contract(&maxpool_forward(xv, 2, 2).expect("valid").output, &r);
    record(out, "maxpool", seed, check_input_grad(&x, g.data(), samples, LINEAR_STEP, rng, f));

    let x = random_tensor([1, 3, 4, 4], rng);
    let mask_rng = rng.fork();
    let d = dropout(&x, 0.5, true, &mut mask_rng.clone())?;
    let r = random_tensor(x.shape(), rng);
    let g = dropout_backward(d.mask.as_deref(), &r);
    let f = |xv: &Tensor| contract(&dropout(xv, 0.5, true, &mut mask_rng.clone()).expect("valid").output, &r);
    record(out, "dropout", seed, check_input_grad(&x, g.data(), samples, LINEAR_STEP, rng, f));

    let logits = random_tensor([2, 2, 3, 3], rng);
    let labels = LabelPlane::new(2, 3, 3, (0..18).map(|_| rng.below(2) as u8).collect())?;
    let xent = softmax_xent(&logits, &labels)?;
    let f = |l: &Tensor| softmax_xent(l, &labels).expect("valid").loss;
    record(out, "softmax_xent", seed, check_input_grad(&logits, xent.grad.data(), samples, XENT_STEP, rng, f));
    Ok(())
}

/// Checks every differentiable op for one seed.
pub fn check_kernels(seed: u64, samples: usize) -> Result<Vec<GradCheck>> {
    let mut rng = RngState::new(seed);
    let mut out = Vec::new();
    check_conv(&mut out, seed, samples, &mut rng)?;
    check_deconv(&mut out, seed, samples, &mut rng)?;
    check_pointwise(&mut out, seed, samples, &mut rng)?;
    Ok(out)
}

/// Random image and labels for a model of `config`'s input size.
fn random_problem(config: &DcanConfig, rng: &mut RngState) -> Result<(Tensor, LabelPair)> {
    let s = config.input_size;
    let image = Tensor::from_fn([1, config.in_channels, s, s], |_, _, _, _| rng.uniform());
    let mut bits = || (0..s * s).map(|_| rng.bernoulli(0.4)).collect::<Vec<bool>>();
    let labels = LabelPair {
        object: LabelPlane::from_bits(s, s, &bits())?,
        contour: LabelPlane::from_bits(s, s, &bits())?,
    };
    Ok((image, labels))
}

/// Full-loss gradient (weight decay, fused and auxiliary terms, dropout
/// active with a fixed mask) against central differences at `samples`
/// parameter entries drawn uniformly over all parameters.
pub fn check_model_loss(config: &DcanConfig, seed: u64, samples: usize, w_a: f64) -> Result<GradCheck> {
    let mut rng = RngState::new(seed);
    let mut model = DcanModel::build(config.clone(), &mut rng)?;
    let (image, labels) = random_problem(config, &mut rng)?;
    let mask_rng = rng.fork();
    let loss_at = |m: &DcanModel| -> Result<f64> {
        let pass = m.forward_pass(&image, true, &mut mask_rng.clone())?;
        Ok(m.total_loss(&pass, &labels, w_a)?.total)
    };
    let pass = model.forward_pass(&image, true, &mut mask_rng.clone())?;
    let (_, mut grads) = model.loss_and_grads(&pass, &labels, w_a, LossTerms::ALL)?;
    grads.add_weight_decay(&model);
    let grads: DcanGrads = grads;

    let sizes: Vec<usize> = model.params().iter().map(|p| p.values.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mut flat = rng.below(total);
        let mut p = 0;
        while flat >= sizes[p] {
            flat -= sizes[p];
            p += 1;
        }
        let original = model.param_mut(p)[flat];
        model.param_mut(p)[flat] = original + LOSS_STEP;
        let plus = loss_at(&model)?;
        model.param_mut(p)[flat] = original - LOSS_STEP;
        let minus = loss_at(&model)?;
        model.param_mut(p)[flat] = original;
        let numeric = (plus - minus) / (2.0 * LOSS_STEP);
        worst = worst.max(rel_error(grads.param(p)[flat], numeric, LOSS_FLOOR));
    }
    Ok(GradCheck {
        name: "total_loss".into(),
        seed,
        samples,
        max_rel_error: worst,
        tolerance: LOSS_TOLERANCE,
    })
}

/// Kernel checks plus the full-loss check on `config`, for each seed.
pub fn run_suite(config: &DcanConfig, seeds: &[u64], samples: usize) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for &seed in seeds {
        out.extend(check_kernels(seed, samples)?);
        out.push(check_model_loss(config, seed, samples, 1.0)?);
    }
    Ok(out)
}
