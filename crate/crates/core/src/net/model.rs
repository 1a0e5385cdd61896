//! The dual-branch network: a shared downsampling path and two upsampling
//! branches (gland objects and gland contours), each summing multi-level tap
//! predictions before a softmax.

use super::config::DcanConfig;
use crate::error::{shape_err, Error, Result};
use crate::ops::{
    conv2d_backward, conv2d_backward_params, conv2d_forward, deconv2d_backward, deconv2d_forward,
    dropout, dropout_backward, maxpool_backward, maxpool_forward, relu, relu_backward, softmax2,
    softmax_xent, ConvSpec, LabelPlane,
};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Subtracted from every input value before the first convolution, so
/// intensities in [0, 1] enter centred on zero.
pub const INPUT_OFFSET: f64 = 0.5;

/// Which partition of the parameters a layer belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Shared,
    Object,
    Contour,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Object,
    Contour,
}

impl Branch {
    pub const ALL: [Branch; 2] = [Branch::Object, Branch::Contour];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Object => "object",
            Branch::Contour => "contour",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn group(self) -> ParamGroup {
        match self {
            Branch::Object => ParamGroup::Object,
            Branch::Contour => ParamGroup::Contour,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub group: ParamGroup,
    pub kind: LayerKind,
    pub spec: ConvSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Head {
    stage: usize,
    reduce: usize,
    up: usize,
    score: usize,
}

/// Parameters `W_s`, `W_o`, `W_c` plus the architecture that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct DcanModel {
    config: DcanConfig,
    layers: Vec<Layer>,
    stages: Vec<Vec<usize>>,
    heads: [Vec<Head>; 2],
}

/// Gradients aligned with [`DcanModel::layers`].
#[derive(Clone, Debug)]
pub struct DcanGrads {
    pub kernels: Vec<Tensor>,
    pub biases: Vec<Vec<f64>>,
}

/// One parameter tensor as exposed for checkpointing, decay and sampling.
#[derive(Debug)]
pub struct ParamView<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub is_bias: bool,
    pub shape: [usize; 4],
    pub values: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMaps {
    pub height: usize,
    pub width: usize,
    /// Foreground probability of the fused object branch, row-major.
    pub p_o: Vec<f64>,
    /// Foreground probability of the fused contour branch.
    pub p_c: Vec<f64>,
    /// Per-tap auxiliary predictions, object branch first then contour.
    pub aux: Vec<Vec<f64>>,
}

impl ProbabilityMaps {
    pub fn new(height: usize, width: usize, p_o: Vec<f64>, p_c: Vec<f64>) -> Result<Self> {
        if p_o.len() != height * width || p_c.len() != height * width {
            return shape_err(format!(
                "probability planes must have {} values (got {} and {})",
                height * width,
                p_o.len(),
                p_c.len()
            ));
        }
        Ok(Self {
            height,
            width,
            p_o,
            p_c,
            aux: Vec::new(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct LabelPair {
    pub object: LabelPlane,
    pub contour: LabelPlane,
}

#[derive(Clone, Debug)]
struct HeadCache {
    features_shape: [usize; 4],
    reduce_pre: Tensor,
    drop_mask: Option<Vec<f64>>,
    dropped: Tensor,
    up_pre: Tensor,
    up_act: Tensor,
    scores: Tensor,
}

#[derive(Clone, Debug)]
struct ConvCache {
    input: Tensor,
    pre: Tensor,
}

#[derive(Clone, Debug)]
struct StageCache {
    convs: Vec<ConvCache>,
    pool_input_shape: [usize; 4],
    argmax: Vec<usize>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    stages: Vec<StageCache>,
    features: Vec<Tensor>,
    heads: [Vec<HeadCache>; 2],
    fused: [Tensor; 2],
    pub maps: ProbabilityMaps,
}

impl ForwardPass {
    pub fn fused_scores(&self, branch: Branch) -> &Tensor {
        &self.fused[branch.index()]
    }

    pub fn tap_scores(&self, branch: Branch) -> impl Iterator<Item = &Tensor> {
        self.heads[branch.index()].iter().map(|h| &h.scores)
    }
}

/// Selects which data terms contribute to the loss and its gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub object: bool,
    pub contour: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        object: true,
        contour: true,
    };

    fn includes(self, b: Branch) -> bool {
        match b {
            Branch::Object => self.object,
            Branch::Contour => self.contour,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub regularizer: f64,
    pub fused_object: f64,
    pub fused_contour: f64,
    /// Unweighted auxiliary cross-entropies, object taps then contour taps.
    pub aux: Vec<f64>,
    pub aux_weight: f64,
}

fn gaussian(shape: [usize; 4], sigma: f64, rng: &mut RngState) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| sigma * rng.normal())
}

fn conv_layer(name: String, group: ParamGroup, out_c: usize, in_c: usize, k: usize, pad: usize, rng: &mut RngState) -> Layer {
    let fan_in = (in_c * k * k) as f64;
    Layer {
        name,
        group,
        kind: LayerKind::Conv,
        spec: ConvSpec::new(
            gaussian([out_c, in_c, k, k], (2.0 / fan_in).sqrt(), rng),
            vec![0.0; out_c],
            1,
            pad,
        ),
    }
}

/// Transposed convolution upsampling by `2^stage` exactly: kernel `2s`,
/// padding `s/2`, so `(h - 1)s + 2s - s = hs`.
fn up_layer(name: String, group: ParamGroup, channels: usize, stage: usize, rng: &mut RngState) -> Layer {
    let s = 1usize << stage;
    let k = 2 * s;
    // each output pixel sees (k/s)^2 taps per input channel
    let fan_in = (channels * (k / s) * (k / s)) as f64;
    Layer {
        name,
        group,
        kind: LayerKind::Deconv,
        spec: ConvSpec::new(
            gaussian([channels, channels, k, k], (2.0 / fan_in).sqrt(), rng),
            vec![0.0; channels],
            s,
            s / 2,
        ),
    }
}

impl DcanModel {
    /// Gaussian initialization with `sigma = sqrt(2 / fan_in)`, zero biases.
    pub fn build(config: DcanConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut stages = Vec::new();
        let mut in_c = config.in_channels;
        for (s, &c) in config.channels_per_stage.iter().enumerate() {
            let mut idx = Vec::new();
            for j in 0..config.convs_per_stage {
                let src = if j == 0 { in_c } else { c };
                idx.push(layers.len());
                layers.push(conv_layer(
                    format!("shared.stage{}.conv{}", s + 1, j + 1),
                    ParamGroup::Shared,
                    c,
                    src,
                    3,
                    1,
                    rng,
                ));
            }
            stages.push(idx);
            in_c = c;
        }
        let mut heads: [Vec<Head>; 2] = [Vec::new(), Vec::new()];
        let h = config.head_channels;
        for branch in Branch::ALL {
            for &stage in &config.branch_taps {
                let c = config.channels_per_stage[stage - 1];
                let prefix = format!("{}.tap{}", branch.name(), stage);
                let reduce = layers.len();
                layers.push(conv_layer(format!("{prefix}.reduce"), branch.group(), h, c, 1, 0, rng));
                let up = layers.len();
                layers.push(up_layer(format!("{prefix}.up"), branch.group(), h, stage, rng));
                let score = layers.len();
                layers.push(conv_layer(format!("{prefix}.score"), branch.group(), 2, h, 1, 0, rng));
                heads[branch.index()].push(Head {
                    stage,
                    reduce,
                    up,
                    score,
                });
            }
        }
        Ok(Self {
            config,
            layers,
            stages,
            heads,
        })
    }

    pub fn config(&self) -> &DcanConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Overrides the tile size the model accepts (the network is fully
    /// convolutional, so any multiple of `2^num_pool_stages` works).
    pub fn set_input_size(&mut self, size: usize) -> Result<()> {
        let mut c = self.config.clone();
        c.input_size = size;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.spec.kernel.len() + l.spec.bias.len())
            .sum()
    }

    /// Weights then bias of every layer, in layer order.
    pub fn params(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(ParamView {
                name: format!("{}.weight", l.name),
                group: l.group,
                is_bias: false,
                shape: l.spec.kernel.shape(),
                values: l.spec.kernel.data(),
            });
            out.push(ParamView {
                name: format!("{}.bias", l.name),
                group: l.group,
                is_bias: true,
                shape: [1, l.spec.bias.len(), 1, 1],
                values: &l.spec.bias,
            });
        }
        out
    }

    /// Mutable access to parameter `index` in [`DcanModel::params`] order.
    pub fn param_mut(&mut self, index: usize) -> &mut [f64] {
        let l = &mut self.layers[index / 2];
        if index % 2 == 0 {
            l.spec.kernel.data_mut()
        } else {
            &mut l.spec.bias
        }
    }

    /// `0.5 * sum of squared weights` (biases excluded).
    pub fn weight_norm_sq_half(&self) -> f64 {
        0.5 * self
            .layers
            .iter()
            .flat_map(|l| l.spec.kernel.data())
            .map(|w| w * w)
            .sum::<f64>()
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        if image.c() != self.config.in_channels || image.h() != s || image.w() != s {
            return shape_err(format!(
                "model expects input (N, {}, {}, {}), got {:?}",
                self.config.in_channels,
                s,
                s,
                image.shape()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, image: &Tensor, train_mode: bool, rng: &mut RngState) -> Result<ProbabilityMaps> {
        Ok(self.forward_pass(image, train_mode, rng)?.maps)
    }

    pub fn forward_pass(&self, image: &Tensor, train_mode: bool, rng: &mut RngState) -> Result<ForwardPass> {
        self.check_input(image)?;
        let mut x = image.clone();
        for v in x.data_mut() {
            *v -= INPUT_OFFSET;
        }
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut features = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let mut convs = Vec::with_capacity(stage.len());
            for &li in stage {
                let pre = conv2d_forward(&x, &self.layers[li].spec)?;
                let act = relu(&pre);
                convs.push(ConvCache { input: x, pre });
                x = act;
            }
            let pooled = maxpool_forward(&x, 2, 2)?;
            stages.push(StageCache {
                convs,
                pool_input_shape: x.shape(),
                argmax: pooled.argmax,
            });
            x = pooled.output;
            features.push(x.clone());
        }

        let mut heads: [Vec<HeadCache>; 2] = [Vec::new(), Vec::new()];
        let mut fused: [Option<Tensor>; 2] = [None, None];
        for branch in Branch::ALL {
            for head in &self.heads[branch.index()] {
                let f = &features[head.stage - 1];
                let reduce_pre = conv2d_forward(f, &self.layers[head.reduce].spec)?;
                let reduced = relu(&reduce_pre);
                let d = dropout(&reduced, self.config.dropout_rate, train_mode, rng)?;
                let up_pre = deconv2d_forward(&d.output, &self.layers[head.up].spec)?;
                let up_act = relu(&up_pre);
                let scores = conv2d_forward(&up_act, &self.layers[head.score].spec)?;
                match &mut fused[branch.index()] {
                    Some(acc) => acc.add_assign(&scores)?,
                    slot => *slot = Some(scores.clone()),
                }
                heads[branch.index()].push(HeadCache {
                    features_shape: f.shape(),
                    reduce_pre,
                    drop_mask: d.mask,
                    dropped: d.output,
                    up_pre,
                    up_act,
                    scores,
                });
            }
        }
        let fused = fused.map(|f| f.expect("every branch has at least one tap"));

        let (h, w) = (image.h(), image.w());
        // maps report the first image of the batch
        let fg = |scores: &Tensor| -> Result<Vec<f64>> { Ok(softmax2(scores)?.plane(0, 1).to_vec()) };
        let mut aux = Vec::new();
        for branch in Branch::ALL {
            for hc in &heads[branch.index()] {
                aux.push(fg(&hc.scores)?);
            }
        }
        let maps = ProbabilityMaps {
            height: h,
            width: w,
            p_o: fg(&fused[0])?,
            p_c: fg(&fused[1])?,
            aux,
        };
        Ok(ForwardPass {
            stages,
            features,
            heads,
            fused,
            maps,
        })
    }

    /// Total loss: `lambda * psi(theta)` plus, per branch, the fused
    /// cross-entropy and `w_a` times each tap's auxiliary cross-entropy.
    pub fn total_loss(&self, pass: &ForwardPass, labels: &LabelPair, w_a: f64) -> Result<LossBreakdown> {
        Ok(self.loss_and_grads(pass, labels, w_a, LossTerms::ALL)?.0)
    }

    /// Loss plus gradients of the data terms. The decay term's gradient
    /// (`lambda * w`) is left to the optimizer step; see
    /// [`DcanGrads::add_weight_decay`] for the full-loss gradient.
    pub fn loss_and_grads(
        &self,
        pass: &ForwardPass,
        labels: &LabelPair,
        w_a: f64,
        terms: LossTerms,
    ) -> Result<(LossBreakdown, DcanGrads)> {
        let mut breakdown = LossBreakdown {
            regularizer: self.config.weight_decay * self.weight_norm_sq_half(),
            aux_weight: w_a,
            ..LossBreakdown::default()
        };
        let mut grads = DcanGrads::zeros_like(self);
        let mut feature_grads: Vec<Tensor> = pass.features.iter().map(|f| Tensor::zeros(f.shape())).collect();

        for branch in Branch::ALL {
            let lab = match branch {
                Branch::Object => &labels.object,
                Branch::Contour => &labels.contour,
            };
            let fused = softmax_xent(&pass.fused[branch.index()], lab)?;
            let mut aux_losses = Vec::new();
            let mut aux_grads = Vec::new();
            for hc in &pass.heads[branch.index()] {
                let x = softmax_xent(&hc.scores, lab)?;
                aux_losses.push(x.loss);
                aux_grads.push(x.grad);
            }
            match branch {
                Branch::Object => breakdown.fused_object = fused.loss,
                Branch::Contour => breakdown.fused_contour = fused.loss,
            }
            breakdown.aux.extend_from_slice(&aux_losses);
            if !terms.includes(branch) {
                continue;
            }
            breakdown.total += fused.loss + w_a * aux_losses.iter().sum::<f64>();

            for ((head, hc), aux_grad) in self.heads[branch.index()]
                .iter()
                .zip(&pass.heads[branch.index()])
                .zip(aux_grads)
            {
                // scores feed both the fused sum and their own aux loss
                let mut g_scores = aux_grad;
                g_scores.scale(w_a);
                g_scores.add_assign(&fused.grad)?;

                let gs = conv2d_backward(&hc.up_act, &self.layers[head.score].spec, &g_scores)?;
                grads.accumulate(head.score, &gs.kernel, &gs.bias);
                let g_up = relu_backward(&hc.up_pre, &gs.input)?;
                let gu = deconv2d_backward(&hc.dropped, &self.layers[head.up].spec, &g_up)?;
                grads.accumulate(head.up, &gu.kernel, &gu.bias);
                let g_drop = dropout_backward(hc.drop_mask.as_deref(), &gu.input);
                let g_reduce = relu_backward(&hc.reduce_pre, &g_drop)?;
                let feats = &pass.features[head.stage - 1];
                debug_assert_eq!(feats.shape(), hc.features_shape);
                let gr = conv2d_backward(feats, &self.layers[head.reduce].spec, &g_reduce)?;
                grads.accumulate(head.reduce, &gr.kernel, &gr.bias);
                feature_grads[head.stage - 1].add_assign(&gr.input)?;
            }
        }
        breakdown.total += breakdown.regularizer;

        // Downsampling path, deepest stage first.
        let mut carry: Option<Tensor> = None;
        for s in (0..self.stages.len()).rev() {
            let mut g = feature_grads[s].clone();
            if let Some(c) = carry.take() {
                g.add_assign(&c)?;
            }
            let cache = &pass.stages[s];
            let mut g = maxpool_backward(cache.pool_input_shape, &cache.argmax, &g)?;
            for (j, &li) in self.stages[s].iter().enumerate().rev() {
                let cc = &cache.convs[j];
                let g_pre = relu_backward(&cc.pre, &g)?;
                let first_layer = s == 0 && j == 0;
                let gc = if first_layer {
                    conv2d_backward_params(&cc.input, &self.layers[li].spec, &g_pre)?
                } else {
                    conv2d_backward(&cc.input, &self.layers[li].spec, &g_pre)?
                };
                grads.accumulate(li, &gc.kernel, &gc.bias);
                g = gc.input;
            }
            carry = Some(g);
        }
        Ok((breakdown, grads))
    }

    /// Applies `w <- w - lr * (g + lambda * w)` to weights and
    /// `b <- b - lr * g` to biases.
    pub fn sgd_step(&mut self, grads: &DcanGrads, lr: f64) {
        let decay = self.config.weight_decay;
        for (i, l) in self.layers.iter_mut().enumerate() {
            crate::ops::sgd_step(l.spec.kernel.data_mut(), grads.kernels[i].data(), lr, decay);
            crate::ops::sgd_step(&mut l.spec.bias, &grads.biases[i], lr, 0.0);
        }
    }

    /// Rebuilds a model from named parameter tensors (checkpoint contents),
    /// inferring the architecture from names and shapes.
    pub fn from_named_params(params: Vec<(String, Tensor)>, input_size: usize) -> Result<Self> {
        let bad = |m: String| Error::Format {
            format: "checkpoint",
            msg: m,
        };
        let mut stage_convs: Vec<(usize, usize, Tensor, Tensor)> = Vec::new();
        let mut head_parts: Vec<(Branch, usize, String, Tensor, Tensor)> = Vec::new();
        let mut it = params.into_iter();
        while let Some((wname, weight)) = it.next() {
            let (bname, bias) = it.next().ok_or_else(|| bad(format!("{wname} has no bias record")))?;
            let layer = wname
                .strip_suffix(".weight")
                .ok_or_else(|| bad(format!("expected a weight record, got {wname}")))?;
            if bname != format!("{layer}.bias") {
                return Err(bad(format!("expected {layer}.bias after {wname}, got {bname}")));
            }
            let parts: Vec<&str> = layer.split('.').collect();
            let num = |s: &str, prefix: &str| -> Result<usize> {
                s.strip_prefix(prefix)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(format!("cannot parse {s:?} in {layer}")))
            };
            match parts.as_slice() {
                ["shared", st, cv] => {
                    stage_convs.push((num(st, "stage")?, num(cv, "conv")?, weight, bias));
                }
                [br, tap, part] => {
                    let branch = match *br {
                        "object" => Branch::Object,
                        "contour" => Branch::Contour,
                        other => return Err(bad(format!("unknown branch {other}"))),
                    };
                    head_parts.push((branch, num(tap, "tap")?, part.to_string(), weight, bias));
                }
                _ => return Err(bad(format!("unrecognized layer name {layer}"))),
            }
        }
        let num_stages = stage_convs.iter().map(|s| s.0).max().unwrap_or(0);
        let convs_per_stage = stage_convs.iter().map(|s| s.1).max().unwrap_or(0);
        let mut channels = vec![0; num_stages];
        for (st, cv, w, _) in &stage_convs {
            if *cv == 1 {
                channels[st - 1] = w.n();
            }
        }
        let in_channels = stage_convs
            .iter()
            .find(|s| s.0 == 1 && s.1 == 1)
            .map(|s| s.2.c())
            .ok_or_else(|| bad("missing shared.stage1.conv1".into()))?;
        let mut taps: Vec<usize> = head_parts
            .iter()
            .filter(|h| h.0 == Branch::Object && h.2 == "reduce")
            .map(|h| h.1)
            .collect();
        taps.sort_unstable();
        let head_channels = head_parts
            .iter()
            .find(|h| h.2 == "reduce")
            .map(|h| h.3.n())
            .ok_or_else(|| bad("no prediction heads".into()))?;
        let config = DcanConfig {
            input_size,
            in_channels,
            num_pool_stages: num_stages,
            channels_per_stage: channels,
            convs_per_stage,
            branch_taps: taps,
            head_channels,
            ..DcanConfig::desk()
        };
        let mut model = DcanModel::build(config, &mut RngState::new(0))?;
        let mut expected = model.layers.len();
        for (st, cv, w, b) in stage_convs {
            let li = model
                .stages
                .get(st - 1)
                .and_then(|s| s.get(cv - 1))
                .copied()
                .ok_or_else(|| bad(format!("stage {st} conv {cv} out of range")))?;
            model.load_layer(li, w, b)?;
            expected -= 1;
        }
        for (branch, tap, part, w, b) in head_parts {
            let head = model.heads[branch.index()]
                .iter()
                .find(|h| h.stage == tap)
                .copied()
                .ok_or_else(|| bad(format!("unexpected tap {tap}")))?;
            let li = match part.as_str() {
                "reduce" => head.reduce,
                "up" => head.up,
                "score" => head.score,
                other => return Err(bad(format!("unknown head part {other}"))),
            };
            model.load_layer(li, w, b)?;
            expected -= 1;
        }
        if expected != 0 {
            return Err(bad(format!("{expected} layers missing from checkpoint")));
        }
        Ok(model)
    }

    fn load_layer(&mut self, li: usize, weight: Tensor, bias: Tensor) -> Result<()> {
        let l = &mut self.layers[li];
        if weight.shape() != l.spec.kernel.shape() || bias.len() != l.spec.bias.len() {
            return Err(Error::Format {
                format: "checkpoint",
                msg: format!(
                    "{}: shape {:?} does not fit architecture {:?}",
                    l.name,
                    weight.shape(),
                    l.spec.kernel.shape()
                ),
            });
        }
        l.spec.kernel = weight;
        l.spec.bias = bias.into_vec();
        Ok(())
    }
}

impl DcanGrads {
    pub fn zeros_like(model: &DcanModel) -> Self {
        Self {
            kernels: model.layers.iter().map(|l| Tensor::zeros(l.spec.kernel.shape())).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.spec.bias.len()]).collect(),
        }
    }

    fn accumulate(&mut self, layer: usize, kernel: &Tensor, bias: &[f64]) {
        for (a, b) in self.kernels[layer].data_mut().iter_mut().zip(kernel.data()) {
            *a += b;
        }
        for (a, b) in self.biases[layer].iter_mut().zip(bias) {
            *a += b;
        }
    }

    /// Adds `lambda * w` so the result is the gradient of the full loss.
    pub fn add_weight_decay(&mut self, model: &DcanModel) {
        let lambda = model.config.weight_decay;
        for (g, l) in self.kernels.iter_mut().zip(&model.layers) {
            for (gv, w) in g.data_mut().iter_mut().zip(l.spec.kernel.data()) {
                *gv += lambda * w;
            }
        }
    }

    /// Gradient entries in [`DcanModel::params`] order.
    pub fn param(&self, index: usize) -> &[f64] {
        if index % 2 == 0 {
            self.kernels[index / 2].data()
        } else {
            &self.biases[index / 2]
        }
    }

    pub fn all_finite(&self) -> bool {
        self.kernels.iter().all(Tensor::all_finite) && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}

/// Closed-form parameter count from the configuration alone.
pub fn expected_param_count(config: &DcanConfig) -> usize {
    let mut total = 0;
    let mut in_c = config.in_channels;
    for &c in &config.channels_per_stage {
        total += 9 * in_c * c + c;
        total += (config.convs_per_stage - 1) * (9 * c * c + c);
        in_c = c;
    }
    let h = config.head_channels;
    for &t in &config.branch_taps {
        let c = config.channels_per_stage[t - 1];
        let k = 2usize << t;
        let head = (c * h + h) + (h * h * k * k + h) + (2 * h + 2);
        total += 2 * head;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(config: &DcanConfig, rng: &mut RngState) -> Tensor {
        let s = config.input_size;
        Tensor::from_fn([1, config.in_channels, s, s], |_, _, _, _| rng.uniform())
    }

    #[test]
    fn build_is_deterministic() {
        let a = DcanModel::build(DcanConfig::miniature(), &mut RngState::new(5)).unwrap();
        let b = DcanModel::build(DcanConfig::miniature(), &mut RngState::new(5)).unwrap();
        let c = DcanModel::build(DcanConfig::miniature(), &mut RngState::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn param_count_matches_closed_form() {
        // desk: stage convs 448+2320, 4640+9248, 18496+36928;
        // heads per branch: tap2 (528+16400+34), tap3 (1040+65552+34)
        let desk = DcanConfig::desk();
        let m = DcanModel::build(desk.clone(), &mut RngState::new(0)).unwrap();
        assert_eq!(m.num_params(), expected_param_count(&desk));
        assert_eq!(m.num_params(), 72080 + 2 * (16962 + 66626));
        let mini = DcanConfig::miniature();
        let m = DcanModel::build(mini.clone(), &mut RngState::new(0)).unwrap();
        assert_eq!(m.num_params(), expected_param_count(&mini));
    }

    #[test]
    fn biases_start_at_zero_and_groups_partition() {
        let m = DcanModel::build(DcanConfig::desk(), &mut RngState::new(1)).unwrap();
        let params = m.params();
        assert!(params.iter().filter(|p| p.is_bias).all(|p| p.values.iter().all(|&v| v == 0.0)));
        let total: usize = params.iter().map(|p| p.values.len()).sum();
        let by_group: usize = [ParamGroup::Shared, ParamGroup::Object, ParamGroup::Contour]
            .iter()
            .map(|g| params.iter().filter(|p| p.group == *g).map(|p| p.values.len()).sum::<usize>())
            .sum();
        assert_eq!(total, by_group);
    }

    #[test]
    fn forward_maps_are_probabilities() {
        let config = DcanConfig::miniature();
        let mut rng = RngState::new(2);
        let m = DcanModel::build(config.clone(), &mut rng).unwrap();
        let x = image(&config, &mut rng);
        let maps = m.forward(&x, false, &mut rng).unwrap();
        assert_eq!((maps.height, maps.width), (16, 16));
        assert_eq!(maps.p_o.len(), 256);
        assert_eq!(maps.aux.len(), 4);
        for p in maps.p_o.iter().chain(&maps.p_c).chain(maps.aux.iter().flatten()) {
            assert!((0.0..=1.0).contains(p));
        }
        let again = m.forward(&x, false, &mut rng).unwrap();
        assert_eq!(maps, again);
    }

    #[test]
    fn rejects_wrong_input_size() {
        let config = DcanConfig::miniature();
        let mut rng = RngState::new(3);
        let m = DcanModel::build(config, &mut rng).unwrap();
        let x = Tensor::zeros([1, 3, 8, 8]);
        assert!(matches!(m.forward(&x, false, &mut rng), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_classifiers_give_half() {
        let config = DcanConfig {
            branch_taps: vec![2],
            ..DcanConfig::miniature()
        };
        let mut rng = RngState::new(4);
        let mut m = DcanModel::build(config.clone(), &mut rng).unwrap();
        for l in m.layers_mut().iter_mut().filter(|l| l.name.ends_with(".score")) {
            l.spec.kernel.data_mut().fill(0.0);
            l.spec.bias.fill(0.0);
        }
        let maps = m.forward(&image(&config, &mut rng), true, &mut rng).unwrap();
        assert!(maps.p_o.iter().chain(&maps.p_c).all(|&p| p == 0.5));
    }

    #[test]
    fn checkpoint_param_reconstruction() {
        let m = DcanModel::build(DcanConfig::desk(), &mut RngState::new(8)).unwrap();
        let named: Vec<(String, Tensor)> = m
            .params()
            .into_iter()
            .map(|p| (p.name, Tensor::from_vec(p.shape, p.values.to_vec()).unwrap()))
            .collect();
        let back = DcanModel::from_named_params(named, 64).unwrap();
        assert_eq!(back.layers(), m.layers());
        assert_eq!(back.config().branch_taps, vec![2, 3]);
    }
}
