use super::config::{LrController, TrainSchedule};
use super::model::{DcanModel, LabelPair, LossTerms};
use crate::augment::{pad_to, AugmentSpec, Sample, WarpField};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceMask};
use crate::morphology::extract_contour_labels;
use crate::ops::LabelPlane;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// A training image with precomputed object and contour targets.
///
/// Contours are extracted on the full annotation, before cropping, so crop
/// edges never produce spurious contour labels.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub image: Tensor,
    pub instances: InstanceMask,
    pub contours: BinaryMask,
}

impl TrainingSample {
    pub fn new(sample: &Sample, contour_radius: usize, min_size: usize) -> Self {
        let contours = extract_contour_labels(&sample.instances, contour_radius);
        Self::with_contours(sample, contours, min_size).expect("contours match the annotation")
    }

    /// Uses precomputed contour labels, e.g. read from disk.
    pub fn with_contours(sample: &Sample, contours: BinaryMask, min_size: usize) -> Result<Self> {
        if contours.width() != sample.width() || contours.height() != sample.height() {
            return Err(Error::Shape(format!(
                "contour mask is {}x{}, image is {}x{}",
                contours.width(),
                contours.height(),
                sample.width(),
                sample.height()
            )));
        }
        let padded = pad_to(sample, min_size);
        let contours = if padded.height() == sample.height() && padded.width() == sample.width() {
            contours
        } else {
            // pad the contour plane the same way by routing it through a mask
            let as_inst = InstanceMask::from_labels(
                contours.width(),
                contours.height(),
                contours.bits().iter().map(|&b| b as u32).collect(),
            )?;
            let p = pad_to(&Sample::new(sample.image.clone(), as_inst)?, min_size);
            p.instances.foreground()
        };
        Ok(Self {
            image: padded.image,
            instances: padded.instances,
            contours,
        })
    }

    pub fn labels(&self) -> LabelPair {
        let (h, w) = (self.instances.height(), self.instances.width());
        LabelPair {
            object: LabelPlane::from_bits(h, w, self.instances.foreground().bits()).expect("binary"),
            contour: LabelPlane::from_bits(h, w, self.contours.bits()).expect("binary"),
        }
    }

    /// Crop at `(y0, x0)`, optionally warped, as network input and targets.
    fn crop(&self, y0: usize, x0: usize, size: usize, warp: Option<&WarpField>) -> Result<(Tensor, LabelPair)> {
        let image = self.image.crop(y0, x0, size, size)?;
        let object = BinaryMask::from_fn(size, size, |y, x| self.instances.get(y0 + y, x0 + x) != 0);
        let contour = BinaryMask::from_fn(size, size, |y, x| self.contours.get(y0 + y, x0 + x));
        let (image, object, contour) = match warp {
            Some(f) => (f.warp_image(&image)?, f.warp_binary(&object), f.warp_binary(&contour)),
            None => (image, object, contour),
        };
        Ok((
            image,
            LabelPair {
                object: LabelPlane::from_bits(size, size, object.bits())?,
                contour: LabelPlane::from_bits(size, size, contour.bits())?,
            },
        ))
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Total loss per iteration.
    pub losses: Vec<f64>,
    /// Fused object-branch cross-entropy per iteration (summed over pixels).
    pub object_xent: Vec<f64>,
    pub lr: Vec<f64>,
    pub aux_weight: Vec<f64>,
}

/// Minibatch-1 SGD: samples are visited in a fresh random order every epoch;
/// each iteration takes a random crop of
/// the model's input size, optionally augments it, and steps on the total
/// loss with the scheduled learning rate and auxiliary weight.
pub fn train(
    model: &mut DcanModel,
    dataset: &[TrainingSample],
    schedule: &TrainSchedule,
    augment: Option<&AugmentSpec>,
    rng: &mut RngState,
) -> Result<TrainReport> {
    train_with_progress(model, dataset, schedule, augment, rng, |_, _| {})
}

pub fn train_with_progress(
    model: &mut DcanModel,
    dataset: &[TrainingSample],
    schedule: &TrainSchedule,
    augment: Option<&AugmentSpec>,
    rng: &mut RngState,
    mut progress: impl FnMut(usize, &TrainReport),
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    schedule.validate()?;
    if let Some(a) = augment {
        a.validate()?;
    }
    let size = model.config().input_size;
    let mut lr = LrController::new(schedule);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for t in 0..schedule.max_iters {
        let k = t % dataset.len();
        if k == 0 {
            rng.shuffle(&mut order);
        }
        let s = &dataset[order[k]];
        let (h, w) = (s.instances.height(), s.instances.width());
        let y0 = rng.range_inclusive(0, h - size);
        let x0 = rng.range_inclusive(0, w - size);
        let field = augment.map(|a| WarpField::random(size, size, a, rng));
        let (image, labels) = s.crop(y0, x0, size, field.as_ref())?;

        let w_a = schedule.wa_at(t);
        let pass = model.forward_pass(&image, true, rng)?;
        let (loss, grads) = model.loss_and_grads(&pass, &labels, w_a, LossTerms::ALL)?;
        if !loss.total.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite {
                iteration: t,
                loss: loss.total,
            });
        }
        model.sgd_step(&grads, lr.lr());
        report.losses.push(loss.total);
        report.object_xent.push(loss.fused_object);
        report.lr.push(lr.lr());
        report.aux_weight.push(w_a);
        lr.observe(loss.total, schedule);
        progress(t, &report);
    }
    Ok(report)
}

/// Mean per-pixel fused object-branch cross-entropy in inference mode.
pub fn object_xent_per_pixel(model: &DcanModel, dataset: &[TrainingSample]) -> Result<f64> {
    let size = model.config().input_size;
    let mut rng = RngState::new(0);
    let mut total = 0.0;
    let mut pixels = 0usize;
    for s in dataset {
        let (image, labels) = s.crop(0, 0, size, None)?;
        let pass = model.forward_pass(&image, false, &mut rng)?;
        let loss = model.total_loss(&pass, &labels, 0.0)?;
        total += loss.fused_object;
        pixels += size * size;
    }
    Ok(total / pixels as f64)
}

/// Means of consecutive non-overlapping windows of `window` values.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}
