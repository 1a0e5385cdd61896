//! Training-sample preparation (cropping and geometric augmentation) and
//! overlap-tile plans for whole-image inference.
//!
//! Geometric transforms are applied as a backward map: every output pixel
//! looks up a source coordinate. Images are sampled bilinearly, label grids by
//! nearest neighbour, and coordinates that leave the image are reflected back
//! in (`... 2 1 | 0 1 2 ... n-1 | n-2 ...`).

use crate::error::{shape_err, Error, Result};
use crate::mask::{BinaryMask, InstanceMask};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// An RGB image (as a `(1, 3, H, W)` tensor of reals in `[0, 1]`) with its
/// instance annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub instances: InstanceMask,
}

impl Sample {
    pub fn new(image: Tensor, instances: InstanceMask) -> Result<Self> {
        if image.n() != 1 || image.h() != instances.height() || image.w() != instances.width() {
            return shape_err(format!(
                "image {:?} does not match {}x{} mask",
                image.shape(),
                instances.width(),
                instances.height()
            ));
        }
        Ok(Self { image, instances })
    }

    pub fn height(&self) -> usize {
        self.image.h()
    }

    pub fn width(&self) -> usize {
        self.image.w()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RotationSpec {
    /// Uniform in `[lo, hi)` degrees.
    Range(f64, f64),
    /// Uniform choice among listed angles (degrees).
    Choices(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub max_translation: f64,
    pub rotation: RotationSpec,
    /// Spacing in pixels of the coarse random displacement grid.
    pub elastic_spacing: usize,
    /// Standard deviation of the (smoothed) displacement in pixels.
    pub elastic_sigma: f64,
    /// Radial distortion coefficients `k` in `r' = r (1 + k r^2)`; one is
    /// drawn per sample. `k > 0` gives barrel, `k < 0` pincushion.
    pub radial_k: Vec<f64>,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            max_translation: 8.0,
            rotation: RotationSpec::Range(0.0, 360.0),
            elastic_spacing: 16,
            elastic_sigma: 2.0,
            radial_k: vec![-1e-6, 0.0, 1e-6],
        }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            max_translation: 0.0,
            rotation: RotationSpec::Choices(vec![0.0]),
            elastic_spacing: 16,
            elastic_sigma: 0.0,
            radial_k: vec![0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        let rot_ok = match &self.rotation {
            RotationSpec::Range(a, b) => finite(*a) && finite(*b) && a <= b,
            RotationSpec::Choices(v) => !v.is_empty() && v.iter().all(|&a| finite(a)),
        };
        if !rot_ok
            || !finite(self.max_translation)
            || self.max_translation < 0.0
            || !finite(self.elastic_sigma)
            || self.elastic_sigma < 0.0
            || self.elastic_spacing == 0
            || self.radial_k.is_empty()
            || !self.radial_k.iter().all(|&k| finite(k))
        {
            return Err(Error::Config(format!("invalid augmentation parameters: {self:?}")));
        }
        Ok(())
    }
}

/// Reflects an integer index into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let t = i.rem_euclid(period);
    if t >= n as isize {
        (period - t) as usize
    } else {
        t as usize
    }
}

fn reflect_coord(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    if (0.0..=last).contains(&v) {
        return v;
    }
    let period = 2.0 * last;
    let t = v.rem_euclid(period);
    if t > last {
        period - t
    } else {
        t
    }
}

/// Source coordinate `(y, x)` for every output pixel.
#[derive(Clone, Debug)]
pub struct WarpField {
    height: usize,
    width: usize,
    coords: Vec<(f64, f64)>,
}

impl WarpField {
    pub fn identity(height: usize, width: usize) -> Self {
        let coords = (0..height * width)
            .map(|i| ((i / width) as f64, (i % width) as f64))
            .collect();
        Self {
            height,
            width,
            coords,
        }
    }

    /// Draws translation, rotation about the centre and elastic + radial
    /// distortion, composed as translate -> rotate -> distort.
    pub fn random(height: usize, width: usize, spec: &AugmentSpec, rng: &mut RngState) -> Self {
        let ty = rng.uniform_range(-spec.max_translation, spec.max_translation);
        let tx = rng.uniform_range(-spec.max_translation, spec.max_translation);
        let deg = match &spec.rotation {
            RotationSpec::Range(lo, hi) => rng.uniform_range(*lo, *hi),
            RotationSpec::Choices(v) => v[rng.below(v.len())],
        };
        let k = spec.radial_k[rng.below(spec.radial_k.len())];
        let field = elastic_field(height, width, spec.elastic_spacing, spec.elastic_sigma, rng);
        Self::compose(height, width, ty, tx, deg, k, &field)
    }

    fn compose(height: usize, width: usize, ty: f64, tx: f64, deg: f64, k: f64, field: &[(f64, f64)]) -> Self {
        let cy = (height as f64 - 1.0) / 2.0;
        let cx = (width as f64 - 1.0) / 2.0;
        let theta = deg.to_radians();
        // inverse rotation
        let (s, c) = (-theta).sin_cos();
        let mut coords = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = field[y * width + x];
                let (mut qy, mut qx) = (y as f64 + dy - cy, x as f64 + dx - cx);
                if k != 0.0 {
                    let scale = 1.0 + k * (qy * qy + qx * qx);
                    qy *= scale;
                    qx *= scale;
                }
                let ry = cy + s * qx + c * qy;
                let rx = cx + c * qx - s * qy;
                coords.push((ry - ty, rx - tx));
            }
        }
        Self {
            height,
            width,
            coords,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Bilinear resampling of every plane of `(1, C, H, W)` image `src`.
    pub fn warp_image(&self, src: &Tensor) -> Result<Tensor> {
        let (sh, sw) = (src.h(), src.w());
        let mut out = Tensor::zeros([src.n(), src.c(), self.height, self.width]);
        for n in 0..src.n() {
            for ch in 0..src.c() {
                let plane = src.plane(n, ch);
                let dst = out.plane_mut(n, ch);
                for (o, &(y, x)) in dst.iter_mut().zip(&self.coords) {
                    *o = bilinear(plane, sh, sw, y, x);
                }
            }
        }
        Ok(out)
    }

    fn nearest_index(&self, i: usize, sh: usize, sw: usize) -> usize {
        let (y, x) = self.coords[i];
        let yi = reflect_index(y.round() as isize, sh);
        let xi = reflect_index(x.round() as isize, sw);
        yi * sw + xi
    }

    pub fn warp_instances(&self, src: &InstanceMask) -> InstanceMask {
        let labels = (0..self.coords.len())
            .map(|i| src.labels()[self.nearest_index(i, src.height(), src.width())])
            .collect();
        InstanceMask::from_labels(self.width, self.height, labels).expect("field dimensions")
    }

    pub fn warp_binary(&self, src: &BinaryMask) -> BinaryMask {
        let bits = (0..self.coords.len())
            .map(|i| src.bits()[self.nearest_index(i, src.height(), src.width())])
            .collect();
        BinaryMask::from_bits(self.width, self.height, bits).expect("field dimensions")
    }
}

fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = reflect_coord(y, h);
    let x = reflect_coord(x, w);
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (y0, x0) = (y0 as usize, x0 as usize);
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
    let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], fx);
    let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], fx);
    lerp(top, bottom, fy)
}

/// Coarse Gaussian displacements every `spacing` pixels, smoothed with a
/// `[1 2 1] / 4` kernel on the grid (rescaled back to `sigma`), then
/// interpolated bilinearly to every pixel.
fn elastic_field(height: usize, width: usize, spacing: usize, sigma: f64, rng: &mut RngState) -> Vec<(f64, f64)> {
    if sigma == 0.0 {
        return vec![(0.0, 0.0); height * width];
    }
    let gh = (height.saturating_sub(1)).div_ceil(spacing) + 1;
    let gw = (width.saturating_sub(1)).div_ceil(spacing) + 1;
    let mut comps = Vec::with_capacity(2);
    for _ in 0..2 {
        let raw: Vec<f64> = (0..gh * gw).map(|_| rng.normal()).collect();
        let smooth_axis = |src: &[f64], along_x: bool| -> Vec<f64> {
            let mut out = vec![0.0; gh * gw];
            for y in 0..gh {
                for x in 0..gw {
                    let at = |d: isize| {
                        if along_x {
                            src[y * gw + reflect_index(x as isize + d, gw)]
                        } else {
                            src[reflect_index(y as isize + d, gh) * gw + x]
                        }
                    };
                    out[y * gw + x] = 0.25 * at(-1) + 0.5 * at(0) + 0.25 * at(1);
                }
            }
            out
        };
        let smoothed = smooth_axis(&smooth_axis(&raw, true), false);
        // [1 2 1]/4 in 2-D shrinks a unit-variance field to std 0.375
        comps.push(smoothed.into_iter().map(|v| v * sigma / 0.375).collect::<Vec<f64>>());
    }
    let mut field = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let gy = y as f64 / spacing as f64;
            let gx = x as f64 / spacing as f64;
            field.push((bilinear(&comps[0], gh, gw, gy, gx), bilinear(&comps[1], gh, gw, gy, gx)));
        }
    }
    field
}

/// Reflect-pads a sample so both dimensions are at least `size`.
pub fn pad_to(sample: &Sample, size: usize) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    if h >= size && w >= size {
        return sample.clone();
    }
    let (nh, nw) = (h.max(size), w.max(size));
    let image = Tensor::from_fn([1, sample.image.c(), nh, nw], |n, c, y, x| {
        sample.image.at(n, c, reflect_index(y as isize, h), reflect_index(x as isize, w))
    });
    let mut inst = InstanceMask::new(nw, nh);
    for y in 0..nh {
        for x in 0..nw {
            inst.set(y, x, sample.instances.get(reflect_index(y as isize, h), reflect_index(x as isize, w)));
        }
    }
    Sample {
        image,
        instances: inst,
    }
}

/// Crops the same window from image and mask.
pub fn crop_at(sample: &Sample, y0: usize, x0: usize, size: usize) -> Result<Sample> {
    let image = sample.image.crop(y0, x0, size, size)?;
    let mut inst = InstanceMask::new(size, size);
    for y in 0..size {
        for x in 0..size {
            inst.set(y, x, sample.instances.get(y0 + y, x0 + x));
        }
    }
    Ok(Sample {
        image,
        instances: inst,
    })
}

/// Draws the top-left corner of a `size x size` crop uniformly.
pub fn random_crop_offset(height: usize, width: usize, size: usize, rng: &mut RngState) -> (usize, usize) {
    let y0 = rng.range_inclusive(0, height.saturating_sub(size));
    let x0 = rng.range_inclusive(0, width.saturating_sub(size));
    (y0, x0)
}

/// Uniformly placed square crop; smaller inputs are reflect-padded first.
/// Labels are copied, never renumbered.
pub fn random_crop(sample: &Sample, size: usize, rng: &mut RngState) -> Sample {
    let padded = pad_to(sample, size);
    let (y0, x0) = random_crop_offset(padded.height(), padded.width(), size, rng);
    crop_at(&padded, y0, x0, size).expect("offset drawn within bounds")
}

/// Random translation, rotation and elastic distortion of a sample.
pub fn augment(sample: &Sample, spec: &AugmentSpec, rng: &mut RngState) -> Sample {
    let field = WarpField::random(sample.height(), sample.width(), spec, rng);
    Sample {
        image: field.warp_image(&sample.image).expect("field matches sample"),
        instances: field.warp_instances(&sample.instances),
    }
}

fn axis_offsets(size: usize, tile: usize, stride: usize) -> Vec<usize> {
    if size <= tile {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + tile < size).collect();
    v.push(size - tile);
    v.dedup();
    v
}

/// Tile corners `(y, x)` on a stride lattice with the last row/column shifted
/// inward so every tile lies inside the image; sorted row-major.
pub fn plan_tiles(height: usize, width: usize, tile: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if tile == 0 || stride == 0 || stride > tile {
        return Err(Error::Param(format!("need 1 <= stride ({stride}) <= tile ({tile})")));
    }
    let ys = axis_offsets(height, tile, stride);
    let xs = axis_offsets(width, tile, stride);
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect())
}

/// Number of tiles per axis: `1` if the image fits, else
/// `ceil((size - tile) / stride) + 1`.
pub fn tiles_per_axis(size: usize, tile: usize, stride: usize) -> usize {
    if size <= tile {
        1
    } else {
        (size - tile).div_ceil(stride) + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_sample(h: usize, w: usize) -> Sample {
        let image = Tensor::from_fn([1, 3, h, w], |_, c, y, x| ((c * 1000 + y * w + x) as f64) / 10_000.0);
        let mut inst = InstanceMask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                inst.set(y, x, (y * w + x) as u32);
            }
        }
        Sample::new(image, inst).unwrap()
    }

    #[test]
    fn reflection() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-5, 1), 0);
        assert_eq!(reflect_coord(-0.5, 4), 0.5);
        assert_eq!(reflect_coord(3.5, 4), 2.5);
    }

    #[test]
    fn full_size_crop_is_whole_image() {
        let s = grid_sample(6, 6);
        let c = random_crop(&s, 6, &mut RngState::new(1));
        assert_eq!(c, s);
    }

    #[test]
    fn crop_matches_index_arithmetic() {
        let s = grid_sample(10, 12);
        let mut rng = RngState::new(7);
        let (y0, x0) = random_crop_offset(10, 12, 4, &mut rng.clone());
        let c = random_crop(&s, 4, &mut rng);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(c.instances.get(y, x) as usize, (y0 + y) * 12 + x0 + x);
                assert_eq!(c.image.at(0, 2, y, x), s.image.at(0, 2, y0 + y, x0 + x));
            }
        }
        let again = random_crop(&s, 4, &mut RngState::new(7));
        assert_eq!(again, c);
    }

    #[test]
    fn small_images_are_padded_before_cropping() {
        let s = grid_sample(3, 5);
        let c = random_crop(&s, 6, &mut RngState::new(0));
        assert_eq!((c.height(), c.width()), (6, 6));
        let labels: std::collections::BTreeSet<u32> = c.instances.labels().iter().copied().collect();
        assert!(labels.iter().all(|&l| (l as usize) < 15));
    }

    #[test]
    fn identity_augmentation() {
        let s = grid_sample(9, 7);
        let out = augment(&s, &AugmentSpec::identity(), &mut RngState::new(3));
        assert_eq!(out, s);
    }

    #[test]
    fn quarter_turn_of_two_by_two() {
        let inst = InstanceMask::from_rows(&[&[1, 2], &[3, 4]]).unwrap();
        let field = WarpField::compose(2, 2, 0.0, 0.0, 90.0, 0.0, &[(0.0, 0.0); 4]);
        let out = field.warp_instances(&inst);
        assert_eq!(out.labels(), &[3, 1, 4, 2]);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::filled([1, 3, 16, 16], 0.37);
        let s = Sample::new(img.clone(), InstanceMask::new(16, 16)).unwrap();
        let out = augment(&s, &AugmentSpec::default(), &mut RngState::new(5));
        assert!(out.image.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn augmentation_never_invents_labels() {
        let s = grid_sample(20, 20);
        for seed in 0..10 {
            let out = augment(&s, &AugmentSpec::default(), &mut RngState::new(seed));
            assert!(out.instances.labels().iter().all(|&l| l < 400));
        }
    }

    #[test]
    fn tile_plans() {
        assert_eq!(plan_tiles(64, 64, 64, 32).unwrap(), vec![(0, 0)]);
        assert_eq!(axis_offsets(100, 64, 36), vec![0, 36]);
        assert_eq!(axis_offsets(100, 64, 30), vec![0, 30, 36]);
        assert_eq!(tiles_per_axis(100, 64, 30), 3);
        assert!(plan_tiles(64, 64, 32, 33).is_err());
        assert!(plan_tiles(64, 64, 32, 0).is_err());
        let p = plan_tiles(100, 70, 64, 36).unwrap();
        assert_eq!(p, vec![(0, 0), (0, 6), (36, 0), (36, 6)]);
    }
}
