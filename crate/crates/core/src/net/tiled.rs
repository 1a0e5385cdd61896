use super::model::{DcanModel, ProbabilityMaps};
use crate::augment::{plan_tiles, reflect_index};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Overlap-tile inference over an arbitrary-size `(1, C, H, W)` image.
///
/// Tiles follow [`plan_tiles`]; each pixel's probabilities are the mean over
/// all tiles covering it. Images smaller than the tile are reflect-padded,
/// predicted, and cropped back.
pub fn predict_tiled(model: &DcanModel, image: &Tensor, tile: usize, stride: usize) -> Result<ProbabilityMaps> {
    if tile != model.config().input_size {
        return Err(Error::Param(format!(
            "tile {tile} must equal the model input size {}",
            model.config().input_size
        )));
    }
    let (h, w) = (image.h(), image.w());
    let (ph, pw) = (h.max(tile), w.max(tile));
    let padded = if (ph, pw) == (h, w) {
        image.clone()
    } else {
        Tensor::from_fn([1, image.c(), ph, pw], |n, c, y, x| {
            image.at(n, c, reflect_index(y as isize, h), reflect_index(x as isize, w))
        })
    };
    let plan = plan_tiles(ph, pw, tile, stride)?;
    let mut rng = RngState::new(0);
    let mut tiles = Vec::with_capacity(plan.len());
    for &(y, x) in &plan {
        let crop = padded.crop(y, x, tile, tile)?;
        tiles.push(((y, x), model.forward(&crop, false, &mut rng)?));
    }
    let full = stitch(ph, pw, &tiles)?;
    Ok(crop_maps(&full, h, w))
}

/// Averages tile predictions into a full-size map, visiting tiles in sorted
/// order so the floating-point reduction is deterministic.
pub fn stitch(height: usize, width: usize, tiles: &[((usize, usize), ProbabilityMaps)]) -> Result<ProbabilityMaps> {
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.sort_by_key(|&i| tiles[i].0);
    let mut sum_o = vec![0.0; height * width];
    let mut sum_c = vec![0.0; height * width];
    let mut count = vec![0u32; height * width];
    for i in order {
        let ((y0, x0), m) = &tiles[i];
        if y0 + m.height > height || x0 + m.width > width {
            return Err(Error::Shape(format!(
                "tile at ({y0}, {x0}) of {}x{} exceeds {height}x{width}",
                m.height, m.width
            )));
        }
        for y in 0..m.height {
            for x in 0..m.width {
                let d = (y0 + y) * width + x0 + x;
                let s = y * m.width + x;
                sum_o[d] += m.p_o[s];
                sum_c[d] += m.p_c[s];
                count[d] += 1;
            }
        }
    }
    if count.iter().any(|&c| c == 0) {
        return Err(Error::Shape("tiles do not cover the image".into()));
    }
    for ((o, c), &n) in sum_o.iter_mut().zip(sum_c.iter_mut()).zip(&count) {
        *o /= n as f64;
        *c /= n as f64;
    }
    ProbabilityMaps::new(height, width, sum_o, sum_c)
}

fn crop_maps(m: &ProbabilityMaps, h: usize, w: usize) -> ProbabilityMaps {
    if (m.height, m.width) == (h, w) {
        return m.clone();
    }
    let pick = |plane: &[f64]| -> Vec<f64> {
        (0..h).flat_map(|y| plane[y * m.width..y * m.width + w].to_vec()).collect()
    };
    ProbabilityMaps::new(h, w, pick(&m.p_o), pick(&m.p_c)).expect("cropped dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::config::DcanConfig;

    fn constant(h: usize, w: usize, v: f64) -> ProbabilityMaps {
        ProbabilityMaps::new(h, w, vec![v; h * w], vec![1.0 - v; h * w]).unwrap()
    }

    #[test]
    fn two_tile_average() {
        let tiles = vec![((0, 0), constant(4, 4, 0.2)), ((0, 2), constant(4, 4, 0.6))];
        let m = stitch(4, 6, &tiles).unwrap();
        for y in 0..4 {
            assert_eq!(m.p_o[y * 6], 0.2);
            assert!((m.p_o[y * 6 + 2] - 0.4).abs() < 1e-15);
            assert!((m.p_o[y * 6 + 3] - 0.4).abs() < 1e-15);
            assert_eq!(m.p_o[y * 6 + 5], 0.6);
        }
        assert!(stitch(4, 7, &tiles).is_err());
    }

    fn model_and_image(size: usize, seed: u64) -> (DcanModel, Tensor) {
        let config = DcanConfig {
            input_size: 16,
            ..DcanConfig::miniature()
        };
        let mut rng = RngState::new(seed);
        let model = DcanModel::build(config, &mut rng).unwrap();
        let image = Tensor::from_fn([1, 3, size, size], |_, _, _, _| rng.uniform());
        (model, image)
    }

    #[test]
    fn single_tile_equals_forward() {
        let (model, image) = model_and_image(16, 1);
        let tiled = predict_tiled(&model, &image, 16, 8).unwrap();
        let direct = model.forward(&image, false, &mut RngState::new(0)).unwrap();
        assert_eq!(tiled.p_o, direct.p_o);
        assert_eq!(tiled.p_c, direct.p_c);
    }

    #[test]
    fn non_overlapping_tiles_concatenate() {
        let (model, image) = model_and_image(32, 2);
        let tiled = predict_tiled(&model, &image, 16, 16).unwrap();
        for (ty, tx) in [(0, 0), (0, 16), (16, 0), (16, 16)] {
            let part = model
                .forward(&image.crop(ty, tx, 16, 16).unwrap(), false, &mut RngState::new(0))
                .unwrap();
            for y in 0..16 {
                for x in 0..16 {
                    assert_eq!(tiled.p_o[(ty + y) * 32 + tx + x], part.p_o[y * 16 + x]);
                }
            }
        }
    }

    #[test]
    fn small_image_is_padded_and_cropped() {
        let (model, image) = model_and_image(16, 3);
        let small = image.crop(0, 0, 10, 12).unwrap();
        let m = predict_tiled(&model, &small, 16, 16).unwrap();
        assert_eq!((m.height, m.width), (10, 12));
        assert!(m.p_o.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(predict_tiled(&model, &small, 8, 8).is_err());
    }
}
