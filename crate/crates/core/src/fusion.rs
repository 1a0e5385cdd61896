//! Turning the two probability maps into labeled gland instances.

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceMask};
use crate::morphology::{connected_components, fill_holes, remove_small, smooth_disk};

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub t_o: f64,
    pub t_c: f64,
    pub smooth_radius: usize,
    pub min_area: usize,
}

impl Default for FusionParams {
    /// Desk-scale defaults (64-pixel crops).
    fn default() -> Self {
        Self {
            t_o: 0.5,
            t_c: 0.5,
            smooth_radius: 3,
            min_area: 64,
        }
    }
}

impl FusionParams {
    /// Defaults for full-size (480-pixel crop) images.
    pub fn full_scale() -> Self {
        Self {
            min_area: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("t_o", self.t_o), ("t_c", self.t_c)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Param(format!("{name} = {t} must lie strictly between 0 and 1")));
            }
        }
        Ok(())
    }
}

fn check_plane(name: &str, plane: &[f64], width: usize, height: usize) -> Result<()> {
    if plane.len() != width * height {
        return Err(Error::Shape(format!(
            "{name} has {} values, expected {width}x{height}",
            plane.len()
        )));
    }
    Ok(())
}

/// Gland pixels: object probability at least `t_o` and contour probability
/// strictly below `t_c`.
pub fn fuse(p_o: &[f64], p_c: &[f64], width: usize, height: usize, params: &FusionParams) -> Result<BinaryMask> {
    params.validate()?;
    check_plane("p_o", p_o, width, height)?;
    check_plane("p_c", p_c, width, height)?;
    let bits = p_o
        .iter()
        .zip(p_c)
        .map(|(&o, &c)| o >= params.t_o && c < params.t_c)
        .collect();
    BinaryMask::from_bits(width, height, bits)
}

/// Smooth with a disk, fill holes, drop small regions, then label
/// 4-connected components.
pub fn postprocess(mask: &BinaryMask, params: &FusionParams) -> InstanceMask {
    let smoothed = smooth_disk(mask, params.smooth_radius);
    let filled = fill_holes(&smoothed);
    let kept = remove_small(&filled, params.min_area);
    connected_components(&kept)
}

/// `fuse` followed by `postprocess`.
pub fn segment(p_o: &[f64], p_c: &[f64], width: usize, height: usize, params: &FusionParams) -> Result<InstanceMask> {
    Ok(postprocess(&fuse(p_o, p_c, width, height, params)?, params))
}

/// Baseline that ignores the contour map entirely.
pub fn segment_objects_only(p_o: &[f64], width: usize, height: usize, params: &FusionParams) -> Result<InstanceMask> {
    params.validate()?;
    check_plane("p_o", p_o, width, height)?;
    let bits = p_o.iter().map(|&o| o >= params.t_o).collect();
    Ok(postprocess(&BinaryMask::from_bits(width, height, bits)?, params))
}
