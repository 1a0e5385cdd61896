//! Object-level Dice and Hausdorff: per-object values weighted by object
//! area, averaged over the segmented side and the ground-truth side.

use std::collections::BTreeMap;

use super::hausdorff::hausdorff;
use super::matching::Overlaps;
use crate::error::Result;
use crate::mask::{same_dims, BinaryMask, InstanceMask};

/// Which pixels of an object enter the Hausdorff distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HausdorffMode {
    /// Every pixel of the object.
    #[default]
    FullSet,
    /// Object pixels with a 4-neighbour outside the object or the image.
    Boundary,
}

/// `2|G ∩ S| / (|G| + |S|)`; two empty sets score 1.
pub fn pixel_dice(g: &BinaryMask, s: &BinaryMask) -> Result<f64> {
    same_dims(g.width(), g.height(), s.width(), s.height())?;
    let inter = g.bits().iter().zip(s.bits()).filter(|(&a, &b)| a && b).count();
    Ok(dice_from_counts(g.count(), s.count(), inter))
}

fn dice_from_counts(g: usize, s: usize, inter: usize) -> f64 {
    if g + s == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (g + s) as f64
    }
}

/// Per-object `(area, value)` terms of one or more images, kept separate per
/// side so datasets can be pooled before weighting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectTerms {
    pub seg: Vec<(usize, f64)>,
    pub gt: Vec<(usize, f64)>,
}

impl ObjectTerms {
    pub fn extend(&mut self, other: &ObjectTerms) {
        self.seg.extend_from_slice(&other.seg);
        self.gt.extend_from_slice(&other.gt);
    }

    fn weighted(terms: &[(usize, f64)]) -> f64 {
        let total: usize = terms.iter().map(|t| t.0).sum();
        if total == 0 {
            return 0.0;
        }
        terms.iter().map(|&(a, v)| a as f64 * v).sum::<f64>() / total as f64
    }

    /// Combined Dice: 1 when both sides are empty, 0 when exactly one is.
    pub fn dice(&self) -> f64 {
        match (self.seg.is_empty(), self.gt.is_empty()) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => 0.5 * (Self::weighted(&self.seg) + Self::weighted(&self.gt)),
        }
    }

    /// Combined Hausdorff; an empty side contributes nothing to its half.
    pub fn hausdorff(&self) -> f64 {
        0.5 * (Self::weighted(&self.seg) + Self::weighted(&self.gt))
    }
}

pub fn object_dice_terms(seg: &InstanceMask, gt: &InstanceMask) -> Result<ObjectTerms> {
    let ov = Overlaps::new(seg, gt)?;
    let seg_terms = ov
        .seg_areas
        .iter()
        .map(|(&s, &area)| {
            let d = ov
                .best_gt(s)
                .map_or(0.0, |(g, n)| dice_from_counts(ov.gt_areas[&g], area, n));
            (area, d)
        })
        .collect();
    let gt_terms = ov
        .gt_areas
        .iter()
        .map(|(&g, &area)| {
            let d = ov
                .best_seg(g)
                .map_or(0.0, |(s, n)| dice_from_counts(area, ov.seg_areas[&s], n));
            (area, d)
        })
        .collect();
    Ok(ObjectTerms {
        seg: seg_terms,
        gt: gt_terms,
    })
}

pub fn object_dice(seg: &InstanceMask, gt: &InstanceMask) -> Result<f64> {
    Ok(object_dice_terms(seg, gt)?.dice())
}

fn object_pixels(inst: &InstanceMask, mode: HausdorffMode) -> BTreeMap<u32, Vec<(usize, usize)>> {
    let (w, h) = (inst.width(), inst.height());
    let mut out: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let id = inst.get(y, x);
            if id == 0 {
                continue;
            }
            let keep = match mode {
                HausdorffMode::FullSet => true,
                HausdorffMode::Boundary => {
                    y == 0
                        || x == 0
                        || y + 1 == h
                        || x + 1 == w
                        || inst.get(y - 1, x) != id
                        || inst.get(y + 1, x) != id
                        || inst.get(y, x - 1) != id
                        || inst.get(y, x + 1) != id
                }
            };
            if keep {
                out.entry(id).or_default().push((y, x));
            }
        }
    }
    out
}

/// Hausdorff distance of `own` to its partner on the other side: the object
/// of largest overlap, else the object nearest in Hausdorff distance, else
/// (no objects at all over there) the image diagonal.
fn partner_distance(
    own: &[(usize, usize)],
    best: Option<(u32, usize)>,
    others: &BTreeMap<u32, Vec<(usize, usize)>>,
    diagonal: f64,
) -> f64 {
    let h = |other: &[(usize, usize)]| hausdorff(own, other).expect("objects are nonempty");
    match best {
        Some((id, _)) => h(&others[&id]),
        None => others.values().map(|o| h(o)).reduce(f64::min).unwrap_or(diagonal),
    }
}

pub fn object_hausdorff_terms(seg: &InstanceMask, gt: &InstanceMask, mode: HausdorffMode) -> Result<ObjectTerms> {
    let ov = Overlaps::new(seg, gt)?;
    let diagonal = ((seg.width().pow(2) + seg.height().pow(2)) as f64).sqrt();
    let seg_px = object_pixels(seg, mode);
    let gt_px = object_pixels(gt, mode);
    let seg_terms = seg_px
        .iter()
        .map(|(&s, px)| (ov.seg_areas[&s], partner_distance(px, ov.best_gt(s), &gt_px, diagonal)))
        .collect();
    let gt_terms = gt_px
        .iter()
        .map(|(&g, px)| (ov.gt_areas[&g], partner_distance(px, ov.best_seg(g), &seg_px, diagonal)))
        .collect();
    Ok(ObjectTerms {
        seg: seg_terms,
        gt: gt_terms,
    })
}

pub fn object_hausdorff(seg: &InstanceMask, gt: &InstanceMask, mode: HausdorffMode) -> Result<f64> {
    Ok(object_hausdorff_terms(seg, gt, mode)?.hausdorff())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_dice_values() {
        let g = BinaryMask::from_fn(4, 2, |y, _| y == 0);
        let s = BinaryMask::from_fn(4, 2, |_, x| x < 2);
        assert_eq!(pixel_dice(&g, &s).unwrap(), 0.5);
        assert_eq!(pixel_dice(&g, &g).unwrap(), 1.0);
        let e = BinaryMask::new(4, 2);
        assert_eq!(pixel_dice(&e, &e).unwrap(), 1.0);
        assert_eq!(pixel_dice(&e, &g).unwrap(), 0.0);
    }

    #[test]
    fn identical_masks_are_perfect() {
        let m = InstanceMask::from_rows(&[&[1, 1, 0, 2], &[1, 0, 0, 2]]).unwrap();
        assert_eq!(object_dice(&m, &m).unwrap(), 1.0);
        assert_eq!(object_hausdorff(&m, &m, HausdorffMode::FullSet).unwrap(), 0.0);
    }

    #[test]
    fn empty_side_conventions() {
        let e = InstanceMask::new(3, 4);
        let m = InstanceMask::from_rows(&[&[1, 0, 0], &[0, 0, 0], &[0, 0, 0], &[0, 0, 0]]).unwrap();
        assert_eq!(object_dice(&e, &e).unwrap(), 1.0);
        assert_eq!(object_dice(&m, &e).unwrap(), 0.0);
        assert_eq!(object_hausdorff(&e, &e, HausdorffMode::FullSet).unwrap(), 0.0);
        assert_eq!(object_hausdorff(&m, &e, HausdorffMode::FullSet).unwrap(), 2.5);
    }

    #[test]
    fn unmatched_object_uses_nearest_counterpart() {
        // gt: one object at column 0; seg: one matching, one stray at column 5
        let gt = InstanceMask::from_rows(&[&[1, 0, 0, 0, 0, 0]]).unwrap();
        let seg = InstanceMask::from_rows(&[&[1, 0, 0, 0, 0, 2]]).unwrap();
        // seg side: (1 * 0 + 1 * 5) / 2; gt side: 0
        assert_eq!(object_hausdorff(&seg, &gt, HausdorffMode::FullSet).unwrap(), 1.25);
    }

    #[test]
    fn boundary_mode_ignores_interior() {
        let gt = InstanceMask::from_rows(&[&[0, 0, 0, 0, 0], &[0, 1, 1, 1, 0], &[0, 1, 1, 1, 0], &[0, 1, 1, 1, 0]])
            .unwrap();
        let seg = InstanceMask::from_rows(&[&[0, 0, 0, 0, 0], &[0, 0, 0, 0, 0], &[0, 0, 1, 0, 0], &[0, 0, 0, 0, 0]])
            .unwrap();
        let full = object_hausdorff(&seg, &gt, HausdorffMode::FullSet).unwrap();
        let boundary = object_hausdorff(&seg, &gt, HausdorffMode::Boundary).unwrap();
        assert_eq!(full, 2f64.sqrt());
        // the centre pixel leaves the gt set, but the far corners still dominate
        assert_eq!(boundary, 2f64.sqrt());
        let dot = InstanceMask::from_rows(&[&[0, 0, 0, 0, 0], &[0, 1, 0, 0, 0], &[0, 0, 0, 0, 0], &[0, 0, 0, 0, 0]])
            .unwrap();
        // the dot lies inside gt; the opposite corner is 2*sqrt(2) away
        assert_eq!(object_hausdorff(&dot, &gt, HausdorffMode::FullSet).unwrap(), 8f64.sqrt());
    }
}
