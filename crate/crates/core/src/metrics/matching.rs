use std::collections::BTreeMap;

use crate::error::Result;
use crate::mask::{same_dims, InstanceMask};

/// Pixel-overlap table between the objects of two instance masks.
#[derive(Clone, Debug, Default)]
pub struct Overlaps {
    /// `(seg id, gt id) -> shared pixels`, only for nonzero overlaps.
    pub pairs: BTreeMap<(u32, u32), usize>,
    pub seg_areas: BTreeMap<u32, usize>,
    pub gt_areas: BTreeMap<u32, usize>,
}

impl Overlaps {
    pub fn new(seg: &InstanceMask, gt: &InstanceMask) -> Result<Self> {
        same_dims(seg.width(), seg.height(), gt.width(), gt.height())?;
        let mut pairs = BTreeMap::new();
        for (&s, &g) in seg.labels().iter().zip(gt.labels()) {
            if s != 0 && g != 0 {
                *pairs.entry((s, g)).or_insert(0) += 1;
            }
        }
        Ok(Self {
            pairs,
            seg_areas: seg.areas(),
            gt_areas: gt.areas(),
        })
    }

    /// Ground-truth object with the largest overlap with `seg` (ties to the
    /// smaller id), if any overlap is nonzero.
    pub fn best_gt(&self, seg: u32) -> Option<(u32, usize)> {
        best(self.pairs.range((seg, 0)..=(seg, u32::MAX)).map(|(&(_, g), &n)| (g, n)))
    }

    /// Segmented object with the largest overlap with `gt`.
    pub fn best_seg(&self, gt: u32) -> Option<(u32, usize)> {
        best(self.pairs.iter().filter(|((_, g), _)| *g == gt).map(|(&(s, _), &n)| (s, n)))
    }
}

/// Largest count, smallest id on ties; input is in ascending id order.
fn best(candidates: impl Iterator<Item = (u32, usize)>) -> Option<(u32, usize)> {
    candidates.fold(None, |acc, (id, n)| match acc {
        Some((_, m)) if m >= n => acc,
        _ => Some((id, n)),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Segmented object id to its true-positive ground truth, `None` for
    /// false positives.
    pub pairing: BTreeMap<u32, Option<u32>>,
}

impl MatchStats {
    pub fn add(&mut self, other: &MatchStats) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Detection matching: a segmented object is a true positive when it covers
/// at least half of the ground-truth object it overlaps most.
pub fn match_objects(seg: &InstanceMask, gt: &InstanceMask) -> Result<MatchStats> {
    let ov = Overlaps::new(seg, gt)?;
    // gt id -> (overlap, seg id) of the best qualifying candidate so far
    let mut claims: BTreeMap<u32, (usize, u32)> = BTreeMap::new();
    for &s in ov.seg_areas.keys() {
        if let Some((g, n)) = ov.best_gt(s) {
            if 2 * n >= ov.gt_areas[&g] {
                let better = match claims.get(&g) {
                    Some(&(m, _)) => n > m,
                    None => true,
                };
                if better {
                    claims.insert(g, (n, s));
                }
            }
        }
    }
    let mut pairing: BTreeMap<u32, Option<u32>> = ov.seg_areas.keys().map(|&s| (s, None)).collect();
    for (&g, &(_, s)) in &claims {
        pairing.insert(s, Some(g));
    }
    let tp = claims.len();
    Ok(MatchStats {
        tp,
        fp: ov.seg_areas.len() - tp,
        fn_: ov.gt_areas.len() - tp,
        pairing,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision, recall and F1; empty ratios count as 0, except that no
/// objects on either side is a perfect score.
pub fn detection_f1(stats: &MatchStats) -> Detection {
    let (tp, fp, fn_) = (stats.tp as f64, stats.fp as f64, stats.fn_ as f64);
    if stats.tp + stats.fp + stats.fn_ == 0 {
        return Detection {
            f1: 1.0,
            precision: 1.0,
            recall: 1.0,
        };
    }
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Detection {
        f1: ratio(2.0 * precision * recall, precision + recall),
        precision,
        recall,
    }
}
