use std::fmt::Write as _;

use super::matching::{detection_f1, match_objects, MatchStats};
use super::object::{object_dice_terms, object_hausdorff_terms, HausdorffMode, ObjectTerms};
use crate::error::Result;
use crate::mask::InstanceMask;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub object_dice: f64,
    pub object_hausdorff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<EvalRow>,
    /// Dataset-level values: detection counts and object terms pooled over
    /// all images.
    pub all: EvalRow,
}

struct ImageEval {
    stats: MatchStats,
    dice: ObjectTerms,
    haus: ObjectTerms,
}

fn row(image: &str, stats: &MatchStats, dice: &ObjectTerms, haus: &ObjectTerms) -> EvalRow {
    let d = detection_f1(stats);
    EvalRow {
        image: image.to_string(),
        f1: d.f1,
        precision: d.precision,
        recall: d.recall,
        object_dice: dice.dice(),
        object_hausdorff: haus.hausdorff(),
    }
}

fn eval_image(seg: &InstanceMask, gt: &InstanceMask, mode: HausdorffMode) -> Result<ImageEval> {
    Ok(ImageEval {
        stats: match_objects(seg, gt)?,
        dice: object_dice_terms(seg, gt)?,
        haus: object_hausdorff_terms(seg, gt, mode)?,
    })
}

/// Evaluates `(name, segmentation, ground truth)` triples.
pub fn evaluate(images: &[(String, InstanceMask, InstanceMask)], mode: HausdorffMode) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(images.len());
    let mut stats = MatchStats::default();
    let mut dice = ObjectTerms::default();
    let mut haus = ObjectTerms::default();
    for (name, seg, gt) in images {
        let e = eval_image(seg, gt, mode)?;
        rows.push(row(name, &e.stats, &e.dice, &e.haus));
        stats.add(&e.stats);
        dice.extend(&e.dice);
        haus.extend(&e.haus);
    }
    let all = row("ALL", &stats, &dice, &haus);
    Ok(MetricsReport { rows, all })
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,f1,precision,recall,object_dice,object_hausdorff\n");
        for r in self.rows.iter().chain(std::iter::once(&self.all)) {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.image, r.f1, r.precision, r.recall, r.object_dice, r.object_hausdorff
            )
            .expect("writing to a String");
        }
        s
    }
}
