//! Gland segmentation evaluation: detection F1, object-level Dice and
//! Hausdorff, and leaderboard ranking.

mod hausdorff;
mod matching;
mod object;
mod ranking;
mod report;

pub use hausdorff::{hausdorff, squared_edt};
pub use matching::{detection_f1, match_objects, Detection, MatchStats, Overlaps};
pub use object::{
    object_dice, object_dice_terms, object_hausdorff, object_hausdorff_terms, pixel_dice, HausdorffMode,
    ObjectTerms,
};
pub use ranking::{competition_rank, rank_teams, sum_score, Direction, RankRow, TeamScores, CRITERIA};
pub use report::{evaluate, EvalRow, MetricsReport};
