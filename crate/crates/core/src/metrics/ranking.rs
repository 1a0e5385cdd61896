//! Leaderboard ranking: standard competition ranks per criterion, summed
//! into a final score.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// "1224" ranks: tied scores share the best rank, and each rank is one plus
/// the number of strictly better scores.
pub fn competition_rank(scores: &[f64], direction: Direction) -> Vec<usize> {
    let better = |a: f64, b: f64| match direction {
        Direction::HigherBetter => a > b,
        Direction::LowerBetter => a < b,
    };
    scores
        .iter()
        .map(|&s| 1 + scores.iter().filter(|&&o| better(o, s)).count())
        .collect()
}

/// Published scores of one team on both test parts.
#[derive(Clone, Debug, PartialEq)]
pub struct TeamScores {
    pub team: String,
    pub f1_a: f64,
    pub f1_b: f64,
    pub dice_a: f64,
    pub dice_b: f64,
    pub haus_a: f64,
    pub haus_b: f64,
}

/// Column order of the six criteria.
pub const CRITERIA: [&str; 6] = ["f1_a", "f1_b", "dice_a", "dice_b", "haus_a", "haus_b"];

impl TeamScores {
    fn values(&self) -> [f64; 6] {
        [self.f1_a, self.f1_b, self.dice_a, self.dice_b, self.haus_a, self.haus_b]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankRow {
    pub team: String,
    pub ranks: [usize; 6],
    pub sum: usize,
    pub final_rank: usize,
}

/// Sums each team's ranks and ranks the sums (smaller is better).
pub fn sum_score(rows: &[(String, Vec<usize>)]) -> Result<Vec<RankRow>> {
    let mut out = Vec::with_capacity(rows.len());
    for (team, ranks) in rows {
        let ranks: [usize; 6] = ranks.as_slice().try_into().map_err(|_| {
            Error::Input(format!("team {team:?} has {} rank entries, expected 6", ranks.len()))
        })?;
        out.push(RankRow {
            team: team.clone(),
            ranks,
            sum: ranks.iter().sum(),
            final_rank: 0,
        });
    }
    let sums: Vec<f64> = out.iter().map(|r| r.sum as f64).collect();
    for (row, rank) in out.iter_mut().zip(competition_rank(&sums, Direction::LowerBetter)) {
        row.final_rank = rank;
    }
    Ok(out)
}

/// Ranks every criterion (F1 and Dice descending, Hausdorff ascending) and
/// aggregates into the final table, in input order.
pub fn rank_teams(teams: &[TeamScores]) -> Result<Vec<RankRow>> {
    if teams.is_empty() {
        return Err(Error::Input("no teams to rank".into()));
    }
    for t in teams {
        if t.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("team {:?} has a non-finite score", t.team)));
        }
    }
    let columns: Vec<Vec<usize>> = (0..6)
        .map(|k| {
            let dir = if k < 4 { Direction::HigherBetter } else { Direction::LowerBetter };
            let scores: Vec<f64> = teams.iter().map(|t| t.values()[k]).collect();
            competition_rank(&scores, dir)
        })
        .collect();
    let rows: Vec<(String, Vec<usize>)> = teams
        .iter()
        .enumerate()
        .map(|(i, t)| (t.team.clone(), columns.iter().map(|c| c[i]).collect()))
        .collect();
    sum_score(&rows)
}
