//! Ranking users by their distance from the origin of the user-component
//! space (rows of the Tucker factor `A`).

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::decomposition::TuckerModel;
use crate::error::{invalid, Error, Result};
use crate::tensor::format_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedUser {
    pub user_id: String,
    pub distance: f64,
    /// Min-max normalized distance in `[0, 1]`.
    pub score: f64,
}

/// Users ordered by decreasing distance, ties by ascending `user_id`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnomalyRanking {
    pub entries: Vec<RankedUser>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Components {
    #[default]
    All,
    /// Only the leading `k` user components.
    FirstK(usize),
}

pub fn user_scores(model: &TuckerModel, user_ids: &[String]) -> Result<AnomalyRanking> {
    user_scores_with(model, user_ids, Components::All)
}

pub fn user_scores_with(model: &TuckerModel, user_ids: &[String], components: Components) -> Result<AnomalyRanking> {
    let a = &model.factor_a;
    if user_ids.len() != a.rows() {
        return invalid(format!("{} user ids for {} rows of factor A", user_ids.len(), a.rows()));
    }
    let k = match components {
        Components::All => a.cols(),
        Components::FirstK(k) if k >= 1 && k <= a.cols() => k,
        Components::FirstK(k) => return invalid(format!("cannot take {k} of {} components", a.cols())),
    };
    let distances: Vec<f64> = (0..a.rows())
        .map(|i| a.row(i)[..k].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    Ok(rank_distances(user_ids, &distances))
}

/// Orders precomputed distances and attaches min-max scores. When every
/// distance is equal all scores are 1.
pub fn rank_distances(user_ids: &[String], distances: &[f64]) -> AnomalyRanking {
    assert_eq!(user_ids.len(), distances.len());
    let lo = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut entries: Vec<RankedUser> = user_ids
        .iter()
        .zip(distances)
        .map(|(u, &d)| RankedUser {
            user_id: u.clone(),
            distance: d,
            score: if hi > lo { (d - lo) / (hi - lo) } else { 1.0 },
        })
        .collect();
    entries.sort_by(|x, y| {
        y.distance
            .partial_cmp(&x.distance)
            .unwrap_or(Ordering::Equal)
            .then_with(|| x.user_id.cmp(&y.user_id))
    });
    AnomalyRanking { entries }
}

impl AnomalyRanking {
    pub fn position(&self, user_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.user_id == user_id)
    }

    pub fn top(&self, n: usize) -> impl Iterator<Item = &RankedUser> {
        self.entries.iter().take(n)
    }

    /// `rank,user_id,distance,score` with 1-based ranks.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rank,user_id,distance,score")?;
        for (n, e) in self.entries.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                n + 1,
                e.user_id,
                format_f64(e.distance),
                format_f64(e.score)
            )?;
        }
        Ok(())
    }
}

/// Pearson correlation of normalized scores over the users both rankings share.
pub fn ranking_correlation(r1: &AnomalyRanking, r2: &AnomalyRanking) -> Result<f64> {
    let other: std::collections::HashMap<&str, f64> =
        r2.entries.iter().map(|e| (e.user_id.as_str(), e.score)).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = r1
        .entries
        .iter()
        .filter_map(|e| other.get(e.user_id.as_str()).map(|&y| (e.score, y)))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::Degenerate(format!("{} common users, need at least 2", xs.len())));
    }
    pearson(&xs, &ys)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("scores have zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
