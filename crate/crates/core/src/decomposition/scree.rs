//! Model-order selection over a grid of `(P, Q, R)` Tucker3 ranks.
//!
//! Every grid point is fit with HOOI. For each complexity `s = P + Q + R`
//! the best-fitting point is kept; these, together with the empty model at
//! `(0, 0%)`, form a fit-vs-complexity curve. The selected model is the point
//! on the upper convex hull of that curve where the marginal fit gain drops
//! the most, measured as the ratio of the incoming hull slope to the outgoing
//! one. The last hull point has no outgoing slope and is only chosen when it
//! is the sole candidate.
//!
//! Rank triples where one rank exceeds the product of the other two (for
//! example `(2, 1, 1)`) cannot improve on a smaller model and are left out
//! of the grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tucker::{hooi_from, ModeBases};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor3;

/// Outgoing slopes below this are treated as flat.
const FLAT_SLOPE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub fit_percent: f64,
}

impl GridPoint {
    pub fn complexity(&self) -> usize {
        self.p + self.q + self.r
    }

    pub fn ranks(&self) -> (usize, usize, usize) {
        (self.p, self.q, self.r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeResult {
    pub grid: Vec<GridPoint>,
    pub selected: (usize, usize, usize),
}

#[derive(Debug, Clone, Copy)]
pub struct ScreeOptions {
    /// Maximum number of grid points to fit. Beyond it, the grid is cut to
    /// the lowest-complexity points in `(P+Q+R, P, Q, R)` order.
    pub sweep_budget: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ScreeOptions {
    fn default() -> Self {
        Self {
            sweep_budget: 512,
            tol: super::tucker::DEFAULT_TOL,
            max_iter: super::tucker::DEFAULT_MAX_ITER,
        }
    }
}

/// Rank triples considered for the given bounds, in `(P+Q+R, P, Q, R)` order.
pub fn scree_grid(max_p: usize, max_q: usize, max_r: usize, sweep_budget: usize) -> Vec<(usize, usize, usize)> {
    let mut grid = Vec::new();
    for p in 1..=max_p {
        for q in 1..=max_q {
            for r in 1..=max_r {
                if p <= q * r && q <= p * r && r <= p * q {
                    grid.push((p, q, r));
                }
            }
        }
    }
    grid.sort_by_key(|&(p, q, r)| (p + q + r, p, q, r));
    grid.truncate(sweep_budget.max(1));
    grid
}

pub fn scree_select(x: &Tensor3, max_p: usize, max_q: usize, max_r: usize, opts: &ScreeOptions) -> Result<ScreeResult> {
    let dims = x.dims();
    for (name, m, ext) in [
        ("max_p", max_p, dims[0]),
        ("max_q", max_q, dims[1]),
        ("max_r", max_r, dims[2]),
    ] {
        if m == 0 || m > ext {
            return invalid(format!("{name} = {m} outside [1, {ext}]"));
        }
    }
    if x.squared_norm() == 0.0 {
        return Err(Error::Degenerate("tensor has zero Frobenius norm".into()));
    }
    let points = scree_grid(max_p, max_q, max_r, opts.sweep_budget);
    let bases = ModeBases::compute(x, [max_p, max_q, max_r])?;
    let grid = points
        .par_iter()
        .map(|&(p, q, r)| {
            let wrap = |e| Error::GridPoint {
                p,
                q,
                r,
                source: Box::new(e),
            };
            let init = bases.hosvd(x, p, q, r).map_err(wrap)?;
            let out = hooi_from(x, init, opts.tol, opts.max_iter).map_err(wrap)?;
            Ok(GridPoint {
                p,
                q,
                r,
                fit_percent: out.model.fit_percent,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let selected = select_elbow(&grid);
    Ok(ScreeResult { grid, selected })
}

/// Applies the convex-hull elbow rule to an already-evaluated grid.
pub fn select_elbow(grid: &[GridPoint]) -> (usize, usize, usize) {
    assert!(!grid.is_empty(), "empty scree grid");
    // Best point per complexity, earliest in grid order on ties.
    let mut best: Vec<GridPoint> = Vec::new();
    let mut sorted: Vec<&GridPoint> = grid.iter().collect();
    sorted.sort_by_key(|g| (g.complexity(), g.p, g.q, g.r));
    for g in sorted {
        match best.last_mut() {
            Some(b) if b.complexity() == g.complexity() => {
                if g.fit_percent > b.fit_percent {
                    *b = *g;
                }
            }
            _ => best.push(*g),
        }
    }

    // Upper hull over (s, fit), anchored at the empty model; points that do
    // not improve on the best smaller model are dominated.
    let mut hull: Vec<(f64, f64, Option<GridPoint>)> = vec![(0.0, 0.0, None)];
    for g in best {
        let (s, f) = (g.complexity() as f64, g.fit_percent);
        if f <= hull.last().expect("anchor").1 {
            continue;
        }
        while hull.len() >= 2 {
            let (s1, f1, _) = hull[hull.len() - 2];
            let (s2, f2, _) = hull[hull.len() - 1];
            // Drop the middle point when it lies on or below the chord.
            if (f2 - f1) * (s - s1) <= (f - f1) * (s2 - s1) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push((s, f, Some(g)));
    }

    let candidates = &hull[1..];
    match candidates.len() {
        0 => {
            // Nothing improves on the empty model; fall back to the simplest point.
            let g = grid
                .iter()
                .min_by_key(|g| (g.complexity(), g.p, g.q, g.r))
                .expect("non-empty");
            g.ranks()
        }
        1 => candidates[0].2.expect("grid point").ranks(),
        _ => {
            let mut pick = 1;
            let mut best_score = f64::NEG_INFINITY;
            for h in 1..hull.len() - 1 {
                let slope_in = (hull[h].1 - hull[h - 1].1) / (hull[h].0 - hull[h - 1].0);
                let slope_out = (hull[h + 1].1 - hull[h].1) / (hull[h + 1].0 - hull[h].0);
                let score = slope_in / slope_out.max(FLAT_SLOPE);
                if score > best_score {
                    best_score = score;
                    pick = h;
                }
            }
            hull[pick].2.expect("grid point").ranks()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{reconstruct, Matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(p: usize, q: usize, r: usize, fit: f64) -> GridPoint {
        GridPoint {
            p,
            q,
            r,
            fit_percent: fit,
        }
    }

    #[test]
    fn grid_skips_degenerate_triples() {
        let g = scree_grid(2, 2, 2, 100);
        assert!(!g.contains(&(2, 1, 1)));
        assert!(g.contains(&(2, 2, 1)));
        assert_eq!(g[0], (1, 1, 1));
        assert_eq!(scree_grid(3, 3, 3, 2).len(), 2);
    }

    #[test]
    fn singleton_grid() {
        let x = Tensor3::from_fn([1, 1, 1], |_, _, _| 2.0);
        let res = scree_select(&x, 1, 1, 1, &ScreeOptions::default()).unwrap();
        assert_eq!(res.selected, (1, 1, 1));
        assert_eq!(res.grid.len(), 1);
    }

    #[test]
    fn elbow_on_hand_curve() {
        // Sharp knee at s = 6.
        let grid = vec![
            pt(1, 1, 1, 60.0),
            pt(2, 2, 1, 80.0),
            pt(2, 2, 2, 99.0),
            pt(3, 2, 2, 99.2),
            pt(3, 3, 3, 99.5),
        ];
        assert_eq!(select_elbow(&grid), (2, 2, 2));
        // Flat after the simplest model.
        let grid = vec![pt(1, 1, 1, 100.0), pt(2, 2, 1, 100.0), pt(2, 2, 2, 100.0)];
        assert_eq!(select_elbow(&grid), (1, 1, 1));
    }

    #[test]
    fn noiseless_rank_one_selects_smallest() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor3::from_fn([4, 3, 3], |i, j, k| u[i] * v[j] * w[k]);
        let res = scree_select(&x, 4, 3, 3, &ScreeOptions::default()).unwrap();
        assert!(res.grid.iter().any(|g| g.ranks() == (4, 3, 3)));
        assert_eq!(res.selected, (1, 1, 1));
    }

    #[test]
    fn planted_rank_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut orth = |n: usize, k: usize| {
            let m = Matrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
            crate::linalg::leading_left_singular_vectors(&m, k).unwrap().0
        };
        let (a, b, c) = (orth(8, 2), orth(6, 2), orth(7, 2));
        let g = Tensor3::new([2, 2, 2], vec![5.0, 1.0, -1.0, 2.0, 0.5, 3.0, 1.5, -4.0]).unwrap();
        let signal = reconstruct(&g, &a, &b, &c).unwrap();
        let noise = Tensor3::from_fn([8, 6, 7], |_, _, _| rng.random_range(-1.0..1.0));
        let scale = 0.01 * signal.frobenius_norm() / noise.frobenius_norm();
        let x = Tensor3::new(
            [8, 6, 7],
            signal
                .values()
                .iter()
                .zip(noise.values())
                .map(|(s, n)| s + scale * n)
                .collect(),
        )
        .unwrap();
        let res = scree_select(&x, 3, 3, 3, &ScreeOptions::default()).unwrap();
        assert_eq!(res.selected, (2, 2, 2));
    }

    #[test]
    fn bounds_checked() {
        let x = Tensor3::from_fn([2, 2, 2], |i, j, k| (i + j + k) as f64);
        assert!(matches!(
            scree_select(&x, 3, 1, 1, &ScreeOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }
}
