//! Ward-linkage clustering of trajectories and event windows on cluster
//! center trajectories.
//!
//! Node ids follow the usual linkage convention: leaves are `0..n`, and the
//! `m`-th merge creates node `n + m`. Merge heights are Ward distances
//! `sqrt(2 n_u n_v / (n_u + n_v)) * ||c_u - c_v||`, i.e. the square root of
//! twice the increase in within-cluster sum of squares, so two singletons
//! merge at their Euclidean distance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::format_f64;
use crate::trajectory::Trajectory;

pub const DEFAULT_K_MAD: f64 = 3.0;
pub const DEFAULT_MIN_DURATION: usize = 5;
/// Runs of flagged hours separated by at most this many quiet hours are joined.
pub const GAP_BRIDGE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    /// Leaves under the new node.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn max_height(&self) -> f64 {
        self.merges.iter().map(|m| m.height).fold(0.0, f64::max)
    }
}

pub fn ward_cluster(trajectories: &[Trajectory]) -> Result<Dendrogram> {
    let Some(first) = trajectories.first() else {
        return invalid("Ward clustering needs at least 2 trajectories, got 0");
    };
    if trajectories
        .iter()
        .any(|t| t.dim() != first.dim() || t.len() != first.len())
    {
        return invalid("trajectories must share length and dimension");
    }
    let points: Vec<&[f64]> = trajectories.iter().map(|t| t.flat()).collect();
    ward_linkage(&points)
}

/// Ward linkage on raw vectors via Lance-Williams updates of squared Ward
/// distances. Equal distances resolve to the smallest `(left, right)` pair
/// of node ids.
pub fn ward_linkage(points: &[&[f64]]) -> Result<Dendrogram> {
    let n = points.len();
    if n < 2 {
        return invalid(format!("Ward clustering needs at least 2 items, got {n}"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return invalid("all items must have the same dimension");
    }
    // Condensed upper-triangular storage of squared Ward distances between slots.
    let idx = |a: usize, b: usize| {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        a * n - a * (a + 1) / 2 + (b - a - 1)
    };
    let mut dist = vec![0.0; n * (n - 1) / 2];
    for a in 0..n {
        for b in a + 1..n {
            dist[idx(a, b)] = points[a].iter().zip(points[b]).map(|(x, y)| (x - y).powi(2)).sum();
        }
    }
    let mut node: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for m in 0..n - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let d = dist[idx(a, b)];
                let key = (node[a].min(node[b]), node[a].max(node[b]));
                let better = match best {
                    None => true,
                    Some((bd, bk, _, _)) => d < bd || (d == bd && key < bk),
                };
                if better {
                    best = Some((d, key, a, b));
                }
            }
        }
        let (d, (left, right), a, b) = best.expect("at least two active slots");
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for &k in &active {
            if k == a || k == b {
                continue;
            }
            let nk = size[k] as f64;
            let updated = ((na + nk) * dist[idx(k, a)] + (nb + nk) * dist[idx(k, b)] - nk * d) / (na + nb + nk);
            dist[idx(k, a)] = updated.max(0.0);
        }
        size[a] += size[b];
        node[a] = n + m;
        active.retain(|&s| s != b);
        merges.push(Merge {
            left,
            right,
            height: d.max(0.0).sqrt(),
            size: size[a],
        });
    }
    Ok(Dendrogram { n_leaves: n, merges })
}

/// Flat clustering from a dendrogram.
///
/// Heights are divided by the largest merge height; merges whose normalized
/// height exceeds `cutoff` are undone. A cutoff of 1 or more therefore gives
/// a single cluster. Labels are `0..c`, ordered by decreasing cluster size,
/// then by smallest member leaf.
pub fn cut(d: &Dendrogram, cutoff: f64) -> Result<Vec<usize>> {
    if !(cutoff > 0.0) || !cutoff.is_finite() {
        return invalid(format!("cutoff must be positive and finite, got {cutoff}"));
    }
    let n = d.n_leaves;
    let max_h = d.max_height();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    // Any leaf under each node, for union-find on leaves.
    let mut rep: Vec<usize> = (0..n).collect();
    for m in &d.merges {
        rep.push(rep[m.left]);
        let norm = if max_h > 0.0 { m.height / max_h } else { 0.0 };
        if norm <= cutoff {
            let (x, y) = (find(&mut parent, rep[m.left]), find(&mut parent, rep[m.right]));
            if x != y {
                parent[x.max(y)] = x.min(y);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    // Roots are the smallest leaf of their cluster.
    let mut counts = vec![0usize; n];
    for &r in &roots {
        counts[r] += 1;
    }
    let mut order: Vec<usize> = (0..n).filter(|&r| counts[r] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut label_of = vec![usize::MAX; n];
    for (l, &r) in order.iter().enumerate() {
        label_of[r] = l;
    }
    Ok(roots.iter().map(|&r| label_of[r]).collect())
}

pub fn cluster_name(label: usize) -> String {
    format!("cluster-{label}")
}

/// Pointwise mean of the member trajectories.
pub fn center_trajectory(members: &[&Trajectory], name: impl Into<String>) -> Result<Trajectory> {
    let Some(first) = members.first() else {
        return invalid("cannot average an empty cluster");
    };
    if members.iter().any(|t| t.dim() != first.dim() || t.len() != first.len()) {
        return invalid("cluster members must share length and dimension");
    }
    let mut sum = vec![0.0; first.flat().len()];
    for t in members {
        sum.iter_mut().zip(t.flat()).for_each(|(s, v)| *s += v);
    }
    let n = members.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Trajectory::new(name, first.dim(), sum)
}

/// Centers of every cluster, indexed by label.
pub fn cluster_centers(trajectories: &[Trajectory], labels: &[usize]) -> Result<Vec<Trajectory>> {
    if trajectories.len() != labels.len() {
        return invalid("one label per trajectory required");
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| {
            let members: Vec<&Trajectory> = trajectories
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(t, _)| t)
                .collect();
            center_trajectory(&members, cluster_name(c))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventWindow {
    pub cluster_id: usize,
    /// Inclusive hour indices.
    pub start_hour: usize,
    pub end_hour: usize,
    /// Peak `(deviation - median) / scale` within the window.
    pub severity: f64,
}

impl EventWindow {
    pub fn len(&self) -> usize {
        self.end_hour - self.start_hour + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventDetection {
    pub windows: Vec<EventWindow>,
    /// Set when the trajectory has no spread to measure deviations against.
    pub degenerate: bool,
    pub median: f64,
    /// MAD of the deviations, or their mean absolute deviation when the MAD is 0.
    pub scale: f64,
    pub threshold: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-hour deviation is the distance of the point from the trajectory's
/// coordinate-wise median. Hours whose deviation exceeds
/// `median + k_mad * scale` are flagged, runs separated by at most
/// [`GAP_BRIDGE`] quiet hours are joined, and windows shorter than
/// `min_duration` hours are dropped.
pub fn detect_events(
    center: &Trajectory,
    cluster_id: usize,
    k_mad: f64,
    min_duration: usize,
) -> Result<EventDetection> {
    if min_duration == 0 {
        return invalid("min_duration must be at least 1");
    }
    if !(k_mad >= 0.0) || !k_mad.is_finite() {
        return invalid(format!("k_mad must be finite and non-negative, got {k_mad}"));
    }
    let k = center.len();
    let q = center.dim();
    let mid: Vec<f64> = (0..q)
        .map(|c| median(&mut center.points().map(|p| p.coords[c]).collect::<Vec<_>>()))
        .collect();
    let dev: Vec<f64> = center
        .points()
        .map(|p| {
            p.coords
                .iter()
                .zip(&mid)
                .map(|(x, m)| (x - m).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let med = median(&mut dev.clone());
    let mut abs_dev: Vec<f64> = dev.iter().map(|d| (d - med).abs()).collect();
    let mean_abs = abs_dev.iter().sum::<f64>() / k as f64;
    let mad = median(&mut abs_dev);
    let scale = if mad > 0.0 { mad } else { mean_abs };
    if !(scale > 0.0) {
        return Ok(EventDetection {
            windows: Vec::new(),
            degenerate: true,
            median: med,
            scale: 0.0,
            threshold: med,
        });
    }
    let threshold = med + k_mad * scale;
    let flagged: Vec<usize> = (0..k).filter(|&t| dev[t] > threshold).collect();

    let mut windows = Vec::new();
    let mut run: Option<(usize, usize)> = None;
    let close = |s: usize, e: usize, windows: &mut Vec<EventWindow>| {
        if e - s + 1 >= min_duration {
            let severity = (s..=e)
                .filter(|&t| dev[t] > threshold)
                .map(|t| (dev[t] - med) / scale)
                .fold(f64::NEG_INFINITY, f64::max);
            windows.push(EventWindow {
                cluster_id,
                start_hour: s,
                end_hour: e,
                severity,
            });
        }
    };
    for &t in &flagged {
        run = match run {
            Some((s, e)) if t - e - 1 <= GAP_BRIDGE => Some((s, t)),
            Some((s, e)) => {
                close(s, e, &mut windows);
                Some((t, t))
            }
            None => Some((t, t)),
        };
    }
    if let Some((s, e)) = run {
        close(s, e, &mut windows);
    }
    Ok(EventDetection {
        windows,
        degenerate: false,
        median: med,
        scale,
        threshold,
    })
}

/// `user_id,cluster`.
pub fn write_clusters_csv<W: Write>(trajectories: &[Trajectory], labels: &[usize], mut w: W) -> Result<()> {
    writeln!(w, "user_id,cluster")?;
    for (t, l) in trajectories.iter().zip(labels) {
        writeln!(w, "{},{}", t.user_id, l)?;
    }
    Ok(())
}

/// `cluster,start_hour,end_hour,severity`.
pub fn write_events_csv<W: Write>(events: &[EventWindow], mut w: W) -> Result<()> {
    writeln!(w, "cluster,start_hour,end_hour,severity")?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{}",
            e.cluster_id,
            e.start_hour,
            e.end_hour,
            format_f64(e.severity)
        )?;
    }
    Ok(())
}

/// `step,left,right,height,size`.
pub fn write_dendrogram_csv<W: Write>(d: &Dendrogram, mut w: W) -> Result<()> {
    writeln!(w, "step,left,right,height,size")?;
    for (s, m) in d.merges.iter().enumerate() {
        writeln!(w, "{},{},{},{},{}", s, m.left, m.right, format_f64(m.height), m.size)?;
    }
    Ok(())
}
