//! Per-user trajectories: each hour's feature vector projected onto the
//! feature-mode components `B`, giving one `Q`-dimensional point per hour.

use std::io::{BufRead, Write};

use crate::decomposition::TuckerModel;
use crate::error::{invalid, Error, Result};
use crate::ingestion::FeatureTensor;
use crate::tensor::{format_f64, Matrix, Tensor3};

/// A time-stamped sequence of `dim`-dimensional points, one per hour,
/// stored flat in hour order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub user_id: String,
    dim: usize,
    coords: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint<'a> {
    pub t: usize,
    pub coords: &'a [f64],
}

impl Trajectory {
    pub fn new(user_id: impl Into<String>, dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return invalid(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return invalid("trajectory coordinates must be finite");
        }
        Ok(Self {
            user_id: user_id.into(),
            dim,
            coords,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, t: usize) -> &[f64] {
        &self.coords[t * self.dim..(t + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = TrajectoryPoint<'_>> {
        self.coords
            .chunks(self.dim)
            .enumerate()
            .map(|(t, coords)| TrajectoryPoint { t, coords })
    }

    /// The trajectory as one `(K * Q)`-vector.
    pub fn flat(&self) -> &[f64] {
        &self.coords
    }
}

/// `coords(i, k) = (X(i,:,k)·B(:,1), …, X(i,:,k)·B(:,Q))` for every user
/// and hour. `ft` must be the (preprocessed) tensor the model was fit to.
pub fn build_trajectories(ft: &FeatureTensor, model: &TuckerModel) -> Result<Vec<Trajectory>> {
    project_onto(&ft.tensor, &ft.user_ids, &model.factor_b)
}

pub fn project_onto(x: &Tensor3, user_ids: &[String], b: &Matrix) -> Result<Vec<Trajectory>> {
    let [ni, nj, nk] = x.dims();
    if b.rows() != nj {
        return invalid(format!("factor B has {} rows, tensor has {nj} features", b.rows()));
    }
    if user_ids.len() != ni {
        return invalid(format!("{} user ids for {ni} users", user_ids.len()));
    }
    let q = b.cols();
    let mut out = Vec::with_capacity(ni);
    for (i, uid) in user_ids.iter().enumerate() {
        let mut coords = vec![0.0; nk * q];
        for j in 0..nj {
            let brow = b.row(j);
            for k in 0..nk {
                let v = x.get(i, j, k);
                if v == 0.0 {
                    continue;
                }
                for (c, bq) in coords[k * q..(k + 1) * q].iter_mut().zip(brow) {
                    *c += v * bq;
                }
            }
        }
        out.push(Trajectory::new(uid.clone(), q, coords)?);
    }
    Ok(out)
}

/// Euclidean distance between the flattened trajectories.
pub fn trajectory_distance(t1: &Trajectory, t2: &Trajectory) -> Result<f64> {
    if t1.dim != t2.dim || t1.len() != t2.len() {
        return invalid(format!(
            "trajectory shapes differ: {}x{} vs {}x{}",
            t1.len(),
            t1.dim,
            t2.len(),
            t2.dim
        ));
    }
    Ok(t1
        .coords
        .iter()
        .zip(&t2.coords)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Writes `user_id,t,c1,...,cQ`.
pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], mut w: W) -> Result<()> {
    let q = trajectories.first().map_or(0, |t| t.dim);
    let header: Vec<String> = ["user_id".to_string(), "t".to_string()]
        .into_iter()
        .chain((1..=q).map(|c| format!("c{c}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for tr in trajectories {
        for p in tr.points() {
            write!(w, "{},{}", tr.user_id, p.t)?;
            for c in p.coords {
                write!(w, ",{}", format_f64(*c))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Reads the CSV written by [`write_trajectories_csv`]; rows of one user
/// must be contiguous and in ascending `t` starting at 0.
pub fn read_trajectories_csv<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "user_id" || cols[1] != "t" {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let q = cols.len() - 2;
    let mut out: Vec<Trajectory> = Vec::new();
    let mut current: Option<(String, Vec<f64>)> = None;
    for (n, line) in lines.enumerate() {
        let line_no = n as u64 + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        let perr = |m: String| Error::Parse {
            line: line_no,
            message: m,
        };
        if fields.len() != q + 2 {
            return Err(perr(format!("expected {} fields, got {}", q + 2, fields.len())));
        }
        let t: usize = fields[1]
            .parse()
            .map_err(|_| perr(format!("bad hour {:?}", fields[1])))?;
        if current.as_ref().is_none_or(|(u, _)| u != fields[0]) {
            if let Some((u, c)) = current.take() {
                out.push(Trajectory::new(u, q, c)?);
            }
            current = Some((fields[0].to_string(), Vec::new()));
        }
        let (_, coords) = current.as_mut().expect("set above");
        if t != coords.len() / q {
            return Err(perr(format!("hour {t} out of sequence for user {}", fields[0])));
        }
        for f in &fields[2..] {
            coords.push(f.parse().map_err(|_| perr(format!("bad coordinate {f:?}")))?);
        }
    }
    if let Some((u, c)) = current {
        out.push(Trajectory::new(u, q, c)?);
    }
    Ok(out)
}
