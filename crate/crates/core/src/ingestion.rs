//! From raw notification logs to the preprocessed Users x Features x Hours
//! tensor.
//!
//! Input is UTF-8 CSV with header `user_id,timestamp` and integer Unix
//! seconds. Each user's inter-arrival times (ΔT) are binned into the hour of
//! the later message; a user's first message yields no ΔT. Every
//! (user, hour) cell gets ten features in this fixed order:
//!
//! | # | name       | source                                      |
//! |---|------------|---------------------------------------------|
//! | 0 | `a00`      | HMM self-transition, low-mean state         |
//! | 1 | `a11`      | HMM self-transition, high-mean state        |
//! | 2 | `mu0`      | HMM emission mean, low state                |
//! | 3 | `mu1`      | HMM emission mean, high state               |
//! | 4 | `sigma0`   | HMM emission standard deviation, low state  |
//! | 5 | `sigma1`   | HMM emission standard deviation, high state |
//! | 6 | `mean`     | mean ΔT in the hour                         |
//! | 7 | `variance` | population variance of ΔT in the hour       |
//! | 8 | `entropy`  | Shannon entropy of the binned ΔT histogram  |
//! | 9 | `count`    | messages received in the hour               |

use std::collections::BTreeMap;
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hmm::{baum_welch, extract_features, BaumWelchConfig, ObservationSeq};
use crate::tensor::Tensor3;

pub const SECONDS_PER_HOUR: i64 = 3600;
pub const DEFAULT_WINDOW_HOURS: usize = 720;
pub const DEFAULT_MIN_OBS: usize = 6;
pub const N_FEATURES: usize = 10;
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "a00", "a11", "mu0", "mu1", "sigma0", "sigma1", "mean", "variance", "entropy", "count",
];

/// Regular log-spaced bins between these bounds, plus one underflow and one
/// overflow bin.
pub const ENTROPY_BINS: usize = 16;
const ENTROPY_LO: f64 = 1.0;
const ENTROPY_HI: f64 = 3600.0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Record {
    pub user_id: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NotificationLog {
    /// Sorted by `(user_id, timestamp)`, no duplicates.
    pub records: Vec<Record>,
    pub window_start: i64,
    pub window_hours: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    /// Unix seconds; `None` takes the earliest timestamp floored to the hour.
    pub start: Option<i64>,
    pub hours: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            start: None,
            hours: DEFAULT_WINDOW_HOURS,
        }
    }
}

impl NotificationLog {
    /// Sorts, removes exact duplicates and checks that every timestamp lies
    /// in `[window_start, window_start + 3600 * window_hours)`.
    pub fn new(mut records: Vec<Record>, window_start: i64, window_hours: usize) -> Result<Self> {
        if window_hours == 0 {
            return invalid("window_hours must be positive");
        }
        records.sort();
        records.dedup();
        let end = window_start + SECONDS_PER_HOUR * window_hours as i64;
        let offenders: Vec<(String, i64)> = records
            .iter()
            .filter(|r| r.timestamp < window_start || r.timestamp >= end)
            .map(|r| (r.user_id.clone(), r.timestamp))
            .collect();
        if !offenders.is_empty() {
            return Err(Error::OutOfWindow { offenders });
        }
        Ok(Self {
            records,
            window_start,
            window_hours,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn user_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.iter().map(|r| r.user_id.clone()).collect();
        ids.dedup();
        ids
    }

    pub fn hour_of(&self, timestamp: i64) -> usize {
        ((timestamp - self.window_start) / SECONDS_PER_HOUR) as usize
    }

    /// Writes the CSV wire format.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "user_id,timestamp")?;
        for r in &self.records {
            writeln!(w, "{},{}", r.user_id, r.timestamp)?;
        }
        Ok(())
    }
}

pub fn parse_log<R: Read>(source: R, window: WindowSpec) -> Result<NotificationLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let parse_err = |line: u64, message: String| Error::Parse { line, message };

    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "user_id" || &headers[1] != "timestamp" {
        // An empty file has an empty header record.
        if !(headers.is_empty() || (headers.len() == 1 && headers[0].is_empty())) {
            return Err(parse_err(
                1,
                format!("expected header `user_id,timestamp`, got {headers:?}"),
            ));
        }
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, got {}", row.len())));
        }
        if row[0].is_empty() {
            return Err(parse_err(line, "empty user_id".into()));
        }
        let timestamp: i64 = row[1]
            .parse()
            .map_err(|_| parse_err(line, format!("timestamp {:?} is not an integer", &row[1])))?;
        records.push(Record {
            user_id: row[0].to_owned(),
            timestamp,
        });
    }
    let start = match window.start {
        Some(s) => s,
        None => records
            .iter()
            .map(|r| r.timestamp)
            .min()
            .map(|t| t.div_euclid(SECONDS_PER_HOUR) * SECONDS_PER_HOUR)
            .unwrap_or(0),
    };
    NotificationLog::new(records, start, window.hours)
}

/// Per user and hour: ΔT values (seconds) and message counts.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyDeltas {
    pub user_ids: Vec<String>,
    pub window_hours: usize,
    /// `deltas[user][hour]`, in arrival order.
    pub deltas: Vec<Vec<Vec<f64>>>,
    /// `counts[user][hour]`.
    pub counts: Vec<Vec<u32>>,
}

impl HourlyDeltas {
    /// All of a user's ΔT values in time order.
    pub fn user_series(&self, user: usize) -> Vec<f64> {
        self.deltas[user].iter().flatten().copied().collect()
    }
}

pub fn compute_deltas(log: &NotificationLog) -> HourlyDeltas {
    compute_deltas_for(log, &[])
}

/// Like [`compute_deltas`], additionally including `roster` users that may
/// have sent nothing. Users are ordered by id.
pub fn compute_deltas_for(log: &NotificationLog, roster: &[String]) -> HourlyDeltas {
    let hours = log.window_hours;
    let mut per_user: BTreeMap<&str, Vec<i64>> = roster.iter().map(|u| (u.as_str(), Vec::new())).collect();
    for r in &log.records {
        per_user.entry(r.user_id.as_str()).or_default().push(r.timestamp);
    }
    let mut out = HourlyDeltas {
        user_ids: Vec::with_capacity(per_user.len()),
        window_hours: hours,
        deltas: Vec::with_capacity(per_user.len()),
        counts: Vec::with_capacity(per_user.len()),
    };
    for (user, stamps) in per_user {
        let mut deltas = vec![Vec::new(); hours];
        let mut counts = vec![0u32; hours];
        for (n, &t) in stamps.iter().enumerate() {
            let h = log.hour_of(t);
            counts[h] += 1;
            if n > 0 {
                deltas[h].push((t - stamps[n - 1]) as f64);
            }
        }
        out.user_ids.push(user.to_owned());
        out.deltas.push(deltas);
        out.counts.push(counts);
    }
    out
}

fn entropy_bin(v: f64) -> usize {
    if v < ENTROPY_LO {
        0
    } else if v > ENTROPY_HI {
        ENTROPY_BINS + 1
    } else {
        let pos = (v / ENTROPY_LO).ln() / (ENTROPY_HI / ENTROPY_LO).ln() * ENTROPY_BINS as f64;
        1 + (pos.floor() as usize).min(ENTROPY_BINS - 1)
    }
}

/// `(mean, population variance, entropy, count)` of one hour.
///
/// Entropy is in nats over 16 log-spaced bins on `[1 s, 3600 s]` plus an
/// underflow and an overflow bin. Empty hours give zeros for the first three.
pub fn hour_summary_features(deltas: &[f64], message_count: u32) -> [f64; 4] {
    if deltas.is_empty() {
        return [0.0, 0.0, 0.0, message_count as f64];
    }
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let mut hist = [0usize; ENTROPY_BINS + 2];
    for &d in deltas {
        hist[entropy_bin(d)] += 1;
    }
    let entropy = -hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>();
    [mean, var, entropy.max(0.0), message_count as f64]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmFeatureConfig {
    /// Minimum ΔT count for a per-hour fit.
    pub min_obs: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HmmFeatureConfig {
    fn default() -> Self {
        Self {
            min_obs: DEFAULT_MIN_OBS,
            seed: 0,
            tol: crate::hmm::DEFAULT_TOL,
            max_iter: crate::hmm::DEFAULT_MAX_ITER,
        }
    }
}

/// Where a cell's six HMM features came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellSource {
    HourFit,
    /// The user's whole-window fit, used for sparse hours.
    Fallback,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    /// Users x 10 x Hours.
    pub tensor: Tensor3,
    pub user_ids: Vec<String>,
    pub feature_names: Vec<String>,
    /// `provenance[user * hours + hour]`; empty after loading from disk.
    pub provenance: Vec<CellSource>,
    /// Number of cells whose HMM fit hit a constant sequence.
    pub degenerate_fits: usize,
}

impl FeatureTensor {
    pub fn new(tensor: Tensor3, user_ids: Vec<String>) -> Result<Self> {
        let [i, j, _] = tensor.dims();
        if i != user_ids.len() || j != N_FEATURES {
            return invalid(format!(
                "tensor {:?} does not match {} users x {N_FEATURES} features",
                tensor.dims(),
                user_ids.len()
            ));
        }
        Ok(Self {
            tensor,
            user_ids,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            provenance: Vec::new(),
            degenerate_fits: 0,
        })
    }

    pub fn n_hours(&self) -> usize {
        self.tensor.dims()[2]
    }
}

/// Seed for the HMM fit of `(user, hour)`; `hour == window_hours` denotes
/// the user's whole-window fit.
pub fn cell_seed(seed: u64, user: usize, hour: usize) -> u64 {
    let mut z =
        seed ^ (user as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (hour as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct UserSlab {
    values: Vec<f64>,
    provenance: Vec<CellSource>,
    degenerate: usize,
}

fn fit_features(series: &[f64], cfg: &HmmFeatureConfig, seed: u64) -> Result<([f64; 6], bool)> {
    let fit = baum_welch(
        &ObservationSeq::new(series.to_vec())?,
        &BaumWelchConfig {
            n_states: 2,
            seed,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
        },
    )?;
    Ok((extract_features(&fit.model)?, fit.degenerate))
}

fn user_slab(deltas: &HourlyDeltas, user: usize, cfg: &HmmFeatureConfig) -> Result<UserSlab> {
    let hours = deltas.window_hours;
    let mut values = vec![0.0; N_FEATURES * hours];
    let mut provenance = vec![CellSource::Zero; hours];
    let mut degenerate = 0;

    let needs_fallback = deltas.deltas[user].iter().any(|d| d.len() < cfg.min_obs);
    let whole = deltas.user_series(user);
    let fallback = if needs_fallback && whole.len() >= cfg.min_obs {
        let (f, deg) = fit_features(&whole, cfg, cell_seed(cfg.seed, user, hours))?;
        degenerate += deg as usize;
        Some(f)
    } else {
        None
    };

    for h in 0..hours {
        let d = &deltas.deltas[user][h];
        let hmm = if d.len() >= cfg.min_obs {
            let (f, deg) = fit_features(d, cfg, cell_seed(cfg.seed, user, h))?;
            degenerate += deg as usize;
            provenance[h] = CellSource::HourFit;
            f
        } else if let Some(f) = fallback {
            provenance[h] = CellSource::Fallback;
            f
        } else {
            [0.0; 6]
        };
        let summary = hour_summary_features(d, deltas.counts[user][h]);
        for (j, v) in hmm.iter().chain(summary.iter()).enumerate() {
            values[j * hours + h] = *v;
        }
    }
    Ok(UserSlab {
        values,
        provenance,
        degenerate,
    })
}

pub fn build_feature_tensor(deltas: &HourlyDeltas, cfg: &HmmFeatureConfig) -> Result<FeatureTensor> {
    let users = deltas.user_ids.len();
    let hours = deltas.window_hours;
    if users == 0 || hours == 0 {
        return invalid("feature tensor needs at least one user and one hour");
    }
    if cfg.min_obs < 4 {
        return invalid("min_obs must be at least 4 for a two-state fit");
    }
    let slabs = (0..users)
        .into_par_iter()
        .map(|u| user_slab(deltas, u, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(users * N_FEATURES * hours);
    let mut provenance = Vec::with_capacity(users * hours);
    let mut degenerate = 0;
    for s in slabs {
        values.extend_from_slice(&s.values);
        provenance.extend_from_slice(&s.provenance);
        degenerate += s.degenerate;
    }
    let mut ft = FeatureTensor::new(
        Tensor3::new([users, N_FEATURES, hours], values)?,
        deltas.user_ids.clone(),
    )?;
    ft.provenance = provenance;
    ft.degenerate_fits = degenerate;
    Ok(ft)
}

/// Per-feature centering and scaling; `sd == 0` marks a feature that is
/// only centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaling {
    pub fn apply(&self, ft: &FeatureTensor) -> Result<FeatureTensor> {
        self.map(ft, |v, m, s| if s > 0.0 { (v - m) / s } else { v - m })
    }

    pub fn invert(&self, ft: &FeatureTensor) -> Result<FeatureTensor> {
        self.map(ft, |v, m, s| if s > 0.0 { v * s + m } else { v + m })
    }

    fn map(&self, ft: &FeatureTensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<FeatureTensor> {
        let [ni, nj, nk] = ft.tensor.dims();
        if nj != self.mean.len() || nj != self.sd.len() {
            return invalid(format!("scaling has {} features, tensor has {nj}", self.mean.len()));
        }
        let t = Tensor3::from_fn([ni, nj, nk], |i, j, k| {
            f(ft.tensor.get(i, j, k), self.mean[j], self.sd[j])
        });
        Ok(FeatureTensor {
            tensor: t,
            ..ft.clone()
        })
    }
}

/// Z-scores every feature over the whole user x hour plane.
pub fn preprocess(ft: &FeatureTensor) -> Result<(FeatureTensor, Scaling)> {
    let [ni, nj, nk] = ft.tensor.dims();
    let n = (ni * nk) as f64;
    let mut mean = vec![0.0; nj];
    let mut sd = vec![0.0; nj];
    for j in 0..nj {
        let mut s = 0.0;
        for i in 0..ni {
            for k in 0..nk {
                s += ft.tensor.get(i, j, k);
            }
        }
        let m = s / n;
        let mut ss = 0.0;
        for i in 0..ni {
            for k in 0..nk {
                ss += (ft.tensor.get(i, j, k) - m).powi(2);
            }
        }
        mean[j] = m;
        let v = (ss / n).sqrt();
        // Treat round-off level spread on a constant slab as zero.
        sd[j] = if v > 1e-12 * m.abs().max(1e-300) { v } else { 0.0 };
    }
    let scaling = Scaling { mean, sd };
    Ok((scaling.apply(ft)?, scaling))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(u: &str, t: i64) -> Record {
        Record {
            user_id: u.into(),
            timestamp: t,
        }
    }

    fn window(start: i64, hours: usize) -> WindowSpec {
        WindowSpec {
            start: Some(start),
            hours,
        }
    }

    #[test]
    fn empty_file_is_empty_log() {
        let log = parse_log(&b"user_id,timestamp\n"[..], window(0, 24)).unwrap();
        assert!(log.is_empty());
        let log = parse_log(&b""[..], WindowSpec::default()).unwrap();
        assert!(log.is_empty());
    }

    #[test]
    fn hand_written_fixture() {
        let csv = "user_id,timestamp\nbob,7300\nalice,10\nalice,3700\nbob,100\nalice,20\nbob,200\n";
        let log = parse_log(csv.as_bytes(), window(0, 3)).unwrap();
        assert_eq!(
            log.records,
            vec![
                rec("alice", 10),
                rec("alice", 20),
                rec("alice", 3700),
                rec("bob", 100),
                rec("bob", 200),
                rec("bob", 7300)
            ]
        );
    }

    #[test]
    fn duplicates_dropped() {
        let csv = "user_id,timestamp\na,5\na,5\na,6\n";
        let log = parse_log(csv.as_bytes(), window(0, 1)).unwrap();
        assert_eq!(log.records.len(), 2);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let csv = "user_id,timestamp\na,5\na,five\n";
        match parse_log(csv.as_bytes(), window(0, 1)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let csv = "user_id,timestamp\na,5,7\n";
        assert!(matches!(
            parse_log(csv.as_bytes(), window(0, 1)),
            Err(Error::Parse { line: 2, .. })
        ));
        let csv = "uid,ts\na,5\n";
        assert!(matches!(
            parse_log(csv.as_bytes(), window(0, 1)),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn out_of_window_lists_offenders() {
        let csv = "user_id,timestamp\na,5\nb,3600\nc,-1\n";
        match parse_log(csv.as_bytes(), window(0, 1)) {
            Err(Error::OutOfWindow { offenders }) => {
                assert_eq!(offenders, vec![("b".to_string(), 3600), ("c".to_string(), -1)]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn default_window_floors_to_hour() {
        let csv = "user_id,timestamp\na,7300\na,9000\n";
        let log = parse_log(csv.as_bytes(), WindowSpec { start: None, hours: 2 }).unwrap();
        assert_eq!(log.window_start, 7200);
    }

    #[test]
    fn single_message_has_no_deltas() {
        let log = NotificationLog::new(vec![rec("a", 50)], 0, 2).unwrap();
        let d = compute_deltas(&log);
        assert!(d.deltas[0].iter().all(|h| h.is_empty()));
        assert_eq!(d.counts[0], vec![1, 0]);
    }

    #[test]
    fn deltas_assigned_to_later_hour() {
        let log = NotificationLog::new(vec![rec("a", 0), rec("a", 100), rec("a", 4000)], 0, 2).unwrap();
        let d = compute_deltas(&log);
        assert_eq!(d.deltas[0][0], vec![100.0]);
        assert_eq!(d.deltas[0][1], vec![3900.0]);
        assert_eq!(d.counts[0], vec![2, 1]);
    }

    #[test]
    fn interleaved_users_kept_apart() {
        let log = NotificationLog::new(
            vec![rec("a", 0), rec("b", 10), rec("a", 20), rec("b", 50), rec("a", 70)],
            0,
            1,
        )
        .unwrap();
        let d = compute_deltas(&log);
        assert_eq!(d.user_ids, vec!["a", "b"]);
        assert_eq!(d.deltas[0][0], vec![20.0, 50.0]);
        assert_eq!(d.deltas[1][0], vec![40.0]);
    }

    #[test]
    fn summary_examples() {
        assert_eq!(hour_summary_features(&[], 0), [0.0, 0.0, 0.0, 0.0]);
        let s = hour_summary_features(&[42.0, 42.0, 42.0], 4);
        assert_eq!((s[1], s[2]), (0.0, 0.0));
        let s = hour_summary_features(&[10.0, 1000.0], 3);
        assert_eq!(s[0], 505.0);
        assert_eq!(s[1], 245025.0);
        assert!((s[2] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(s[3], 3.0);
    }

    #[test]
    fn entropy_bin_edges() {
        assert_eq!(entropy_bin(0.5), 0);
        assert_eq!(entropy_bin(1.0), 1);
        assert_eq!(entropy_bin(3600.0), ENTROPY_BINS);
        assert_eq!(entropy_bin(3600.5), ENTROPY_BINS + 1);
        // 3600^(1/16) ≈ 1.669 is the first interior edge.
        assert_eq!(entropy_bin(1.6), 1);
        assert_eq!(entropy_bin(1.7), 2);
    }

    #[test]
    fn silent_user_is_all_zero() {
        let log = NotificationLog::new(vec![rec("a", 0), rec("a", 30)], 0, 3).unwrap();
        let d = compute_deltas_for(&log, &["quiet".to_string()]);
        let ft = build_feature_tensor(&d, &HmmFeatureConfig::default()).unwrap();
        assert_eq!(ft.tensor.dims(), [2, N_FEATURES, 3]);
        let q = ft.user_ids.iter().position(|u| u == "quiet").unwrap();
        for j in 0..N_FEATURES {
            for k in 0..3 {
                assert_eq!(ft.tensor.get(q, j, k), 0.0);
            }
        }
        assert!(ft.provenance[q * 3..q * 3 + 3].iter().all(|&p| p == CellSource::Zero));
    }

    #[test]
    fn dense_hour_matches_direct_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t = 3600;
        let mut records = vec![rec("u", 10)];
        for _ in 0..21 {
            t += rng.random_range(5..150);
            records.push(rec("u", t));
        }
        let log = NotificationLog::new(records, 0, 3).unwrap();
        let d = compute_deltas(&log);
        let cfg = HmmFeatureConfig {
            seed: 99,
            ..Default::default()
        };
        let ft = build_feature_tensor(&d, &cfg).unwrap();
        let hour1 = &d.deltas[0][1];
        assert!(hour1.len() >= 20);
        let direct = baum_welch(
            &ObservationSeq::new(hour1.clone()).unwrap(),
            &BaumWelchConfig {
                n_states: 2,
                seed: cell_seed(99, 0, 1),
                tol: cfg.tol,
                max_iter: cfg.max_iter,
            },
        )
        .unwrap();
        let want = extract_features(&direct.model).unwrap();
        for (j, w) in want.iter().enumerate() {
            assert_eq!(ft.tensor.get(0, j, 1), *w);
        }
        assert_eq!(ft.provenance[1], CellSource::HourFit);
        // Hours 0 and 2 are sparse and fall back to the whole-window fit.
        assert_eq!(ft.provenance[0], CellSource::Fallback);
        assert_eq!(ft.provenance[2], CellSource::Fallback);
        assert_eq!(ft.tensor.get(0, 2, 0), ft.tensor.get(0, 2, 2));
    }

    #[test]
    fn count_feature_sums_to_messages() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut records: Vec<Record> = (0..300)
            .map(|_| rec(["a", "b", "c"][rng.random_range(0..3)], rng.random_range(0..5 * 3600)))
            .collect();
        let log = NotificationLog::new(records.clone(), 0, 5).unwrap();
        records.sort();
        records.dedup();
        let ft = build_feature_tensor(&compute_deltas(&log), &HmmFeatureConfig::default()).unwrap();
        for (i, u) in ft.user_ids.iter().enumerate() {
            let total: f64 = (0..5).map(|k| ft.tensor.get(i, 9, k)).sum();
            assert_eq!(total as usize, records.iter().filter(|r| &r.user_id == u).count());
        }
    }

    #[test]
    fn time_shift_keeps_deltas() {
        let base = vec![rec("a", 0), rec("a", 100), rec("a", 4000), rec("b", 50), rec("b", 7000)];
        let shifted: Vec<Record> = base.iter().map(|r| rec(&r.user_id, r.timestamp + 7200)).collect();
        let d0 = compute_deltas(&NotificationLog::new(base, 0, 2).unwrap());
        let d1 = compute_deltas(&NotificationLog::new(shifted, 7200, 2).unwrap());
        assert_eq!(d0, d1);
    }

    fn random_ft(seed: u64) -> FeatureTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor3::from_fn([4, N_FEATURES, 6], |_, j, _| {
            rng.random_range(0.0..10.0) * (j + 1) as f64
        });
        FeatureTensor::new(t, (0..4).map(|i| format!("u{i}")).collect()).unwrap()
    }

    #[test]
    fn preprocess_standardizes() {
        let ft = random_ft(1);
        let (z, scaling) = preprocess(&ft).unwrap();
        for j in 0..N_FEATURES {
            let vals: Vec<f64> = (0..4)
                .flat_map(|i| (0..6).map(move |k| (i, k)))
                .map(|(i, k)| z.tensor.get(i, j, k))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        let (again, _) = preprocess(&z).unwrap();
        for (a, b) in again.tensor.values().iter().zip(z.tensor.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = scaling.invert(&z).unwrap();
        for (a, b) in back.tensor.values().iter().zip(ft.tensor.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_feature_is_centered_only() {
        let t = Tensor3::from_fn(
            [3, N_FEATURES, 4],
            |i, j, k| if j == 2 { 7.5 } else { (i * 4 + k + j) as f64 },
        );
        let ft = FeatureTensor::new(t, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let (z, scaling) = preprocess(&ft).unwrap();
        assert_eq!(scaling.sd[2], 0.0);
        for i in 0..3 {
            for k in 0..4 {
                assert_eq!(z.tensor.get(i, 2, k), 0.0);
            }
        }
    }

    #[test]
    fn feature_tensor_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<Record> = (0..400)
            .map(|_| rec(["a", "b"][rng.random_range(0..2)], rng.random_range(0..4 * 3600)))
            .collect();
        let log = NotificationLog::new(records, 0, 4).unwrap();
        let cfg = HmmFeatureConfig {
            seed: 11,
            ..Default::default()
        };
        let a = build_feature_tensor(&compute_deltas(&log), &cfg).unwrap();
        let b = build_feature_tensor(&compute_deltas(&log), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
